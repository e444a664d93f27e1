#include "modelchat/solver.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

namespace modelchat {

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::Unbounded: return "unbounded";
    case SolveStatus::IterationLimit: return "iteration-limit";
    case SolveStatus::NodeLimit: return "node-limit";
  }
  return "unknown";
}

std::string to_string(Feasibility f) {
  switch (f) {
    case Feasibility::Feasible: return "feasible";
    case Feasibility::Infeasible: return "infeasible";
    case Feasibility::Indeterminate: return "indeterminate";
  }
  return "unknown";
}

double max_violation(const Instance& inst, const std::vector<double>& x) {
  double worst = 0.0;
  auto act = inst.activity(x);
  for (int i = 0; i < inst.num_rows(); ++i) {
    double r = act[i] - inst.rhs[i];
    double v = inst.senses[i] == Sense::Le ? r : inst.senses[i] == Sense::Ge ? -r : std::abs(r);
    worst = std::max(worst, v);
  }
  for (int j = 0; j < inst.num_cols(); ++j) {
    worst = std::max(worst, inst.lower[j] - x[j]);
    worst = std::max(worst, x[j] - inst.upper[j]);
  }
  return worst;
}

namespace {

// How an instance column maps onto nonnegative internal columns.
struct ColumnMap {
  enum class Kind { Shift, Mirror, Split };
  Kind kind = Kind::Shift;
  double anchor = 0.0;  // lower bound (Shift) or upper bound (Mirror)
  int first = 0;
  int second = -1;      // negative part for Split
};

struct Row {
  std::vector<double> coef;  // over structural internal columns
  Sense sense = Sense::Le;
  double rhs = 0.0;
  int source = -1;           // instance row, or -1 for a bound row
  double flip = 1.0;
};

enum class PhaseOutcome { Optimal, Unbounded, IterationLimit };

class Simplex {
 public:
  Simplex(const Instance& inst, const SolverOptions& opts) : inst_(inst), opts_(opts) { build(); }

  SolveResult run(bool phase_one_only) {
    SolveResult res;
    setup_tableau();
    // Phase one: minimize the sum of artificials.
    std::vector<double> cost1(cols_, 0.0);
    for (int j = art_begin_; j < cols_; ++j) cost1[j] = 1.0;
    std::vector<bool> allowed(cols_, true);
    load_objective(cost1);
    PhaseOutcome p1 = iterate(allowed, res);
    if (p1 == PhaseOutcome::IterationLimit) {
      res.status = SolveStatus::IterationLimit;
      return res;
    }
    double infeas = -T_[m_][cols_];
    if (infeas > opts_.feasibility_tol) {
      res.status = SolveStatus::Infeasible;
      return res;
    }
    drive_out_artificials();
    if (phase_one_only) {
      res.status = SolveStatus::Optimal;
      res.primal = recover_primal();
      return res;
    }
    for (int j = art_begin_; j < cols_; ++j) allowed[j] = false;
    load_objective(cost2_);
    degenerate_run_ = 0;
    bland_ = false;
    PhaseOutcome p2 = iterate(allowed, res);
    if (p2 == PhaseOutcome::IterationLimit) {
      res.status = SolveStatus::IterationLimit;
      return res;
    }
    if (p2 == PhaseOutcome::Unbounded) {
      res.status = SolveStatus::Unbounded;
      return res;
    }
    res.status = SolveStatus::Optimal;
    finish(res);
    return res;
  }

 private:
  void build() {
    const int n = inst_.num_cols();
    maps_.resize(n);
    int next = 0;
    for (int j = 0; j < n; ++j) {
      double lo = inst_.lower[j], hi = inst_.upper[j];
      ColumnMap& cm = maps_[j];
      if (std::isfinite(lo)) {
        cm = {ColumnMap::Kind::Shift, lo, next++, -1};
      } else if (std::isfinite(hi)) {
        cm = {ColumnMap::Kind::Mirror, hi, next++, -1};
      } else {
        cm = {ColumnMap::Kind::Split, 0.0, next, next + 1};
        next += 2;
      }
    }
    structural_ = next;

    for (int i = 0; i < inst_.num_rows(); ++i) {
      Row r;
      r.coef.assign(structural_, 0.0);
      r.sense = inst_.senses[i];
      r.rhs = inst_.rhs[i];
      r.source = i;
      rows_.push_back(std::move(r));
    }
    for (const auto& e : inst_.entries) {
      Row& r = rows_[e.row];
      const ColumnMap& cm = maps_[e.col];
      switch (cm.kind) {
        case ColumnMap::Kind::Shift:
          r.coef[cm.first] += e.value;
          r.rhs -= e.value * cm.anchor;
          break;
        case ColumnMap::Kind::Mirror:
          r.coef[cm.first] -= e.value;
          r.rhs -= e.value * cm.anchor;
          break;
        case ColumnMap::Kind::Split:
          r.coef[cm.first] += e.value;
          r.coef[cm.second] -= e.value;
          break;
      }
    }
    for (int j = 0; j < n; ++j) {
      const ColumnMap& cm = maps_[j];
      if (cm.kind == ColumnMap::Kind::Shift && std::isfinite(inst_.upper[j])) {
        Row r;
        r.coef.assign(structural_, 0.0);
        r.coef[cm.first] = 1.0;
        r.sense = Sense::Le;
        r.rhs = inst_.upper[j] - cm.anchor;
        rows_.push_back(std::move(r));
      }
    }
    for (auto& r : rows_) {
      if (r.rhs < 0) {
        for (auto& v : r.coef) v = -v;
        r.rhs = -r.rhs;
        r.flip = -1.0;
        if (r.sense == Sense::Le) {
          r.sense = Sense::Ge;
        } else if (r.sense == Sense::Ge) {
          r.sense = Sense::Le;
        }
      }
    }

    // Internal objective is always minimized.
    sense_sign_ = inst_.objective_sense == ObjectiveSense::Maximize ? -1.0 : 1.0;
    constant_ = inst_.offset;
    std::vector<double> c(structural_, 0.0);
    for (int j = 0; j < n; ++j) {
      double cj = inst_.cost[j] * sense_sign_;
      const ColumnMap& cm = maps_[j];
      switch (cm.kind) {
        case ColumnMap::Kind::Shift:
          c[cm.first] += cj;
          constant_ += inst_.cost[j] * cm.anchor;
          break;
        case ColumnMap::Kind::Mirror:
          c[cm.first] -= cj;
          constant_ += inst_.cost[j] * cm.anchor;
          break;
        case ColumnMap::Kind::Split:
          c[cm.first] += cj;
          c[cm.second] -= cj;
          break;
      }
    }
    internal_cost_ = std::move(c);
  }

  void setup_tableau() {
    m_ = static_cast<int>(rows_.size());
    int slacks = 0, arts = 0;
    for (const auto& r : rows_) {
      if (r.sense != Sense::Eq) ++slacks;
      if (r.sense != Sense::Le) ++arts;
    }
    slack_begin_ = structural_;
    art_begin_ = structural_ + slacks;
    cols_ = art_begin_ + arts;
    T_.assign(m_ + 1, std::vector<double>(cols_ + 1, 0.0));
    basis_.assign(m_, -1);
    identity_.assign(m_, -1);
    int s = slack_begin_, a = art_begin_;
    for (int i = 0; i < m_; ++i) {
      const Row& r = rows_[i];
      for (int j = 0; j < structural_; ++j) T_[i][j] = r.coef[j];
      T_[i][cols_] = r.rhs;
      if (r.sense == Sense::Le) {
        T_[i][s] = 1.0;
        basis_[i] = identity_[i] = s++;
      } else {
        if (r.sense == Sense::Ge) T_[i][s++] = -1.0;
        T_[i][a] = 1.0;
        basis_[i] = identity_[i] = a++;
      }
    }
    cost2_.assign(cols_, 0.0);
    std::copy(internal_cost_.begin(), internal_cost_.end(), cost2_.begin());
  }

  void load_objective(const std::vector<double>& cost) {
    auto& z = T_[m_];
    for (int j = 0; j < cols_; ++j) z[j] = cost[j];
    z[cols_] = 0.0;
    for (int i = 0; i < m_; ++i) {
      double cb = cost[basis_[i]];
      if (cb == 0.0) continue;
      for (int j = 0; j <= cols_; ++j) z[j] -= cb * T_[i][j];
    }
  }

  void pivot(int p, int e) {
    auto& pr = T_[p];
    double pv = pr[e];
    for (auto& v : pr) v /= pv;
    pr[e] = 1.0;
    for (int i = 0; i <= m_; ++i) {
      if (i == p) continue;
      double f = T_[i][e];
      if (f == 0.0) continue;
      auto& row = T_[i];
      for (int j = 0; j <= cols_; ++j) {
        if (pr[j] != 0.0) row[j] -= f * pr[j];
      }
      row[e] = 0.0;
    }
    basis_[p] = e;
  }

  PhaseOutcome iterate(const std::vector<bool>& allowed, SolveResult& res) {
    while (true) {
      const auto& z = T_[m_];
      int enter = -1;
      double best = -opts_.pivot_tol;
      for (int j = 0; j < cols_; ++j) {
        if (!allowed[j] || z[j] >= -opts_.pivot_tol) continue;
        if (bland_) {
          enter = j;
          break;
        }
        if (z[j] < best) {
          best = z[j];
          enter = j;
        }
      }
      if (enter < 0) return PhaseOutcome::Optimal;

      int leave = -1;
      double ratio = 0.0;
      for (int i = 0; i < m_; ++i) {
        double a = T_[i][enter];
        if (a <= opts_.pivot_tol) continue;
        double r = std::max(0.0, T_[i][cols_]) / a;
        if (leave < 0 || r < ratio - 1e-12 ||
            (std::abs(r - ratio) <= 1e-12 && basis_[i] < basis_[leave])) {
          leave = i;
          ratio = r;
        }
      }
      if (leave < 0) return PhaseOutcome::Unbounded;
      if (res.iterations >= opts_.max_iterations) return PhaseOutcome::IterationLimit;

      if (ratio <= 1e-12) {
        if (++degenerate_run_ >= opts_.bland_after && !bland_) {
          bland_ = true;
          res.bland_engaged = true;
        }
      } else {
        degenerate_run_ = 0;
      }
      pivot(leave, enter);
      ++res.iterations;
      res.pivots.emplace_back(leave, enter);
    }
  }

  void drive_out_artificials() {
    for (int i = 0; i < m_; ++i) {
      if (basis_[i] < art_begin_) continue;
      int best = -1;
      for (int j = 0; j < art_begin_; ++j) {
        if (std::abs(T_[i][j]) > opts_.pivot_tol &&
            (best < 0 || std::abs(T_[i][j]) > std::abs(T_[i][best]) + 1e-12)) {
          best = j;
        }
      }
      // With no candidate the row is redundant; its artificial stays basic at zero.
      if (best >= 0) pivot(i, best);
    }
  }

  std::vector<double> internal_values() const {
    std::vector<double> v(cols_, 0.0);
    for (int i = 0; i < m_; ++i) v[basis_[i]] = T_[i][cols_];
    return v;
  }

  std::vector<double> recover_primal() const {
    auto v = internal_values();
    std::vector<double> x(inst_.num_cols(), 0.0);
    for (int j = 0; j < inst_.num_cols(); ++j) {
      const ColumnMap& cm = maps_[j];
      switch (cm.kind) {
        case ColumnMap::Kind::Shift: x[j] = cm.anchor + v[cm.first]; break;
        case ColumnMap::Kind::Mirror: x[j] = cm.anchor - v[cm.first]; break;
        case ColumnMap::Kind::Split: x[j] = v[cm.first] - v[cm.second]; break;
      }
      if (std::abs(x[j]) < 1e-12) x[j] = 0.0;
    }
    return x;
  }

  void finish(SolveResult& res) const {
    res.primal = recover_primal();
    double obj = inst_.offset;
    for (int j = 0; j < inst_.num_cols(); ++j) obj += inst_.cost[j] * res.primal[j];
    res.objective = obj;

    res.duals.assign(inst_.num_rows(), 0.0);
    for (int i = 0; i < m_; ++i) {
      if (rows_[i].source < 0) continue;
      double y_internal = -T_[m_][identity_[i]];
      double y = y_internal * rows_[i].flip * sense_sign_;
      if (std::abs(y) < 1e-12) y = 0.0;
      res.duals[rows_[i].source] = y;
    }
    res.reduced_costs = inst_.cost;
    for (const auto& e : inst_.entries) res.reduced_costs[e.col] -= res.duals[e.row] * e.value;

    res.basis = basis_;
    for (int i = 0; i < m_; ++i) {
      if (std::abs(T_[i][cols_]) <= opts_.pivot_tol) res.degenerate = true;
    }
  }

  const Instance& inst_;
  const SolverOptions& opts_;
  std::vector<ColumnMap> maps_;
  std::vector<Row> rows_;
  std::vector<double> internal_cost_;
  std::vector<double> cost2_;
  int structural_ = 0;
  double sense_sign_ = 1.0;
  double constant_ = 0.0;

  std::vector<std::vector<double>> T_;
  std::vector<int> basis_;
  std::vector<int> identity_;
  int m_ = 0;
  int cols_ = 0;
  int slack_begin_ = 0;
  int art_begin_ = 0;
  int degenerate_run_ = 0;
  bool bland_ = false;
};

double fractionality(double v) {
  double f = v - std::floor(v);
  return std::min(f, 1.0 - f);
}

struct Node {
  double bound;  // internal (minimized) LP objective of the parent
  long order;
  std::vector<double> lower;
  std::vector<double> upper;
};

struct NodeOrder {
  bool operator()(const Node& a, const Node& b) const {
    if (a.bound != b.bound) return a.bound > b.bound;
    return a.order > b.order;
  }
};

}  // namespace

SolveResult solve_lp(const Instance& inst, const SolverOptions& opts) {
  Simplex s(inst, opts);
  return s.run(false);
}

SolveResult solve_milp(const Instance& inst, const SolverOptions& opts) {
  const double sign = inst.objective_sense == ObjectiveSense::Maximize ? -1.0 : 1.0;
  const int n = inst.num_cols();
  SolveResult out;
  out.mip = true;

  std::priority_queue<Node, std::vector<Node>, NodeOrder> open;
  long created = 0;
  {
    Node root{-kInf, created++, inst.lower, inst.upper};
    for (int j = 0; j < n; ++j) {
      if (!inst.integer[j]) continue;
      root.lower[j] = std::ceil(root.lower[j] - opts.integrality_tol);
      root.upper[j] = std::floor(root.upper[j] + opts.integrality_tol);
    }
    open.push(std::move(root));
  }

  std::optional<SolveResult> incumbent;
  double incumbent_value = kInf;  // internal sense
  bool hit_iteration_limit = false;
  bool node_limit = false;
  Instance work = inst;

  auto prune_threshold = [&] {
    return incumbent_value - opts.feasibility_tol * std::max(1.0, std::abs(incumbent_value));
  };

  while (!open.empty()) {
    if (out.nodes >= opts.max_nodes) {
      node_limit = true;
      break;
    }
    Node node = open.top();
    open.pop();
    if (incumbent && node.bound >= prune_threshold()) continue;
    ++out.nodes;

    work.lower = node.lower;
    work.upper = node.upper;
    SolveResult lp = solve_lp(work, opts);
    out.iterations += lp.iterations;
    if (lp.status == SolveStatus::Infeasible) continue;
    if (lp.status == SolveStatus::IterationLimit) {
      hit_iteration_limit = true;
      break;
    }
    if (lp.status == SolveStatus::Unbounded) {
      out.status = SolveStatus::Unbounded;
      return out;
    }
    double value = sign * lp.objective;
    if (incumbent && value >= prune_threshold()) continue;

    int branch = -1;
    double most = opts.integrality_tol;
    for (int j = 0; j < n; ++j) {
      if (!inst.integer[j]) continue;
      double f = fractionality(lp.primal[j]);
      if (f > most + 1e-12) {
        most = f;
        branch = j;
      }
    }
    if (branch < 0) {
      for (int j = 0; j < n; ++j) {
        if (inst.integer[j]) lp.primal[j] = std::round(lp.primal[j]) + 0.0;
      }
      lp.objective = inst.offset;
      for (int j = 0; j < n; ++j) lp.objective += inst.cost[j] * lp.primal[j];
      value = sign * lp.objective;
      if (value < incumbent_value) {
        incumbent_value = value;
        incumbent = std::move(lp);
      }
      continue;
    }
    double v = lp.primal[branch];
    Node down{value, created++, node.lower, node.upper};
    down.upper[branch] = std::floor(v);
    Node up{value, created++, std::move(node.lower), std::move(node.upper)};
    up.lower[branch] = std::ceil(v);
    open.push(std::move(down));
    open.push(std::move(up));
  }

  // Best bound over what is still open.
  double bound = incumbent_value;
  while (!open.empty()) {
    bound = std::min(bound, open.top().bound);
    open.pop();
  }
  bool exhausted = !hit_iteration_limit && (!node_limit || (incumbent && bound >= prune_threshold()));

  if (incumbent) {
    int nodes = out.nodes;
    int iters = out.iterations;
    out = std::move(*incumbent);
    out.mip = true;
    out.nodes = nodes;
    out.iterations = iters;
    out.duals.clear();
    out.reduced_costs.clear();
    double b = exhausted ? incumbent_value : bound;
    out.best_bound = sign * b;
    out.gap = std::abs(incumbent_value - b) / std::max(1.0, std::abs(incumbent_value));
    out.status = exhausted ? SolveStatus::Optimal
                           : hit_iteration_limit ? SolveStatus::IterationLimit
                                                 : SolveStatus::NodeLimit;
  } else {
    out.status = hit_iteration_limit ? SolveStatus::IterationLimit
                 : exhausted         ? SolveStatus::Infeasible
                                     : SolveStatus::NodeLimit;
  }
  return out;
}

SolveResult solve(const Instance& inst, const SolverOptions& opts) {
  if (opts.relax_integrality || inst.num_integer() == 0) return solve_lp(inst, opts);
  return solve_milp(inst, opts);
}

Feasibility check_feasible(const Instance& inst, const SolverOptions& opts) {
  if (opts.relax_integrality || inst.num_integer() == 0) {
    Simplex s(inst, opts);
    SolveResult r = s.run(true);
    if (r.status == SolveStatus::Optimal) return Feasibility::Feasible;
    if (r.status == SolveStatus::Infeasible) return Feasibility::Infeasible;
    return Feasibility::Indeterminate;
  }
  Instance zero = inst;
  std::fill(zero.cost.begin(), zero.cost.end(), 0.0);
  zero.offset = 0.0;
  SolveResult r = solve_milp(zero, opts);
  if (r.status == SolveStatus::Optimal) return Feasibility::Feasible;
  if (r.status == SolveStatus::Infeasible) return Feasibility::Infeasible;
  return Feasibility::Indeterminate;
}

}  // namespace modelchat
