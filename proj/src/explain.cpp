#include "modelchat/explain.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "modelchat/text.hpp"

namespace modelchat {

SolveResult solve_model(const ModelIR& ir, const SolverOptions& opts) {
  return solve(instantiate(ir), opts);
}

SolutionSnapshot make_snapshot(const Instance& inst, const SolveResult& res) {
  SolutionSnapshot snap;
  snap.status = to_string(res.status);
  if (!res.optimal()) return snap;
  snap.objective = res.objective;
  for (int j = 0; j < inst.num_cols(); ++j) snap.primal[inst.cols[j].label()] = res.primal[j];
  auto act = inst.activity(res.primal);
  for (int i = 0; i < inst.num_rows(); ++i) {
    snap.activity[inst.rows[i].label()] = act[i];
    if (i < static_cast<int>(res.duals.size())) snap.duals[inst.rows[i].label()] = res.duals[i];
  }
  return snap;
}

// ---------------------------------------------------------------------------
// IIS.

std::vector<std::string> IISResult::ids() const {
  std::vector<std::string> out;
  for (const auto& m : members) out.push_back(m.id);
  return out;
}

namespace {

std::vector<IisMember> all_members(const Instance& inst) {
  std::vector<IisMember> out;
  for (int i = 0; i < inst.num_rows(); ++i) {
    out.push_back({IisMember::Kind::Row, i, inst.rows[i].label(), render_row(inst, i)});
  }
  for (int j = 0; j < inst.num_cols(); ++j) {
    std::string col = inst.cols[j].label();
    if (std::isfinite(inst.lower[j])) {
      out.push_back({IisMember::Kind::LowerBound, j, col + ".lb",
                     col + " >= " + format_number(inst.lower[j])});
    }
    if (std::isfinite(inst.upper[j])) {
      out.push_back({IisMember::Kind::UpperBound, j, col + ".ub",
                     col + " <= " + format_number(inst.upper[j])});
    }
  }
  return out;
}

}  // namespace

Instance restrict_instance(const Instance& inst, const std::vector<IisMember>& keep) {
  std::vector<bool> row_kept(inst.num_rows(), false);
  Instance out = inst;
  std::fill(out.lower.begin(), out.lower.end(), -kInf);
  std::fill(out.upper.begin(), out.upper.end(), kInf);
  for (const auto& m : keep) {
    switch (m.kind) {
      case IisMember::Kind::Row: row_kept[m.index] = true; break;
      case IisMember::Kind::LowerBound: out.lower[m.index] = inst.lower[m.index]; break;
      case IisMember::Kind::UpperBound: out.upper[m.index] = inst.upper[m.index]; break;
    }
  }
  std::vector<int> new_index(inst.num_rows(), -1);
  out.rows.clear();
  out.rhs.clear();
  out.rhs_sources.clear();
  out.senses.clear();
  for (int i = 0; i < inst.num_rows(); ++i) {
    if (!row_kept[i]) continue;
    new_index[i] = out.num_rows();
    out.rows.push_back(inst.rows[i]);
    out.rhs.push_back(inst.rhs[i]);
    out.rhs_sources.push_back(inst.rhs_sources[i]);
    out.senses.push_back(inst.senses[i]);
  }
  out.entries.clear();
  for (const auto& e : inst.entries) {
    if (new_index[e.row] < 0) continue;
    MatrixEntry copy = e;
    copy.row = new_index[e.row];
    out.entries.push_back(std::move(copy));
  }
  return out;
}

IISResult compute_iis(const Instance& inst, const SolverOptions& opts) {
  IISResult res;
  ++res.oracle_calls;
  Feasibility base = check_feasible(inst, opts);
  if (base == Feasibility::Feasible) {
    throw ExplainError(ExplainError::Kind::ModelFeasible, "model is feasible");
  }
  if (base == Feasibility::Indeterminate) res.indeterminate = true;

  std::vector<IisMember> active = all_members(inst);
  std::size_t i = 0;
  while (i < active.size()) {
    std::vector<IisMember> trial = active;
    trial.erase(trial.begin() + static_cast<std::ptrdiff_t>(i));
    ++res.oracle_calls;
    Feasibility f = check_feasible(restrict_instance(inst, trial), opts);
    if (f == Feasibility::Infeasible) {
      active = std::move(trial);
      continue;
    }
    if (f == Feasibility::Indeterminate) res.indeterminate = true;
    ++i;
  }
  res.members = std::move(active);
  return res;
}

IISResult compute_iis(const ModelIR& ir, const SolverOptions& opts) {
  return compute_iis(instantiate(ir), opts);
}

// ---------------------------------------------------------------------------
// Restoration.

std::string lhs_immutability_warning(const std::string& target) {
  return "'" + target +
         "' is a coefficient multiplying decision variables. Letting it move turns the repair "
         "into a nonconvex problem, so it is kept fixed here; adjust a right-hand-side "
         "parameter instead.";
}

namespace {

struct ResolvedAdjustables {
  std::vector<std::pair<ParamInstance, double>> params;  // with weight
  std::vector<RejectedRequest> rejected;
};

void add_param(ResolvedAdjustables& out, const ParamInstance& pi, double weight) {
  for (auto& [p, w] : out.params) {
    if (p == pi) {
      w = weight;
      return;
    }
  }
  out.params.emplace_back(pi, weight);
}

ResolvedAdjustables resolve_adjustables(const ModelIR& ir, const Instance& inst,
                                        const std::vector<AdjustableRef>& refs) {
  ResolvedAdjustables out;
  for (const auto& ref : refs) {
    std::string shown = instance_label(ref.name, ref.index);
    if (const ParamDecl* p = ir.find_param(ref.name)) {
      Modification probe{ref.name, ref.index, ModKind::AddDelta, 0.0, {}};
      auto targets = modification_targets(ir, probe);
      switch (p->side) {
        case ParamSide::ConstraintRhs:
          for (const auto& t : targets) add_param(out, t, ref.weight);
          break;
        case ParamSide::ConstraintLhs:
          out.rejected.push_back({shown, "lhs-parameter", lhs_immutability_warning(shown)});
          break;
        case ParamSide::ObjectiveCost:
          out.rejected.push_back({shown, "objective-parameter",
                                  "'" + shown + "' only enters the objective, so changing it "
                                  "cannot make the constraints consistent."});
          break;
        case ParamSide::Unused:
          out.rejected.push_back({shown, "unused-parameter",
                                  "'" + shown + "' does not appear in any constraint."});
          break;
      }
      continue;
    }
    if (ir.find_constraint(ref.name)) {
      bool any = false;
      for (int i = 0; i < inst.num_rows(); ++i) {
        if (inst.rows[i].family != ref.name || !index_matches(ref.index, inst.rows[i].index)) continue;
        for (const auto& c : inst.rhs_sources[i]) {
          if (!c.param) continue;
          add_param(out, *c.param, ref.weight);
          any = true;
        }
      }
      if (!any) {
        out.rejected.push_back({shown, "literal-rhs",
                                "constraint '" + shown +
                                    "' has no parameter on its right-hand side to adjust."});
      }
      continue;
    }
    std::vector<std::string> names;
    for (const auto& p : ir.params) names.push_back(p.name);
    for (const auto& c : ir.constraints) names.push_back(c.name);
    auto sugg = closest_names(ref.name, names);
    std::string msg = "unknown adjustable '" + ref.name + "'";
    if (!sugg.empty()) msg += "; did you mean: " + join(sugg, ", ");
    throw ModelError(ModelError::Kind::NotFound, msg, sugg);
  }
  return out;
}

}  // namespace

RestorationPlan restore_feasibility(const ModelIR& ir, const std::vector<AdjustableRef>& adjustable,
                                    const SolverOptions& opts) {
  Instance inst = instantiate(ir);
  if (check_feasible(inst, opts) == Feasibility::Feasible) {
    throw ExplainError(ExplainError::Kind::ModelFeasible, "model is feasible");
  }
  RestorationPlan plan;
  std::optional<IISResult> iis;
  auto get_iis = [&]() -> const IISResult& {
    if (!iis) iis = compute_iis(inst, opts);
    return *iis;
  };

  ResolvedAdjustables resolved;
  if (adjustable.empty()) {
    plan.defaulted = true;
    std::vector<AdjustableRef> refs;
    for (const auto& m : get_iis().members) {
      if (m.kind != IisMember::Kind::Row) continue;
      for (const auto& c : inst.rhs_sources[m.index]) {
        if (c.param) refs.push_back({c.param->name, c.param->index, 1.0});
      }
    }
    resolved = resolve_adjustables(ir, inst, refs);
    plan.iis = get_iis();
  } else {
    resolved = resolve_adjustables(ir, inst, adjustable);
  }
  plan.rejected = resolved.rejected;
  if (resolved.params.empty()) {
    std::string msg = "no adjustable right-hand-side parameters";
    std::vector<std::string> warnings;
    for (const auto& r : plan.rejected) warnings.push_back(r.warning);
    if (!plan.rejected.empty()) msg += " remain after rejecting the requested coefficients";
    throw ExplainError(ExplainError::Kind::InvalidRequest, msg, std::move(warnings));
  }

  // Elastic model: one nonnegative column per allowed direction.
  Instance elastic = inst;
  std::fill(elastic.cost.begin(), elastic.cost.end(), 0.0);
  elastic.offset = 0.0;
  elastic.objective_sense = ObjectiveSense::Minimize;
  struct SlackCol {
    std::size_t slot;
    double direction;  // +1 raises the parameter, -1 lowers it
  };
  std::vector<SlackCol> slack_cols;
  auto add_column = [&](const ParamInstance& pi, double dir, double weight,
                        const std::vector<std::pair<int, double>>& rows, std::size_t slot) {
    int col = elastic.num_cols();
    elastic.cols.push_back({"__slack", {pi.label(), dir > 0 ? "+" : "-"}});
    elastic.cost.push_back(weight);
    elastic.cost_sources.push_back({});
    elastic.lower.push_back(0.0);
    elastic.upper.push_back(kInf);
    elastic.integer.push_back(false);
    for (auto [row, k] : rows) elastic.entries.push_back({row, col, -k * dir, {}});
    slack_cols.push_back({slot, dir});
  };
  for (const auto& [pi, weight] : resolved.params) {
    auto rows = rhs_rows_of(inst, pi);
    SlackAssignment sa;
    sa.param = pi;
    sa.weight = weight;
    // A direction is offered when it relaxes at least one row.
    for (auto [row, k] : rows) {
      Sense s = inst.senses[row];
      if (s == Sense::Eq || (s == Sense::Le && k > 0) || (s == Sense::Ge && k < 0)) sa.can_increase = true;
      if (s == Sense::Eq || (s == Sense::Le && k < 0) || (s == Sense::Ge && k > 0)) sa.can_decrease = true;
    }
    std::size_t slot = plan.slacks.size();
    if (sa.can_increase) add_column(pi, +1.0, weight, rows, slot);
    if (sa.can_decrease) add_column(pi, -1.0, weight, rows, slot);
    plan.slacks.push_back(std::move(sa));
  }
  std::sort(elastic.entries.begin(), elastic.entries.end(),
            [](const MatrixEntry& a, const MatrixEntry& b) {
              return a.row != b.row ? a.row < b.row : a.col < b.col;
            });

  SolveResult res = solve(elastic, opts);
  if (res.status == SolveStatus::Infeasible) {
    std::set<int> covered;
    for (const auto& [pi, w] : resolved.params) {
      for (auto [row, k] : rhs_rows_of(inst, pi)) covered.insert(row);
    }
    std::vector<std::string> uncovered;
    for (const auto& m : get_iis().members) {
      if (m.kind != IisMember::Kind::Row || !covered.count(m.index)) uncovered.push_back(m.id);
    }
    throw ExplainError(ExplainError::Kind::InsufficientAdjustables,
                       "insufficient adjustables: the conflict involves " + join(uncovered, ", ") +
                           ", which the chosen parameters do not reach",
                       uncovered);
  }
  if (!res.optimal()) {
    throw ExplainError(ExplainError::Kind::InvalidRequest,
                       "elastic model could not be solved (" + to_string(res.status) + ")");
  }

  const int n = inst.num_cols();
  for (std::size_t k = 0; k < slack_cols.size(); ++k) {
    double v = res.primal[n + static_cast<int>(k)];
    if (std::abs(v) < 1e-9) v = 0.0;
    auto& sa = plan.slacks[slack_cols[k].slot];
    (slack_cols[k].direction > 0 ? sa.increase : sa.decrease) += v;
  }
  for (const auto& sa : plan.slacks) {
    plan.total_penalty += sa.weight * (sa.increase + sa.decrease);
    if (sa.change() != 0.0) {
      plan.modifications.push_back(
          {sa.param.name, sa.param.index, ModKind::AddDelta, sa.change(), {}});
    }
  }
  plan.certificate.assign(res.primal.begin(), res.primal.begin() + n);

  ModelIR restored = apply_modification(ir, plan.modifications);
  plan.certified = check_feasible(instantiate(restored), opts) == Feasibility::Feasible;
  return plan;
}

// ---------------------------------------------------------------------------
// Sensitivity.

std::string to_string(UnsupportedReason r) {
  switch (r) {
    case UnsupportedReason::LhsParameter: return "lhs-parameter";
    case UnsupportedReason::MilpModel: return "milp-model";
    case UnsupportedReason::ObjectiveParameter: return "objective-parameter";
    case UnsupportedReason::UnusedParameter: return "unused-parameter";
  }
  return "unknown";
}

namespace {

std::string what_if_suggestion(const ParamInstance& pi) {
  return "Duality gives no shadow price here; evaluate a specific modification instead, "
         "for example ask what happens if " +
         pi.label() + " increases by 1, and compare the objective values.";
}

}  // namespace

SensitivityReport sensitivity(const ModelIR& ir, const std::string& param, const IndexTuple& index,
                              const SolverOptions& opts) {
  const ParamDecl* p = ir.find_param(param);
  if (!p) {
    std::vector<std::string> names;
    for (const auto& q : ir.params) names.push_back(q.name);
    auto sugg = closest_names(param, names);
    std::string msg = "unknown parameter '" + param + "'";
    if (!sugg.empty()) msg += "; did you mean: " + join(sugg, ", ");
    throw ModelError(ModelError::Kind::NotFound, msg, sugg);
  }
  auto targets = modification_targets(ir, {param, index, ModKind::AddDelta, 0.0, {}});
  if (targets.size() != 1) {
    std::vector<std::string> labels;
    for (const auto& t : targets) labels.push_back(t.label());
    throw ExplainError(ExplainError::Kind::AggregateParameter,
                       "aggregate parameter; query per-row: " + join(labels, ", "), labels);
  }
  SensitivityReport rep;
  rep.param = targets.front();

  auto unsupported = [&](UnsupportedReason r) {
    rep.unsupported = r;
    rep.suggestion = what_if_suggestion(rep.param);
    return rep;
  };
  if (p->side == ParamSide::ConstraintLhs) return unsupported(UnsupportedReason::LhsParameter);
  if (ir.has_integers()) return unsupported(UnsupportedReason::MilpModel);
  if (p->side == ParamSide::ObjectiveCost) return unsupported(UnsupportedReason::ObjectiveParameter);

  Instance inst = instantiate(ir);
  // A right-hand side that also prices the objective moves both at once.
  for (const auto& sources : inst.cost_sources) {
    for (const auto& c : sources) {
      if (c.param && *c.param == rep.param) return unsupported(UnsupportedReason::ObjectiveParameter);
    }
  }
  auto rows = rhs_rows_of(inst, rep.param);
  if (rows.empty()) return unsupported(UnsupportedReason::UnusedParameter);
  if (rows.size() > 1) {
    std::vector<std::string> labels;
    for (auto [row, k] : rows) labels.push_back(inst.rows[row].label());
    throw ExplainError(ExplainError::Kind::AggregateParameter,
                       "aggregate parameter; query per-row: " + rep.param.label() + " reaches " +
                           join(labels, ", "),
                       labels);
  }
  SolveResult res = solve_lp(inst, opts);
  if (!res.optimal()) {
    throw ExplainError(ExplainError::Kind::NotOptimal,
                       "sensitivity needs an optimal solution; the model is " + to_string(res.status));
  }
  auto [row, k] = rows.front();
  rep.row = inst.rows[row].label();
  rep.multiplier = k;
  rep.shadow_price = res.duals[row] * k + 0.0;
  rep.degenerate = res.degenerate;
  rep.objective = res.objective;
  rep.validity_note = "Local estimate: valid while the optimal basis stays unchanged.";
  if (rep.degenerate) {
    rep.validity_note += " The optimum is degenerate, so the price may differ for increases and decreases.";
  }
  return rep;
}

// ---------------------------------------------------------------------------
// What-if / why-not.

std::vector<VariableChange> changed_variables(const Instance& inst, const SolveResult& before,
                                              const SolveResult& after, std::size_t k) {
  std::vector<VariableChange> out;
  if (!before.optimal() || !after.optimal()) return out;
  const int n = std::min({inst.num_cols(), static_cast<int>(before.primal.size()),
                          static_cast<int>(after.primal.size())});
  for (int j = 0; j < n; ++j) {
    if (std::abs(after.primal[j] - before.primal[j]) > 1e-9) {
      out.push_back({inst.cols[j].label(), before.primal[j], after.primal[j]});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const VariableChange& a, const VariableChange& b) {
    return std::abs(a.after - a.before) > std::abs(b.after - b.before);
  });
  if (out.size() > k) out.resize(k);
  return out;
}

namespace {

std::optional<double> objective_of(const SolveResult& r) {
  if (r.optimal()) return r.objective;
  return std::nullopt;
}

std::optional<double> delta_of(const SolveResult& a, const SolveResult& b) {
  if (a.optimal() && b.optimal()) return b.objective - a.objective + 0.0;
  return std::nullopt;
}

}  // namespace

WhatIfReport evaluate_modification(const ModelIR& ir, const std::vector<Modification>& mods,
                                   const SolverOptions& opts) {
  WhatIfReport rep;
  rep.modifications = mods;
  Instance base_inst = instantiate(ir);
  SolveResult base = solve(base_inst, opts);
  ModelIR changed = apply_modification(ir, mods);
  rep.notes = modification_notes(ir, mods);
  Instance new_inst = instantiate(changed);
  SolveResult after = solve(new_inst, opts);
  rep.baseline_status = base.status;
  rep.baseline_objective = objective_of(base);
  rep.status = after.status;
  rep.objective = objective_of(after);
  rep.delta = delta_of(base, after);
  rep.changes = changed_variables(base_inst, base, after);
  return rep;
}

ModelIR attach_counterfactuals(const ModelIR& ir, const std::vector<ConstraintSpec>& specs,
                               std::vector<std::string>* families) {
  ModelIR out = ir;
  int k = 1;
  for (const auto& spec : specs) {
    std::string name;
    do {
      name = "why_not_" + std::to_string(k++);
    } while (out.kind_of(name));
    out.constraints.push_back(to_constraint(spec, name, "counterfactual constraint: " + spec.text()));
    if (families) families->push_back(name);
  }
  out.status = SolveStatusCache::Unsolved;
  return out;
}

WhyNotReport apply_counterfactual(const ModelIR& ir, const std::vector<ConstraintSpec>& specs,
                                  const SolverOptions& opts) {
  WhyNotReport rep;
  rep.specs = specs;
  Instance base_inst = instantiate(ir);
  SolveResult base = solve(base_inst, opts);
  ModelIR augmented = attach_counterfactuals(ir, specs, &rep.families);
  for (const auto& spec : specs) {
    auto rows = canonical_form(ir, spec);
    rep.canonical.insert(rep.canonical.end(), rows.begin(), rows.end());
  }
  Instance inst = instantiate(augmented);
  rep.rows_added = inst.num_rows() - base_inst.num_rows();
  SolveResult after = solve(inst, opts);
  rep.baseline_status = base.status;
  rep.baseline_objective = objective_of(base);
  rep.status = after.status;
  rep.objective = objective_of(after);
  rep.delta = delta_of(base, after);
  rep.changes = changed_variables(base_inst, base, after);
  if (after.status == SolveStatus::Infeasible) rep.iis = compute_iis(inst, opts);
  return rep;
}

}  // namespace modelchat
