#pragma once

// Brute-force reference computations used to check the solver and the
// explanation tools. They share no code with the simplex implementation.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "modelchat/explain.hpp"
#include "modelchat/model.hpp"
#include "modelchat/solver.hpp"

namespace testing {

// Solves the square system M z = r by Gaussian elimination with partial
// pivoting; nullopt when singular.
inline std::optional<std::vector<double>> solve_square(std::vector<std::vector<double>> M,
                                                       std::vector<double> r) {
  const std::size_t n = r.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t i = c + 1; i < n; ++i) {
      if (std::abs(M[i][c]) > std::abs(M[piv][c])) piv = i;
    }
    if (std::abs(M[piv][c]) < 1e-10) return std::nullopt;
    std::swap(M[piv], M[c]);
    std::swap(r[piv], r[c]);
    for (std::size_t i = 0; i < n; ++i) {
      if (i == c) continue;
      double f = M[i][c] / M[c][c];
      for (std::size_t j = c; j < n; ++j) M[i][j] -= f * M[c][j];
      r[i] -= f * r[c];
    }
  }
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = r[i] / M[i][i];
  return z;
}

struct VertexOptimum {
  bool feasible = false;
  double objective = 0.0;
  std::vector<double> point;
};

// Optimum of a bounded LP by enumerating every basic point: choose n tight
// constraints among rows and finite bounds, solve, keep feasible ones.
inline VertexOptimum vertex_enumeration(const modelchat::Instance& inst) {
  const int n = inst.num_cols();
  auto dense = inst.dense();
  std::vector<std::vector<double>> planes;
  std::vector<double> levels;
  for (int i = 0; i < inst.num_rows(); ++i) {
    planes.push_back(dense[i]);
    levels.push_back(inst.rhs[i]);
  }
  for (int j = 0; j < n; ++j) {
    for (double b : {inst.lower[j], inst.upper[j]}) {
      if (!std::isfinite(b)) continue;
      std::vector<double> e(n, 0.0);
      e[j] = 1.0;
      planes.push_back(e);
      levels.push_back(b);
    }
  }
  VertexOptimum best;
  const bool maximize = inst.objective_sense == modelchat::ObjectiveSense::Maximize;
  std::vector<int> pick;
  std::function<void(int)> choose = [&](int start) {
    if (static_cast<int>(pick.size()) == n) {
      std::vector<std::vector<double>> M;
      std::vector<double> r;
      for (int k : pick) {
        M.push_back(planes[k]);
        r.push_back(levels[k]);
      }
      auto z = solve_square(M, r);
      if (!z || modelchat::max_violation(inst, *z) > 1e-7) return;
      double obj = inst.offset;
      for (int j = 0; j < n; ++j) obj += inst.cost[j] * (*z)[j];
      if (!best.feasible || (maximize ? obj > best.objective : obj < best.objective)) {
        best = {true, obj, *z};
      }
      return;
    }
    for (int k = start; k < static_cast<int>(planes.size()); ++k) {
      pick.push_back(k);
      choose(k + 1);
      pick.pop_back();
    }
  };
  choose(0);
  return best;
}

// Optimum over integer columns by enumerating every integer point in their
// bounds; continuous columns (if any) are optimized by solve_lp with the
// integer part fixed.
inline VertexOptimum integer_enumeration(const modelchat::Instance& inst) {
  std::vector<int> ints;
  for (int j = 0; j < inst.num_cols(); ++j) {
    if (inst.integer[j]) ints.push_back(j);
  }
  VertexOptimum best;
  const bool maximize = inst.objective_sense == modelchat::ObjectiveSense::Maximize;
  modelchat::Instance fixed = inst;
  std::function<void(std::size_t)> rec = [&](std::size_t k) {
    if (k == ints.size()) {
      double obj;
      std::vector<double> point;
      if (static_cast<int>(ints.size()) == inst.num_cols()) {
        point = fixed.lower;
        if (modelchat::max_violation(inst, point) > 1e-9) return;
        obj = inst.offset;
        for (int j = 0; j < inst.num_cols(); ++j) obj += inst.cost[j] * point[j];
      } else {
        auto r = modelchat::solve_lp(fixed);
        if (!r.optimal()) return;
        obj = r.objective;
        point = r.primal;
      }
      if (!best.feasible || (maximize ? obj > best.objective : obj < best.objective)) {
        best = {true, obj, point};
      }
      return;
    }
    int j = ints[k];
    for (double v = std::ceil(inst.lower[j]); v <= std::floor(inst.upper[j]); v += 1.0) {
      fixed.lower[j] = fixed.upper[j] = v;
      rec(k + 1);
    }
    fixed.lower[j] = inst.lower[j];
    fixed.upper[j] = inst.upper[j];
  };
  rec(0);
  return best;
}

// Every irreducible infeasible subset of the instance's rows and finite
// bounds, by checking all subsets in order of size.
inline std::vector<std::vector<std::string>> all_iis(const modelchat::Instance& inst) {
  using modelchat::IisMember;
  std::vector<IisMember> members;
  for (int i = 0; i < inst.num_rows(); ++i) members.push_back({IisMember::Kind::Row, i, inst.rows[i].label(), ""});
  for (int j = 0; j < inst.num_cols(); ++j) {
    if (std::isfinite(inst.lower[j])) members.push_back({IisMember::Kind::LowerBound, j, inst.cols[j].label() + ".lb", ""});
    if (std::isfinite(inst.upper[j])) members.push_back({IisMember::Kind::UpperBound, j, inst.cols[j].label() + ".ub", ""});
  }
  const std::size_t k = members.size();
  std::vector<bool> infeasible(std::size_t{1} << k, false);
  std::vector<std::vector<std::string>> out;
  for (std::size_t mask = 1; mask < infeasible.size(); ++mask) {
    // Subsets of an infeasible set are checked first (smaller masks), so a
    // superset of a known infeasible set is infeasible without an LP.
    bool known = false;
    for (std::size_t b = 0; b < k && !known; ++b) {
      if ((mask >> b & 1) && infeasible[mask & ~(std::size_t{1} << b)]) known = true;
    }
    if (known) {
      infeasible[mask] = true;
      continue;
    }
    std::vector<IisMember> subset;
    for (std::size_t b = 0; b < k; ++b) {
      if (mask >> b & 1) subset.push_back(members[b]);
    }
    auto f = modelchat::check_feasible(modelchat::restrict_instance(inst, subset));
    if (f == modelchat::Feasibility::Infeasible) {
      infeasible[mask] = true;
      std::vector<std::string> ids;
      for (const auto& m : subset) ids.push_back(m.id);
      std::sort(ids.begin(), ids.end());
      out.push_back(ids);  // every proper subset was feasible, so irreducible
    }
  }
  return out;
}

}  // namespace testing
