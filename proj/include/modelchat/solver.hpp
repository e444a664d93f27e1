#pragma once

// Dense two-phase simplex with duals, and best-bound branch-and-bound on top
// of it. Each call owns its state; there is nothing global.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "modelchat/model.hpp"

namespace modelchat {

enum class SolveStatus { Optimal, Infeasible, Unbounded, IterationLimit, NodeLimit };
std::string to_string(SolveStatus s);

struct SolverOptions {
  double feasibility_tol = 1e-6;
  double pivot_tol = 1e-9;
  double integrality_tol = 1e-6;
  int max_iterations = 50000;    // pivots per LP
  int max_nodes = 100000;
  int bland_after = 1000;        // consecutive degenerate pivots
  bool relax_integrality = false;
};

struct SolveResult {
  SolveStatus status = SolveStatus::Infeasible;
  std::vector<double> primal;          // per instance column
  double objective = 0.0;              // declared sense, offset included
  std::vector<double> duals;           // per instance row, d(objective)/d(rhs)
  std::vector<double> reduced_costs;   // c - A^T y, declared sense
  std::vector<int> basis;              // basic column of each internal row
  bool degenerate = false;             // some basic variable at zero
  bool bland_engaged = false;
  int iterations = 0;
  std::vector<std::pair<int, int>> pivots;  // (row, entering column), in order

  // Branch-and-bound only.
  bool mip = false;
  std::optional<double> best_bound;
  std::optional<double> gap;
  int nodes = 0;

  bool optimal() const { return status == SolveStatus::Optimal; }
};

SolveResult solve_lp(const Instance& inst, const SolverOptions& opts = {});
SolveResult solve_milp(const Instance& inst, const SolverOptions& opts = {});

/// LP when the instance has no integer columns (or integrality is relaxed),
/// branch-and-bound otherwise.
SolveResult solve(const Instance& inst, const SolverOptions& opts = {});

enum class Feasibility { Feasible, Infeasible, Indeterminate };
std::string to_string(Feasibility f);

/// Phase one for LPs, zero-objective branch-and-bound for MILPs. Limit
/// statuses come back as Indeterminate.
Feasibility check_feasible(const Instance& inst, const SolverOptions& opts = {});

/// Largest violation of rows and bounds at `x` (0 when feasible).
double max_violation(const Instance& inst, const std::vector<double>& x);

}  // namespace modelchat
