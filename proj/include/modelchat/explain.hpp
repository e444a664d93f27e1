#pragma once

// Deterministic explanation strategies over a model: infeasibility
// isolation, elastic restoration, shadow prices, what-if re-solves and
// counterfactual constraints. None of them modifies its input.

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "modelchat/model.hpp"
#include "modelchat/omif.hpp"
#include "modelchat/solver.hpp"

namespace modelchat {

class ExplainError : public std::runtime_error {
 public:
  enum class Kind { ModelFeasible, InsufficientAdjustables, AggregateParameter, NotOptimal, InvalidRequest };

  ExplainError(Kind kind, std::string message, std::vector<std::string> details = {})
      : std::runtime_error(std::move(message)), kind_(kind), details_(std::move(details)) {}

  Kind kind() const { return kind_; }
  const std::vector<std::string>& details() const { return details_; }

 private:
  Kind kind_;
  std::vector<std::string> details_;
};

/// Solves with LP or branch-and-bound depending on the model's domains.
SolveResult solve_model(const ModelIR& ir, const SolverOptions& opts = {});

/// Solved data keyed by row / column label, for component lookups.
SolutionSnapshot make_snapshot(const Instance& inst, const SolveResult& res);

// ---------------------------------------------------------------------------
// Irreducible infeasible subsets.

struct IisMember {
  enum class Kind { Row, LowerBound, UpperBound };
  Kind kind = Kind::Row;
  int index = 0;       // row or column of the instance
  std::string id;      // "D", "cap[plant1]", "x.lb"
  std::string detail;  // rendered row or bound

  bool operator==(const IisMember&) const = default;
};

struct IISResult {
  std::vector<IisMember> members;
  int oracle_calls = 0;
  bool indeterminate = false;

  std::vector<std::string> ids() const;
};

/// Deletion filter: rows in instance order, then finite column bounds.
/// Throws ExplainError(ModelFeasible) when the instance is feasible.
IISResult compute_iis(const Instance& inst, const SolverOptions& opts = {});
IISResult compute_iis(const ModelIR& ir, const SolverOptions& opts = {});

/// The instance restricted to a subset of rows and bounds; the remaining
/// bounds are relaxed to infinity. Used to check IIS properties.
Instance restrict_instance(const Instance& inst, const std::vector<IisMember>& keep);

// ---------------------------------------------------------------------------
// Elastic restoration on right-hand-side parameters.

struct AdjustableRef {
  std::string name;     // parameter name or constraint family (its rhs parameters)
  IndexTuple index;     // partial index allowed
  double weight = 1.0;
};

struct SlackAssignment {
  ParamInstance param;
  double weight = 1.0;
  double increase = 0.0;  // amount by which the parameter value rises
  double decrease = 0.0;  // amount by which it falls
  bool can_increase = false;
  bool can_decrease = false;

  double change() const { return increase - decrease; }
};

struct RejectedRequest {
  std::string target;
  std::string reason;   // "lhs-parameter", "objective-parameter", ...
  std::string warning;
};

struct RestorationPlan {
  std::vector<SlackAssignment> slacks;  // one per adjustable parameter instance
  double total_penalty = 0.0;
  std::vector<RejectedRequest> rejected;
  bool defaulted = false;               // adjustables taken from the IIS
  std::vector<Modification> modifications;
  std::vector<double> certificate;      // a point feasible for the restored model
  bool certified = false;               // re-check of the restored model
  std::optional<IISResult> iis;         // set when adjustables were defaulted
};

/// Throws ExplainError(ModelFeasible) for feasible models and
/// ExplainError(InsufficientAdjustables) when the elastic model stays
/// infeasible; details then list the uncovered IIS members.
RestorationPlan restore_feasibility(const ModelIR& ir, const std::vector<AdjustableRef>& adjustable,
                                    const SolverOptions& opts = {});

/// Warning attached to requests for slack on constraint coefficients.
std::string lhs_immutability_warning(const std::string& target);

// ---------------------------------------------------------------------------
// Shadow prices.

enum class UnsupportedReason { LhsParameter, MilpModel, ObjectiveParameter, UnusedParameter };
std::string to_string(UnsupportedReason r);

struct SensitivityReport {
  ParamInstance param;
  std::optional<double> shadow_price;  // d(objective)/d(parameter), declared sense
  std::string row;
  double multiplier = 0.0;             // d(rhs)/d(parameter)
  bool degenerate = false;
  std::string validity_note;
  std::optional<UnsupportedReason> unsupported;
  std::string suggestion;
  std::optional<double> objective;
};

/// Throws ExplainError(AggregateParameter) when the reference reaches more
/// than one row or instance, ExplainError(NotOptimal) when the baseline has
/// no optimal basis, and ModelError for unknown names.
SensitivityReport sensitivity(const ModelIR& ir, const std::string& param, const IndexTuple& index = {},
                              const SolverOptions& opts = {});

// ---------------------------------------------------------------------------
// What-if and why-not re-solves.

struct VariableChange {
  std::string column;
  double before = 0.0;
  double after = 0.0;
};

/// Largest absolute changes first, ties by column order; at most `k`.
std::vector<VariableChange> changed_variables(const Instance& inst, const SolveResult& before,
                                              const SolveResult& after, std::size_t k = 10);

struct WhatIfReport {
  std::vector<Modification> modifications;
  SolveStatus baseline_status = SolveStatus::Infeasible;
  std::optional<double> baseline_objective;
  SolveStatus status = SolveStatus::Infeasible;
  std::optional<double> objective;
  std::optional<double> delta;
  std::vector<VariableChange> changes;
  std::vector<std::string> notes;
};

WhatIfReport evaluate_modification(const ModelIR& ir, const std::vector<Modification>& mods,
                                   const SolverOptions& opts = {});

struct WhyNotReport {
  std::vector<ConstraintSpec> specs;
  std::vector<std::string> families;   // names of the attached constraint families
  std::vector<std::string> canonical;  // expanded, normalized rows
  int rows_added = 0;
  SolveStatus baseline_status = SolveStatus::Infeasible;
  std::optional<double> baseline_objective;
  SolveStatus status = SolveStatus::Infeasible;
  std::optional<double> objective;
  std::optional<double> delta;
  std::vector<VariableChange> changes;
  std::optional<IISResult> iis;
};

/// Copy of `ir` with each spec added as a constraint family `why_not_<k>`.
ModelIR attach_counterfactuals(const ModelIR& ir, const std::vector<ConstraintSpec>& specs,
                               std::vector<std::string>* families = nullptr);

WhyNotReport apply_counterfactual(const ModelIR& ir, const std::vector<ConstraintSpec>& specs,
                                  const SolverOptions& opts = {});

}  // namespace modelchat
