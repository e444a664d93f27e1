#pragma once

// Symbolic optimization model, instantiation to standard form, and
// parameter modification. Every other component reads models through here.

#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace modelchat {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

using IndexTuple = std::vector<std::string>;

/// Wildcard entry accepted in partial index tuples (`pc["max", *]`).
inline constexpr std::string_view kWildcard = "*";

struct SourcePos {
  int line = 0;
  int column = 0;
};

// ---------------------------------------------------------------------------
// Expression AST. Nodes are immutable and shared; positions are carried for
// diagnostics but ignored by structural equality.

struct IndexArg {
  enum class Kind { Label, Binder };
  Kind kind = Kind::Label;
  std::string text;

  bool operator==(const IndexArg&) const = default;
};

struct Binder {
  std::string name;
  std::string set;

  bool operator==(const Binder&) const = default;
};

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
  enum class Kind { Number, Ref, Neg, Add, Mul, Sum };

  Kind kind = Kind::Number;
  double number = 0.0;                              // Number
  std::string name;                                 // Ref
  std::vector<IndexArg> args;                       // Ref
  std::vector<std::pair<int, ExprPtr>> terms;       // Add: (+1 | -1, term)
  ExprPtr lhs;                                      // Mul, Neg
  ExprPtr rhs;                                      // Mul
  std::vector<Binder> binders;                      // Sum
  ExprPtr body;                                     // Sum
  SourcePos pos;

  static ExprPtr make_number(double v, SourcePos pos = {});
  static ExprPtr make_ref(std::string name, std::vector<IndexArg> args, SourcePos pos = {});
  static ExprPtr make_neg(ExprPtr e, SourcePos pos = {});
  static ExprPtr make_add(std::vector<std::pair<int, ExprPtr>> terms, SourcePos pos = {});
  static ExprPtr make_mul(ExprPtr a, ExprPtr b, SourcePos pos = {});
  static ExprPtr make_sum(std::vector<Binder> binders, ExprPtr body, SourcePos pos = {});
};

bool expr_equal(const ExprPtr& a, const ExprPtr& b);

/// Canonical text of an expression; parsing it yields an equal tree.
std::string render_expr(const ExprPtr& e);

enum class Sense { Le, Ge, Eq };
enum class ObjectiveSense { Minimize, Maximize };
enum class Domain { Continuous, Integer, Binary };
enum class ParamSide { Unused, ObjectiveCost, ConstraintLhs, ConstraintRhs };
enum class SolveStatusCache { Unsolved, Optimal, Infeasible, Unbounded };

std::string to_string(Sense s);
std::string to_string(Domain d);
std::string to_string(ParamSide s);
std::string to_string(SolveStatusCache s);

// ---------------------------------------------------------------------------
// Declarations.

struct SetDecl {
  std::string name;
  std::string description;
  std::vector<std::string> members;
  SourcePos pos;

  bool operator==(const SetDecl& o) const {
    return name == o.name && description == o.description && members == o.members;
  }
};

struct ParamDecl {
  std::string name;
  std::string description;
  std::vector<std::string> index_sets;
  std::map<IndexTuple, double> values;  // scalar params use the empty tuple
  std::optional<double> default_value;
  ParamSide side = ParamSide::Unused;   // assigned by validation
  SourcePos pos;

  bool operator==(const ParamDecl& o) const {
    return name == o.name && description == o.description &&
           index_sets == o.index_sets && values == o.values &&
           default_value == o.default_value && side == o.side;
  }
};

struct VarDecl {
  std::string name;
  std::string description;
  std::vector<std::string> index_sets;
  Domain domain = Domain::Continuous;
  double lower = 0.0;
  double upper = kInf;
  std::map<IndexTuple, std::pair<double, double>> bound_overrides;
  SourcePos pos;

  bool operator==(const VarDecl& o) const {
    return name == o.name && description == o.description &&
           index_sets == o.index_sets && domain == o.domain && lower == o.lower &&
           upper == o.upper && bound_overrides == o.bound_overrides;
  }
};

struct ConstraintDecl {
  std::string name;
  std::string description;
  std::vector<Binder> binders;
  ExprPtr lhs;
  Sense sense = Sense::Le;
  ExprPtr rhs;
  SourcePos pos;

  bool operator==(const ConstraintDecl& o) const {
    return name == o.name && description == o.description && binders == o.binders &&
           sense == o.sense && expr_equal(lhs, o.lhs) && expr_equal(rhs, o.rhs);
  }
};

struct ObjectiveDecl {
  std::string name;
  std::string description;
  ObjectiveSense sense = ObjectiveSense::Minimize;
  ExprPtr expr;
  SourcePos pos;

  bool operator==(const ObjectiveDecl& o) const {
    return name == o.name && description == o.description && sense == o.sense &&
           expr_equal(expr, o.expr);
  }
};

enum class ComponentKind { Set, Parameter, Variable, Constraint, Objective };
std::string to_string(ComponentKind k);

struct ModelIR {
  std::string name;
  std::string description;
  std::vector<SetDecl> sets;
  std::vector<ParamDecl> params;
  std::vector<VarDecl> vars;
  std::vector<ConstraintDecl> constraints;
  ObjectiveDecl objective;
  SolveStatusCache status = SolveStatusCache::Unsolved;

  bool operator==(const ModelIR&) const = default;

  const SetDecl* find_set(std::string_view n) const;
  const ParamDecl* find_param(std::string_view n) const;
  const VarDecl* find_var(std::string_view n) const;
  const ConstraintDecl* find_constraint(std::string_view n) const;
  std::optional<ComponentKind> kind_of(std::string_view n) const;
  std::vector<std::string> component_names() const;

  /// True when some variable is integer or binary.
  bool has_integers() const;
};

/// Cartesian product of the named sets, in declaration (member) order.
std::vector<IndexTuple> index_product(const ModelIR& ir, const std::vector<std::string>& sets);

/// "name" or "name[a,b]".
std::string instance_label(std::string_view name, const IndexTuple& index);

/// Matches a concrete tuple against a partial pattern: a shorter pattern is a
/// prefix; `*` matches anything in its position.
bool index_matches(const IndexTuple& pattern, const IndexTuple& index);

// ---------------------------------------------------------------------------
// Errors.

class ModelError : public std::runtime_error {
 public:
  enum class Kind {
    NotFound,
    Ambiguous,
    InvalidIndex,
    Instantiation,
    Invalid,
    Nonlinear,
  };

  ModelError(Kind kind, std::string message, std::vector<std::string> suggestions = {},
             std::string path = {})
      : std::runtime_error(std::move(message)),
        kind_(kind),
        suggestions_(std::move(suggestions)),
        path_(std::move(path)) {}

  Kind kind() const { return kind_; }
  const std::vector<std::string>& suggestions() const { return suggestions_; }
  const std::string& path() const { return path_; }

 private:
  Kind kind_;
  std::vector<std::string> suggestions_;
  std::string path_;
};

// ---------------------------------------------------------------------------
// Validation.

struct Violation {
  std::string path;     // e.g. "constraints.cap" or "params.pc"
  std::string message;
  SourcePos pos;
};

struct ValidationReport {
  std::vector<Violation> violations;
  std::map<std::string, ParamSide> sides;

  bool ok() const { return violations.empty(); }
};

ValidationReport validate_model(const ModelIR& ir);

/// Returns a copy with parameter sides assigned; throws ModelError(Invalid)
/// carrying the first violation when the model does not validate.
ModelIR validated(ModelIR ir);

// ---------------------------------------------------------------------------
// Standard form.

struct ParamInstance {
  std::string name;
  IndexTuple index;

  bool operator==(const ParamInstance&) const = default;
  auto operator<=>(const ParamInstance&) const = default;
  std::string label() const { return instance_label(name, index); }
};

/// One additive contribution to a coefficient: factor * value(param), or just
/// factor for a literal.
struct Contribution {
  std::optional<ParamInstance> param;
  double factor = 1.0;

  bool operator==(const Contribution&) const = default;
};

struct RowId {
  std::string family;
  IndexTuple index;

  bool operator==(const RowId&) const = default;
  std::string label() const { return instance_label(family, index); }
};

struct ColId {
  std::string family;
  IndexTuple index;

  bool operator==(const ColId&) const = default;
  std::string label() const { return instance_label(family, index); }
};

struct MatrixEntry {
  int row = 0;
  int col = 0;
  double value = 0.0;
  std::vector<Contribution> sources;

  bool operator==(const MatrixEntry&) const = default;
};

/// Instantiated standard form. Entries are sorted by (row, col) with no
/// duplicate positions; explicit zeros produced by cancellation are kept so
/// that provenance survives.
struct Instance {
  std::vector<RowId> rows;
  std::vector<ColId> cols;
  std::vector<MatrixEntry> entries;
  std::vector<double> rhs;
  std::vector<std::vector<Contribution>> rhs_sources;
  std::vector<Sense> senses;
  std::vector<double> cost;
  std::vector<std::vector<Contribution>> cost_sources;
  double offset = 0.0;
  ObjectiveSense objective_sense = ObjectiveSense::Minimize;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<bool> integer;

  int num_rows() const { return static_cast<int>(rows.size()); }
  int num_cols() const { return static_cast<int>(cols.size()); }
  int num_integer() const;

  std::vector<std::vector<double>> dense() const;
  std::optional<int> find_row(std::string_view label) const;
  std::optional<int> find_col(std::string_view label) const;

  /// Row activity A x.
  std::vector<double> activity(const std::vector<double>& x) const;

  bool operator==(const Instance&) const = default;
};

Instance instantiate(const ModelIR& ir);

/// Human-readable row, e.g. "x + y <= 4".
std::string render_row(const Instance& inst, int row);

/// Linear form of one expression instance: var terms plus a constant.
struct LinearTerm {
  ColId var;
  double coef = 0.0;
  std::vector<Contribution> sources;
};

struct LinearForm {
  std::vector<LinearTerm> terms;  // merged by variable, first-appearance order
  double constant = 0.0;
  std::vector<Contribution> constant_sources;
};

/// Expands `expr` with the given binder assignment. Throws ModelError on
/// unresolved names, bad indices, or nonlinear products.
LinearForm expand_expr(const ModelIR& ir, const ExprPtr& expr,
                       const std::map<std::string, std::string>& env);

/// Appends the rows of one constraint family (all binder instances) to `inst`.
/// Columns must already exist. Used for counterfactual attachment.
void append_constraint_rows(const ModelIR& ir, const ConstraintDecl& con, Instance& inst);

// ---------------------------------------------------------------------------
// Modification.

enum class ModKind { SetTo, AddDelta, ScaleBy };
std::string to_string(ModKind k);
std::optional<ModKind> parse_mod_kind(std::string_view s);

/// Target is a parameter name, or "<var>.lb" / "<var>.ub" for variable
/// bounds. The index may be partial; every matching instance is modified.
struct Modification {
  std::string target;
  IndexTuple index;
  ModKind kind = ModKind::SetTo;
  double magnitude = 0.0;
  std::string units;

  bool operator==(const Modification&) const = default;
};

ModelIR apply_modification(const ModelIR& ir, const std::vector<Modification>& mods);

/// Parameter instances touched by a modification (after wildcard expansion).
std::vector<ParamInstance> modification_targets(const ModelIR& ir, const Modification& mod);

/// Notes for modifications that deserve a warning in reports (e.g. scaling
/// the right-hand side of an equality row).
std::vector<std::string> modification_notes(const ModelIR& ir, const std::vector<Modification>& mods);

double param_value(const ModelIR& ir, const ParamInstance& p);

/// Row labels whose right-hand side depends on `p`, with the multiplier.
std::vector<std::pair<int, double>> rhs_rows_of(const Instance& inst, const ParamInstance& p);

// ---------------------------------------------------------------------------
// Lookup.

struct ComponentEntry {
  IndexTuple index;
  std::optional<double> value;    // parameter value or solved variable value
  std::optional<double> dual;     // constraint dual (LP)
  std::optional<double> activity; // constraint lhs activity
  std::string expression;         // rendered constraint instance
};

struct ComponentView {
  ComponentKind kind = ComponentKind::Parameter;
  std::string name;
  std::string description;
  std::vector<std::string> index_sets;
  std::string detail;  // domain, side, sense, ...
  std::vector<ComponentEntry> entries;
};

/// Solved data made available to lookups, keyed by row / column label.
struct SolutionSnapshot {
  std::string status;
  std::optional<double> objective;
  std::map<std::string, double> primal;
  std::map<std::string, double> duals;
  std::map<std::string, double> activity;
};

ComponentView lookup_component(const ModelIR& ir, std::string_view name,
                               const std::optional<IndexTuple>& indices = std::nullopt,
                               const SolutionSnapshot* solution = nullptr);

/// Resolves a name or description keyword to a component name.
std::string resolve_component_name(const ModelIR& ir, std::string_view name);

}  // namespace modelchat
