#include "modelchat/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <sstream>

#include "modelchat/text.hpp"

namespace modelchat {

// ---------------------------------------------------------------------------
// AST construction and equality.

ExprPtr Expr::make_number(double v, SourcePos pos) {
  auto e = std::make_shared<Expr>();
  e->kind = Kind::Number;
  e->number = v;
  e->pos = pos;
  return e;
}

ExprPtr Expr::make_ref(std::string name, std::vector<IndexArg> args, SourcePos pos) {
  auto e = std::make_shared<Expr>();
  e->kind = Kind::Ref;
  e->name = std::move(name);
  e->args = std::move(args);
  e->pos = pos;
  return e;
}

ExprPtr Expr::make_neg(ExprPtr inner, SourcePos pos) {
  auto e = std::make_shared<Expr>();
  e->kind = Kind::Neg;
  e->lhs = std::move(inner);
  e->pos = pos;
  return e;
}

ExprPtr Expr::make_add(std::vector<std::pair<int, ExprPtr>> terms, SourcePos pos) {
  if (!terms.empty() && terms.front().first < 0) {
    terms.front() = {1, make_neg(terms.front().second, pos)};
  }
  if (terms.size() == 1) return terms.front().second;
  auto e = std::make_shared<Expr>();
  e->kind = Kind::Add;
  e->terms = std::move(terms);
  e->pos = pos;
  return e;
}

ExprPtr Expr::make_mul(ExprPtr a, ExprPtr b, SourcePos pos) {
  auto e = std::make_shared<Expr>();
  e->kind = Kind::Mul;
  e->lhs = std::move(a);
  e->rhs = std::move(b);
  e->pos = pos;
  return e;
}

ExprPtr Expr::make_sum(std::vector<Binder> binders, ExprPtr body, SourcePos pos) {
  auto e = std::make_shared<Expr>();
  e->kind = Kind::Sum;
  e->binders = std::move(binders);
  e->body = std::move(body);
  e->pos = pos;
  return e;
}

bool expr_equal(const ExprPtr& a, const ExprPtr& b) {
  if (a == b) return true;
  if (!a || !b) return false;
  if (a->kind != b->kind) return false;
  switch (a->kind) {
    case Expr::Kind::Number:
      return a->number == b->number;
    case Expr::Kind::Ref:
      return a->name == b->name && a->args == b->args;
    case Expr::Kind::Neg:
      return expr_equal(a->lhs, b->lhs);
    case Expr::Kind::Add:
      if (a->terms.size() != b->terms.size()) return false;
      for (std::size_t i = 0; i < a->terms.size(); ++i) {
        if (a->terms[i].first != b->terms[i].first) return false;
        if (!expr_equal(a->terms[i].second, b->terms[i].second)) return false;
      }
      return true;
    case Expr::Kind::Mul:
      return expr_equal(a->lhs, b->lhs) && expr_equal(a->rhs, b->rhs);
    case Expr::Kind::Sum:
      return a->binders == b->binders && expr_equal(a->body, b->body);
  }
  return false;
}

std::string to_string(Sense s) {
  switch (s) {
    case Sense::Le: return "<=";
    case Sense::Ge: return ">=";
    case Sense::Eq: return "=";
  }
  return "?";
}

std::string to_string(Domain d) {
  switch (d) {
    case Domain::Continuous: return "continuous";
    case Domain::Integer: return "integer";
    case Domain::Binary: return "binary";
  }
  return "?";
}

std::string to_string(ParamSide s) {
  switch (s) {
    case ParamSide::Unused: return "unused";
    case ParamSide::ObjectiveCost: return "objective-cost";
    case ParamSide::ConstraintLhs: return "constraint-lhs";
    case ParamSide::ConstraintRhs: return "constraint-rhs";
  }
  return "?";
}

std::string to_string(SolveStatusCache s) {
  switch (s) {
    case SolveStatusCache::Unsolved: return "unsolved";
    case SolveStatusCache::Optimal: return "optimal";
    case SolveStatusCache::Infeasible: return "infeasible";
    case SolveStatusCache::Unbounded: return "unbounded";
  }
  return "?";
}

std::string to_string(ComponentKind k) {
  switch (k) {
    case ComponentKind::Set: return "set";
    case ComponentKind::Parameter: return "parameter";
    case ComponentKind::Variable: return "variable";
    case ComponentKind::Constraint: return "constraint";
    case ComponentKind::Objective: return "objective";
  }
  return "?";
}

std::string to_string(ModKind k) {
  switch (k) {
    case ModKind::SetTo: return "set_to";
    case ModKind::AddDelta: return "add_delta";
    case ModKind::ScaleBy: return "scale_by";
  }
  return "?";
}

std::optional<ModKind> parse_mod_kind(std::string_view s) {
  std::string k = to_lower(s);
  std::replace(k.begin(), k.end(), '-', '_');
  if (k == "set_to" || k == "set") return ModKind::SetTo;
  if (k == "add_delta" || k == "add") return ModKind::AddDelta;
  if (k == "scale_by" || k == "scale") return ModKind::ScaleBy;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// ModelIR helpers.

namespace {

template <typename T>
const T* find_named(const std::vector<T>& v, std::string_view n) {
  for (const auto& d : v) {
    if (d.name == n) return &d;
  }
  return nullptr;
}

}  // namespace

const SetDecl* ModelIR::find_set(std::string_view n) const { return find_named(sets, n); }
const ParamDecl* ModelIR::find_param(std::string_view n) const { return find_named(params, n); }
const VarDecl* ModelIR::find_var(std::string_view n) const { return find_named(vars, n); }
const ConstraintDecl* ModelIR::find_constraint(std::string_view n) const {
  return find_named(constraints, n);
}

std::optional<ComponentKind> ModelIR::kind_of(std::string_view n) const {
  if (find_set(n)) return ComponentKind::Set;
  if (find_param(n)) return ComponentKind::Parameter;
  if (find_var(n)) return ComponentKind::Variable;
  if (find_constraint(n)) return ComponentKind::Constraint;
  if (!objective.name.empty() && objective.name == n) return ComponentKind::Objective;
  return std::nullopt;
}

std::vector<std::string> ModelIR::component_names() const {
  std::vector<std::string> out;
  for (const auto& s : sets) out.push_back(s.name);
  for (const auto& p : params) out.push_back(p.name);
  for (const auto& v : vars) out.push_back(v.name);
  for (const auto& c : constraints) out.push_back(c.name);
  if (!objective.name.empty()) out.push_back(objective.name);
  return out;
}

bool ModelIR::has_integers() const {
  return std::any_of(vars.begin(), vars.end(),
                     [](const VarDecl& v) { return v.domain != Domain::Continuous; });
}

std::vector<IndexTuple> index_product(const ModelIR& ir, const std::vector<std::string>& sets) {
  std::vector<IndexTuple> out{IndexTuple{}};
  for (const auto& sname : sets) {
    const SetDecl* s = ir.find_set(sname);
    if (!s) return {};
    std::vector<IndexTuple> next;
    next.reserve(out.size() * s->members.size());
    for (const auto& prefix : out) {
      for (const auto& m : s->members) {
        IndexTuple t = prefix;
        t.push_back(m);
        next.push_back(std::move(t));
      }
    }
    out = std::move(next);
  }
  return out;
}

std::string instance_label(std::string_view name, const IndexTuple& index) {
  std::string out(name);
  if (index.empty()) return out;
  out += '[';
  out += join(index, ",");
  out += ']';
  return out;
}

bool index_matches(const IndexTuple& pattern, const IndexTuple& index) {
  if (pattern.size() > index.size()) return false;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    if (pattern[i] != kWildcard && pattern[i] != index[i]) return false;
  }
  return true;
}

int Instance::num_integer() const {
  return static_cast<int>(std::count(integer.begin(), integer.end(), true));
}

std::vector<std::vector<double>> Instance::dense() const {
  std::vector<std::vector<double>> d(rows.size(), std::vector<double>(cols.size(), 0.0));
  for (const auto& e : entries) d[e.row][e.col] += e.value;
  return d;
}

std::optional<int> Instance::find_row(std::string_view label) const {
  for (int i = 0; i < num_rows(); ++i) {
    if (rows[i].label() == label) return i;
  }
  return std::nullopt;
}

std::optional<int> Instance::find_col(std::string_view label) const {
  for (int j = 0; j < num_cols(); ++j) {
    if (cols[j].label() == label) return j;
  }
  return std::nullopt;
}

std::vector<double> Instance::activity(const std::vector<double>& x) const {
  std::vector<double> act(rows.size(), 0.0);
  for (const auto& e : entries) act[e.row] += e.value * x[e.col];
  return act;
}

// ---------------------------------------------------------------------------
// Static analysis: name resolution, index checks, linearity, parameter sides.

namespace {

struct Analyzer {
  const ModelIR& ir;
  std::vector<Violation>& out;
  std::map<std::string, std::set<ParamSide>> sides;

  void report(const std::string& path, std::string msg, SourcePos pos) {
    out.push_back({path, std::move(msg), pos});
  }

  bool contains_var(const ExprPtr& e) const {
    if (!e) return false;
    switch (e->kind) {
      case Expr::Kind::Number: return false;
      case Expr::Kind::Ref: return ir.find_var(e->name) != nullptr;
      case Expr::Kind::Neg: return contains_var(e->lhs);
      case Expr::Kind::Add:
        return std::any_of(e->terms.begin(), e->terms.end(),
                           [&](const auto& t) { return contains_var(t.second); });
      case Expr::Kind::Mul: return contains_var(e->lhs) || contains_var(e->rhs);
      case Expr::Kind::Sum: return contains_var(e->body);
    }
    return false;
  }

  bool contains_param(const ExprPtr& e) const {
    if (!e) return false;
    switch (e->kind) {
      case Expr::Kind::Number: return false;
      case Expr::Kind::Ref: return ir.find_param(e->name) != nullptr;
      case Expr::Kind::Neg: return contains_param(e->lhs);
      case Expr::Kind::Add:
        return std::any_of(e->terms.begin(), e->terms.end(),
                           [&](const auto& t) { return contains_param(t.second); });
      case Expr::Kind::Mul: return contains_param(e->lhs) || contains_param(e->rhs);
      case Expr::Kind::Sum: return contains_param(e->body);
    }
    return false;
  }

  bool subset_of(const SetDecl& inner, const SetDecl& outer) const {
    if (inner.name == outer.name) return true;
    return std::all_of(inner.members.begin(), inner.members.end(), [&](const std::string& m) {
      return std::find(outer.members.begin(), outer.members.end(), m) != outer.members.end();
    });
  }

  void check_args(const std::string& path, const ExprPtr& ref,
                  const std::vector<std::string>& dims,
                  const std::map<std::string, std::string>& env) {
    if (ref->args.size() != dims.size()) {
      report(path,
             "index arity mismatch for '" + ref->name + "': expected " +
                 std::to_string(dims.size()) + ", got " + std::to_string(ref->args.size()),
             ref->pos);
      return;
    }
    for (std::size_t i = 0; i < dims.size(); ++i) {
      const SetDecl* dim = ir.find_set(dims[i]);
      if (!dim) continue;  // reported on the declaration
      const IndexArg& a = ref->args[i];
      if (a.kind == IndexArg::Kind::Binder) {
        auto it = env.find(a.text);
        if (it == env.end()) {
          report(path, "unbound index '" + a.text + "'", ref->pos);
          continue;
        }
        const SetDecl* bs = ir.find_set(it->second);
        if (bs && !subset_of(*bs, *dim)) {
          report(path,
                 "index set mismatch: '" + a.text + "' ranges over " + bs->name +
                     " but dimension " + std::to_string(i + 1) + " of '" + ref->name +
                     "' is " + dim->name,
                 ref->pos);
        }
      } else if (std::find(dim->members.begin(), dim->members.end(), a.text) ==
                 dim->members.end()) {
        report(path,
               "unknown index '" + a.text + "' for dimension " + std::to_string(i + 1) +
                   " of '" + ref->name + "' (set " + dim->name + ")",
               ref->pos);
      }
    }
  }

  // `scaled_by_var`: the node is (transitively) a factor of a product whose
  // other factor contains a decision variable.
  void walk(const std::string& path, const ExprPtr& e, std::map<std::string, std::string>& env,
            bool in_objective, bool scaled_by_var) {
    if (!e) return;
    switch (e->kind) {
      case Expr::Kind::Number:
        return;
      case Expr::Kind::Ref: {
        if (const ParamDecl* p = ir.find_param(e->name)) {
          check_args(path, e, p->index_sets, env);
          ParamSide side = in_objective   ? ParamSide::ObjectiveCost
                           : scaled_by_var ? ParamSide::ConstraintLhs
                                           : ParamSide::ConstraintRhs;
          sides[p->name].insert(side);
        } else if (const VarDecl* v = ir.find_var(e->name)) {
          check_args(path, e, v->index_sets, env);
        } else {
          auto kind = ir.kind_of(e->name);
          std::string msg;
          if (kind) {
            msg = "'" + e->name + "' is a " + to_string(*kind) +
                  ", not a parameter or variable";
          } else {
            msg = "unknown name '" + e->name + "'";
            auto sugg = closest_names(e->name, ir.component_names());
            if (!sugg.empty()) msg += "; did you mean: " + join(sugg, ", ");
          }
          report(path, msg, e->pos);
        }
        return;
      }
      case Expr::Kind::Neg:
        walk(path, e->lhs, env, in_objective, scaled_by_var);
        return;
      case Expr::Kind::Add:
        for (const auto& t : e->terms) walk(path, t.second, env, in_objective, scaled_by_var);
        return;
      case Expr::Kind::Mul: {
        bool lv = contains_var(e->lhs), rv = contains_var(e->rhs);
        if (lv && rv) {
          report(path, "nonlinearity not supported: product of decision variables", e->pos);
        }
        if (contains_param(e->lhs) && contains_param(e->rhs)) {
          report(path,
                 "product of parameters not supported; declare a combined parameter", e->pos);
        }
        walk(path, e->lhs, env, in_objective, scaled_by_var || rv);
        walk(path, e->rhs, env, in_objective, scaled_by_var || lv);
        return;
      }
      case Expr::Kind::Sum: {
        std::vector<std::string> added;
        for (const auto& b : e->binders) {
          if (!ir.find_set(b.set)) {
            report(path, "unknown set '" + b.set + "' in aggregation", e->pos);
          }
          if (env.count(b.name)) {
            report(path, "index '" + b.name + "' is already bound", e->pos);
            continue;
          }
          env[b.name] = b.set;
          added.push_back(b.name);
        }
        walk(path, e->body, env, in_objective, scaled_by_var);
        for (const auto& n : added) env.erase(n);
        return;
      }
    }
  }
};

void check_description(std::vector<Violation>& out, const std::string& path,
                       const std::string& desc, SourcePos pos) {
  if (trim(desc).empty()) out.push_back({path, "description required", pos});
}

}  // namespace

ValidationReport validate_model(const ModelIR& ir) {
  ValidationReport rep;
  auto& v = rep.violations;

  std::set<std::string> seen;
  auto check_unique = [&](const std::string& name, const std::string& path, SourcePos pos) {
    if (name.empty()) {
      v.push_back({path, "empty component name", pos});
    } else if (!seen.insert(name).second) {
      v.push_back({path, "duplicate component name '" + name + "'", pos});
    }
  };

  for (const auto& s : ir.sets) {
    std::string path = "sets." + s.name;
    check_unique(s.name, path, s.pos);
    check_description(v, path, s.description, s.pos);
    std::set<std::string> members;
    for (const auto& m : s.members) {
      if (!members.insert(m).second) v.push_back({path, "duplicate set member '" + m + "'", s.pos});
    }
  }

  auto check_dims = [&](const std::string& path, const std::vector<std::string>& dims,
                        SourcePos pos) {
    bool ok = true;
    for (const auto& d : dims) {
      if (!ir.find_set(d)) {
        std::string msg = "unknown set '" + d + "'";
        std::vector<std::string> set_names;
        for (const auto& s : ir.sets) set_names.push_back(s.name);
        auto sugg = closest_names(d, set_names);
        if (!sugg.empty()) msg += "; did you mean: " + join(sugg, ", ");
        v.push_back({path, msg, pos});
        ok = false;
      }
    }
    return ok;
  };

  auto check_key = [&](const std::string& path, const std::vector<std::string>& dims,
                       const IndexTuple& key, SourcePos pos) {
    if (key.size() != dims.size()) {
      v.push_back({path, "index arity mismatch in '" + instance_label("", key) + "'", pos});
      return;
    }
    for (std::size_t i = 0; i < dims.size(); ++i) {
      const SetDecl* s = ir.find_set(dims[i]);
      if (s && std::find(s->members.begin(), s->members.end(), key[i]) == s->members.end()) {
        v.push_back({path, "unknown index '" + key[i] + "' (set " + s->name + ")", pos});
      }
    }
  };

  for (const auto& p : ir.params) {
    std::string path = "params." + p.name;
    check_unique(p.name, path, p.pos);
    check_description(v, path, p.description, p.pos);
    if (!check_dims(path, p.index_sets, p.pos)) continue;
    for (const auto& [key, val] : p.values) {
      check_key(path, p.index_sets, key, p.pos);
      if (!std::isfinite(val)) {
        v.push_back({path, "non-finite value at " + instance_label(p.name, key), p.pos});
      }
    }
    if (p.default_value && !std::isfinite(*p.default_value)) {
      v.push_back({path, "non-finite default value", p.pos});
    }
    if (!p.default_value) {
      for (const auto& t : index_product(ir, p.index_sets)) {
        if (!p.values.count(t)) {
          v.push_back({path, "missing value for " + instance_label(p.name, t) +
                                 " and no default declared",
                       p.pos});
          break;
        }
      }
    }
  }

  for (const auto& var : ir.vars) {
    std::string path = "vars." + var.name;
    check_unique(var.name, path, var.pos);
    check_description(v, path, var.description, var.pos);
    check_dims(path, var.index_sets, var.pos);
    if (std::isnan(var.lower) || std::isnan(var.upper) || var.lower > var.upper) {
      v.push_back({path, "invalid bounds", var.pos});
    }
    for (const auto& [key, b] : var.bound_overrides) {
      check_key(path, var.index_sets, key, var.pos);
      if (std::isnan(b.first) || std::isnan(b.second) || b.first > b.second) {
        v.push_back({path, "invalid bounds at " + instance_label(var.name, key), var.pos});
      }
    }
  }

  Analyzer an{ir, v, {}};
  for (const auto& c : ir.constraints) {
    std::string path = "constraints." + c.name;
    check_unique(c.name, path, c.pos);
    check_description(v, path, c.description, c.pos);
    std::map<std::string, std::string> env;
    for (const auto& b : c.binders) {
      if (!ir.find_set(b.set)) v.push_back({path, "unknown set '" + b.set + "'", c.pos});
      if (!env.emplace(b.name, b.set).second) {
        v.push_back({path, "index '" + b.name + "' is already bound", c.pos});
      }
    }
    if (!c.lhs || !c.rhs) {
      v.push_back({path, "constraint expression missing", c.pos});
      continue;
    }
    an.walk(path, c.lhs, env, false, false);
    an.walk(path, c.rhs, env, false, false);
  }

  {
    std::string path = "objective";
    if (!ir.objective.expr) {
      v.push_back({path, "objective missing", ir.objective.pos});
    } else {
      check_unique(ir.objective.name, path, ir.objective.pos);
      check_description(v, path, ir.objective.description, ir.objective.pos);
      std::map<std::string, std::string> env;
      an.walk(path, ir.objective.expr, env, true, false);
    }
  }

  for (const auto& p : ir.params) rep.sides[p.name] = ParamSide::Unused;
  for (auto [name, s] : an.sides) {
    // Objective use alongside a constraint role is fine; the constraint role is the tag.
    if (s.size() > 1) s.erase(ParamSide::ObjectiveCost);
    if (s.size() > 1) {
      std::vector<std::string> names;
      for (auto side : s) names.push_back(to_string(side));
      const ParamDecl* p = ir.find_param(name);
      v.push_back({"params." + name,
                   "ambiguous side: parameter '" + name + "' is used as " + join(names, " and "),
                   p ? p->pos : SourcePos{}});
    }
    rep.sides[name] = *s.begin();
  }

  if (v.empty()) {
    try {
      Instance inst = instantiate(ir);
      if (inst.num_cols() == 0) v.push_back({"vars", "model has no decision variables", {}});
      if (inst.num_rows() == 0) v.push_back({"constraints", "model has no constraint rows", {}});
    } catch (const ModelError& e) {
      v.push_back({e.path(), e.what(), {}});
    }
  }
  return rep;
}

ModelIR validated(ModelIR ir) {
  ValidationReport rep = validate_model(ir);
  if (!rep.ok()) {
    const auto& first = rep.violations.front();
    throw ModelError(ModelError::Kind::Invalid, first.path + ": " + first.message, {}, first.path);
  }
  for (auto& p : ir.params) p.side = rep.sides[p.name];
  return ir;
}

// ---------------------------------------------------------------------------
// Expansion.

namespace {

struct Mono {
  double coef = 1.0;
  std::optional<ParamInstance> param;
  std::optional<ColId> var;
};

using Poly = std::vector<Mono>;

IndexTuple resolve_args(const ExprPtr& e, const std::map<std::string, std::string>& env) {
  IndexTuple t;
  t.reserve(e->args.size());
  for (const auto& a : e->args) {
    if (a.kind == IndexArg::Kind::Binder) {
      auto it = env.find(a.text);
      if (it == env.end()) {
        throw ModelError(ModelError::Kind::InvalidIndex, "unbound index '" + a.text + "'");
      }
      t.push_back(it->second);
    } else {
      t.push_back(a.text);
    }
  }
  return t;
}

void check_index(const ModelIR& ir, const std::string& name, const std::vector<std::string>& dims,
                 const IndexTuple& idx) {
  if (idx.size() != dims.size()) {
    throw ModelError(ModelError::Kind::InvalidIndex,
                     "index arity mismatch for '" + name + "': expected " +
                         std::to_string(dims.size()) + ", got " + std::to_string(idx.size()));
  }
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const SetDecl* s = ir.find_set(dims[i]);
    if (!s || std::find(s->members.begin(), s->members.end(), idx[i]) == s->members.end()) {
      throw ModelError(ModelError::Kind::InvalidIndex,
                       "unknown index '" + idx[i] + "' for '" + name + "'" +
                           (s ? "; valid: " + join(s->members, ", ") : std::string{}));
    }
  }
}

Poly expand_poly(const ModelIR& ir, const ExprPtr& e, std::map<std::string, std::string>& env) {
  switch (e->kind) {
    case Expr::Kind::Number:
      return {Mono{e->number, std::nullopt, std::nullopt}};
    case Expr::Kind::Ref: {
      IndexTuple idx = resolve_args(e, env);
      if (const ParamDecl* p = ir.find_param(e->name)) {
        check_index(ir, p->name, p->index_sets, idx);
        return {Mono{1.0, ParamInstance{p->name, idx}, std::nullopt}};
      }
      if (const VarDecl* v = ir.find_var(e->name)) {
        check_index(ir, v->name, v->index_sets, idx);
        return {Mono{1.0, std::nullopt, ColId{v->name, idx}}};
      }
      auto sugg = closest_names(e->name, ir.component_names());
      throw ModelError(ModelError::Kind::NotFound, "unknown name '" + e->name + "'", sugg);
    }
    case Expr::Kind::Neg: {
      Poly p = expand_poly(ir, e->lhs, env);
      for (auto& m : p) m.coef = -m.coef;
      return p;
    }
    case Expr::Kind::Add: {
      Poly out;
      for (const auto& [sign, t] : e->terms) {
        Poly p = expand_poly(ir, t, env);
        for (auto& m : p) {
          m.coef *= sign;
          out.push_back(std::move(m));
        }
      }
      return out;
    }
    case Expr::Kind::Mul: {
      Poly a = expand_poly(ir, e->lhs, env);
      Poly b = expand_poly(ir, e->rhs, env);
      Poly out;
      out.reserve(a.size() * b.size());
      for (const auto& x : a) {
        for (const auto& y : b) {
          if (x.var && y.var) {
            throw ModelError(ModelError::Kind::Nonlinear,
                             "nonlinearity not supported: " + x.var->label() + " * " +
                                 y.var->label());
          }
          if (x.param && y.param) {
            throw ModelError(ModelError::Kind::Nonlinear,
                             "product of parameters not supported: " + x.param->label() +
                                 " * " + y.param->label());
          }
          Mono m;
          m.coef = x.coef * y.coef;
          m.param = x.param ? x.param : y.param;
          m.var = x.var ? x.var : y.var;
          out.push_back(std::move(m));
        }
      }
      return out;
    }
    case Expr::Kind::Sum: {
      Poly out;
      std::vector<std::string> sets;
      for (const auto& b : e->binders) {
        if (!ir.find_set(b.set)) {
          throw ModelError(ModelError::Kind::NotFound, "unknown set '" + b.set + "'");
        }
        sets.push_back(b.set);
      }
      for (const auto& tuple : index_product(ir, sets)) {
        for (std::size_t i = 0; i < tuple.size(); ++i) env[e->binders[i].name] = tuple[i];
        Poly p = expand_poly(ir, e->body, env);
        out.insert(out.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
      }
      for (const auto& b : e->binders) env.erase(b.name);
      return out;
    }
  }
  return {};
}

double checked_value(const ModelIR& ir, const Mono& m) {
  double v = m.coef * (m.param ? param_value(ir, *m.param) : 1.0);
  if (!std::isfinite(v)) {
    std::string who = m.param ? "parameter instance " + m.param->label() : "literal coefficient";
    throw ModelError(ModelError::Kind::Instantiation, "non-finite value produced by " + who,
                     {}, m.param ? "params." + m.param->name : std::string{});
  }
  return v;
}

}  // namespace

double param_value(const ModelIR& ir, const ParamInstance& pi) {
  const ParamDecl* p = ir.find_param(pi.name);
  if (!p) throw ModelError(ModelError::Kind::NotFound, "unknown parameter '" + pi.name + "'");
  auto it = p->values.find(pi.index);
  if (it != p->values.end()) return it->second;
  if (p->default_value) return *p->default_value;
  throw ModelError(ModelError::Kind::Instantiation, "missing value for " + pi.label(), {},
                   "params." + pi.name);
}

LinearForm expand_expr(const ModelIR& ir, const ExprPtr& expr,
                       const std::map<std::string, std::string>& env) {
  auto local = env;
  Poly poly = expand_poly(ir, expr, local);
  LinearForm lf;
  std::map<std::string, std::size_t> pos;
  for (const auto& m : poly) {
    double v = checked_value(ir, m);
    if (m.var) {
      std::string key = m.var->label();
      auto it = pos.find(key);
      if (it == pos.end()) {
        pos.emplace(key, lf.terms.size());
        lf.terms.push_back(LinearTerm{*m.var, 0.0, {}});
        it = pos.find(key);
      }
      LinearTerm& t = lf.terms[it->second];
      t.coef += v;
      t.sources.push_back(Contribution{m.param, m.coef});
    } else {
      lf.constant += v;
      lf.constant_sources.push_back(Contribution{m.param, m.coef});
    }
  }
  return lf;
}

namespace {

std::map<std::string, int> column_map(const Instance& inst) {
  std::map<std::string, int> m;
  for (int j = 0; j < inst.num_cols(); ++j) m.emplace(inst.cols[j].label(), j);
  return m;
}

void append_rows_with(const ModelIR& ir, const ConstraintDecl& con, Instance& inst,
                      const std::map<std::string, int>& cols) {
  std::vector<std::string> sets;
  for (const auto& b : con.binders) sets.push_back(b.set);
  for (const auto& tuple : index_product(ir, sets)) {
    std::map<std::string, std::string> env;
    for (std::size_t i = 0; i < tuple.size(); ++i) env[con.binders[i].name] = tuple[i];
    LinearForm l, r;
    try {
      l = expand_expr(ir, con.lhs, env);
      r = expand_expr(ir, con.rhs, env);
    } catch (const ModelError& e) {
      std::string path = e.path().empty() ? "constraints." + con.name : e.path();
      throw ModelError(e.kind(), instance_label(con.name, tuple) + ": " + e.what(),
                       e.suggestions(), path);
    }
    int row = inst.num_rows();
    inst.rows.push_back(RowId{con.name, tuple});
    inst.senses.push_back(con.sense);

    std::map<int, MatrixEntry> row_entries;
    auto add_terms = [&](const LinearForm& f, double sign) {
      for (const auto& t : f.terms) {
        auto it = cols.find(t.var.label());
        if (it == cols.end()) {
          throw ModelError(ModelError::Kind::NotFound, "unknown column " + t.var.label());
        }
        MatrixEntry& me = row_entries[it->second];
        me.row = row;
        me.col = it->second;
        me.value += sign * t.coef;
        for (auto c : t.sources) {
          c.factor *= sign;
          me.sources.push_back(std::move(c));
        }
      }
    };
    add_terms(l, 1.0);
    add_terms(r, -1.0);
    for (auto& [col, me] : row_entries) inst.entries.push_back(std::move(me));

    inst.rhs.push_back(r.constant - l.constant);
    std::vector<Contribution> src = r.constant_sources;
    for (auto c : l.constant_sources) {
      c.factor = -c.factor;
      src.push_back(std::move(c));
    }
    inst.rhs_sources.push_back(std::move(src));
  }
}

}  // namespace

void append_constraint_rows(const ModelIR& ir, const ConstraintDecl& con, Instance& inst) {
  append_rows_with(ir, con, inst, column_map(inst));
}

Instance instantiate(const ModelIR& ir) {
  Instance inst;
  for (const auto& v : ir.vars) {
    for (const auto& t : index_product(ir, v.index_sets)) {
      double lo = v.lower, hi = v.upper;
      if (auto it = v.bound_overrides.find(t); it != v.bound_overrides.end()) {
        lo = it->second.first;
        hi = it->second.second;
      }
      if (v.domain == Domain::Binary) {
        lo = std::max(lo, 0.0);
        hi = std::min(hi, 1.0);
      }
      inst.cols.push_back(ColId{v.name, t});
      inst.lower.push_back(lo);
      inst.upper.push_back(hi);
      inst.integer.push_back(v.domain != Domain::Continuous);
    }
  }
  auto cols = column_map(inst);
  for (const auto& c : ir.constraints) append_rows_with(ir, c, inst, cols);

  inst.cost.assign(inst.cols.size(), 0.0);
  inst.cost_sources.assign(inst.cols.size(), {});
  inst.objective_sense = ir.objective.sense;
  if (ir.objective.expr) {
    LinearForm obj;
    try {
      obj = expand_expr(ir, ir.objective.expr, {});
    } catch (const ModelError& e) {
      throw ModelError(e.kind(), std::string("objective: ") + e.what(), e.suggestions(),
                       e.path().empty() ? "objective" : e.path());
    }
    for (const auto& t : obj.terms) {
      int j = cols.at(t.var.label());
      inst.cost[j] += t.coef;
      auto& src = inst.cost_sources[j];
      src.insert(src.end(), t.sources.begin(), t.sources.end());
    }
    inst.offset = obj.constant;
  }
  return inst;
}

std::vector<std::pair<int, double>> rhs_rows_of(const Instance& inst, const ParamInstance& p) {
  std::vector<std::pair<int, double>> out;
  for (int i = 0; i < inst.num_rows(); ++i) {
    double mult = 0.0;
    bool found = false;
    for (const auto& c : inst.rhs_sources[i]) {
      if (c.param && *c.param == p) {
        mult += c.factor;
        found = true;
      }
    }
    if (found) out.emplace_back(i, mult);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Modification.

namespace {

[[noreturn]] void throw_unknown_target(const ModelIR& ir, const std::string& target) {
  std::vector<std::string> candidates;
  for (const auto& p : ir.params) candidates.push_back(p.name);
  for (const auto& v : ir.vars) {
    candidates.push_back(v.name + ".lb");
    candidates.push_back(v.name + ".ub");
  }
  auto sugg = closest_names(target, candidates);
  std::string msg = "unknown modification target '" + target + "'";
  if (!sugg.empty()) msg += "; did you mean: " + join(sugg, ", ");
  throw ModelError(ModelError::Kind::NotFound, msg, sugg);
}

void check_pattern(const ModelIR& ir, const std::string& name, const std::vector<std::string>& dims,
                   const IndexTuple& pattern) {
  if (pattern.size() > dims.size()) {
    throw ModelError(ModelError::Kind::InvalidIndex,
                     "too many indices for '" + name + "': expected at most " +
                         std::to_string(dims.size()));
  }
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    if (pattern[i] == kWildcard) continue;
    const SetDecl* s = ir.find_set(dims[i]);
    if (s && std::find(s->members.begin(), s->members.end(), pattern[i]) == s->members.end()) {
      throw ModelError(ModelError::Kind::InvalidIndex,
                       "unknown index " + pattern[i] + "; valid: " + join(s->members, ", "),
                       closest_names(pattern[i], s->members));
    }
  }
}

double modified(double v, const Modification& m) {
  switch (m.kind) {
    case ModKind::SetTo: return m.magnitude;
    case ModKind::AddDelta: return v + m.magnitude;
    case ModKind::ScaleBy: return v * m.magnitude;
  }
  return v;
}

std::optional<std::pair<std::string, bool>> bound_target(const ModelIR& ir,
                                                         const std::string& target) {
  for (const char* suffix : {".lb", ".ub"}) {
    std::string s(suffix);
    if (target.size() > s.size() && target.compare(target.size() - s.size(), s.size(), s) == 0) {
      std::string var = target.substr(0, target.size() - s.size());
      if (ir.find_var(var)) return std::make_pair(var, s == ".lb");
    }
  }
  return std::nullopt;
}

}  // namespace

std::vector<ParamInstance> modification_targets(const ModelIR& ir, const Modification& mod) {
  const ParamDecl* p = ir.find_param(mod.target);
  if (!p) {
    if (bound_target(ir, mod.target)) return {};
    throw_unknown_target(ir, mod.target);
  }
  check_pattern(ir, p->name, p->index_sets, mod.index);
  std::vector<ParamInstance> out;
  for (const auto& t : index_product(ir, p->index_sets)) {
    if (index_matches(mod.index, t)) out.push_back(ParamInstance{p->name, t});
  }
  return out;
}

ModelIR apply_modification(const ModelIR& ir, const std::vector<Modification>& mods) {
  ModelIR out = ir;
  for (const auto& m : mods) {
    if (auto bt = bound_target(out, m.target); bt && !out.find_param(m.target)) {
      auto& var = *std::find_if(out.vars.begin(), out.vars.end(),
                                [&](const VarDecl& v) { return v.name == bt->first; });
      check_pattern(out, var.name, var.index_sets, m.index);
      for (const auto& t : index_product(out, var.index_sets)) {
        if (!index_matches(m.index, t)) continue;
        auto bounds = std::make_pair(var.lower, var.upper);
        if (auto it = var.bound_overrides.find(t); it != var.bound_overrides.end()) {
          bounds = it->second;
        }
        double& which = bt->second ? bounds.first : bounds.second;
        which = modified(which, m);
        if (std::isnan(which)) {
          throw ModelError(ModelError::Kind::Instantiation,
                           "modification yields an invalid bound for " +
                               instance_label(var.name, t));
        }
        var.bound_overrides[t] = bounds;
      }
      continue;
    }
    auto targets = modification_targets(out, m);
    auto& decl = *std::find_if(out.params.begin(), out.params.end(),
                               [&](const ParamDecl& p) { return p.name == m.target; });
    for (const auto& pi : targets) {
      double nv = modified(param_value(out, pi), m);
      if (!std::isfinite(nv)) {
        throw ModelError(ModelError::Kind::Instantiation,
                         "modification yields a non-finite value for " + pi.label());
      }
      decl.values[pi.index] = nv;
    }
  }
  out.status = SolveStatusCache::Unsolved;
  return out;
}

std::vector<std::string> modification_notes(const ModelIR& ir,
                                            const std::vector<Modification>& mods) {
  std::vector<std::string> notes;
  std::optional<Instance> inst;
  for (const auto& m : mods) {
    if (m.kind != ModKind::ScaleBy) continue;
    const ParamDecl* p = ir.find_param(m.target);
    if (!p || p->side != ParamSide::ConstraintRhs) continue;
    if (!inst) inst = instantiate(ir);
    for (const auto& pi : modification_targets(ir, m)) {
      for (auto [row, mult] : rhs_rows_of(*inst, pi)) {
        if (inst->senses[row] == Sense::Eq) {
          notes.push_back("scaling " + pi.label() + " changes the right-hand side of equality row " +
                          inst->rows[row].label());
        }
      }
    }
  }
  return notes;
}

// ---------------------------------------------------------------------------
// Lookup.

namespace {

const std::set<std::string>& stopwords() {
  static const std::set<std::string> words = {
      "the", "a", "an", "of", "for", "in", "on", "at", "to", "and", "or", "is", "are",
      "what", "which", "how", "many", "much", "value", "values", "all", "per", "by", "with"};
  return words;
}

bool token_match(const std::string& q, const std::string& t) {
  if (q == t) return true;
  std::size_t n = 0;
  while (n < q.size() && n < t.size() && q[n] == t[n]) ++n;
  return n >= 5;
}

struct Named {
  std::string name;
  std::string description;
};

std::vector<Named> all_components(const ModelIR& ir) {
  std::vector<Named> out;
  for (const auto& s : ir.sets) out.push_back({s.name, s.description});
  for (const auto& p : ir.params) out.push_back({p.name, p.description});
  for (const auto& v : ir.vars) out.push_back({v.name, v.description});
  for (const auto& c : ir.constraints) out.push_back({c.name, c.description});
  if (!ir.objective.name.empty()) out.push_back({ir.objective.name, ir.objective.description});
  return out;
}

}  // namespace

std::string resolve_component_name(const ModelIR& ir, std::string_view name) {
  if (ir.kind_of(name)) return std::string(name);
  std::vector<std::string> query;
  for (auto& t : word_tokens(name)) {
    if (!stopwords().count(t)) query.push_back(t);
  }
  std::vector<std::string> matches;
  if (!query.empty()) {
    for (const auto& c : all_components(ir)) {
      auto tokens = word_tokens(c.name);
      auto dt = word_tokens(c.description);
      tokens.insert(tokens.end(), dt.begin(), dt.end());
      bool all = std::all_of(query.begin(), query.end(), [&](const std::string& q) {
        return std::any_of(tokens.begin(), tokens.end(),
                           [&](const std::string& t) { return token_match(q, t); });
      });
      if (all) matches.push_back(c.name);
    }
  }
  if (matches.size() == 1) return matches.front();
  if (matches.size() > 1) {
    throw ModelError(ModelError::Kind::Ambiguous,
                     "ambiguous component '" + std::string(name) + "'; candidates: " +
                         join(matches, ", "),
                     matches);
  }
  auto sugg = closest_names(name, ir.component_names());
  std::string msg = "component '" + std::string(name) + "' not found";
  if (!sugg.empty()) msg += "; did you mean: " + join(sugg, ", ");
  throw ModelError(ModelError::Kind::NotFound, msg, sugg);
}

namespace {

std::string bounds_text(double lo, double hi) {
  return "[" + format_number(lo) + ", " + format_number(hi) + "]";
}

}  // namespace

std::string render_row(const Instance& inst, int row) {
  std::string out;
  bool first = true;
  for (const auto& e : inst.entries) {
    if (e.row != row || e.value == 0.0) continue;
    double v = e.value;
    if (first) {
      if (v < 0) out += "-";
    } else {
      out += v < 0 ? " - " : " + ";
    }
    double a = std::fabs(v);
    if (a != 1.0) out += format_number(a) + "*";
    out += inst.cols[e.col].label();
    first = false;
  }
  if (first) out = "0";
  out += " " + to_string(inst.senses[row]) + " " + format_number(inst.rhs[row]);
  return out;
}

ComponentView lookup_component(const ModelIR& ir, std::string_view query,
                               const std::optional<IndexTuple>& indices,
                               const SolutionSnapshot* solution) {
  std::string name = resolve_component_name(ir, query);
  ComponentView view;
  view.name = name;
  IndexTuple pattern = indices.value_or(IndexTuple{});
  ComponentKind kind = *ir.kind_of(name);
  view.kind = kind;

  switch (kind) {
    case ComponentKind::Set: {
      const SetDecl* s = ir.find_set(name);
      view.description = s->description;
      view.detail = "set with " + std::to_string(s->members.size()) + " members";
      for (const auto& m : s->members) {
        if (pattern.empty() || index_matches(pattern, {m})) view.entries.push_back({{m}, {}, {}, {}, {}});
      }
      break;
    }
    case ComponentKind::Parameter: {
      const ParamDecl* p = ir.find_param(name);
      view.description = p->description;
      view.index_sets = p->index_sets;
      view.detail = "parameter (" + to_string(p->side) + ")";
      check_pattern(ir, name, p->index_sets, pattern);
      for (const auto& t : index_product(ir, p->index_sets)) {
        if (!index_matches(pattern, t)) continue;
        view.entries.push_back({t, param_value(ir, ParamInstance{name, t}), {}, {}, {}});
      }
      break;
    }
    case ComponentKind::Variable: {
      const VarDecl* v = ir.find_var(name);
      view.description = v->description;
      view.index_sets = v->index_sets;
      view.detail = "variable (" + to_string(v->domain) + ", bounds " +
                    bounds_text(v->domain == Domain::Binary ? std::max(0.0, v->lower) : v->lower,
                                v->domain == Domain::Binary ? std::min(1.0, v->upper) : v->upper) +
                    ")";
      check_pattern(ir, name, v->index_sets, pattern);
      for (const auto& t : index_product(ir, v->index_sets)) {
        if (!index_matches(pattern, t)) continue;
        ComponentEntry e{t, {}, {}, {}, {}};
        if (solution) {
          auto it = solution->primal.find(instance_label(name, t));
          if (it != solution->primal.end()) e.value = it->second;
        }
        view.entries.push_back(std::move(e));
      }
      break;
    }
    case ComponentKind::Constraint: {
      const ConstraintDecl* c = ir.find_constraint(name);
      view.description = c->description;
      for (const auto& b : c->binders) view.index_sets.push_back(b.set);
      view.detail = "constraint: " + render_expr(c->lhs) + " " + to_string(c->sense) + " " +
                    render_expr(c->rhs);
      check_pattern(ir, name, view.index_sets, pattern);
      Instance inst = instantiate(ir);
      for (int i = 0; i < inst.num_rows(); ++i) {
        if (inst.rows[i].family != name || !index_matches(pattern, inst.rows[i].index)) continue;
        ComponentEntry e{inst.rows[i].index, {}, {}, {}, render_row(inst, i)};
        if (solution) {
          std::string label = inst.rows[i].label();
          if (auto it = solution->duals.find(label); it != solution->duals.end()) e.dual = it->second;
          if (auto it = solution->activity.find(label); it != solution->activity.end()) {
            e.activity = it->second;
          }
        }
        view.entries.push_back(std::move(e));
      }
      break;
    }
    case ComponentKind::Objective: {
      view.description = ir.objective.description;
      view.detail = std::string(ir.objective.sense == ObjectiveSense::Maximize ? "maximize "
                                                                               : "minimize ") +
                    render_expr(ir.objective.expr);
      ComponentEntry e{{}, {}, {}, {}, render_expr(ir.objective.expr)};
      if (solution && solution->objective) e.value = solution->objective;
      view.entries.push_back(std::move(e));
      break;
    }
  }
  return view;
}

// ---------------------------------------------------------------------------
// Expression rendering (shared with the interchange format serializer).

namespace {

void render_into(std::string& out, const ExprPtr& e);

void render_child(std::string& out, const ExprPtr& e, bool parens) {
  if (parens) out += '(';
  render_into(out, e);
  if (parens) out += ')';
}

void render_into(std::string& out, const ExprPtr& e) {
  if (!e) return;
  switch (e->kind) {
    case Expr::Kind::Number:
      out += format_number(e->number);
      return;
    case Expr::Kind::Ref:
      out += e->name;
      if (!e->args.empty()) {
        out += '[';
        for (std::size_t i = 0; i < e->args.size(); ++i) {
          if (i) out += ", ";
          if (e->args[i].kind == IndexArg::Kind::Label) {
            out += '\'' + e->args[i].text + '\'';
          } else {
            out += e->args[i].text;
          }
        }
        out += ']';
      }
      return;
    case Expr::Kind::Neg: {
      out += '-';
      auto k = e->lhs->kind;
      render_child(out, e->lhs,
                   k == Expr::Kind::Add || k == Expr::Kind::Mul || k == Expr::Kind::Sum ||
                       k == Expr::Kind::Number);
      return;
    }
    case Expr::Kind::Add:
      for (std::size_t i = 0; i < e->terms.size(); ++i) {
        const auto& [sign, t] = e->terms[i];
        if (i) out += sign < 0 ? " - " : " + ";
        render_child(out, t, t->kind == Expr::Kind::Add || t->kind == Expr::Kind::Sum);
      }
      return;
    case Expr::Kind::Mul: {
      auto lk = e->lhs->kind, rk = e->rhs->kind;
      render_child(out, e->lhs, lk == Expr::Kind::Add || lk == Expr::Kind::Sum);
      out += " * ";
      render_child(out, e->rhs,
                   rk == Expr::Kind::Add || rk == Expr::Kind::Sum || rk == Expr::Kind::Mul);
      return;
    }
    case Expr::Kind::Sum:
      out += "sum over ";
      for (std::size_t i = 0; i < e->binders.size(); ++i) {
        if (i) out += ", ";
        out += e->binders[i].name + " in " + e->binders[i].set;
      }
      out += ": ";
      render_child(out, e->body, e->body->kind == Expr::Kind::Add);
      return;
  }
}

}  // namespace

std::string render_expr(const ExprPtr& e) {
  std::string out;
  render_into(out, e);
  return out;
}

}  // namespace modelchat
