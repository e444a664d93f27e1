#include "modelchat/functions.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>

#include "modelchat/text.hpp"

namespace modelchat {

const std::vector<std::string>& predefined_functions() {
  static const std::vector<std::string> names = {kFeasibilityRestoration, kComponentsRetrieval,
                                                 kSensitivityAnalysis, kEvaluateModification};
  return names;
}

bool is_known_function(const std::string& name) {
  if (name == kExternalTools) return true;
  for (const auto& n : predefined_functions()) {
    if (n == name) return true;
  }
  return false;
}

namespace {

Json index_schema() {
  return {{"type", "array"},
          {"items", {{"type", "string"}}},
          {"description", "index labels, one per dimension; a prefix selects every completion, '*' any label"}};
}

Json object_schema(Json properties, std::vector<std::string> required) {
  return {{"type", "object"},
          {"properties", std::move(properties)},
          {"required", std::move(required)},
          {"additionalProperties", false}};
}

}  // namespace

std::vector<ToolSchema> function_schemas(bool include_predefined) {
  std::vector<ToolSchema> out;
  if (include_predefined) {
    out.push_back({kFeasibilityRestoration,
                   "Find the smallest weighted change to right-hand-side parameters that makes an "
                   "infeasible model feasible. Without adjustables the parameters on the conflicting "
                   "constraints are used.",
                   object_schema({{"adjustables",
                                   {{"type", "array"},
                                    {"items", object_schema({{"name", {{"type", "string"}}},
                                                             {"index", index_schema()},
                                                             {"weight", {{"type", "number"}}}},
                                                            {"name"})}}}},
                                 {})});
    out.push_back({kComponentsRetrieval,
                   "Look up sets, parameters, variables or constraints, with solved values when available.",
                   object_schema({{"components",
                                   {{"type", "array"},
                                    {"items", object_schema({{"name", {{"type", "string"}}}, {"index", index_schema()}},
                                                            {"name"})}}}},
                                 {"components"})});
    out.push_back({kSensitivityAnalysis,
                   "Shadow price of one right-hand-side parameter instance in a linear model.",
                   object_schema({{"parameter", {{"type", "string"}}}, {"index", index_schema()}}, {"parameter"})});
    out.push_back({kEvaluateModification,
                   "Re-solve after changing parameters or variable bounds and compare with the baseline.",
                   object_schema({{"modifications",
                                   {{"type", "array"},
                                    {"items", object_schema({{"target", {{"type", "string"}}},
                                                             {"index", index_schema()},
                                                             {"kind", {{"type", "string"}, {"enum", {"set", "add", "scale"}}}},
                                                             {"value", {{"type", "number"}}}},
                                                            {"target", "kind", "value"})}}}},
                                 {"modifications"})});
  }
  out.push_back({kExternalTools,
                 "Hand the request to the constraint programmer when no predefined function fits, for "
                 "example to force an alternative and compare it with the optimum.",
                 object_schema({{"request", {{"type", "string"}}}}, {"request"})});
  return out;
}

// ---------------------------------------------------------------------------
// Validation.

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ArgumentError(msg);
}

void check_keys(const Json& obj, const std::vector<std::string>& allowed, const std::string& where) {
  require(obj.is_object(), where + " must be an object");
  for (const auto& [k, v] : obj.items()) {
    bool known = false;
    for (const auto& a : allowed) known = known || a == k;
    require(known, "unexpected argument '" + k + "' in " + where);
  }
}

IndexTuple read_index(const Json& obj, const std::string& where) {
  IndexTuple out;
  if (!obj.contains("index")) return out;
  const Json& idx = obj["index"];
  require(idx.is_array(), where + ".index must be a list of labels");
  for (const auto& v : idx) {
    if (v.is_string()) {
      out.push_back(v.get<std::string>());
    } else if (v.is_number_integer()) {
      out.push_back(std::to_string(v.get<long long>()));
    } else {
      throw ArgumentError(where + ".index entries must be labels");
    }
  }
  return out;
}

std::string read_name(const Json& obj, const char* key, const std::string& where) {
  require(obj.contains(key) && obj[key].is_string(), where + "." + key + " must be a string");
  return obj[key].get<std::string>();
}

void check_component(const ModelIR& ir, const std::string& name) {
  if (ir.kind_of(name)) return;
  auto sugg = closest_names(name, ir.component_names());
  std::string msg = "unknown component '" + name + "'";
  if (!sugg.empty()) msg += "; did you mean: " + join(sugg, ", ");
  throw ArgumentError(msg);
}

// Index validity is checked by the lookup itself, which throws ModelError.
void check_indexed(const ModelIR& ir, const std::string& name, const IndexTuple& index) {
  check_component(ir, name);
  try {
    lookup_component(ir, name, index);
  } catch (const ModelError& e) {
    throw ArgumentError(e.what());
  }
}

std::vector<AdjustableRef> read_adjustables(const ModelIR& ir, const Json& args) {
  std::vector<AdjustableRef> refs;
  if (!args.contains("adjustables")) return refs;
  require(args["adjustables"].is_array(), "adjustables must be a list");
  int k = 0;
  for (const auto& a : args["adjustables"]) {
    std::string where = "adjustables[" + std::to_string(k++) + "]";
    check_keys(a, {"name", "index", "weight"}, where);
    AdjustableRef r;
    r.name = read_name(a, "name", where);
    r.index = read_index(a, where);
    if (a.contains("weight")) {
      require(a["weight"].is_number() && a["weight"].get<double>() > 0, where + ".weight must be positive");
      r.weight = a["weight"].get<double>();
    }
    require(ir.find_param(r.name) || ir.find_constraint(r.name),
            "adjustable '" + r.name + "' is neither a parameter nor a constraint" +
                [&] {
                  auto s = closest_names(r.name, ir.component_names());
                  return s.empty() ? std::string() : "; did you mean: " + join(s, ", ");
                }());
    check_indexed(ir, r.name, r.index);
    refs.push_back(std::move(r));
  }
  return refs;
}

std::vector<std::pair<std::string, IndexTuple>> read_components(const ModelIR& ir, const Json& args) {
  require(args.contains("components") && args["components"].is_array() && !args["components"].empty(),
          "components must be a non-empty list");
  std::vector<std::pair<std::string, IndexTuple>> out;
  int k = 0;
  for (const auto& c : args["components"]) {
    std::string where = "components[" + std::to_string(k++) + "]";
    check_keys(c, {"name", "index"}, where);
    std::string name = read_name(c, "name", where);
    IndexTuple index = read_index(c, where);
    check_indexed(ir, name, index);
    out.emplace_back(std::move(name), std::move(index));
  }
  return out;
}

std::vector<Modification> read_modifications(const ModelIR& ir, const Json& args) {
  require(args.contains("modifications") && args["modifications"].is_array() && !args["modifications"].empty(),
          "modifications must be a non-empty list");
  std::vector<Modification> out;
  int k = 0;
  for (const auto& m : args["modifications"]) {
    std::string where = "modifications[" + std::to_string(k++) + "]";
    check_keys(m, {"target", "index", "kind", "value"}, where);
    Modification mod;
    mod.target = read_name(m, "target", where);
    mod.index = read_index(m, where);
    require(m.contains("kind") && m["kind"].is_string(), where + ".kind must be set, add or scale");
    auto kind = parse_mod_kind(m["kind"].get<std::string>());
    require(kind.has_value(), where + ".kind must be set, add or scale");
    mod.kind = *kind;
    require(m.contains("value") && m["value"].is_number(), where + ".value must be a number");
    mod.magnitude = m["value"].get<double>();
    require(std::isfinite(mod.magnitude), where + ".value must be finite");
    out.push_back(std::move(mod));
  }
  try {
    for (const auto& mod : out) {
      auto dot = mod.target.rfind('.');
      if (dot != std::string::npos && ir.find_var(mod.target.substr(0, dot))) continue;
      if (!ir.find_param(mod.target)) {
        auto s = closest_names(mod.target, ir.component_names());
        std::string msg = "unknown modification target '" + mod.target + "'";
        if (!s.empty()) msg += "; did you mean: " + join(s, ", ");
        throw ArgumentError(msg);
      }
      modification_targets(ir, mod);
    }
    apply_modification(ir, out);
  } catch (const ModelError& e) {
    throw ArgumentError(e.what());
  }
  return out;
}

}  // namespace

void validate_call(const ModelIR& ir, const FunctionCall& call) {
  require(is_known_function(call.name), "unknown function '" + call.name + "'; choose one of " +
                                            join(predefined_functions(), ", ") + ", " + kExternalTools);
  const Json& args = call.args;
  require(args.is_object(), "arguments must be an object");
  if (call.name == kFeasibilityRestoration) {
    check_keys(args, {"adjustables"}, "arguments");
    read_adjustables(ir, args);
  } else if (call.name == kComponentsRetrieval) {
    check_keys(args, {"components"}, "arguments");
    read_components(ir, args);
  } else if (call.name == kSensitivityAnalysis) {
    check_keys(args, {"parameter", "index"}, "arguments");
    std::string p = read_name(args, "parameter", "arguments");
    if (!ir.find_param(p)) {
      auto s = closest_names(p, ir.component_names());
      throw ArgumentError("unknown parameter '" + p + "'" + (s.empty() ? "" : "; did you mean: " + join(s, ", ")));
    }
    check_indexed(ir, p, read_index(args, "arguments"));
  } else if (call.name == kEvaluateModification) {
    check_keys(args, {"modifications"}, "arguments");
    read_modifications(ir, args);
  } else {
    check_keys(args, {"request"}, "arguments");
    require(args.contains("request") && args["request"].is_string() && !trim(args["request"].get<std::string>()).empty(),
            "request must be a non-empty string");
  }
}

// ---------------------------------------------------------------------------
// JSON payloads.

namespace {

Json opt(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json index_json(const IndexTuple& t) { return Json(t); }

std::string error_kind(ExplainError::Kind k) {
  switch (k) {
    case ExplainError::Kind::ModelFeasible: return "model-feasible";
    case ExplainError::Kind::InsufficientAdjustables: return "insufficient-adjustables";
    case ExplainError::Kind::AggregateParameter: return "aggregate-parameter";
    case ExplainError::Kind::NotOptimal: return "not-optimal";
    case ExplainError::Kind::InvalidRequest: return "invalid-request";
  }
  return "error";
}

Json changes_json(const std::vector<VariableChange>& changes) {
  Json out = Json::array();
  for (const auto& c : changes) out.push_back({{"variable", c.column}, {"before", c.before}, {"after", c.after}});
  return out;
}

}  // namespace

Json to_json(const SolveResult& r, const Instance& inst) {
  Json j = {{"status", to_string(r.status)}, {"iterations", r.iterations}};
  if (r.mip) {
    j["nodes"] = r.nodes;
    j["best_bound"] = opt(r.best_bound);
    j["gap"] = opt(r.gap);
  }
  if (r.primal.empty()) return j;
  j["objective"] = r.objective;
  Json primal = Json::object();
  for (int c = 0; c < inst.num_cols(); ++c) primal[inst.cols[c].label()] = r.primal[c];
  j["primal"] = primal;
  if (!r.duals.empty()) {
    Json duals = Json::object();
    for (int i = 0; i < inst.num_rows(); ++i) duals[inst.rows[i].label()] = r.duals[i];
    j["duals"] = duals;
    Json rc = Json::object();
    for (int c = 0; c < inst.num_cols(); ++c) rc[inst.cols[c].label()] = r.reduced_costs[c];
    j["reduced_costs"] = rc;
    j["degenerate"] = r.degenerate;
  }
  return j;
}

Json to_json(const IISResult& r) {
  Json members = Json::array();
  for (const auto& m : r.members) {
    std::string kind = m.kind == IisMember::Kind::Row ? "constraint" : m.kind == IisMember::Kind::LowerBound ? "lower-bound" : "upper-bound";
    members.push_back({{"id", m.id}, {"kind", kind}, {"detail", m.detail}});
  }
  return {{"members", members}, {"oracle_calls", r.oracle_calls}, {"indeterminate", r.indeterminate}};
}

Json to_json(const Modification& m) {
  return {{"target", m.target}, {"index", index_json(m.index)}, {"kind", to_string(m.kind)}, {"value", m.magnitude}};
}

Json to_json(const RestorationPlan& p) {
  Json slacks = Json::array();
  for (const auto& s : p.slacks) {
    slacks.push_back({{"parameter", s.param.label()},
                      {"weight", s.weight},
                      {"increase", s.increase},
                      {"decrease", s.decrease},
                      {"change", s.change() + 0.0}});
  }
  Json rejected = Json::array();
  for (const auto& r : p.rejected) rejected.push_back({{"target", r.target}, {"reason", r.reason}, {"warning", r.warning}});
  Json mods = Json::array();
  for (const auto& m : p.modifications) mods.push_back(to_json(m));
  Json j = {{"slacks", slacks}, {"total_penalty", p.total_penalty}, {"rejected", rejected},
            {"defaulted", p.defaulted}, {"modifications", mods}, {"certified", p.certified}};
  if (p.iis) j["iis"] = to_json(*p.iis);
  return j;
}

Json to_json(const SensitivityReport& r) {
  Json j = {{"parameter", r.param.label()}, {"shadow_price", opt(r.shadow_price)}};
  if (r.unsupported) {
    j["unsupported"] = to_string(*r.unsupported);
    j["suggestion"] = r.suggestion;
    return j;
  }
  j["constraint"] = r.row;
  j["multiplier"] = r.multiplier;
  j["degenerate"] = r.degenerate;
  j["validity"] = r.validity_note;
  j["objective"] = opt(r.objective);
  return j;
}

Json to_json(const WhatIfReport& r) {
  Json mods = Json::array();
  for (const auto& m : r.modifications) mods.push_back(to_json(m));
  return {{"modifications", mods},
          {"baseline_status", to_string(r.baseline_status)},
          {"baseline_objective", opt(r.baseline_objective)},
          {"status", to_string(r.status)},
          {"objective", opt(r.objective)},
          {"delta", opt(r.delta)},
          {"changes", changes_json(r.changes)},
          {"notes", r.notes}};
}

Json to_json(const WhyNotReport& r) {
  Json specs = Json::array();
  for (const auto& s : r.specs) specs.push_back(s.text());
  Json j = {{"constraints", specs},
            {"families", r.families},
            {"canonical", r.canonical},
            {"rows_added", r.rows_added},
            {"baseline_status", to_string(r.baseline_status)},
            {"baseline_objective", opt(r.baseline_objective)},
            {"status", to_string(r.status)},
            {"objective", opt(r.objective)},
            {"delta", opt(r.delta)},
            {"changes", changes_json(r.changes)}};
  if (r.iis) j["iis"] = to_json(*r.iis);
  return j;
}

Json to_json(const ComponentView& v) {
  Json entries = Json::array();
  for (const auto& e : v.entries) {
    Json ej = {{"index", index_json(e.index)}};
    if (e.value) ej["value"] = *e.value;
    if (e.dual) ej["dual"] = *e.dual;
    if (e.activity) ej["activity"] = *e.activity;
    if (!e.expression.empty()) ej["expression"] = e.expression;
    entries.push_back(ej);
  }
  return {{"name", v.name},
          {"kind", to_string(v.kind)},
          {"description", v.description},
          {"index_sets", v.index_sets},
          {"detail", v.detail},
          {"entries", entries}};
}

std::vector<double> payload_numbers(const Json& j) {
  std::vector<double> out;
  auto walk = [&](const Json& v, auto& self) -> void {
    if (v.is_number()) {
      out.push_back(v.get<double>());
    } else if (v.is_string()) {
      // Numbers embedded in text fields (rendered rows, canonical forms).
      const std::string& s = v.get_ref<const std::string&>();
      for (std::size_t i = 0; i < s.size();) {
        bool starts = std::isdigit(static_cast<unsigned char>(s[i])) &&
                      (i == 0 || !(std::isalpha(static_cast<unsigned char>(s[i - 1])) || s[i - 1] == '_'));
        if (!starts) {
          ++i;
          continue;
        }
        std::size_t end = i;
        while (end < s.size() && (std::isdigit(static_cast<unsigned char>(s[end])) || s[end] == '.')) ++end;
        if (end < s.size() && (std::isalpha(static_cast<unsigned char>(s[end])) || s[end] == '_')) {
          i = end;  // part of an identifier such as "3rd"
          continue;
        }
        out.push_back(std::strtod(s.substr(i, end - i).c_str(), nullptr));
        i = end;
      }
    } else if (v.is_structured()) {
      for (const auto& child : v) self(child, self);
    }
  };
  walk(j, walk);
  return out;
}

// ---------------------------------------------------------------------------
// Dispatch.

Json dispatch_call(const ModelIR& ir, const FunctionCall& call, const SolutionSnapshot* baseline,
                   const SolverOptions& opts) {
  validate_call(ir, call);
  Json payload = {{"function", call.name}, {"arguments", call.args}};
  try {
    if (call.name == kFeasibilityRestoration) {
      payload["result"] = to_json(restore_feasibility(ir, read_adjustables(ir, call.args), opts));
    } else if (call.name == kComponentsRetrieval) {
      SolutionSnapshot local;
      if (!baseline) {
        Instance inst = instantiate(ir);
        local = make_snapshot(inst, solve(inst, opts));
        baseline = &local;
      }
      Json comps = Json::array();
      for (const auto& [name, index] : read_components(ir, call.args)) {
        comps.push_back(to_json(lookup_component(ir, name, index, baseline)));
      }
      payload["result"] = {{"components", comps},
                           {"status", baseline->status},
                           {"objective", opt(baseline->objective)}};
    } else if (call.name == kSensitivityAnalysis) {
      payload["result"] = to_json(sensitivity(ir, call.args["parameter"].get<std::string>(),
                                              read_index(call.args, "arguments"), opts));
    } else if (call.name == kEvaluateModification) {
      payload["result"] = to_json(evaluate_modification(ir, read_modifications(ir, call.args), opts));
    } else {
      throw ArgumentError("external_tools is handled by the constraint programmer, not dispatched directly");
    }
  } catch (const ExplainError& e) {
    payload["error"] = {{"kind", error_kind(e.kind())}, {"message", e.what()}, {"details", e.details()}};
  } catch (const ModelError& e) {
    payload["error"] = {{"kind", "model-error"}, {"message", e.what()}, {"details", e.suggestions()}};
  }
  return payload;
}

}  // namespace modelchat
