#include "modelchat/agents.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "modelchat/prompts.hpp"
#include "modelchat/text.hpp"

namespace modelchat {

// ---------------------------------------------------------------------------
// Trace.

namespace {

Json call_json(const FunctionCall& c) { return {{"name", c.name}, {"args", c.args}}; }

FunctionCall call_from_json(const Json& j) { return {j.at("name").get<std::string>(), j.value("args", Json::object())}; }

LmResponse response_from_json(const Json& j) {
  LmResponse r;
  r.text = j.value("text", "");
  if (j.contains("call")) r.call = call_from_json(j["call"]);
  if (j.contains("usage")) {
    r.usage.prompt = j["usage"].value("prompt", 0);
    r.usage.completion = j["usage"].value("completion", 0);
  }
  return r;
}

}  // namespace

Json AgentTrace::to_json(bool with_timing) const {
  Json hops_json = Json::array();
  for (const auto& h : hops) {
    Json hj = {{"agent", h.agent}, {"input_digest", h.input_digest}};
    if (h.deterministic()) {
      hj["lm"] = "deterministic";
    } else {
      Json ex = Json::array();
      for (const auto& e : h.exchanges) {
        Json ej = {{"request_id", e.request.id()}, {"request", e.request.to_json()}};
        if (e.response) {
          ej["response_id"] = e.response->id();
          ej["response"] = e.response->to_json();
        } else {
          ej["error"] = e.error;
        }
        ex.push_back(ej);
      }
      hj["lm"] = ex;
    }
    if (h.call) hj["call"] = call_json(*h.call);
    if (!h.result_digest.empty()) hj["result_digest"] = h.result_digest;
    hj["notes"] = h.notes;
    if (with_timing) hj["wall_ms"] = h.wall_ms;
    hops_json.push_back(hj);
  }
  return {{"id", id}, {"hops", hops_json}, {"answer", answer}};
}

AgentTrace AgentTrace::from_json(const Json& j) {
  AgentTrace t;
  t.id = j.value("id", "");
  t.answer = j.value("answer", "");
  for (const auto& hj : j.value("hops", Json::array())) {
    TraceHop h;
    h.agent = hj.value("agent", "");
    h.input_digest = hj.value("input_digest", "");
    if (hj.contains("lm") && hj["lm"].is_array()) {
      for (const auto& ej : hj["lm"]) {
        LmExchange e;
        e.request = LmRequest::from_json(ej.at("request"));
        if (ej.contains("response")) e.response = response_from_json(ej["response"]);
        e.error = ej.value("error", "");
        h.exchanges.push_back(std::move(e));
      }
    }
    if (hj.contains("call")) h.call = call_from_json(hj["call"]);
    h.result_digest = hj.value("result_digest", "");
    h.notes = hj.value("notes", std::vector<std::string>{});
    h.wall_ms = hj.value("wall_ms", 0.0);
    t.hops.push_back(std::move(h));
  }
  return t;
}

std::vector<std::string> AgentTrace::agents() const {
  std::vector<std::string> out;
  for (const auto& h : hops) out.push_back(h.agent);
  return out;
}

std::vector<StubEntry> replay_entries(const AgentTrace& trace) {
  std::vector<StubEntry> out;
  for (const auto& h : trace.hops) {
    for (const auto& e : h.exchanges) {
      if (!e.response) continue;
      out.push_back({e.request.query_text(), e.request.agent, e.request.attempt, e.request.turn, *e.response});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Number formatting and the numeric gate.

namespace {

std::string num(double v) {
  if (v == 0.0) return "0";
  if (std::abs(v) >= 1e6 || std::abs(v) < 1e-4) return format_number(v);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

bool is_word_char(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::vector<std::string> extract_numerals(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    bool starts = is_digit(c) || (c == '.' && i + 1 < text.size() && is_digit(text[i + 1]));
    if (!starts || (i > 0 && (is_word_char(text[i - 1]) || is_digit(text[i - 1])))) {
      ++i;
      continue;
    }
    std::string digits;
    std::size_t j = i;
    bool seen_dot = false;
    while (j < text.size()) {
      char d = text[j];
      if (is_digit(d)) {
        digits.push_back(d);
      } else if (d == '.' && !seen_dot && j + 1 < text.size() && is_digit(text[j + 1])) {
        seen_dot = true;
        digits.push_back(d);
      } else if (d == ',' && !seen_dot && j + 3 < text.size() + 0 && is_digit(text[j + 1]) &&
                 is_digit(text[j + 2]) && is_digit(text[j + 3]) &&
                 (j + 4 >= text.size() || !is_digit(text[j + 4]))) {
        // thousands separator
      } else {
        break;
      }
      ++j;
    }
    if (j < text.size() && is_word_char(text[j])) {
      // digits glued to letters, e.g. "2nd" or "3x": not a quantity
      while (j < text.size() && (is_word_char(text[j]) || is_digit(text[j]))) ++j;
      i = j;
      continue;
    }
    out.push_back(digits);
    i = j;
  }
  return out;
}

bool numbers_supported(const std::string& answer, const Json& payload, std::vector<std::string>* unsupported) {
  auto values = payload_numbers(payload);
  bool ok = true;
  for (const auto& s : extract_numerals(answer)) {
    double v = std::strtod(s.c_str(), nullptr);
    auto dot = s.find('.');
    int decimals = dot == std::string::npos ? 0 : static_cast<int>(s.size() - dot - 1);
    double half_ulp = 0.5 * std::pow(10.0, -decimals);
    bool found = false;
    for (double p : values) {
      double a = std::abs(p);
      if (std::abs(a - v) <= 1e-6 * std::max(1.0, a) || std::abs(a - v) <= half_ulp + 1e-12) {
        found = true;
        break;
      }
    }
    if (!found) {
      ok = false;
      if (unsupported) unsupported->push_back(s);
    }
  }
  return ok;
}

// ---------------------------------------------------------------------------
// Illustration.

Json component_table(const ModelIR& ir) {
  Json rows = Json::array();
  for (const auto& s : ir.sets) {
    rows.push_back({{"name", s.name}, {"kind", "set"}, {"description", s.description}, {"members", s.members}});
  }
  for (const auto& p : ir.params) {
    Json values = Json::object();
    for (const auto& key : index_product(ir, p.index_sets)) values[instance_label(p.name, key)] = param_value(ir, {p.name, key});
    rows.push_back({{"name", p.name}, {"kind", "parameter"}, {"description", p.description},
                    {"index_sets", p.index_sets}, {"role", to_string(p.side)}, {"values", values}});
  }
  for (const auto& v : ir.vars) {
    rows.push_back({{"name", v.name}, {"kind", "variable"}, {"description", v.description},
                    {"index_sets", v.index_sets}, {"domain", to_string(v.domain)}});
  }
  for (const auto& c : ir.constraints) {
    Json sets = Json::array();
    for (const auto& b : c.binders) sets.push_back(b.set);
    rows.push_back({{"name", c.name}, {"kind", "constraint"}, {"description", c.description}, {"index_sets", sets}});
  }
  rows.push_back({{"name", ir.objective.name},
                  {"kind", "objective"},
                  {"description", ir.objective.description},
                  {"sense", ir.objective.sense == ObjectiveSense::Maximize ? "maximize" : "minimize"}});
  return rows;
}

std::string template_description(const ModelIR& ir, const SolveResult& baseline) {
  std::string out = ir.name + ": " + ir.description + "\n";
  out += "Decisions:\n";
  for (const auto& v : ir.vars) {
    out += "- " + v.name + (v.index_sets.empty() ? "" : "[" + join(v.index_sets, ",") + "]") + " (" +
           to_string(v.domain) + "): " + v.description + "\n";
  }
  out += "Constraints:\n";
  for (const auto& c : ir.constraints) out += "- " + c.name + ": " + c.description + "\n";
  out += std::string("Objective: ") + (ir.objective.sense == ObjectiveSense::Maximize ? "maximize " : "minimize ") +
         ir.objective.name + ", " + ir.objective.description + ".\n";
  out += "Solver status: " + to_string(baseline.status);
  if (baseline.optimal()) out += ", objective value " + num(baseline.objective);
  out += ".";
  return out;
}

namespace {

std::string model_header(const ModelIR& ir) { return "Model \"" + ir.name + "\""; }

std::string iis_listing(const ModelIR& ir, const IISResult& iis) {
  std::string out = "Conflicting requirements:";
  for (const auto& m : iis.members) {
    out += "\n- " + m.id + " (" + m.detail + ")";
    if (m.kind == IisMember::Kind::Row) {
      std::string family = m.id.substr(0, m.id.find('['));
      if (const ConstraintDecl* c = ir.find_constraint(family)) out += ": " + c->description;
    } else {
      std::string col = m.id.substr(0, m.id.rfind('.'));
      std::string family = col.substr(0, col.find('['));
      if (const VarDecl* v = ir.find_var(family)) {
        out += std::string(": ") + (m.kind == IisMember::Kind::LowerBound ? "lower" : "upper") + " bound on " +
               v->description;
      }
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Reminder.

std::string to_string(RouteKind k) {
  return k == RouteKind::SolutionAgnostic ? "solution-agnostic" : "solution-specific";
}

namespace {

const std::set<std::string>& stopwords() {
  static const std::set<std::string> words = {
      "a", "an", "the", "of", "to", "in", "on", "for", "and", "or", "is", "are", "be", "by", "we", "our",
      "it", "its", "what", "which", "how", "much", "many", "if", "do", "does", "this", "that", "with",
      "will", "would", "should", "could", "can", "at", "as", "from", "make", "model", "value", "values",
      "me", "i", "you", "there", "not", "why", "isn", "t", "s", "all", "each", "per", "any", "than", "into"};
  return words;
}

bool contains_any(const std::string& text, std::initializer_list<const char*> needles) {
  for (const char* n : needles) {
    if (text.find(n) != std::string::npos) return true;
  }
  return false;
}

bool word_matches(const std::string& a, const std::string& b) {
  if (a == b) return true;
  const std::string& s = a.size() < b.size() ? a : b;
  const std::string& l = a.size() < b.size() ? b : a;
  if (s.size() >= 3 && l.compare(0, s.size(), s) == 0) return true;  // cap / capacity
  return false;
}

std::vector<std::string> raw_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-') {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::string choose_function(const std::string& q, SolveStatus status) {
  const bool infeasible = status == SolveStatus::Infeasible;
  if (infeasible && contains_any(q, {"feasib", "adjust", "fix", "repair", "relax", "resolve the conflict"})) {
    return kFeasibilityRestoration;
  }
  if (contains_any(q, {"why not", "why isn't", "why is not", "why aren't", "why are not", "why don't", "why do not",
                       "why doesn't", "why does not", "why didn't", "why did not", "why wasn't", "why weren't"})) {
    return kExternalTools;
  }
  if (contains_any(q, {"shadow price", "sensitiv", "marginal", "dual value"})) return kSensitivityAnalysis;
  static const std::vector<std::string> change_words = {
      "increase", "decrease", "raise", "lower", "reduce", "cut", "change", "moves", "move", "double", "halve",
      "grow", "drop", "rise", "goes", "go up", "go down", "expand", "shrink", "tighten", "loosen", "set to",
      "became", "becomes", "were", "what if"};
  bool change = false;
  for (const auto& w : change_words) change = change || q.find(w) != std::string::npos;
  if (change) {
    bool magnitude = !extract_numerals(q).empty() ||
                     contains_any(q, {"a third", "half", "double", "twice", "triple", "quarter", "percent", "%"});
    return magnitude ? kEvaluateModification : kSensitivityAnalysis;
  }
  if (contains_any(q, {"what are", "what is", "what's", "how many", "how much", "show", "list", "which", "tell me",
                       "value"})) {
    return kComponentsRetrieval;
  }
  return infeasible ? kFeasibilityRestoration : kComponentsRetrieval;
}

// Relations between parameters and constraint families, from the instance.
std::map<std::string, std::vector<std::string>> component_roles(const ModelIR& ir) {
  std::map<std::string, std::set<std::string>> rhs_of, lhs_of, uses;
  Instance inst = instantiate(ir);
  for (int i = 0; i < inst.num_rows(); ++i) {
    for (const auto& c : inst.rhs_sources[i]) {
      if (c.param) {
        rhs_of[c.param->name].insert(inst.rows[i].family);
        uses[inst.rows[i].family].insert(c.param->name);
      }
    }
  }
  for (const auto& e : inst.entries) {
    for (const auto& c : e.sources) {
      if (c.param) lhs_of[c.param->name].insert(inst.rows[e.row].family);
    }
  }
  std::map<std::string, std::vector<std::string>> out;
  auto list = [](const std::set<std::string>& s) { return join(std::vector<std::string>(s.begin(), s.end()), ", "); };
  for (const auto& [p, rows] : rhs_of) out[p].push_back("right-hand side of " + list(rows));
  for (const auto& [p, rows] : lhs_of) out[p].push_back("coefficient in " + list(rows));
  for (const auto& p : ir.params) {
    if (p.side == ParamSide::ObjectiveCost) out[p.name].push_back("objective coefficient");
  }
  for (const auto& [c, params] : uses) out[c].push_back("right-hand side uses " + list(params));
  return out;
}

std::vector<std::string> component_index_sets(const ModelIR& ir, const std::string& name) {
  if (const ParamDecl* p = ir.find_param(name)) return p->index_sets;
  if (const VarDecl* v = ir.find_var(name)) return v->index_sets;
  if (const ConstraintDecl* c = ir.find_constraint(name)) {
    std::vector<std::string> sets;
    for (const auto& b : c->binders) sets.push_back(b.set);
    return sets;
  }
  return {};
}

std::string component_description(const ModelIR& ir, const std::string& name) {
  if (const SetDecl* s = ir.find_set(name)) return s->description;
  if (const ParamDecl* p = ir.find_param(name)) return p->description;
  if (const VarDecl* v = ir.find_var(name)) return v->description;
  if (const ConstraintDecl* c = ir.find_constraint(name)) return c->description;
  return {};
}

struct ScoredCandidate {
  int score = 0;
  std::size_t order = 0;
  std::string name;
};

std::vector<ScoredCandidate> score_components(const std::string& query, const ModelIR& ir) {
  std::vector<std::string> qwords;
  for (const auto& w : word_tokens(query)) {
    if (!stopwords().count(w) && !std::all_of(w.begin(), w.end(), ::isdigit)) qwords.push_back(w);
  }
  std::set<std::string> raw;
  for (const auto& t : raw_tokens(query)) raw.insert(t);
  std::vector<ScoredCandidate> out;
  auto names = ir.component_names();
  for (std::size_t k = 0; k < names.size(); ++k) {
    const std::string& name = names[k];
    int score = raw.count(to_lower(name)) ? 5 : 0;
    auto name_words = word_tokens(name);
    auto desc_words = word_tokens(component_description(ir, name));
    for (const auto& q : qwords) {
      bool in_name = false;
      for (const auto& w : name_words) in_name = in_name || word_matches(q, w);
      bool in_desc = false;
      for (const auto& w : desc_words) in_desc = in_desc || (!stopwords().count(w) && word_matches(q, w));
      score += (in_name ? 3 : 0) + (in_desc ? 1 : 0);
    }
    if (score >= 2) out.push_back({score, k, name});
  }
  std::sort(out.begin(), out.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
    return a.score != b.score ? a.score > b.score : a.order < b.order;
  });
  if (out.size() > 6) out.resize(6);
  return out;
}

}  // namespace

SyntaxGuidance remind(const std::string& query, const ModelIR& ir, SolveStatus baseline_status,
                      const std::string& model_id) {
  SyntaxGuidance g;
  g.model_id = model_id;
  g.function = choose_function(to_lower(query), baseline_status);
  auto roles = component_roles(ir);
  for (const auto& sc : score_components(query, ir)) {
    ComponentCandidate c;
    c.name = sc.name;
    c.kind = *ir.kind_of(sc.name);
    c.description = component_description(ir, sc.name);
    if (c.kind == ComponentKind::Set) {
      c.signature.sets = {};
    } else {
      c.signature.sets = component_index_sets(ir, sc.name);
      auto tuples = index_product(ir, c.signature.sets);
      for (std::size_t k = 0; k < tuples.size() && k < 3; ++k) c.signature.examples.push_back(tuples[k]);
    }
    if (auto it = roles.find(sc.name); it != roles.end()) c.roles = it->second;
    g.components.push_back(std::move(c));
  }
  if (g.components.empty()) {
    std::vector<std::string> parts;
    for (const auto& n : ir.component_names()) parts.push_back(n + " (" + to_string(*ir.kind_of(n)) + ")");
    g.table_digest = join(parts, ", ");
  }
  return g;
}

std::string SyntaxGuidance::render() const {
  std::string out = "Suggested function: " + function + "\n";
  if (components.empty()) {
    out += "No component matched the question. Components: " + table_digest + "\n";
    return out;
  }
  out += "Candidate components:\n";
  for (const auto& c : components) {
    out += "- " + c.name + " (" + to_string(c.kind);
    if (c.kind != ComponentKind::Set) {
      if (c.signature.sets.empty()) {
        out += ", scalar";
      } else {
        out += ", " + std::to_string(c.signature.sets.size()) + " index: [" + join(c.signature.sets, ", ") + "]";
        std::vector<std::string> ex;
        for (const auto& t : c.signature.examples) ex.push_back("[" + join(t, ", ") + "]");
        out += ", e.g. " + join(ex, " ");
      }
    }
    out += "): " + c.description;
    if (!c.roles.empty()) out += "; " + join(c.roles, "; ");
    out += "\n";
  }
  return out;
}

Json SyntaxGuidance::to_json() const {
  Json comps = Json::array();
  for (const auto& c : components) {
    comps.push_back({{"name", c.name},
                     {"kind", modelchat::to_string(c.kind)},
                     {"description", c.description},
                     {"index_sets", c.signature.sets},
                     {"examples", c.signature.examples},
                     {"roles", c.roles}});
  }
  Json j = {{"function", function}, {"components", comps}, {"model_id", model_id}};
  if (!table_digest.empty()) j["table_digest"] = table_digest;
  return j;
}

// ---------------------------------------------------------------------------
// Template answers.

namespace {

std::string opt_num(const Json& v) { return v.is_number() ? num(v.get<double>()) : "n/a"; }

std::string direction(double delta) {
  if (delta > 0) return "an increase of " + num(delta);
  if (delta < 0) return "a decrease of " + num(-delta);
  return "no change";
}

std::string render_mod(const Json& m) {
  std::string target = m.value("target", "");
  Json idx = m.value("index", Json::array());
  if (!idx.empty()) target += "[" + join(idx.get<std::vector<std::string>>(), ",") + "]";
  std::string kind = m.value("kind", "");
  double v = m.value("value", 0.0);
  if (kind == "set_to") return target + " set to " + num(v);
  if (kind == "add_delta") return target + (v >= 0 ? " increased by " : " decreased by ") + num(std::abs(v));
  return target + " scaled by " + num(v);
}

std::string changes_text(const Json& changes) {
  if (!changes.is_array() || changes.empty()) return "";
  std::vector<std::string> parts;
  for (const auto& c : changes) {
    parts.push_back(c.value("variable", "") + " " + num(c.value("before", 0.0)) + " -> " + num(c.value("after", 0.0)));
  }
  return " Changed decisions: " + join(parts, ", ") + ".";
}

std::string iis_text(const Json& iis) {
  std::vector<std::string> ids;
  for (const auto& m : iis.value("members", Json::array())) ids.push_back(m.value("id", ""));
  return join(ids, ", ");
}

}  // namespace

std::string template_answer(const std::string& query, const Json& payload) {
  (void)query;
  if (payload.contains("error")) {
    const Json& e = payload["error"];
    std::string out = "I could not complete this request: " + e.value("message", std::string("unknown error")) + ".";
    return out;
  }
  std::string fn = payload.value("function", "");
  const Json& r = payload.contains("result") ? payload["result"] : payload;
  if (payload.value("scope", "") == "model") {
    std::string out = payload.value("summary", "");
    for (const auto& c : payload.value("components", Json::array())) {
      out += (out.empty() ? "" : "\n") + std::string("- ") + c.value("name", "") + ": " + c.value("description", "");
    }
    return out.empty() ? "The model description does not cover this question." : out;
  }
  if (fn == kFeasibilityRestoration) {
    std::vector<std::string> parts;
    for (const auto& s : r.value("slacks", Json::array())) {
      double ch = s.value("change", 0.0);
      if (ch == 0.0) continue;
      parts.push_back((ch > 0 ? "raise " : "lower ") + s.value("parameter", "") + " by " + num(std::abs(ch)));
    }
    std::string out = parts.empty() ? "No parameter change was needed." : "The model becomes feasible if you " + join(parts, " and ") + ".";
    out += " Total weighted change: " + opt_num(r.value("total_penalty", Json())) + ".";
    if (r.contains("iis")) out += " The conflict involves " + iis_text(r["iis"]) + ".";
    for (const auto& rej : r.value("rejected", Json::array())) out += " " + rej.value("warning", "");
    if (!r.value("certified", false)) out += " The repaired model could not be confirmed feasible.";
    return out;
  }
  if (fn == kComponentsRetrieval) {
    std::string out;
    for (const auto& c : r.value("components", Json::array())) {
      out += (out.empty() ? "" : "\n") + c.value("name", "") + " (" + c.value("description", "") + ")";
      const Json& entries = c.value("entries", Json::array());
      int shown = 0;
      for (const auto& e : entries) {
        if (shown++ == 20) {
          out += "\n  ...";
          break;
        }
        std::vector<std::string> idx = e.value("index", std::vector<std::string>{});
        std::string label = idx.empty() ? "" : "[" + join(idx, ",") + "] ";
        std::vector<std::string> facts;
        if (e.contains("value")) facts.push_back("value " + num(e["value"].get<double>()));
        if (e.contains("expression")) facts.push_back(e["expression"].get<std::string>());
        if (e.contains("activity")) facts.push_back("activity " + num(e["activity"].get<double>()));
        if (e.contains("dual")) facts.push_back("dual " + num(e["dual"].get<double>()));
        if (facts.empty() && label.empty()) continue;
        out += "\n  " + label + join(facts, ", ");
      }
    }
    return out;
  }
  if (fn == kSensitivityAnalysis) {
    std::string p = r.value("parameter", "");
    if (r.contains("unsupported")) {
      return "A shadow price is not available for " + p + " (" + r.value("unsupported", "") + "). " +
             r.value("suggestion", "");
    }
    std::string out = "The shadow price of " + p + " is " + opt_num(r.value("shadow_price", Json())) +
                      ": a small change in " + p + " moves the optimal objective by that amount per unit, through constraint " +
                      r.value("constraint", "") + ". " + r.value("validity", "");
    return out;
  }
  if (fn == kEvaluateModification) {
    std::vector<std::string> mods;
    for (const auto& m : r.value("modifications", Json::array())) mods.push_back(render_mod(m));
    std::string out = "With " + join(mods, " and ") + ", ";
    if (r.value("status", "") != "optimal") {
      out += "the model is " + r.value("status", "") + " (baseline objective " + opt_num(r.value("baseline_objective", Json())) + ").";
    } else if (r["delta"].is_number()) {
      out += "the objective changes from " + opt_num(r["baseline_objective"]) + " to " + opt_num(r["objective"]) + ", " +
             direction(r["delta"].get<double>()) + ".";
      out += changes_text(r.value("changes", Json::array()));
    } else {
      out += "the objective becomes " + opt_num(r["objective"]) + ".";
    }
    for (const auto& n : r.value("notes", Json::array())) out += " " + n.get<std::string>();
    return out;
  }
  if (fn == kExternalTools) {
    std::vector<std::string> cons = r.value("constraints", std::vector<std::string>{});
    std::string out = "Adding " + join(cons, "; ") + " ";
    if (r.value("status", "") == "infeasible") {
      out += "makes the model infeasible";
      if (r.contains("iis")) out += "; the conflict involves " + iis_text(r["iis"]);
      out += ".";
    } else if (r["delta"].is_number()) {
      out += "gives objective " + opt_num(r["objective"]) + " instead of " + opt_num(r["baseline_objective"]) + ", " +
             direction(r["delta"].get<double>()) + ".";
      out += changes_text(r.value("changes", Json::array()));
    } else {
      out += "leaves the model " + r.value("status", "") + ".";
    }
    return out;
  }
  return "No result is available for this question.";
}

// ---------------------------------------------------------------------------
// Pipeline.

namespace {

class HopScope {
 public:
  HopScope(std::vector<TraceHop>& hops, std::string agent, const std::string& input)
      : hops_(hops), start_(std::chrono::steady_clock::now()) {
    hop_.agent = std::move(agent);
    hop_.input_digest = digest(input, 16);
  }
  ~HopScope() {
    hop_.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    hops_.push_back(std::move(hop_));
  }
  HopScope(const HopScope&) = delete;
  HopScope& operator=(const HopScope&) = delete;

  TraceHop& hop() { return hop_; }

 private:
  std::vector<TraceHop>& hops_;
  TraceHop hop_;
  std::chrono::steady_clock::time_point start_;
};

std::optional<LmResponse> ask(LmClient& lm, TraceHop& hop, LmRequest req) {
  LmExchange ex;
  ex.request = std::move(req);
  try {
    ex.response = lm.complete(ex.request);
  } catch (const std::exception& e) {
    ex.error = e.what();
    hop.notes.push_back("LM failure: " + ex.error);
  }
  hop.exchanges.push_back(ex);
  return ex.response;
}

std::optional<Json> json_object_from(const LmResponse& r) {
  if (r.call && r.call->args.is_object()) return r.call->args;
  std::string t = trim(r.text);
  // Tolerate a fenced block around the object.
  auto open = t.find('{');
  auto close = t.rfind('}');
  if (open == std::string::npos || close == std::string::npos || close < open) return std::nullopt;
  Json j = Json::parse(t.substr(open, close - open + 1), nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  return j;
}

std::string strip_fences(const std::string& text) {
  std::string out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    if (trim(line).rfind("```", 0) != 0) out += line + "\n";
    if (nl == std::string::npos) break;
    pos = nl + 1;
  }
  return out;
}

}  // namespace

struct Pipeline::Turn {
  const ModelContext& ctx;
  std::string query;
  int index = 0;
  const std::vector<TranscriptTurn>& history;
  TurnOutcome out;

  std::vector<Message> base_messages(const char* system_prompt, bool with_description) const {
    std::vector<Message> msgs = {{Role::System, system_prompt}};
    if (with_description && !ctx.description.text.empty()) {
      msgs.push_back({Role::System, "Model description:\n" + ctx.description.text});
    }
    std::size_t from = history.size() > 3 ? history.size() - 3 : 0;
    for (std::size_t k = from; k < history.size(); ++k) {
      msgs.push_back({Role::User, history[k].user});
      msgs.push_back({Role::Assistant, history[k].answer});
    }
    return msgs;
  }

  LmRequest request(std::string agent, int attempt, std::vector<Message> msgs) const {
    LmRequest r;
    r.agent = std::move(agent);
    r.turn = index;
    r.attempt = attempt;
    r.messages = std::move(msgs);
    return r;
  }
};

Pipeline::Pipeline(LmClient& lm, AblationFlags flags, SolverOptions opts)
    : lm_(lm), flags_(flags), opts_(opts), dispatcher_([opts](const ModelIR& ir, const FunctionCall& c, const SolutionSnapshot* s) {
        return dispatch_call(ir, c, s, opts);
      }) {}

std::shared_ptr<const ModelContext> Pipeline::prepare(ModelIR ir, std::string model_id, AgentTrace* trace) const {
  auto ctx = std::make_shared<ModelContext>();
  ctx->model_id = std::move(model_id);
  ctx->ir = std::move(ir);
  ctx->instance = instantiate(ctx->ir);
  ctx->baseline = solve(ctx->instance, opts_);
  ctx->snapshot = make_snapshot(ctx->instance, ctx->baseline);
  ctx->description.table = component_table(ctx->ir);
  std::vector<TraceHop> local;
  std::vector<TraceHop>& hops = trace ? trace->hops : local;

  if (flags_.no_illustrator) {
    ctx->description.fallback = true;
    return ctx;
  }
  const ModelIR& m = ctx->ir;
  const std::string table = ctx->description.table.dump();
  std::string status_line = "Solver status: " + to_string(ctx->baseline.status) +
                            (ctx->baseline.optimal() ? ", objective " + num(ctx->baseline.objective) : "");
  {
    HopScope scope(hops, "illustrator", table);
    // Every component already carries an authored description, so the
    // lookup table needs no LM completion; only the narrative does.
    scope.hop().notes.push_back("component table built from authored descriptions");
    LmRequest req;
    req.agent = "illustrator";
    req.messages = {{Role::System, prompts::kModelIllustration},
                    {Role::User, model_header(m) + ": " + m.description + "\nComponents: " + table + "\n" + status_line}};
    auto resp = ask(lm_, scope.hop(), std::move(req));
    if (resp && !resp->call && !trim(resp->text).empty()) {
      ctx->description.text = trim(resp->text);
    } else {
      if (resp) scope.hop().notes.push_back("malformed narrative; template used");
      scope.hop().notes.push_back("fallback: template description");
      ctx->description.text = template_description(m, ctx->baseline);
      ctx->description.fallback = true;
    }
    scope.hop().result_digest = digest(ctx->description.text);
  }
  if (ctx->baseline.status == SolveStatus::Infeasible) {
    HopScope scope(hops, "illustrator", table);
    scope.hop().notes.push_back("infeasible baseline: isolating a conflict");
    IISResult iis = compute_iis(ctx->instance, opts_);
    std::string listing = iis_listing(m, iis);
    LmRequest req;
    req.agent = "iis";
    req.messages = {{Role::System, prompts::kIisInterpretation},
                    {Role::User, model_header(m) + " has no feasible solution.\n" + listing}};
    auto resp = ask(lm_, scope.hop(), std::move(req));
    std::string narrative;
    if (resp && !resp->call && !trim(resp->text).empty()) {
      narrative = trim(resp->text) + "\n";
    } else {
      scope.hop().notes.push_back("fallback: template troubleshooting");
      narrative = "No solution satisfies all constraints at once. The following set is already contradictory, and "
                  "dropping any one of its members removes this conflict.\n";
    }
    ctx->description.text += "\n\nTroubleshooting:\n" + narrative + listing;
    scope.hop().result_digest = digest(to_json(iis).dump());
    ctx->description.iis = std::move(iis);
  }
  return ctx;
}

std::shared_ptr<const ModelContext> Pipeline::restore(ModelIR ir, std::string model_id, std::string text,
                                                      bool fallback) const {
  auto ctx = std::make_shared<ModelContext>();
  ctx->model_id = std::move(model_id);
  ctx->ir = std::move(ir);
  ctx->instance = instantiate(ctx->ir);
  ctx->baseline = solve(ctx->instance, opts_);
  ctx->snapshot = make_snapshot(ctx->instance, ctx->baseline);
  ctx->description.table = component_table(ctx->ir);
  ctx->description.text = std::move(text);
  ctx->description.fallback = fallback;
  if (ctx->baseline.status == SolveStatus::Infeasible) ctx->description.iis = compute_iis(ctx->instance, opts_);
  return ctx;
}

Route Pipeline::coordinate(Turn& t) const {
  HopScope scope(t.out.trace.hops, "coordinator", t.query);
  TraceHop& hop = scope.hop();
  for (int attempt = 0; attempt < 2; ++attempt) {
    auto msgs = t.base_messages(prompts::kCoordinator, true);
    std::string content = "Question: " + t.query;
    if (attempt > 0) content += "\nYour previous reply was not a valid routing object. Reply with JSON only.";
    msgs.push_back({Role::User, content});
    auto resp = ask(lm_, hop, t.request("coordinator", attempt, std::move(msgs)));
    if (!resp) continue;
    auto obj = json_object_from(*resp);
    std::string agent = obj && (*obj).contains("agent_name") && (*obj)["agent_name"].is_string()
                            ? to_lower((*obj)["agent_name"].get<std::string>())
                            : "";
    bool task_ok = obj && (*obj).contains("task") && (*obj)["task"].is_string();
    if ((agent == "explainer" || agent == "reminder") && task_ok) {
      Route r{agent == "explainer" ? RouteKind::SolutionAgnostic : RouteKind::SolutionSpecific,
              (*obj)["task"].get<std::string>()};
      hop.result_digest = to_string(r.kind);
      return r;
    }
    hop.notes.push_back("invalid routing reply (attempt " + std::to_string(attempt) + ")");
  }
  hop.notes.push_back("fallback: solution-specific");
  hop.result_digest = to_string(RouteKind::SolutionSpecific);
  return {RouteKind::SolutionSpecific, t.query};
}

void Pipeline::operate(Turn& t, const std::optional<SyntaxGuidance>& guidance) const {
  std::optional<FunctionCall> chosen;
  {
    HopScope scope(t.out.trace.hops, "operator", t.query + (guidance ? guidance->render() : ""));
    TraceHop& hop = scope.hop();
    if (flags_.no_predefined) {
      chosen = FunctionCall{kExternalTools, {{"request", t.query}}};
      hop.notes.push_back("predefined functions disabled");
    } else {
      std::string feedback;
      for (int attempt = 0; attempt < 2 && !chosen; ++attempt) {
        auto msgs = t.base_messages(prompts::kOperator, true);
        std::string content = "Question: " + t.query;
        if (guidance) content += "\n\nGuidance:\n" + guidance->render();
        if (!feedback.empty()) content += "\nThe previous call was rejected: " + feedback + "\nCorrect the arguments.";
        msgs.push_back({Role::User, content});
        LmRequest req = t.request("operator", attempt, std::move(msgs));
        req.tools = function_schemas(true);
        auto resp = ask(lm_, hop, std::move(req));
        std::optional<FunctionCall> call;
        if (resp && resp->call) {
          call = resp->call;
        } else if (resp) {
          auto obj = json_object_from(*resp);
          if (obj && obj->contains("name") && (*obj)["name"].is_string()) {
            call = FunctionCall{(*obj)["name"].get<std::string>(),
                                obj->value("arguments", obj->value("args", Json::object()))};
          }
        }
        if (!call) {
          feedback = resp ? "the reply did not contain a function call" : "the language model did not answer";
          hop.notes.push_back("invalid call: " + feedback);
          continue;
        }
        t.out.function = call->name;
        hop.call = call;
        try {
          validate_call(t.ctx.ir, *call);
          chosen = call;
        } catch (const ArgumentError& e) {
          feedback = e.what();
          hop.notes.push_back("invalid call: " + feedback);
        }
      }
      if (!chosen) {
        t.out.syntax_error = feedback;
        t.out.payload = {{"function", t.out.function},
                         {"error", {{"kind", "invalid-call"},
                                    {"message", "no valid function call could be formed (" + feedback + ")"}}}};
        hop.result_digest = digest(t.out.payload.dump());
        return;
      }
    }
    t.out.function = chosen->name;
    t.out.call = chosen;
    hop.call = chosen;
  }

  if (chosen->name == kExternalTools) {
    program_loop(t, chosen->args.value("request", t.query));
    return;
  }
  bool failed = false;
  {
    HopScope scope(t.out.trace.hops, "tools", chosen->args.dump());
    scope.hop().call = chosen;
    try {
      t.out.payload = dispatcher_(t.ctx.ir, *chosen, &t.ctx.snapshot);
      scope.hop().result_digest = digest(t.out.payload.dump());
    } catch (const std::exception& e) {
      scope.hop().notes.push_back(std::string("predefined function failed: ") + e.what() +
                                  "; handing over to the programmer");
      failed = true;
    }
  }
  if (failed) program_loop(t, t.query);
}

void Pipeline::program_loop(Turn& t, const std::string& request) const {
  std::string feedback;
  std::vector<std::string> last_diagnostics;
  for (int iter = 0; iter < kProgramIterations; ++iter) {
    std::string spec_text;
    {
      HopScope scope(t.out.trace.hops, "programmer", request + feedback);
      auto msgs = t.base_messages(prompts::kProgrammer, false);
      std::string content = "Question: " + t.query + "\nModel components: " + t.ctx.description.table.dump();
      if (!feedback.empty()) content += "\nFeedback on the previous attempt:\n" + feedback;
      msgs.push_back({Role::User, content});
      auto resp = ask(lm_, scope.hop(), t.request("programmer", iter, std::move(msgs)));
      if (!resp || resp->call) {
        feedback = resp ? "reply must be constraint text, not a function call" : "no reply";
        last_diagnostics = {feedback};
        scope.hop().notes.push_back("iteration " + std::to_string(iter + 1) + ": " + feedback);
        continue;
      }
      spec_text = strip_fences(resp->text);
      scope.hop().result_digest = digest(spec_text);
    }

    HopScope scope(t.out.trace.hops, "evaluator", spec_text);
    TraceHop& hop = scope.hop();
    auto block = parse_constraint_block(spec_text, t.ctx.ir, SpecOrigin::ProgrammerAgent);
    std::vector<std::string> diags;
    for (const auto& d : block.diagnostics) diags.push_back(d.to_string());
    if (diags.empty() && block.specs.empty()) diags.push_back("no constraint found in the reply");
    std::optional<WhyNotReport> report;
    if (diags.empty()) {
      try {
        report = apply_counterfactual(t.ctx.ir, block.specs, opts_);
      } catch (const std::exception& e) {
        diags.push_back(e.what());
      }
    }
    if (!diags.empty()) {
      feedback = join(diags, "\n");
      last_diagnostics = diags;
      hop.notes.push_back("iteration " + std::to_string(iter + 1) + " rejected: " + feedback);
      continue;
    }
    Json result = to_json(*report);
    std::string execution = "Expanded constraints:\n" + join(report->canonical, "\n") + "\nStatus: " +
                            to_string(report->status) +
                            (report->objective ? ", objective " + num(*report->objective) : "") +
                            (report->baseline_objective ? " (baseline " + num(*report->baseline_objective) + ")" : "");
    auto msgs = t.base_messages(prompts::kEvaluator, false);
    msgs.push_back({Role::User, "Question: " + t.query + "\n" + execution});
    auto resp = ask(lm_, hop, t.request("evaluator", iter, std::move(msgs)));
    std::string decision = "accept";
    std::string comment;
    auto obj = resp ? json_object_from(*resp) : std::nullopt;
    if (obj && obj->contains("decision") && (*obj)["decision"].is_string()) {
      std::string d = to_lower((*obj)["decision"].get<std::string>());
      comment = obj->value("comment", "");
      if (d == "reject") decision = "reject";
      else if (d != "accept") obj.reset();
    }
    if (!obj) hop.notes.push_back("evaluator reply unusable; constraints accepted because they compiled");
    if (decision == "reject") {
      feedback = comment.empty() ? "the evaluator rejected the constraints" : comment;
      last_diagnostics = {feedback};
      hop.notes.push_back("iteration " + std::to_string(iter + 1) + " rejected by evaluator: " + feedback);
      continue;
    }
    hop.notes.push_back("accepted at iteration " + std::to_string(iter + 1));
    hop.result_digest = digest(result.dump());
    t.out.payload = {{"function", kExternalTools},
                     {"arguments", {{"request", request}}},
                     {"result", result},
                     {"iterations", iter + 1}};
    return;
  }
  t.out.payload = {{"function", kExternalTools},
                   {"arguments", {{"request", request}}},
                   {"error", {{"kind", "programmer-exhausted"},
                              {"message", "no acceptable constraints after " + std::to_string(kProgramIterations) +
                                              " attempts; last problem: " + join(last_diagnostics, "; ")},
                              {"details", last_diagnostics}}}};
}

void Pipeline::explain(Turn& t) const {
  HopScope scope(t.out.trace.hops, "explainer", t.out.payload.dump());
  TraceHop& hop = scope.hop();
  std::string feedback;
  for (int attempt = 0; attempt < 2; ++attempt) {
    auto msgs = t.base_messages(prompts::kExplainer, true);
    std::string content = "Question: " + t.query + "\n\nResult payload:\n" + t.out.payload.dump(2);
    if (!feedback.empty()) content += "\n" + feedback;
    msgs.push_back({Role::User, content});
    auto resp = ask(lm_, hop, t.request("explainer", attempt, std::move(msgs)));
    if (!resp) break;
    std::string text = trim(resp->text);
    if (resp->call || text.empty()) {
      hop.notes.push_back("empty or non-text explanation");
      feedback = "Reply with plain text.";
      continue;
    }
    std::vector<std::string> bad;
    if (numbers_supported(text, t.out.payload, &bad)) {
      t.out.answer = text;
      hop.result_digest = digest(text);
      return;
    }
    hop.notes.push_back("numeric gate: unsupported numbers " + join(bad, ", ") +
                        (attempt == 0 ? "; regenerating" : ""));
    feedback = "Your previous answer used numbers that are not in the payload (" + join(bad, ", ") +
               "). Use only numbers from the payload.";
  }
  hop.notes.push_back("fallback: template answer");
  t.out.answer = template_answer(t.query, t.out.payload);
  hop.result_digest = digest(t.out.answer);
}

TurnOutcome Pipeline::run_turn(const ModelContext& ctx, const std::string& query, int turn,
                               const std::vector<TranscriptTurn>& history, std::string trace_id) const {
  Turn t{ctx, query, turn, history, {}};
  t.out.trace.id = trace_id.empty() ? "t-" + digest(ctx.model_id + "\n" + std::to_string(turn) + "\n" + query, 16)
                                    : std::move(trace_id);
  Route route = coordinate(t);
  t.out.route = route;
  if (route.kind == RouteKind::SolutionAgnostic) {
    Json comps = Json::array();
    for (const auto& sc : score_components(query, ctx.ir)) {
      for (const auto& row : ctx.description.table) {
        if (row.value("name", "") == sc.name) comps.push_back(row);
      }
    }
    if (comps.empty()) comps = ctx.description.table;
    t.out.payload = {{"scope", "model"},
                     {"model", ctx.ir.name},
                     {"summary", ctx.ir.description},
                     {"components", comps}};
  } else {
    std::optional<SyntaxGuidance> guidance;
    if (!flags_.no_reminder) {
      HopScope scope(t.out.trace.hops, "reminder", query);
      guidance = remind(query, ctx.ir, ctx.baseline.status, ctx.model_id);
      scope.hop().result_digest = digest(guidance->to_json().dump());
      scope.hop().notes.push_back("suggested " + guidance->function);
    }
    operate(t, guidance);
  }
  explain(t);
  t.out.trace.answer = t.out.answer;
  return t.out;
}

}  // namespace modelchat
