#include "modelchat/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "modelchat/omif.hpp"
#include "modelchat/text.hpp"

namespace modelchat {

namespace fs = std::filesystem;

std::string to_string(QueryClass c) {
  switch (c) {
    case QueryClass::Diagnosing: return "diagnosing";
    case QueryClass::Retrieval: return "retrieval";
    case QueryClass::Sensitivity: return "sensitivity";
    case QueryClass::WhatIf: return "what-if";
    case QueryClass::WhyNot: return "why-not";
  }
  return "retrieval";
}

std::optional<QueryClass> parse_query_class(const std::string& s) {
  for (QueryClass c : kQueryClasses) {
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

std::string expected_function(QueryClass c) {
  switch (c) {
    case QueryClass::Diagnosing: return kFeasibilityRestoration;
    case QueryClass::Retrieval: return kComponentsRetrieval;
    case QueryClass::Sensitivity: return kSensitivityAnalysis;
    case QueryClass::WhatIf: return kEvaluateModification;
    case QueryClass::WhyNot: return kExternalTools;
  }
  return kExternalTools;
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::Correct: return "correct";
    case Verdict::Syntax: return "syntax";
    case Verdict::Classification: return "classification";
    case Verdict::Logic: return "logic";
    case Verdict::Skipped: return "skipped";
  }
  return "skipped";
}

// ---------------------------------------------------------------------------
// Gold items

Json GoldQuery::to_json() const {
  Json j = {{"id", id}, {"model", model}, {"class", modelchat::to_string(cls)}, {"query", query}};
  if (call) j["call"] = {{"name", call->name}, {"args", call->args}};
  if (!spec.empty()) {
    j["spec"] = spec;
    j["canonical"] = canonical;
  }
  Json f = {{"pointer", fact.pointer}, {"value", fact.value}};
  if (!fact.mention.empty()) f["mention"] = fact.mention;
  j["fact"] = f;
  return j;
}

GoldQuery GoldQuery::from_json(const Json& j) {
  GoldQuery g;
  g.id = j.at("id").get<std::string>();
  g.model = j.at("model").get<std::string>();
  g.query = j.at("query").get<std::string>();
  auto cls = parse_query_class(j.at("class").get<std::string>());
  if (!cls) throw std::runtime_error("unknown class '" + j.at("class").get<std::string>() + "'");
  g.cls = *cls;
  if (j.contains("call")) g.call = FunctionCall{j["call"].at("name").get<std::string>(), j["call"].value("args", Json::object())};
  g.spec = j.value("spec", "");
  if (j.contains("canonical")) g.canonical = j["canonical"].get<std::vector<std::string>>();
  const Json& f = j.at("fact");
  g.fact.pointer = f.at("pointer").get<std::string>();
  g.fact.value = f.value("value", Json());
  g.fact.mention = f.value("mention", "");
  if (g.cls == QueryClass::WhyNot ? g.spec.empty() : !g.call) {
    throw std::runtime_error("item " + g.id + " lacks its gold " + (g.cls == QueryClass::WhyNot ? "spec" : "call"));
  }
  return g;
}

namespace {

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<fs::path> files_with(const fs::path& dir, const std::string& ext) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ext) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

Dataset load_dataset(const fs::path& dir) {
  Dataset d;
  for (const auto& f : files_with(dir / "models", ".omif")) {
    ParseResult r = parse_model(read_all(f));
    if (!r.ok()) {
      std::string msg = f.string() + ":";
      for (const auto& diag : r.diagnostics) msg += "\n  " + diag.to_string();
      throw std::runtime_error(msg);
    }
    d.models.emplace(f.stem().string(), std::move(*r.model));
  }
  std::set<std::string> ids;
  for (const auto& f : files_with(dir / "queries", ".gold")) {
    std::istringstream in(read_all(f));
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (trim(line).empty() || trim(line)[0] == '#') continue;
      try {
        GoldQuery g = GoldQuery::from_json(Json::parse(line));
        if (!ids.insert(g.id).second) throw std::runtime_error("duplicate id " + g.id);
        d.items.push_back(std::move(g));
      } catch (const std::exception& e) {
        throw std::runtime_error(f.string() + ":" + std::to_string(n) + ": " + e.what());
      }
    }
  }
  std::sort(d.items.begin(), d.items.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return d;
}

// ---------------------------------------------------------------------------
// Scoring

Json normalize_arguments(const Json& args) {
  if (args.is_object()) {
    Json out = Json::object();
    for (const auto& [k, v] : args.items()) {
      if (v.is_null()) continue;
      if (k == "index" && v.is_array() && v.empty()) continue;
      if (k == "weight" && v.is_number() && v.get<double>() == 1.0) continue;
      out[k] = normalize_arguments(v);
    }
    return out;
  }
  if (args.is_array()) {
    std::vector<Json> items;
    bool objects = !args.empty();
    for (const auto& v : args) {
      items.push_back(normalize_arguments(v));
      objects = objects && v.is_object();
    }
    if (objects) {
      std::sort(items.begin(), items.end(), [](const Json& a, const Json& b) { return a.dump() < b.dump(); });
    }
    return Json(items);
  }
  if (args.is_number()) return Json(args.get<double>());
  return args;
}

namespace {

bool values_match(const Json& got, const Json& want) {
  if (want.is_number() && got.is_number()) {
    double a = got.get<double>(), b = want.get<double>();
    return std::abs(a - b) <= 1e-6 * std::max(1.0, std::abs(b));
  }
  return got == want;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

// True when some numeral in the text states `value` to the precision written.
bool states_number(const std::string& text, double value) {
  for (const auto& n : extract_numerals(text)) {
    double v = std::strtod(n.c_str(), nullptr);
    auto dot = n.find('.');
    int decimals = dot == std::string::npos ? 0 : static_cast<int>(n.size() - dot - 1);
    double tol = std::max(1e-6 * std::abs(value), 0.5 * std::pow(10.0, -decimals));
    if (std::abs(v - std::abs(value)) <= tol) return true;
  }
  return false;
}

std::optional<std::string> fact_problem(const GoldFact& fact, const Json& payload, const std::string& answer) {
  Json::json_pointer ptr(fact.pointer);
  if (!payload.contains(ptr)) return "payload has no " + fact.pointer;
  const Json& got = payload.at(ptr);
  if (!values_match(got, fact.value)) return fact.pointer + " is " + got.dump() + ", gold " + fact.value.dump();
  if (!fact.mention.empty()) {
    if (lower(answer).find(lower(fact.mention)) == std::string::npos) return "answer does not mention '" + fact.mention + "'";
  } else if (fact.value.is_number()) {
    if (!states_number(answer, fact.value.get<double>())) return "answer does not state " + fact.value.dump();
  } else if (fact.value.is_string()) {
    if (lower(answer).find(lower(fact.value.get<std::string>())) == std::string::npos) {
      return "answer does not mention '" + fact.value.get<std::string>() + "'";
    }
  }
  return std::nullopt;
}

std::vector<std::string> sorted(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

ItemResult score_item(const GoldQuery& gold, const TurnOutcome& out) {
  ItemResult r;
  r.id = gold.id;
  r.cls = gold.cls;
  r.function = out.function;
  r.answer = out.answer;
  r.trace_digest = digest(out.trace.to_json(false).dump());
  r.numbers_grounded = numbers_supported(out.answer, out.payload);
  auto verdict = [&](Verdict v, std::string detail) {
    r.verdict = v;
    r.detail = std::move(detail);
    return r;
  };
  if (out.route && out.route->kind == RouteKind::SolutionAgnostic) {
    return verdict(Verdict::Classification, "routed as a solution-agnostic question");
  }
  if (out.syntax_error) return verdict(Verdict::Syntax, *out.syntax_error);
  const std::string want = expected_function(gold.cls);
  if (out.function != want) {
    return verdict(Verdict::Classification, "called " + (out.function.empty() ? "nothing" : out.function) + ", gold " + want);
  }
  if (gold.cls == QueryClass::WhyNot) {
    if (out.payload.contains("error")) {
      const Json& e = out.payload["error"];
      Verdict v = e.value("kind", "") == "programmer-exhausted" ? Verdict::Syntax : Verdict::Logic;
      return verdict(v, e.value("message", "counterfactual failed"));
    }
    std::vector<std::string> got;
    if (out.payload.contains("result")) got = out.payload["result"].value("canonical", std::vector<std::string>{});
    auto problem = fact_problem(gold.fact, out.payload, out.answer);
    if (problem) return verdict(Verdict::Logic, *problem);
    if (sorted(got) != sorted(gold.canonical)) {
      r.review = true;
      return verdict(Verdict::Correct, "objective matches but the constraints differ from gold; manual review");
    }
    return verdict(Verdict::Correct, "");
  }
  if (!out.call) return verdict(Verdict::Syntax, "no validated call");
  if (normalize_arguments(out.call->args) != normalize_arguments(gold.call->args)) {
    return verdict(Verdict::Logic, "arguments " + out.call->args.dump() + ", gold " + gold.call->args.dump());
  }
  if (auto problem = fact_problem(gold.fact, out.payload, out.answer)) return verdict(Verdict::Logic, *problem);
  return verdict(Verdict::Correct, "");
}

// ---------------------------------------------------------------------------
// Report

double ClassRow::accuracy() const {
  int scored = items - skipped;
  return scored > 0 ? static_cast<double>(correct) / scored : 0.0;
}

Json EvalReport::to_json(bool with_timing) const {
  Json rows = Json::array();
  for (const auto& c : classes) {
    Json row = {{"class", modelchat::to_string(c.cls)}, {"items", c.items},   {"correct", c.correct},
                {"accuracy", c.accuracy()},             {"syntax", c.syntax}, {"classification", c.classification},
                {"logic", c.logic},                     {"skipped", c.skipped}, {"review", c.review}};
    if (with_timing) row["mean_ms"] = c.mean_ms;
    rows.push_back(row);
  }
  Json items_j = Json::array();
  for (const auto& i : items) {
    Json ij = {{"id", i.id},           {"class", modelchat::to_string(i.cls)}, {"verdict", to_string(i.verdict)},
               {"review", i.review},   {"detail", i.detail},                  {"function", i.function},
               {"numbers_grounded", i.numbers_grounded},
               {"answer", i.answer},   {"trace_digest", i.trace_digest}};
    if (with_timing) ij["ms"] = i.ms;
    items_j.push_back(ij);
  }
  return {{"flags",
           {{"no_reminder", flags.no_reminder},
            {"no_illustrator", flags.no_illustrator},
            {"no_predefined", flags.no_predefined}}},
          {"classes", rows},
          {"items", items_j},
          {"complete", complete},
          {"warnings", warnings}};
}

std::string EvalReport::determinism_digest() const { return digest(to_json(false).dump(), 32); }

std::string EvalReport::render() const {
  std::ostringstream os;
  os << std::left << std::setw(14) << "class" << std::right << std::setw(7) << "items" << std::setw(10) << "accuracy"
     << std::setw(8) << "syntax" << std::setw(16) << "classification" << std::setw(7) << "logic" << std::setw(10)
     << "mean ms" << "\n";
  for (const auto& c : classes) {
    os << std::left << std::setw(14) << to_string(c.cls) << std::right << std::setw(7) << c.items << std::setw(9)
       << std::fixed << std::setprecision(1) << 100.0 * c.accuracy() << "%" << std::setw(8) << c.syntax
       << std::setw(16) << c.classification << std::setw(7) << c.logic << std::setw(10) << std::setprecision(1)
       << c.mean_ms << "\n";
  }
  for (const auto& i : items) {
    if (i.verdict != Verdict::Correct || i.review) {
      os << "  " << i.id << ": " << to_string(i.verdict) << (i.review ? " (review)" : "") << " - " << i.detail << "\n";
    }
  }
  for (const auto& w : warnings) os << "warning: " << w << "\n";
  if (!complete) os << "report incomplete\n";
  return os.str();
}

EvalReport run_eval(const Dataset& data, LmClient& lm, const EvalOptions& opts) {
  Pipeline pipeline(lm, opts.flags, opts.solver);
  EvalReport report;
  report.flags = opts.flags;

  // Contexts are prepared up front and in a fixed order so illustration
  // requests do not depend on worker scheduling.
  std::map<std::string, std::shared_ptr<const ModelContext>> contexts;
  for (const auto& item : data.items) {
    if (contexts.count(item.model)) continue;
    auto m = data.models.find(item.model);
    if (m == data.models.end()) continue;
    contexts[item.model] = pipeline.prepare(m->second, item.model);
  }

  std::vector<ItemResult> results(data.items.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t k = next++; k < data.items.size(); k = next++) {
      const GoldQuery& item = data.items[k];
      auto ctx = contexts.find(item.model);
      if (ctx == contexts.end()) {
        results[k].id = item.id;
        results[k].cls = item.cls;
        results[k].verdict = Verdict::Skipped;
        results[k].detail = "model '" + item.model + "' is not in the dataset";
        continue;
      }
      auto start = std::chrono::steady_clock::now();
      TurnOutcome out = pipeline.run_turn(*ctx->second, item.query);
      double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      results[k] = score_item(item, out);
      results[k].ms = ms;
    }
  };
  int workers = std::max(1, opts.workers);
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();

  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  report.items = std::move(results);
  report.complete = true;
  for (QueryClass c : kQueryClasses) {
    ClassRow row;
    row.cls = c;
    double total_ms = 0.0;
    for (const auto& i : report.items) {
      if (i.cls != c) continue;
      ++row.items;
      total_ms += i.ms;
      switch (i.verdict) {
        case Verdict::Correct: ++row.correct; break;
        case Verdict::Syntax: ++row.syntax; break;
        case Verdict::Classification: ++row.classification; break;
        case Verdict::Logic: ++row.logic; break;
        case Verdict::Skipped: ++row.skipped; break;
      }
      if (i.review) ++row.review;
    }
    int timed = row.items - row.skipped;
    row.mean_ms = timed > 0 ? total_ms / timed : 0.0;
    if (row.items == 0) {
      report.complete = false;
      report.warnings.push_back("no items for class " + to_string(c));
    }
    if (row.skipped > 0) report.complete = false;
    report.classes.push_back(row);
  }
  for (const auto& i : report.items) {
    if (i.verdict == Verdict::Skipped) report.warnings.push_back("skipped " + i.id + ": " + i.detail);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Gold self-check and builder

namespace {

struct Derived {
  Json payload;
  std::vector<std::string> canonical;
};

std::vector<std::string> canonical_of(const ModelIR& ir, const std::vector<ConstraintSpec>& specs) {
  std::vector<std::string> rows;
  for (const auto& s : specs) {
    for (auto& r : canonical_form(ir, s)) rows.push_back(std::move(r));
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

// Payload computed by calling the tools directly, bypassing every agent.
Derived derive(const ModelIR& ir, const GoldQuery& g, const SolverOptions& opts) {
  Derived d;
  if (g.cls == QueryClass::WhyNot) {
    SpecBlockResult block = parse_constraint_block(g.spec, ir, SpecOrigin::ProgrammerAgent);
    if (!block.diagnostics.empty()) throw std::runtime_error("spec does not parse: " + block.diagnostics[0].to_string());
    d.canonical = canonical_of(ir, block.specs);
    d.payload = {{"function", kExternalTools}, {"result", to_json(apply_counterfactual(ir, block.specs, opts))}};
    return d;
  }
  if (!g.call) throw std::runtime_error("no gold call");
  if (g.call->name != expected_function(g.cls)) {
    throw std::runtime_error("gold call " + g.call->name + " does not match class " + to_string(g.cls));
  }
  Instance inst = instantiate(ir);
  SolutionSnapshot snap = make_snapshot(inst, solve(inst, opts));
  d.payload = dispatch_call(ir, *g.call, &snap, opts);
  return d;
}

}  // namespace

std::vector<std::string> verify_gold(const Dataset& data, const SolverOptions& opts) {
  std::vector<std::string> problems;
  for (const auto& g : data.items) {
    auto m = data.models.find(g.model);
    if (m == data.models.end()) {
      problems.push_back(g.id + ": unknown model " + g.model);
      continue;
    }
    try {
      Derived d = derive(m->second, g, opts);
      Json::json_pointer ptr(g.fact.pointer);
      if (!d.payload.contains(ptr)) {
        problems.push_back(g.id + ": tool payload has no " + g.fact.pointer);
      } else if (!values_match(d.payload.at(ptr), g.fact.value)) {
        problems.push_back(g.id + ": " + g.fact.pointer + " is " + d.payload.at(ptr).dump() + ", gold says " +
                           g.fact.value.dump());
      }
      if (g.cls == QueryClass::WhyNot && d.canonical != sorted(g.canonical)) {
        problems.push_back(g.id + ": canonical form differs from gold");
      }
    } catch (const std::exception& e) {
      problems.push_back(g.id + ": " + e.what());
    }
  }
  return problems;
}

BuiltDataset build_gold(const std::map<std::string, ModelIR>& models, const std::vector<Json>& sources,
                        const SolverOptions& opts) {
  BuiltDataset built;
  auto entry = [](const std::string& match, const std::string& agent, Json respond) {
    return Json{{"match", match}, {"agent", agent}, {"respond", std::move(respond)}};
  };
  std::set<std::string> illustrated;
  for (const auto& src : sources) {
    GoldQuery g = GoldQuery::from_json(src);
    auto m = models.find(g.model);
    if (m == models.end()) throw std::runtime_error(g.id + ": unknown model " + g.model);
    const ModelIR& ir = m->second;
    Derived d = derive(ir, g, opts);
    Json::json_pointer ptr(g.fact.pointer);
    if (!d.payload.contains(ptr) || d.payload.at(ptr).is_null()) {
      throw std::runtime_error(g.id + ": the tool payload has no value at " + g.fact.pointer);
    }
    g.fact.value = d.payload.at(ptr);
    g.canonical = d.canonical;

    if (illustrated.insert(g.model).second) {
      Instance inst = instantiate(ir);
      SolveResult base = solve(inst, opts);
      const std::string header = "Model \"" + ir.name + "\"";
      built.stub_lines.push_back(entry(header, "illustrator", {{"text", template_description(ir, base)}}));
      if (base.status == SolveStatus::Infeasible) {
        built.stub_lines.push_back(entry(header, "iis",
                                         {{"text", "These requirements cannot all hold at the same time; relaxing any "
                                                   "one of them removes the conflict."}}));
      }
    }
    std::vector<Json> lines;
    lines.push_back(entry(g.query, "coordinator",
                          {{"text", Json{{"agent_name", "Reminder"}, {"task", g.query}}.dump()}}));
    if (g.cls == QueryClass::WhyNot) {
      lines.push_back(entry(g.query, "operator",
                            {{"call", {{"name", kExternalTools}, {"args", {{"request", g.query}}}}}}));
      lines.push_back(entry(g.query, "programmer", {{"text", g.spec}}));
      lines.push_back(entry(g.query, "evaluator",
                            {{"text", Json{{"decision", "accept"}, {"comment", "the constraints express the question"}}.dump()}}));
    } else {
      lines.push_back(entry(g.query, "operator", {{"call", {{"name", g.call->name}, {"args", g.call->args}}}}));
    }
    // The Explainer line is the template answer the pipeline produces for
    // this exact path; it is checked against the fact before it is kept.
    std::vector<StubEntry> entries;
    for (const auto& l : built.stub_lines) entries.push_back(StubClient::parse(l.dump())[0]);
    for (const auto& l : lines) entries.push_back(StubClient::parse(l.dump())[0]);
    StubClient partial(std::move(entries));
    Pipeline pipeline(partial, {}, opts);
    auto ctx = pipeline.prepare(ir, g.model);
    TurnOutcome out = pipeline.run_turn(*ctx, g.query);
    ItemResult check = score_item(g, out);
    if (check.verdict != Verdict::Correct || check.review) {
      throw std::runtime_error(g.id + ": gold path does not reproduce: " + check.detail);
    }
    lines.push_back(entry(g.query, "explainer", {{"text", out.answer}}));
    for (auto& l : lines) built.stub_lines.push_back(std::move(l));
    built.items.push_back(std::move(g));
  }
  return built;
}

}  // namespace modelchat
