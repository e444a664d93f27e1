#pragma once

// Gold-query evaluation: dataset loading, per-item scoring, the concurrent
// runner, gold self-checks and the dataset builder.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "modelchat/agents.hpp"

namespace modelchat {

enum class QueryClass { Diagnosing, Retrieval, Sensitivity, WhatIf, WhyNot };
inline constexpr QueryClass kQueryClasses[] = {QueryClass::Diagnosing, QueryClass::Retrieval,
                                               QueryClass::Sensitivity, QueryClass::WhatIf, QueryClass::WhyNot};
std::string to_string(QueryClass c);
std::optional<QueryClass> parse_query_class(const std::string& s);
/// The function a correct answer to this class goes through.
std::string expected_function(QueryClass c);

/// What a correct answer must contain: the payload value at `pointer`
/// (a JSON pointer) must equal `value`, and the answer must state it.
/// `mention` replaces the stated value for non-numeric facts.
struct GoldFact {
  std::string pointer;
  Json value;
  std::string mention;
};

struct GoldQuery {
  std::string id;
  std::string model;
  std::string query;
  QueryClass cls = QueryClass::Retrieval;
  std::optional<FunctionCall> call;    // predefined-function classes
  std::string spec;                    // why-not: constraint text
  std::vector<std::string> canonical;  // why-not: expanded rows
  GoldFact fact;

  Json to_json() const;
  static GoldQuery from_json(const Json& j);
};

struct Dataset {
  std::map<std::string, ModelIR> models;
  std::vector<GoldQuery> items;  // sorted by id
};

/// Reads `models/*.omif` and `queries/*.gold` under `dir`.
Dataset load_dataset(const std::filesystem::path& dir);

enum class Verdict { Correct, Syntax, Classification, Logic, Skipped };
std::string to_string(Verdict v);

struct ItemResult {
  std::string id;
  QueryClass cls = QueryClass::Retrieval;
  Verdict verdict = Verdict::Skipped;
  bool review = false;  // correct by value, but the constraints differ from gold
  bool numbers_grounded = true;  // every numeral in the answer is in the payload
  std::string detail;
  std::string function;
  std::string answer;
  std::string trace_digest;
  double ms = 0.0;
};

struct ClassRow {
  QueryClass cls = QueryClass::Retrieval;
  int items = 0;
  int correct = 0;
  int syntax = 0;
  int classification = 0;
  int logic = 0;
  int skipped = 0;
  int review = 0;
  double mean_ms = 0.0;
  double accuracy() const;
};

struct EvalReport {
  AblationFlags flags;
  std::vector<ClassRow> classes;  // always one row per class, in class order
  std::vector<ItemResult> items;  // sorted by id
  bool complete = false;          // every class populated, nothing skipped
  std::vector<std::string> warnings;

  Json to_json(bool with_timing = true) const;
  /// Digest of the report without timing fields.
  std::string determinism_digest() const;
  /// Plain-text table: one row per class with accuracy and mean time.
  std::string render() const;
};

struct EvalOptions {
  AblationFlags flags;
  int workers = 4;
  SolverOptions solver;
};

/// Scores one pipeline outcome against its gold item.
ItemResult score_item(const GoldQuery& gold, const TurnOutcome& out);

EvalReport run_eval(const Dataset& data, LmClient& lm, const EvalOptions& opts = {});

/// Re-derives every gold fact and canonical form directly from the tools.
/// Returns one message per discrepancy.
std::vector<std::string> verify_gold(const Dataset& data, const SolverOptions& opts = {});

/// Gold items plus the stub transcript that reproduces the gold behavior.
struct BuiltDataset {
  std::vector<GoldQuery> items;
  std::vector<Json> stub_lines;
};

/// Computes facts and canonical forms for item sources. A source is a gold
/// item without `fact.value` and `canonical`.
BuiltDataset build_gold(const std::map<std::string, ModelIR>& models, const std::vector<Json>& sources,
                        const SolverOptions& opts = {});

/// Arguments with defaults removed and unordered lists sorted, for comparison.
Json normalize_arguments(const Json& args);

}  // namespace modelchat
