#pragma once

// The chat pipeline: Illustrator, Coordinator, Reminder, Operator,
// Programmer/Evaluator loop and Explainer, each recorded in an AgentTrace.

#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "modelchat/explain.hpp"
#include "modelchat/functions.hpp"
#include "modelchat/lm.hpp"

namespace modelchat {

struct AblationFlags {
  bool no_reminder = false;
  bool no_illustrator = false;
  bool no_predefined = false;
};

// ---------------------------------------------------------------------------
// Trace.

struct LmExchange {
  LmRequest request;
  std::optional<LmResponse> response;  // empty when the client failed
  std::string error;
};

struct TraceHop {
  std::string agent;
  std::string input_digest;
  std::vector<LmExchange> exchanges;  // empty for deterministic hops
  std::optional<FunctionCall> call;
  std::string result_digest;
  std::vector<std::string> notes;     // retries, fallbacks, validation messages
  double wall_ms = 0.0;

  bool deterministic() const { return exchanges.empty(); }
};

struct AgentTrace {
  std::string id;
  std::vector<TraceHop> hops;
  std::string answer;

  /// Timing fields are omitted when `with_timing` is false, which makes the
  /// result suitable for determinism digests.
  Json to_json(bool with_timing = true) const;
  static AgentTrace from_json(const Json& j);
  std::vector<std::string> agents() const;
};

/// Stub entries that reproduce every LM exchange recorded in a trace.
std::vector<StubEntry> replay_entries(const AgentTrace& trace);

// ---------------------------------------------------------------------------
// Illustration.

struct ModelDescription {
  std::string text;
  Json table = Json::array();   // component lookup table
  bool fallback = false;        // template used instead of the LM narrative
  std::optional<IISResult> iis;
};

/// Per-component table built from the authored descriptions.
Json component_table(const ModelIR& ir);

/// Deterministic narrative listing variables, constraints and objective.
std::string template_description(const ModelIR& ir, const SolveResult& baseline);

/// A solved, illustrated model shared by the turns of a session.
struct ModelContext {
  std::string model_id;
  ModelIR ir;
  Instance instance;
  SolveResult baseline;
  SolutionSnapshot snapshot;
  ModelDescription description;
};

// ---------------------------------------------------------------------------
// Routing and guidance.

enum class RouteKind { SolutionAgnostic, SolutionSpecific };
std::string to_string(RouteKind k);

struct Route {
  RouteKind kind = RouteKind::SolutionSpecific;
  std::string task;
};

struct IndexSignature {
  std::vector<std::string> sets;
  std::vector<IndexTuple> examples;
};

struct ComponentCandidate {
  std::string name;
  ComponentKind kind = ComponentKind::Parameter;
  std::string description;
  IndexSignature signature;
  std::vector<std::string> roles;  // e.g. "right-hand side of M"
};

struct SyntaxGuidance {
  std::string function;
  std::vector<ComponentCandidate> components;
  std::string model_id;
  std::string table_digest;  // used when no component matched

  std::string render() const;
  Json to_json() const;
};

/// Rule-based choice of function and components for a solution-specific
/// query. No language model is involved.
SyntaxGuidance remind(const std::string& query, const ModelIR& ir, SolveStatus baseline_status,
                      const std::string& model_id = {});

/// Numerals in free text, skipping digits that belong to identifiers.
std::vector<std::string> extract_numerals(const std::string& text);

/// True when every numeral in `answer` matches a payload number, within
/// rounding of the digits written.
bool numbers_supported(const std::string& answer, const Json& payload, std::vector<std::string>* unsupported = nullptr);

/// Deterministic answer assembled from a tool payload.
std::string template_answer(const std::string& query, const Json& payload);

// ---------------------------------------------------------------------------
// Pipeline.

struct TranscriptTurn {
  std::string user;
  std::string answer;
  std::string trace_id;
};

struct TurnOutcome {
  std::optional<Route> route;
  std::string function;                 // last function the Operator chose
  std::optional<FunctionCall> call;     // validated call that was dispatched
  std::optional<std::string> syntax_error;
  Json payload = Json::object();        // what the Explainer was given
  std::string answer;
  AgentTrace trace;
};

class Pipeline {
 public:
  using Dispatcher = std::function<Json(const ModelIR&, const FunctionCall&, const SolutionSnapshot*)>;

  Pipeline(LmClient& lm, AblationFlags flags = {}, SolverOptions opts = {});

  /// Solves the baseline and illustrates the model. Hops are appended to
  /// `trace` when given.
  std::shared_ptr<const ModelContext> prepare(ModelIR ir, std::string model_id, AgentTrace* trace = nullptr) const;

  /// Rebuilds a context from a stored description without consulting the LM.
  std::shared_ptr<const ModelContext> restore(ModelIR ir, std::string model_id, std::string text, bool fallback) const;

  TurnOutcome run_turn(const ModelContext& ctx, const std::string& query, int turn = 0,
                       const std::vector<TranscriptTurn>& history = {}, std::string trace_id = {}) const;

  /// Replaces the predefined-function dispatcher, e.g. to inject failures.
  void set_dispatcher(Dispatcher d) { dispatcher_ = std::move(d); }

  const AblationFlags& flags() const { return flags_; }

  static constexpr int kProgramIterations = 3;

 private:
  struct Turn;

  Route coordinate(Turn& t) const;
  void operate(Turn& t, const std::optional<SyntaxGuidance>& guidance) const;
  void program_loop(Turn& t, const std::string& reason) const;
  void explain(Turn& t) const;

  LmClient& lm_;
  AblationFlags flags_;
  SolverOptions opts_;
  Dispatcher dispatcher_;
};

}  // namespace modelchat
