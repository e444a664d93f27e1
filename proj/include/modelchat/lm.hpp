#pragma once

// Language-model client interface with a live chat-completions backend and
// a scripted stub for deterministic runs.

#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace modelchat {

using Json = nlohmann::json;

enum class Role { System, User, Assistant, Tool };
std::string to_string(Role r);

struct Message {
  Role role = Role::User;
  std::string content;
};

struct ToolSchema {
  std::string name;
  std::string description;
  Json parameters = Json::object();  // JSON schema of the argument object
};

struct FunctionCall {
  std::string name;
  Json args = Json::object();

  bool operator==(const FunctionCall&) const = default;
};

struct LmRequest {
  std::string agent;  // pipeline role issuing the request
  int turn = 0;       // chat turn within the session
  int attempt = 0;    // retry counter for this agent within the turn
  std::vector<Message> messages;
  std::vector<ToolSchema> tools;
  double temperature = 0.0;

  /// Content of the last user message, the part stubs match against.
  std::string query_text() const;
  Json to_json() const;
  static LmRequest from_json(const Json& j);
  /// Content hash of the serialized request.
  std::string id() const;
};

struct TokenUsage {
  int prompt = 0;
  int completion = 0;
};

struct LmResponse {
  std::string text;
  std::optional<FunctionCall> call;
  TokenUsage usage;

  Json to_json() const;
  std::string id() const;
};

class LmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Implementations must be safe to call from several threads at once.
class LmClient {
 public:
  virtual ~LmClient() = default;
  virtual LmResponse complete(const LmRequest& req) = 0;
};

struct LiveConfig {
  std::string url;    // base URL, e.g. https://api.example.com/v1
  std::string key;
  std::string model;
  int timeout_seconds = 120;
};

/// Chat-completions wire format over HTTP(S).
class LiveClient : public LmClient {
 public:
  explicit LiveClient(LiveConfig cfg);
  LmResponse complete(const LmRequest& req) override;

  /// Body sent for a request; exposed for tests.
  Json wire_body(const LmRequest& req) const;
  static LmResponse parse_wire_response(const Json& body);

 private:
  LiveConfig cfg_;
};

/// One scripted reply. `match` is a substring of the request's query text;
/// the optional filters must equal the request's fields.
struct StubEntry {
  std::string match;
  std::optional<std::string> agent;
  std::optional<int> attempt;
  std::optional<int> turn;
  LmResponse respond;
};

/// The first entry whose filters accept the request answers it; entries are
/// never consumed. Unmatched requests throw and are recorded.
class StubClient : public LmClient {
 public:
  explicit StubClient(std::vector<StubEntry> entries);
  /// JSON lines; blank lines and lines starting with '#' are skipped.
  static StubClient from_file(const std::string& path);
  static std::vector<StubEntry> parse(const std::string& text);

  LmResponse complete(const LmRequest& req) override;

  std::vector<std::string> misses() const;

 private:
  std::vector<StubEntry> entries_;
  mutable std::mutex mu_;
  std::vector<std::string> misses_;
};

}  // namespace modelchat
