#pragma once

// Chat service: model registration, sessions, durable transcripts and
// traces, and the HTTP surface over them.

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "modelchat/agents.hpp"

namespace httplib {
class Server;
}

namespace modelchat {

enum class ServiceErrorKind { BadRequest, NotFound, Busy, Quarantined, Internal };
std::string to_string(ServiceErrorKind k);
int http_status(ServiceErrorKind k);

class ServiceError : public std::runtime_error {
 public:
  ServiceError(ServiceErrorKind kind, const std::string& msg, Json details = nullptr)
      : std::runtime_error(msg), kind_(kind), details_(std::move(details)) {}
  ServiceErrorKind kind() const { return kind_; }
  const Json& details() const { return details_; }
  Json to_json() const;

 private:
  ServiceErrorKind kind_;
  Json details_;
};

// ---------------------------------------------------------------------------
// Persistence.

struct StoredSession {
  std::string id;
  std::string model_id;
  std::string created_at;
  std::vector<TranscriptTurn> transcript;
};

struct StoredModel {
  std::string id;
  std::string document;
  std::string description;
  bool fallback = false;
};

struct QuarantineNotice {
  std::string session_id;
  std::filesystem::path file;
  std::size_t line = 0;  // 1-based record number, 0 when not line-specific
  std::string reason;
};

/// Directory layout: `models/<id>.json`, `sessions/<id>.ndjson` (one
/// append-only record per line), `traces/<id>.json`.
class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path root);

  struct Loaded {
    std::vector<StoredSession> sessions;
    std::vector<QuarantineNotice> quarantined;
  };
  Loaded load_sessions() const;
  std::vector<StoredModel> load_models() const;

  void save_model(const StoredModel& m) const;
  void create_session(const StoredSession& s) const;
  void append_turn(const std::string& session_id, std::size_t index, const TranscriptTurn& turn) const;
  void save_trace(const AgentTrace& trace) const;
  std::optional<Json> load_trace(const std::string& trace_id) const;
  bool has_trace(const std::string& trace_id) const;

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path session_file(const std::string& id) const;

 private:
  std::filesystem::path root_;
};

/// Identifiers are restricted to `[A-Za-z0-9_-]` so they are safe as file names.
bool valid_identifier(std::string_view id);

// ---------------------------------------------------------------------------
// Service.

struct ServiceConfig {
  std::filesystem::path data_dir = "modelchat-data";
  AblationFlags flags;
  SolverOptions solver;
};

struct Registration {
  std::string model_id;
  std::string status;
  std::string description;
  bool fallback = false;
  bool reused = false;  // the document was already registered
  Json to_json() const;
};

struct ChatReply {
  std::string answer;
  std::string trace_id;
};

class ChatService {
 public:
  /// Loads every persisted model and session under `cfg.data_dir`.
  ChatService(LmClient& lm, ServiceConfig cfg);

  Registration register_model(std::string_view document);
  Json model_info(const std::string& model_id) const;
  std::string create_session(const std::string& model_id);
  /// One turn at a time per session; a concurrent call gets a Busy error.
  ChatReply chat(const std::string& session_id, const std::string& text);
  Json transcript(const std::string& session_id) const;
  Json trace(const std::string& trace_id) const;

  const std::vector<QuarantineNotice>& quarantined() const { return quarantined_; }
  std::vector<std::string> session_ids() const;

  /// Content address of a parsed model.
  static std::string model_id_of(const ModelIR& ir);

 private:
  struct Session {
    std::string id;
    std::string model_id;
    std::string created_at;
    std::shared_ptr<const ModelContext> ctx;
    std::mutex turn;                  // held for the whole turn
    mutable std::mutex state;         // guards transcript
    std::vector<TranscriptTurn> transcript;
  };

  std::shared_ptr<const ModelContext> find_model(const std::string& id) const;
  std::shared_ptr<Session> find_session(const std::string& id) const;

  Pipeline pipeline_;
  SessionStore store_;
  mutable std::shared_mutex mu_;  // guards the maps below
  std::map<std::string, std::shared_ptr<const ModelContext>> models_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::map<std::string, QuarantineNotice> quarantine_index_;
  std::vector<QuarantineNotice> quarantined_;
};

/// Registers the `/api/...` routes on `server`.
void install_routes(httplib::Server& server, ChatService& service);

// ---------------------------------------------------------------------------
// Environment.

struct ServiceEnvironment {
  std::string lm_url;     // MODELCHAT_LM_URL
  std::string lm_key;     // MODELCHAT_LM_KEY
  std::string lm_model;   // MODELCHAT_LM_MODEL
  std::string lm_mode;    // MODELCHAT_LM_MODE: live | stub
  std::string stub_path;  // MODELCHAT_STUB_PATH
  std::string listen = "127.0.0.1:8080";     // MODELCHAT_LISTEN
  std::string data_dir = "modelchat-data";   // MODELCHAT_DATA_DIR

  static ServiceEnvironment from_env();
  std::string host() const;
  int port() const;
};

/// Live client when the mode is `live` (or unset with a URL), else a stub
/// loaded from `stub_path`.
std::unique_ptr<LmClient> make_lm_client(const ServiceEnvironment& env);

}  // namespace modelchat
