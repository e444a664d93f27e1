#include "modelchat/service.hpp"

#include <httplib.h>

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "modelchat/omif.hpp"
#include "modelchat/text.hpp"

namespace modelchat {

namespace fs = std::filesystem;

std::string to_string(ServiceErrorKind k) {
  switch (k) {
    case ServiceErrorKind::BadRequest: return "bad-request";
    case ServiceErrorKind::NotFound: return "not-found";
    case ServiceErrorKind::Busy: return "busy";
    case ServiceErrorKind::Quarantined: return "quarantined";
    case ServiceErrorKind::Internal: return "internal";
  }
  return "internal";
}

int http_status(ServiceErrorKind k) {
  switch (k) {
    case ServiceErrorKind::BadRequest: return 400;
    case ServiceErrorKind::NotFound: return 404;
    case ServiceErrorKind::Busy: return 409;
    case ServiceErrorKind::Quarantined: return 423;
    case ServiceErrorKind::Internal: return 500;
  }
  return 500;
}

Json ServiceError::to_json() const {
  Json e = {{"kind", modelchat::to_string(kind_)}, {"message", what()}};
  if (!details_.is_null()) e["details"] = details_;
  return {{"error", e}};
}

bool valid_identifier(std::string_view id) {
  if (id.empty() || id.size() > 128) return false;
  for (char c : id) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
    if (!ok) return false;
  }
  return true;
}

namespace {

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes to a sibling temporary, syncs, then renames over the target.
void write_atomic(const fs::path& target, const std::string& bytes) {
  fs::path tmp = target;
  tmp += ".tmp";
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw std::runtime_error("cannot write " + tmp.string());
  std::size_t done = 0;
  while (done < bytes.size()) {
    ssize_t n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      ::close(fd);
      throw std::runtime_error("write failed for " + tmp.string());
    }
    done += static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
  fs::rename(tmp, target);
}

void append_line(const fs::path& file, const std::string& line) {
  int fd = ::open(file.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw std::runtime_error("cannot append to " + file.string());
  std::string bytes = line + "\n";
  // A single write on an O_APPEND descriptor keeps the record contiguous.
  ssize_t n = ::write(fd, bytes.data(), bytes.size());
  ::fsync(fd);
  ::close(fd);
  if (n != static_cast<ssize_t>(bytes.size())) throw std::runtime_error("short append to " + file.string());
}

std::string utc_now() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string random_hex(std::size_t n) {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (std::size_t i = 0; i < n; ++i) out += kHex[rng() % 16];
  return out;
}

Json diagnostics_json(const std::vector<Diagnostic>& diags) {
  Json out = Json::array();
  for (const auto& d : diags) {
    Json j = {{"line", d.pos.line}, {"column", d.pos.column}, {"message", d.message}, {"text", d.to_string()}};
    if (!d.expected.empty()) j["expected"] = d.expected;
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// SessionStore

SessionStore::SessionStore(fs::path root) : root_(std::move(root)) {
  fs::create_directories(root_ / "models");
  fs::create_directories(root_ / "sessions");
  fs::create_directories(root_ / "traces");
}

fs::path SessionStore::session_file(const std::string& id) const { return root_ / "sessions" / (id + ".ndjson"); }

void SessionStore::save_model(const StoredModel& m) const {
  Json j = {{"model_id", m.id}, {"document", m.document}, {"description", m.description}, {"fallback", m.fallback}};
  write_atomic(root_ / "models" / (m.id + ".json"), j.dump(2) + "\n");
}

std::vector<StoredModel> SessionStore::load_models() const {
  std::vector<StoredModel> out;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(root_ / "models")) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    try {
      Json j = Json::parse(read_all(f));
      out.push_back({j.at("model_id").get<std::string>(), j.at("document").get<std::string>(),
                     j.at("description").get<std::string>(), j.value("fallback", false)});
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping unreadable model record " << f << ": " << e.what() << "\n";
    }
  }
  return out;
}

void SessionStore::create_session(const StoredSession& s) const {
  Json rec = {{"kind", "session"}, {"session_id", s.id}, {"model_id", s.model_id}, {"created_at", s.created_at}};
  fs::path file = session_file(s.id);
  if (fs::exists(file)) throw std::runtime_error("session log already exists: " + file.string());
  append_line(file, rec.dump());
}

void SessionStore::append_turn(const std::string& session_id, std::size_t index, const TranscriptTurn& turn) const {
  Json rec = {{"kind", "turn"}, {"index", index}, {"user", turn.user}, {"answer", turn.answer},
              {"trace_id", turn.trace_id}};
  append_line(session_file(session_id), rec.dump());
}

void SessionStore::save_trace(const AgentTrace& trace) const {
  write_atomic(root_ / "traces" / (trace.id + ".json"), trace.to_json().dump(2) + "\n");
}

bool SessionStore::has_trace(const std::string& trace_id) const {
  return valid_identifier(trace_id) && fs::exists(root_ / "traces" / (trace_id + ".json"));
}

std::optional<Json> SessionStore::load_trace(const std::string& trace_id) const {
  if (!has_trace(trace_id)) return std::nullopt;
  return Json::parse(read_all(root_ / "traces" / (trace_id + ".json")));
}

SessionStore::Loaded SessionStore::load_sessions() const {
  Loaded out;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(root_ / "sessions")) {
    if (e.path().extension() == ".ndjson") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const std::string id = f.stem().string();
    std::string bytes = read_all(f);
    StoredSession s;
    std::optional<QuarantineNotice> bad;
    auto fail = [&](std::size_t line, std::string reason) { bad = QuarantineNotice{id, f, line, std::move(reason)}; };

    std::size_t pos = 0, line = 0;
    while (pos < bytes.size() && !bad) {
      ++line;
      std::size_t nl = bytes.find('\n', pos);
      if (nl == std::string::npos) {
        fail(line, "truncated record (no terminating newline)");
        break;
      }
      std::string text = bytes.substr(pos, nl - pos);
      pos = nl + 1;
      Json rec;
      try {
        rec = Json::parse(text);
      } catch (const std::exception&) {
        fail(line, "unparseable record");
        break;
      }
      try {
        const std::string kind = rec.at("kind").get<std::string>();
        if (line == 1) {
          if (kind != "session" || rec.at("session_id").get<std::string>() != id) {
            fail(line, "first record is not this session's header");
            break;
          }
          s.id = id;
          s.model_id = rec.at("model_id").get<std::string>();
          s.created_at = rec.at("created_at").get<std::string>();
        } else if (kind == "turn") {
          if (rec.at("index").get<std::size_t>() != s.transcript.size()) {
            fail(line, "turn index out of sequence");
            break;
          }
          TranscriptTurn t{rec.at("user").get<std::string>(), rec.at("answer").get<std::string>(),
                           rec.at("trace_id").get<std::string>()};
          if (!has_trace(t.trace_id)) {
            fail(line, "trace " + t.trace_id + " is missing");
            break;
          }
          s.transcript.push_back(std::move(t));
        } else {
          fail(line, "unexpected record kind '" + kind + "'");
        }
      } catch (const std::exception& e) {
        fail(line, std::string("malformed record: ") + e.what());
      }
    }
    if (line == 0 && !bad) fail(0, "empty session log");
    if (bad) {
      out.quarantined.push_back(std::move(*bad));
    } else {
      out.sessions.push_back(std::move(s));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// ChatService

Json Registration::to_json() const {
  return {{"model_id", model_id}, {"status", status}, {"description", description}, {"fallback", fallback},
          {"reused", reused}};
}

std::string ChatService::model_id_of(const ModelIR& ir) { return "m-" + digest(serialize_model(ir), 16); }

ChatService::ChatService(LmClient& lm, ServiceConfig cfg)
    : pipeline_(lm, cfg.flags, cfg.solver), store_(cfg.data_dir) {
  for (const auto& m : store_.load_models()) {
    ParseResult parsed = parse_model(m.document);
    if (!parsed.ok() || model_id_of(*parsed.model) != m.id) {
      std::cerr << "warning: stored model " << m.id << " no longer matches its document; skipped\n";
      continue;
    }
    models_[m.id] = pipeline_.restore(std::move(*parsed.model), m.id, m.description, m.fallback);
  }
  SessionStore::Loaded loaded = store_.load_sessions();
  for (auto& s : loaded.sessions) {
    auto model = models_.find(s.model_id);
    if (model == models_.end()) {
      loaded.quarantined.push_back({s.id, store_.session_file(s.id), 1, "unknown model " + s.model_id});
      continue;
    }
    auto sess = std::make_shared<Session>();
    sess->id = s.id;
    sess->model_id = s.model_id;
    sess->created_at = s.created_at;
    sess->ctx = model->second;
    sess->transcript = std::move(s.transcript);
    sessions_[sess->id] = std::move(sess);
  }
  for (const auto& q : loaded.quarantined) {
    std::cerr << "warning: session " << q.session_id << " quarantined (" << q.file.string() << ", record " << q.line
              << "): " << q.reason << "\n";
    quarantine_index_[q.session_id] = q;
  }
  quarantined_ = std::move(loaded.quarantined);
}

std::shared_ptr<const ModelContext> ChatService::find_model(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = models_.find(id);
  if (it == models_.end()) throw ServiceError(ServiceErrorKind::NotFound, "unknown model " + id);
  return it->second;
}

std::shared_ptr<ChatService::Session> ChatService::find_session(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = sessions_.find(id);
  if (it != sessions_.end()) return it->second;
  auto q = quarantine_index_.find(id);
  if (q != quarantine_index_.end()) {
    throw ServiceError(ServiceErrorKind::Quarantined, "session " + id + " is quarantined: " + q->second.reason,
                       Json{{"record", q->second.line}});
  }
  throw ServiceError(ServiceErrorKind::NotFound, "unknown session " + id);
}

Registration ChatService::register_model(std::string_view document) {
  ParseResult parsed = parse_model(document);
  if (!parsed.ok()) {
    throw ServiceError(ServiceErrorKind::BadRequest, "the model document has errors",
                       Json{{"diagnostics", diagnostics_json(parsed.diagnostics)}});
  }
  const std::string id = model_id_of(*parsed.model);
  {
    std::shared_lock lock(mu_);
    auto it = models_.find(id);
    if (it != models_.end()) {
      const auto& ctx = *it->second;
      return {id, to_string(ctx.baseline.status), ctx.description.text, ctx.description.fallback, true};
    }
  }
  AgentTrace prep;
  prep.id = "p-" + id.substr(2);
  auto ctx = pipeline_.prepare(std::move(*parsed.model), id, &prep);
  prep.answer = ctx->description.text;

  std::unique_lock lock(mu_);
  auto [it, inserted] = models_.emplace(id, ctx);
  if (inserted) {
    store_.save_trace(prep);
    store_.save_model({id, serialize_model(ctx->ir), ctx->description.text, ctx->description.fallback});
  }
  const auto& kept = *it->second;
  return {id, to_string(kept.baseline.status), kept.description.text, kept.description.fallback, !inserted};
}

Json ChatService::model_info(const std::string& model_id) const {
  auto ctx = find_model(model_id);
  Json j = {{"model_id", ctx->model_id},
            {"name", ctx->ir.name},
            {"status", to_string(ctx->baseline.status)},
            {"description", ctx->description.text},
            {"table", ctx->description.table},
            {"table_digest", digest(ctx->description.table.dump())}};
  if (ctx->baseline.optimal()) j["objective"] = ctx->baseline.objective;
  if (store_.has_trace("p-" + model_id.substr(2))) j["description_trace_id"] = "p-" + model_id.substr(2);
  return j;
}

std::string ChatService::create_session(const std::string& model_id) {
  auto ctx = find_model(model_id);
  auto sess = std::make_shared<Session>();
  sess->model_id = model_id;
  sess->created_at = utc_now();
  sess->ctx = std::move(ctx);
  std::unique_lock lock(mu_);
  do {
    sess->id = "s-" + random_hex(16);
  } while (sessions_.count(sess->id) || quarantine_index_.count(sess->id));
  store_.create_session({sess->id, sess->model_id, sess->created_at, {}});
  sessions_[sess->id] = sess;
  return sess->id;
}

ChatReply ChatService::chat(const std::string& session_id, const std::string& text) {
  auto sess = find_session(session_id);
  if (trim(text).empty()) throw ServiceError(ServiceErrorKind::BadRequest, "message text is empty");
  std::unique_lock turn(sess->turn, std::try_to_lock);
  if (!turn.owns_lock()) {
    throw ServiceError(ServiceErrorKind::Busy, "previous question still processing");
  }
  std::vector<TranscriptTurn> history;
  {
    std::lock_guard lock(sess->state);
    history = sess->transcript;
  }
  const std::size_t index = history.size();
  const std::string trace_id = "t-" + digest(session_id + "\n" + std::to_string(index) + "\n" + text, 16);
  TurnOutcome out;
  try {
    out = pipeline_.run_turn(*sess->ctx, text, static_cast<int>(index), history, trace_id);
  } catch (const std::exception& e) {
    throw ServiceError(ServiceErrorKind::Internal, std::string("turn failed: ") + e.what());
  }
  TranscriptTurn record{text, out.answer, out.trace.id};
  // Persist before acknowledging: trace first so the log never points at a
  // missing trace.
  store_.save_trace(out.trace);
  store_.append_turn(session_id, index, record);
  {
    std::lock_guard lock(sess->state);
    sess->transcript.push_back(record);
  }
  return {out.answer, out.trace.id};
}

Json ChatService::transcript(const std::string& session_id) const {
  auto sess = find_session(session_id);
  Json turns = Json::array();
  {
    std::lock_guard lock(sess->state);
    for (const auto& t : sess->transcript) {
      turns.push_back({{"user", t.user}, {"answer", t.answer}, {"trace_id", t.trace_id}});
    }
  }
  return {{"session_id", sess->id}, {"model_id", sess->model_id}, {"created_at", sess->created_at},
          {"transcript", turns}};
}

Json ChatService::trace(const std::string& trace_id) const {
  auto t = store_.load_trace(trace_id);
  if (!t) throw ServiceError(ServiceErrorKind::NotFound, "unknown trace " + trace_id);
  return *t;
}

std::vector<std::string> ChatService::session_ids() const {
  std::shared_lock lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, _] : sessions_) out.push_back(id);
  return out;
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(2) + "\n", "application/json");
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ServiceError& e) {
      send_json(res, http_status(e.kind()), e.to_json());
    } catch (const std::exception& e) {
      send_json(res, 500, ServiceError(ServiceErrorKind::Internal, e.what()).to_json());
    }
  };
}

std::string document_of(const httplib::Request& req) {
  if (req.get_header_value("Content-Type").rfind("application/json", 0) == 0) {
    Json body = Json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("document") || !body["document"].is_string()) {
      throw ServiceError(ServiceErrorKind::BadRequest, "expected {\"document\": \"...\"} or a raw model document");
    }
    return body["document"].get<std::string>();
  }
  return req.body;
}

}  // namespace

void install_routes(httplib::Server& server, ChatService& service) {
  server.Post("/api/models", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                Registration r = service.register_model(document_of(req));
                send_json(res, r.reused ? 200 : 201, r.to_json());
              }));
  server.Get(R"(/api/models/([^/]+))", guarded([&service](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, service.model_info(req.matches[1]));
             }));
  server.Post(R"(/api/models/([^/]+)/sessions)",
              guarded([&service](const httplib::Request& req, httplib::Response& res) {
                std::string model = req.matches[1];
                std::string id = service.create_session(model);
                send_json(res, 201, {{"session_id", id}, {"model_id", model}});
              }));
  server.Post(R"(/api/sessions/([^/]+)/messages)",
              guarded([&service](const httplib::Request& req, httplib::Response& res) {
                Json body = Json::parse(req.body, nullptr, false);
                if (body.is_discarded() || !body.is_object() || !body.contains("text") || !body["text"].is_string()) {
                  throw ServiceError(ServiceErrorKind::BadRequest, "expected {\"text\": \"...\"}");
                }
                ChatReply r = service.chat(req.matches[1], body["text"].get<std::string>());
                send_json(res, 200, {{"answer", r.answer}, {"trace_id", r.trace_id}});
              }));
  server.Get(R"(/api/sessions/([^/]+))", guarded([&service](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, service.transcript(req.matches[1]));
             }));
  server.Get(R"(/api/traces/([^/]+))", guarded([&service](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, service.trace(req.matches[1]));
             }));
}

// ---------------------------------------------------------------------------
// Environment

namespace {

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : std::move(fallback);
}

}  // namespace

ServiceEnvironment ServiceEnvironment::from_env() {
  ServiceEnvironment e;
  e.lm_url = env_or("MODELCHAT_LM_URL", "");
  e.lm_key = env_or("MODELCHAT_LM_KEY", "");
  e.lm_model = env_or("MODELCHAT_LM_MODEL", "");
  e.lm_mode = env_or("MODELCHAT_LM_MODE", "");
  e.stub_path = env_or("MODELCHAT_STUB_PATH", "");
  e.listen = env_or("MODELCHAT_LISTEN", e.listen);
  e.data_dir = env_or("MODELCHAT_DATA_DIR", e.data_dir);
  return e;
}

std::string ServiceEnvironment::host() const {
  auto colon = listen.rfind(':');
  return colon == std::string::npos ? listen : listen.substr(0, colon);
}

int ServiceEnvironment::port() const {
  auto colon = listen.rfind(':');
  if (colon == std::string::npos) return 8080;
  try {
    return std::stoi(listen.substr(colon + 1));
  } catch (const std::exception&) {
    throw std::runtime_error("invalid listen address '" + listen + "'");
  }
}

std::unique_ptr<LmClient> make_lm_client(const ServiceEnvironment& env) {
  std::string mode = env.lm_mode.empty() ? (env.lm_url.empty() ? "stub" : "live") : env.lm_mode;
  if (mode == "live") {
    return std::make_unique<LiveClient>(LiveConfig{env.lm_url, env.lm_key, env.lm_model});
  }
  if (mode == "stub") {
    if (env.stub_path.empty()) throw std::runtime_error("stub mode needs MODELCHAT_STUB_PATH");
    if (!fs::exists(env.stub_path)) throw std::runtime_error("stub file not found: " + env.stub_path);
    return std::make_unique<StubClient>(StubClient::parse(read_all(env.stub_path)));
  }
  throw std::runtime_error("unknown LM mode '" + mode + "' (expected live or stub)");
}

}  // namespace modelchat
