#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <future>
#include <random>
#include <thread>

#include "modelchat/omif.hpp"
#include "modelchat/service.hpp"
#include "support.hpp"

using namespace modelchat;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("modelchat-test-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

const char* kServiceStub = R"({"match": "", "agent": "illustrator", "respond": {"text": "A small production plan."}}
{"match": "", "agent": "iis", "respond": {"text": "Two requirements collide."}}
{"match": "", "agent": "coordinator", "respond": {"text": "{\"agent_name\": \"Reminder\", \"task\": \"look up\"}"}}
{"match": "What if labor goes to 5", "agent": "operator", "respond": {"call": {"name": "evaluate_modification", "args": {"modifications": [{"target": "labor_cap", "kind": "set", "value": 5}]}}}}
{"match": "", "agent": "operator", "respond": {"call": {"name": "components_retrival", "args": {"components": [{"name": "labor_cap"}]}}}}
{"match": "What is the labor capacity", "agent": "explainer", "respond": {"text": "The labor capacity is 4 hours."}}
{"match": "", "agent": "explainer", "respond": {"text": "Done."}}
)";

std::vector<StubEntry> service_entries() { return StubClient::parse(kServiceStub); }

ServiceConfig config_for(const TempDir& dir) {
  ServiceConfig cfg;
  cfg.data_dir = dir.path();
  return cfg;
}

std::string prod_document() { return testing::read_file(testing::dataset_path("models/prod.omif")); }

// Blocks completions whose query mentions "slow" until released.
class GatedClient : public LmClient {
 public:
  explicit GatedClient(std::vector<StubEntry> entries) : inner_(std::move(entries)) {}
  LmResponse complete(const LmRequest& req) override {
    if (req.agent == "coordinator" && req.query_text().find("slow") != std::string::npos) {
      std::unique_lock lock(mu_);
      entered_ = true;
      cv_.notify_all();
      cv_.wait(lock, [&] { return released_; });
    }
    return inner_.complete(req);
  }
  void wait_entered() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return entered_; });
  }
  void release() {
    std::lock_guard lock(mu_);
    released_ = true;
    cv_.notify_all();
  }

 private:
  StubClient inner_;
  std::mutex mu_;
  std::condition_variable cv_;
  bool entered_ = false;
  bool released_ = false;
};

}  // namespace

TEST_CASE("registration is content addressed") {
  TempDir dir;
  StubClient lm(service_entries());
  ChatService svc(lm, config_for(dir));
  Registration a = svc.register_model(prod_document());
  CHECK(a.model_id.size() == 18);
  CHECK(a.model_id.rfind("m-", 0) == 0);
  CHECK(a.status == "optimal");
  CHECK(a.description == "A small production plan.");
  CHECK_FALSE(a.reused);

  Registration b = svc.register_model(prod_document());
  CHECK(b.model_id == a.model_id);
  CHECK(b.reused);

  // The canonical rendering of the same model has the same address.
  std::string canonical = serialize_model(testing::load_model("prod"));
  CHECK(svc.register_model(canonical).model_id == a.model_id);
  CHECK(svc.register_model(testing::read_file(testing::dataset_path("models/supply.omif"))).model_id != a.model_id);

  Json info = svc.model_info(a.model_id);
  CHECK(info["name"] == "prod");
  CHECK(info["table_digest"].get<std::string>().size() == 16);
  CHECK(info["table"].size() == component_table(testing::load_model("prod")).size());
}

TEST_CASE("malformed documents are rejected with positions and nothing is registered") {
  TempDir dir;
  StubClient lm(service_entries());
  ChatService svc(lm, config_for(dir));
  try {
    svc.register_model("model broken\nvar x >= ;\n");
    FAIL("expected a diagnostic");
  } catch (const ServiceError& e) {
    CHECK(e.kind() == ServiceErrorKind::BadRequest);
    REQUIRE(e.details()["diagnostics"].size() >= 1);
    CHECK(e.details()["diagnostics"][0]["line"].get<int>() >= 1);
  }
  CHECK(fs::is_empty(dir.path() / "models"));
}

TEST_CASE("infeasible registration includes the troubleshooting narrative") {
  TempDir dir;
  StubClient lm(service_entries());
  ChatService svc(lm, config_for(dir));
  Registration r = svc.register_model(testing::read_file(testing::dataset_path("models/infprod.omif")));
  CHECK(r.status == "infeasible");
  ModelIR ir = testing::load_model("infprod");
  CHECK(r.description.find("Troubleshooting:") != std::string::npos);
  CHECK(r.description.find("Two requirements collide.") != std::string::npos);
  for (const char* id : {"M", "D"}) {
    CHECK(r.description.find(ir.find_constraint(id)->description) != std::string::npos);
  }
}

TEST_CASE("a chat turn answers from the tool payload and persists its trace") {
  TempDir dir;
  StubClient lm(service_entries());
  ChatService svc(lm, config_for(dir));
  auto sid = svc.create_session(svc.register_model(prod_document()).model_id);
  ChatReply r = svc.chat(sid, "What is the labor capacity?");
  CHECK(r.answer.find("4") != std::string::npos);
  Json trace = svc.trace(r.trace_id);
  bool retrieval = false;
  for (const auto& hop : trace["hops"]) {
    if (hop.contains("call") && hop["call"]["name"] == "components_retrival") retrieval = true;
  }
  CHECK(retrieval);
  CHECK(trace["answer"] == r.answer);

  // Same request, same stub, fresh service: byte-identical answer.
  TempDir other;
  StubClient lm2(service_entries());
  ChatService svc2(lm2, config_for(other));
  auto sid2 = svc2.create_session(svc2.register_model(prod_document()).model_id);
  CHECK(svc2.chat(sid2, "What is the labor capacity?").answer == r.answer);
}

TEST_CASE("unknown sessions, traces and models are not found") {
  TempDir dir;
  StubClient lm(service_entries());
  ChatService svc(lm, config_for(dir));
  auto kind_of = [](auto&& f) {
    try {
      f();
    } catch (const ServiceError& e) {
      return e.kind();
    }
    return ServiceErrorKind::Internal;
  };
  CHECK(kind_of([&] { svc.chat("s-nope", "hi"); }) == ServiceErrorKind::NotFound);
  CHECK(kind_of([&] { svc.transcript("s-nope"); }) == ServiceErrorKind::NotFound);
  CHECK(kind_of([&] { svc.trace("t-nope"); }) == ServiceErrorKind::NotFound);
  CHECK(kind_of([&] { svc.trace("../models/x"); }) == ServiceErrorKind::NotFound);
  CHECK(kind_of([&] { svc.create_session("m-nope"); }) == ServiceErrorKind::NotFound);
  auto sid = svc.create_session(svc.register_model(prod_document()).model_id);
  CHECK(kind_of([&] { svc.chat(sid, "   "); }) == ServiceErrorKind::BadRequest);
}

TEST_CASE("transcripts survive a restart") {
  TempDir dir;
  Json before;
  std::string sid;
  {
    StubClient lm(service_entries());
    ChatService svc(lm, config_for(dir));
    sid = svc.create_session(svc.register_model(prod_document()).model_id);
    svc.chat(sid, "What is the labor capacity?");
    svc.chat(sid, "What if labor goes to 5?");
    svc.chat(sid, "How many units of x?");
    before = svc.transcript(sid);
  }
  CHECK(before["transcript"].size() == 3);
  // The restarted service must not need the LM to restore models.
  StubClient empty(std::vector<StubEntry>{});
  ChatService svc(empty, config_for(dir));
  CHECK(svc.transcript(sid) == before);
  CHECK(empty.misses().empty());
  for (const auto& t : before["transcript"]) CHECK(svc.trace(t["trace_id"]).at("answer") == t["answer"]);
  CHECK(svc.quarantined().empty());
}

TEST_CASE("a truncated record quarantines only its session") {
  TempDir dir;
  std::string good, bad;
  Json good_before;
  {
    StubClient lm(service_entries());
    ChatService svc(lm, config_for(dir));
    auto model = svc.register_model(prod_document()).model_id;
    good = svc.create_session(model);
    bad = svc.create_session(model);
    svc.chat(good, "What is the labor capacity?");
    svc.chat(bad, "What is the labor capacity?");
    svc.chat(bad, "How many units of x?");
    good_before = svc.transcript(good);
  }
  fs::path log = dir.path() / "sessions" / (bad + ".ndjson");
  auto size = fs::file_size(log);
  fs::resize_file(log, size - 7);

  StubClient lm(service_entries());
  ChatService svc(lm, config_for(dir));
  REQUIRE(svc.quarantined().size() == 1);
  CHECK(svc.quarantined()[0].session_id == bad);
  CHECK(svc.quarantined()[0].line == 3);
  CHECK(svc.transcript(good) == good_before);
  try {
    svc.chat(bad, "hello");
    FAIL("quarantined session accepted a turn");
  } catch (const ServiceError& e) {
    CHECK(e.kind() == ServiceErrorKind::Quarantined);
  }
  CHECK(fs::file_size(log) == size - 7);
}

TEST_CASE("a corrupt record in the middle is quarantined too") {
  TempDir dir;
  std::string sid;
  {
    StubClient lm(service_entries());
    ChatService svc(lm, config_for(dir));
    sid = svc.create_session(svc.register_model(prod_document()).model_id);
    svc.chat(sid, "What is the labor capacity?");
    svc.chat(sid, "How many units of x?");
  }
  fs::path log = dir.path() / "sessions" / (sid + ".ndjson");
  std::string bytes = testing::read_file(log.string());
  auto second = bytes.find('\n') + 1;
  bytes[second] = '#';
  std::ofstream(log, std::ios::binary | std::ios::trunc) << bytes;
  StubClient lm(service_entries());
  ChatService svc(lm, config_for(dir));
  REQUIRE(svc.quarantined().size() == 1);
  CHECK(svc.quarantined()[0].line == 2);
}

TEST_CASE("interleaved turns on two sessions keep both logs intact") {
  TempDir dir;
  std::string a, b;
  {
    StubClient lm(service_entries());
    ChatService svc(lm, config_for(dir));
    auto model = svc.register_model(prod_document()).model_id;
    a = svc.create_session(model);
    b = svc.create_session(model);
    auto worker = [&](const std::string& sid, const std::string& tag) {
      for (int i = 0; i < 50; ++i) {
        std::string q = i % 2 ? "What if labor goes to 5? " : "What is the labor capacity? ";
        svc.chat(sid, q + tag + " #" + std::to_string(i));
      }
    };
    std::thread ta(worker, a, "A"), tb(worker, b, "B");
    ta.join();
    tb.join();
  }
  StubClient lm(std::vector<StubEntry>{});
  ChatService svc(lm, config_for(dir));
  CHECK(svc.quarantined().empty());
  for (const auto& [sid, tag] : {std::pair{a, "A"}, std::pair{b, "B"}}) {
    Json t = svc.transcript(sid)["transcript"];
    REQUIRE(t.size() == 50);
    for (int i = 0; i < 50; ++i) {
      CHECK(t[i]["user"].get<std::string>().find(std::string(tag) + " #" + std::to_string(i)) != std::string::npos);
      Json trace = svc.trace(t[i]["trace_id"]);
      CHECK(trace["answer"] == t[i]["answer"]);
    }
  }
}

TEST_CASE("a second turn while one is in flight is refused as busy") {
  TempDir dir;
  GatedClient lm(service_entries());
  ChatService svc(lm, config_for(dir));
  auto model = svc.register_model(prod_document()).model_id;
  auto sid = svc.create_session(model);
  auto other = svc.create_session(model);
  auto slow = std::async(std::launch::async, [&] { return svc.chat(sid, "slow: What is the labor capacity?"); });
  lm.wait_entered();
  try {
    svc.chat(sid, "What is the labor capacity?");
    FAIL("concurrent turn was accepted");
  } catch (const ServiceError& e) {
    CHECK(e.kind() == ServiceErrorKind::Busy);
    CHECK(std::string(e.what()) == "previous question still processing");
  }
  // Other sessions are unaffected.
  CHECK(svc.chat(other, "What is the labor capacity?").answer.find("4") != std::string::npos);
  lm.release();
  CHECK_FALSE(slow.get().answer.empty());
  CHECK(svc.transcript(sid)["transcript"].size() == 1);
}

TEST_CASE("HTTP API surface") {
  TempDir dir;
  StubClient lm(service_entries());
  ChatService svc(lm, config_for(dir));
  httplib::Server server;
  install_routes(server, svc);
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);

  auto created = client.Post("/api/models", prod_document(), "text/plain");
  REQUIRE(created);
  CHECK(created->status == 201);
  Json reg = Json::parse(created->body);
  const std::string model = reg["model_id"];
  CHECK(reg["status"] == "optimal");
  CHECK(reg["description"] == "A small production plan.");
  auto again = client.Post("/api/models", Json{{"document", prod_document()}}.dump(), "application/json");
  CHECK(again->status == 200);
  CHECK(Json::parse(again->body)["model_id"] == model);

  auto bad_doc = client.Post("/api/models", "model x\nvar ;", "text/plain");
  CHECK(bad_doc->status == 400);
  CHECK(Json::parse(bad_doc->body)["error"]["details"]["diagnostics"].size() >= 1);

  auto info = client.Get("/api/models/" + model);
  CHECK(info->status == 200);
  CHECK(Json::parse(info->body)["table_digest"].is_string());
  CHECK(client.Get("/api/models/m-unknown")->status == 404);

  auto sess = client.Post("/api/models/" + model + "/sessions", "", "application/json");
  CHECK(sess->status == 201);
  const std::string sid = Json::parse(sess->body)["session_id"];

  auto msg = client.Post("/api/sessions/" + sid + "/messages", Json{{"text", "What is the labor capacity?"}}.dump(),
                         "application/json");
  REQUIRE(msg->status == 200);
  Json reply = Json::parse(msg->body);
  CHECK(reply["answer"].get<std::string>().find("4") != std::string::npos);

  auto transcript = client.Get("/api/sessions/" + sid);
  CHECK(transcript->status == 200);
  CHECK(Json::parse(transcript->body) == svc.transcript(sid));

  auto trace = client.Get("/api/traces/" + reply["trace_id"].get<std::string>());
  CHECK(trace->status == 200);
  CHECK(Json::parse(trace->body)["id"] == reply["trace_id"]);
  Json m = Json::parse(info->body);
  REQUIRE(m.contains("description_trace_id"));
  CHECK(client.Get("/api/traces/" + m["description_trace_id"].get<std::string>())->status == 200);

  CHECK(client.Post("/api/sessions/s-unknown/messages", R"({"text": "hi"})", "application/json")->status == 404);
  CHECK(client.Get("/api/sessions/s-unknown")->status == 404);
  CHECK(Json::parse(client.Get("/api/sessions/s-unknown")->body)["error"]["kind"] == "not-found");
  CHECK(client.Post("/api/sessions/" + sid + "/messages", "{}", "application/json")->status == 400);
  CHECK(client.Get("/api/traces/t-unknown")->status == 404);

  server.stop();
  th.join();
}

TEST_CASE("environment configuration") {
  ServiceEnvironment env;
  env.listen = "0.0.0.0:9123";
  CHECK(env.host() == "0.0.0.0");
  CHECK(env.port() == 9123);
  env.lm_mode = "stub";
  CHECK_THROWS(make_lm_client(env));
  env.stub_path = testing::dataset_path("stubs/gold.stub");
  CHECK(make_lm_client(env) != nullptr);
  env.lm_mode = "carrier-pigeon";
  CHECK_THROWS(make_lm_client(env));
  env.lm_mode = "live";
  env.lm_url = "http://127.0.0.1:1/v1";
  CHECK(make_lm_client(env) != nullptr);
}
