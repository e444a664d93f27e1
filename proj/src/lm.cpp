#include "modelchat/lm.hpp"

#include <httplib.h>

#include <fstream>
#include <sstream>

#include "modelchat/text.hpp"

namespace modelchat {

std::string to_string(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
    case Role::Tool: return "tool";
  }
  return "user";
}

namespace {

Role parse_role(const std::string& s) {
  if (s == "system") return Role::System;
  if (s == "assistant") return Role::Assistant;
  if (s == "tool") return Role::Tool;
  if (s == "user") return Role::User;
  throw LmError("unknown message role '" + s + "'");
}

Json schema_json(const ToolSchema& t) {
  return {{"name", t.name}, {"description", t.description}, {"parameters", t.parameters}};
}

}  // namespace

std::string LmRequest::query_text() const {
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role == Role::User) return it->content;
  }
  return {};
}

Json LmRequest::to_json() const {
  Json msgs = Json::array();
  for (const auto& m : messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  Json tl = Json::array();
  for (const auto& t : tools) tl.push_back(schema_json(t));
  return {{"agent", agent},   {"turn", turn},  {"attempt", attempt},
          {"messages", msgs}, {"tools", tl}, {"temperature", temperature}};
}

LmRequest LmRequest::from_json(const Json& j) {
  LmRequest r;
  r.agent = j.value("agent", "");
  r.turn = j.value("turn", 0);
  r.attempt = j.value("attempt", 0);
  r.temperature = j.value("temperature", 0.0);
  for (const auto& m : j.value("messages", Json::array())) {
    r.messages.push_back({parse_role(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
  }
  for (const auto& t : j.value("tools", Json::array())) {
    r.tools.push_back({t.at("name").get<std::string>(), t.value("description", ""),
                       t.value("parameters", Json::object())});
  }
  return r;
}

std::string LmRequest::id() const { return "q-" + digest(to_json().dump(), 16); }

Json LmResponse::to_json() const {
  Json j = {{"text", text}, {"usage", {{"prompt", usage.prompt}, {"completion", usage.completion}}}};
  if (call) j["call"] = {{"name", call->name}, {"args", call->args}};
  return j;
}

std::string LmResponse::id() const {
  Json j = to_json();
  j.erase("usage");
  return "r-" + digest(j.dump(), 16);
}

// ---------------------------------------------------------------------------
// Live client.

LiveClient::LiveClient(LiveConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.url.empty()) throw LmError("live LM mode needs an endpoint URL");
}

Json LiveClient::wire_body(const LmRequest& req) const {
  Json msgs = Json::array();
  for (const auto& m : req.messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  Json body = {{"model", cfg_.model}, {"messages", msgs}, {"temperature", req.temperature}};
  if (!req.tools.empty()) {
    Json tl = Json::array();
    for (const auto& t : req.tools) tl.push_back({{"type", "function"}, {"function", schema_json(t)}});
    body["tools"] = tl;
  }
  return body;
}

LmResponse LiveClient::parse_wire_response(const Json& body) {
  if (!body.contains("choices") || body["choices"].empty()) throw LmError("LM response has no choices");
  const Json& msg = body["choices"][0].at("message");
  LmResponse r;
  if (msg.contains("content") && msg["content"].is_string()) r.text = msg["content"].get<std::string>();
  if (msg.contains("tool_calls") && msg["tool_calls"].is_array() && !msg["tool_calls"].empty()) {
    const Json& fn = msg["tool_calls"][0].at("function");
    FunctionCall call;
    call.name = fn.at("name").get<std::string>();
    const Json& raw = fn.value("arguments", Json("{}"));
    call.args = raw.is_string() ? Json::parse(raw.get<std::string>(), nullptr, false) : raw;
    if (call.args.is_discarded()) throw LmError("LM tool call arguments are not valid JSON");
    r.call = std::move(call);
  }
  if (body.contains("usage")) {
    r.usage.prompt = body["usage"].value("prompt_tokens", 0);
    r.usage.completion = body["usage"].value("completion_tokens", 0);
  }
  return r;
}

LmResponse LiveClient::complete(const LmRequest& req) {
  // Split "scheme://host[:port]/base" so the path can be appended.
  std::string url = cfg_.url;
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw LmError("LM URL must include a scheme: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  std::string origin = path_start == std::string::npos ? url : url.substr(0, path_start);
  std::string base = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!base.empty() && base.back() == '/') base.pop_back();

  httplib::Client cli(origin);
  cli.set_read_timeout(cfg_.timeout_seconds, 0);
  cli.set_connection_timeout(10, 0);
  httplib::Headers headers;
  if (!cfg_.key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.key);
  auto res = cli.Post(base + "/chat/completions", headers, wire_body(req).dump(), "application/json");
  if (!res) throw LmError("LM request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw LmError("LM endpoint returned HTTP " + std::to_string(res->status));
  Json body = Json::parse(res->body, nullptr, false);
  if (body.is_discarded()) throw LmError("LM endpoint returned invalid JSON");
  return parse_wire_response(body);
}

// ---------------------------------------------------------------------------
// Stub client.

StubClient::StubClient(std::vector<StubEntry> entries) : entries_(std::move(entries)) {}

std::vector<StubEntry> StubClient::parse(const std::string& text) {
  std::vector<StubEntry> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    Json j = Json::parse(t, nullptr, false);
    auto fail = [&](const std::string& why) {
      throw LmError("stub line " + std::to_string(lineno) + ": " + why);
    };
    if (j.is_discarded() || !j.is_object()) fail("not a JSON object");
    if (!j.contains("respond") || !j["respond"].is_object()) fail("missing 'respond' object");
    StubEntry e;
    e.match = j.value("match", "");
    if (j.contains("agent")) e.agent = j["agent"].get<std::string>();
    if (j.contains("attempt")) e.attempt = j["attempt"].get<int>();
    if (j.contains("turn")) e.turn = j["turn"].get<int>();
    const Json& r = j["respond"];
    if (r.contains("call")) {
      const Json& c = r["call"];
      if (!c.contains("name")) fail("call without a name");
      e.respond.call = FunctionCall{c["name"].get<std::string>(), c.value("args", Json::object())};
    }
    if (r.contains("text")) e.respond.text = r["text"].get<std::string>();
    if (!r.contains("call") && !r.contains("text")) fail("'respond' needs 'text' or 'call'");
    out.push_back(std::move(e));
  }
  return out;
}

StubClient StubClient::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LmError("cannot open stub file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return StubClient(parse(ss.str()));
}

LmResponse StubClient::complete(const LmRequest& req) {
  const std::string query = req.query_text();
  for (const auto& e : entries_) {
    if (e.agent && *e.agent != req.agent) continue;
    if (e.attempt && *e.attempt != req.attempt) continue;
    if (e.turn && *e.turn != req.turn) continue;
    if (query.find(e.match) == std::string::npos) continue;
    return e.respond;
  }
  std::string what = "no stub entry for " + req.agent + " (attempt " + std::to_string(req.attempt) +
                     "): " + query.substr(0, 120);
  {
    std::lock_guard lock(mu_);
    misses_.push_back(what);
  }
  throw LmError(what);
}

std::vector<std::string> StubClient::misses() const {
  std::lock_guard lock(mu_);
  return misses_;
}

}  // namespace modelchat
