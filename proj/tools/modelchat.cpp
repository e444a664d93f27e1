// Command-line entry points: describe, solve, iis, restore, chat, eval, serve.

#include <CLI11.hpp>
#include <httplib.h>

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include "modelchat/eval.hpp"
#include "modelchat/omif.hpp"
#include "modelchat/service.hpp"
#include "modelchat/text.hpp"

using namespace modelchat;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ModelIR load(const std::string& path) {
  ParseResult r = parse_model(read_file(path));
  if (!r.ok()) {
    std::string msg;
    for (const auto& d : r.diagnostics) msg += path + ":" + d.to_string() + "\n";
    throw Failure(msg + std::to_string(r.diagnostics.size()) + " error(s)");
  }
  return std::move(*r.model);
}

// --stub wins; otherwise the environment decides; otherwise no LM at all,
// which makes every agent fall back to its deterministic template.
std::unique_ptr<LmClient> lm_client(const std::string& stub_path, bool required) {
  if (!stub_path.empty()) return std::make_unique<StubClient>(StubClient::parse(read_file(stub_path)));
  ServiceEnvironment env = ServiceEnvironment::from_env();
  if (!env.lm_url.empty() || !env.lm_mode.empty() || !env.stub_path.empty()) return make_lm_client(env);
  if (required) throw Failure("no language model configured: pass --stub FILE or set MODELCHAT_LM_URL");
  return std::make_unique<StubClient>(std::vector<StubEntry>{});
}

// "name", "name[a,b]", optionally followed by "=weight".
AdjustableRef parse_adjustable(const std::string& text) {
  AdjustableRef ref;
  std::string body = text;
  if (auto eq = body.rfind('='); eq != std::string::npos) {
    try {
      ref.weight = std::stod(body.substr(eq + 1));
    } catch (const std::exception&) {
      throw Failure("invalid weight in '" + text + "'");
    }
    body = body.substr(0, eq);
  }
  auto open = body.find('[');
  ref.name = trim(body.substr(0, open));
  if (open != std::string::npos) {
    auto close = body.rfind(']');
    if (close == std::string::npos || close < open) throw Failure("unbalanced brackets in '" + text + "'");
    std::stringstream ss(body.substr(open + 1, close - open - 1));
    std::string label;
    while (std::getline(ss, label, ',')) {
      label = trim(label);
      if (label.size() >= 2 && (label.front() == '\'' || label.front() == '"')) label = label.substr(1, label.size() - 2);
      ref.index.push_back(label);
    }
  }
  if (ref.name.empty()) throw Failure("empty adjustable name in '" + text + "'");
  return ref;
}

void print_solve(const ModelIR& ir, const SolveResult& r, const Instance& inst) {
  std::cout << "model: " << ir.name << "\nstatus: " << to_string(r.status) << "\n";
  if (r.primal.empty()) return;
  std::cout << "objective: " << format_number(r.objective) << "\n";
  for (int c = 0; c < inst.num_cols(); ++c) {
    std::cout << "  " << inst.cols[c].label() << " = " << format_number(r.primal[c]) << "\n";
  }
  if (!r.duals.empty()) {
    std::cout << "duals:\n";
    for (int i = 0; i < inst.num_rows(); ++i) {
      std::cout << "  " << inst.rows[i].label() << " : " << format_number(r.duals[i]) << "\n";
    }
  }
}

struct Common {
  std::string format = "text";
  bool structured() const { return format == "structured"; }
};

void add_format(CLI::App* app, Common& c) {
  app->add_option("--format", c.format, "Output format")->check(CLI::IsMember({"text", "structured"}));
}

void add_ablation(CLI::App* app, AblationFlags& f) {
  app->add_flag("--no-reminder", f.no_reminder, "Disable the syntax reminder");
  app->add_flag("--no-illustrator", f.no_illustrator, "Disable model illustration");
  app->add_flag("--no-predefined", f.no_predefined, "Disable the predefined functions");
}

volatile std::sig_atomic_t g_stop = 0;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conversational explanations for optimization models"};
  app.require_subcommand(1);
  Common common;

  std::string model_path, stub_path;
  AblationFlags flags;

  auto* describe = app.add_subcommand("describe", "Print the model illustration");
  describe->add_option("model", model_path, "Model document")->required();
  describe->add_option("--stub", stub_path, "Scripted LM transcript");
  add_ablation(describe, flags);
  add_format(describe, common);

  auto* solve_cmd = app.add_subcommand("solve", "Solve the model");
  solve_cmd->add_option("model", model_path, "Model document")->required();
  add_format(solve_cmd, common);

  auto* iis_cmd = app.add_subcommand("iis", "Isolate an irreducible infeasible subset");
  iis_cmd->add_option("model", model_path, "Model document")->required();
  add_format(iis_cmd, common);

  std::vector<std::string> adjust;
  auto* restore_cmd = app.add_subcommand("restore", "Plan the smallest right-hand-side change restoring feasibility");
  restore_cmd->add_option("model", model_path, "Model document")->required();
  restore_cmd->add_option("--adjust", adjust, "Adjustable parameter: name, name[i,...], optionally =weight");
  add_format(restore_cmd, common);

  auto* chat_cmd = app.add_subcommand("chat", "Chat about a model; one question per input line");
  chat_cmd->add_option("model", model_path, "Model document")->required();
  chat_cmd->add_option("--stub", stub_path, "Scripted LM transcript");
  bool show_trace = false;
  chat_cmd->add_flag("--trace", show_trace, "Print the agent trace after each answer");
  add_ablation(chat_cmd, flags);
  add_format(chat_cmd, common);

  std::string dataset_dir;
  int workers = 4;
  bool verify = false, digest_only = false;
  auto* eval_cmd = app.add_subcommand("eval", "Score the gold dataset");
  eval_cmd->add_option("dataset", dataset_dir, "Dataset directory")->required();
  eval_cmd->add_option("--stub", stub_path, "Scripted LM transcript");
  eval_cmd->add_option("--workers", workers, "Concurrent items")->check(CLI::Range(1, 64));
  eval_cmd->add_flag("--verify-gold", verify, "Re-derive every gold fact from the tools and exit");
  eval_cmd->add_flag("--digest", digest_only, "Print only the determinism digest");
  add_ablation(eval_cmd, flags);
  add_format(eval_cmd, common);

  ServiceEnvironment env = ServiceEnvironment::from_env();
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service (configured from MODELCHAT_* variables)");
  serve_cmd->add_option("--listen", env.listen, "host:port")->capture_default_str();
  serve_cmd->add_option("--data-dir", env.data_dir, "Persistence directory")->capture_default_str();
  serve_cmd->add_option("--stub", env.stub_path, "Scripted LM transcript (implies stub mode)");
  add_ablation(serve_cmd, flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*describe) {
      auto lm = lm_client(stub_path, false);
      Pipeline pipeline(*lm, flags);
      AgentTrace trace;
      auto ctx = pipeline.prepare(load(model_path), model_path, &trace);
      std::string text = ctx->description.text.empty() ? template_description(ctx->ir, ctx->baseline)
                                                       : ctx->description.text;
      if (common.structured()) {
        Json j = {{"model", ctx->ir.name},           {"status", to_string(ctx->baseline.status)},
                  {"description", text},             {"fallback", ctx->description.fallback},
                  {"table", ctx->description.table}, {"trace", trace.to_json()}};
        if (ctx->description.iis) j["iis"] = to_json(*ctx->description.iis);
        std::cout << j.dump(2) << "\n";
      } else {
        std::cout << text << "\n";
      }
    } else if (*solve_cmd) {
      ModelIR ir = load(model_path);
      Instance inst = instantiate(ir);
      SolveResult r = solve(inst);
      if (common.structured()) {
        std::cout << to_json(r, inst).dump(2) << "\n";
      } else {
        print_solve(ir, r, inst);
      }
    } else if (*iis_cmd) {
      ModelIR ir = load(model_path);
      IISResult r = compute_iis(ir);
      if (common.structured()) {
        std::cout << to_json(r).dump(2) << "\n";
      } else {
        std::cout << "irreducible infeasible subset of " << ir.name << ":\n";
        for (const auto& m : r.members) std::cout << "  " << m.id << "  " << m.detail << "\n";
      }
    } else if (*restore_cmd) {
      ModelIR ir = load(model_path);
      std::vector<AdjustableRef> refs;
      for (const auto& a : adjust) refs.push_back(parse_adjustable(a));
      RestorationPlan plan = restore_feasibility(ir, refs);
      if (common.structured()) {
        std::cout << to_json(plan).dump(2) << "\n";
      } else {
        for (const auto& r : plan.rejected) std::cout << "warning: " << r.warning << "\n";
        for (const auto& s : plan.slacks) {
          if (s.change() != 0.0) std::cout << "  " << s.param.label() << " " << (s.change() > 0 ? "+" : "")
                                           << format_number(s.change()) << "\n";
        }
        std::cout << "total weighted change: " << format_number(plan.total_penalty)
                  << (plan.certified ? " (restored model verified feasible)" : "") << "\n";
      }
    } else if (*chat_cmd) {
      auto lm = lm_client(stub_path, true);
      Pipeline pipeline(*lm, flags);
      auto ctx = pipeline.prepare(load(model_path), model_path);
      if (!common.structured()) std::cout << ctx->description.text << "\n\n";
      std::vector<TranscriptTurn> history;
      std::string line;
      while (std::getline(std::cin, line)) {
        if (trim(line).empty()) continue;
        TurnOutcome out = pipeline.run_turn(*ctx, line, static_cast<int>(history.size()), history);
        history.push_back({line, out.answer, out.trace.id});
        if (common.structured()) {
          Json j = {{"turn", history.size() - 1}, {"question", line},     {"answer", out.answer},
                    {"trace_id", out.trace.id},   {"function", out.function}};
          if (show_trace) j["trace"] = out.trace.to_json();
          std::cout << j.dump() << std::endl;
        } else {
          std::cout << "> " << line << "\n" << out.answer << "\n";
          if (show_trace) std::cout << out.trace.to_json().dump(2) << "\n";
          std::cout << std::endl;
        }
      }
    } else if (*eval_cmd) {
      Dataset data = load_dataset(dataset_dir);
      if (verify) {
        auto problems = verify_gold(data);
        for (const auto& p : problems) std::cerr << p << "\n";
        if (common.structured()) {
          std::cout << Json{{"items", data.items.size()}, {"problems", problems}}.dump(2) << "\n";
        } else {
          std::cout << data.items.size() << " gold items, " << problems.size() << " problem(s)\n";
        }
        return problems.empty() ? 0 : 1;
      }
      auto lm = lm_client(stub_path, true);
      EvalOptions opts;
      opts.flags = flags;
      opts.workers = workers;
      EvalReport report = run_eval(data, *lm, opts);
      if (digest_only) {
        std::cout << report.determinism_digest() << "\n";
      } else if (common.structured()) {
        Json j = report.to_json();
        j["digest"] = report.determinism_digest();
        std::cout << j.dump(2) << "\n";
      } else {
        std::cout << report.render() << "digest: " << report.determinism_digest() << "\n";
      }
      return report.complete ? 0 : 1;
    } else if (*serve_cmd) {
      if (!env.stub_path.empty() && env.lm_mode.empty()) env.lm_mode = "stub";
      auto lm = make_lm_client(env);
      ServiceConfig cfg;
      cfg.data_dir = env.data_dir;
      cfg.flags = flags;
      ChatService service(*lm, cfg);
      httplib::Server server;
      install_routes(server, service);
      static httplib::Server* active = &server;
      std::signal(SIGINT, [](int) { g_stop = 1; active->stop(); });
      std::signal(SIGTERM, [](int) { g_stop = 1; active->stop(); });
      std::cerr << "listening on " << env.host() << ":" << env.port() << ", data in " << env.data_dir << "\n";
      if (!server.listen(env.host(), env.port())) {
        if (!g_stop) throw Failure("cannot listen on " + env.listen);
      }
    }
  } catch (const ExplainError& e) {
    for (const auto& d : e.details()) std::cerr << "  " << d << "\n";
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
