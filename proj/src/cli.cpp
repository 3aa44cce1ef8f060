#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "quire/api.hpp"
#include "quire/error.hpp"

namespace quire {

namespace {

namespace fs = std::filesystem;

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ApiConfig backend_config(const std::string& backend, const std::string& tools) {
  ApiConfig c;
  c.backend = backend;
  c.tools_fixture = tools;
  c.validate();
  return c;
}

int cmd_serve(const std::string& config_path, std::optional<int> port) {
  ApiConfig cfg = ApiConfig::load_file(config_path);
  if (port) cfg.port = *port;
  Service service(cfg);
  service.start();
  std::cout << "listening on " << cfg.host << ":" << service.port() << std::endl;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  service.stop();
  return 0;
}

void print_new(Project& p, std::size_t& chat_seen, std::size_t& alerts_seen) {
  const auto chat = p.chat();
  for (; chat_seen < chat.size(); ++chat_seen) {
    const auto& c = chat[chat_seen];
    if (c.from == kUser) continue;
    std::cout << "[" << c.from << "] " << c.body << "\n";
  }
  const auto alerts = p.alerts();
  for (; alerts_seen < alerts.size(); ++alerts_seen) std::cout << "[ALERT] " << alerts[alerts_seen].body << "\n";
  std::cout.flush();
}

int cmd_run(const std::string& brief_path, const std::string& backend, const std::string& tools,
            const std::string& dir, std::size_t max_steps) {
  const ApiConfig cfg = backend_config(backend, tools);
  std::optional<fs::path> project_dir;
  if (!dir.empty()) project_dir = fs::path(dir);
  auto p = Project::start(make_project_options(cfg, "p1", project_dir, std::make_shared<SandboxPool>(SandboxConfig{})),
                          read_text(brief_path));
  std::size_t chat_seen = 0, alerts_seen = 0;
  std::string line;
  while (true) {
    p->run_until_quiescent(max_steps);
    print_new(*p, chat_seen, alerts_seen);
    for (const auto& w : p->workstreams()) {
      std::cout << "  " << w.id << " " << to_string(w.status) << " - " << w.title << "\n";
    }
    std::cout << "> " << std::flush;
    if (!std::getline(std::cin, line) || line == "/quit") break;
    try {
      if (line.rfind("/approve", 0) == 0) {
        std::istringstream words(line.substr(8));
        std::map<std::string, GoalDecision> decisions;
        std::string id;
        while (words >> id) {
          if (id == "all") {
            for (const auto& g : p->goals()) decisions[g.id] = GoalDecision{};
          } else {
            decisions[id] = GoalDecision{};
          }
        }
        p->approve_goals(std::string(kUser), decisions);
      } else if (!normalize_text(line).empty()) {
        p->handle_user_message(line);
      }
    } catch (const Error& e) {
      std::cout << "error: " << e.what() << "\n";
    }
  }
  std::cout << p->summary_json().dump(2) << std::endl;
  return 0;
}

int cmd_bench(const std::string& problem_path, const std::string& limit, const std::string& backend,
              const std::string& tools, const std::string& out, const std::string& dir) {
  const ApiConfig cfg = backend_config(backend, tools);
  const auto deadline = parse_duration(limit);
  const std::string problem = read_text(problem_path);
  std::optional<fs::path> project_dir;
  if (!dir.empty()) project_dir = fs::path(dir);
  const auto begin = std::chrono::steady_clock::now();
  const FinalAnswer answer = run_final_answer_mode(
      make_project_options(cfg, "bench", project_dir, std::make_shared<SandboxPool>(SandboxConfig{})), problem, deadline);
  const auto elapsed =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - begin).count();
  Json doc{{"problem", problem_path},
           {"answer", answer.text},
           {"forced", answer.forced},
           {"error", answer.error ? Json(*answer.error) : Json(nullptr)},
           {"time_limit_ms", deadline.count()},
           {"elapsed_ms", elapsed}};
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::ConfigError, "cannot write " + out);
  f << doc.dump(2) << "\n";
  if (answer.error) {
    std::cerr << *answer.error << std::endl;
    return 1;
  }
  return 0;
}

/// Backend used only to reopen a project for reading; it never answers.
class NullBackend final : public ModelBackend {
 public:
  std::string name() const override { return "none"; }
  Json state() const override { return Json::object(); }
  void restore(const Json&) override {}

 protected:
  ModelResponse do_complete(const ModelRequest&, CallStats&) override {
    throw Error(ErrorCode::BackendUnavailable, "inspect does not run agents");
  }
};

int cmd_inspect(const std::string& dir) {
  ProjectOptions o;
  o.dir = fs::path(dir);
  o.router = std::make_shared<BackendRouter>(std::make_shared<NullBackend>());
  auto p = Project::open(std::move(o));
  Json summary = p->summary_json();
  summary["files"] = p->workspace().list_files("").size();
  std::cout << summary.dump(2) << std::endl;
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"quire: multi-agent research workbench"};
  app.require_subcommand(1);

  auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
  std::string config_path;
  std::optional<int> port;
  serve->add_option("--config", config_path, "JSON config file")->required();
  serve->add_option("--port", port, "Override the configured port");

  auto* run = app.add_subcommand("run", "Run an interactive project; chat on stdin/stdout");
  std::string brief, backend, tools, dir;
  std::size_t max_steps = 10000;
  run->add_option("--brief", brief, "File holding the project brief")->required();
  run->add_option("--backend", backend, "scripted:<fixture> or wire")->required();
  run->add_option("--tools", tools, "Tool fixture (.toolfix.json)");
  run->add_option("--dir", dir, "Project directory for durable state");
  run->add_option("--max-steps", max_steps, "Step cap between user turns");

  auto* bench = app.add_subcommand("bench", "Final-answer mode: solve one problem within a time limit");
  std::string problem, limit = "24h", out;
  bench->add_option("--problem", problem, "File holding the problem statement")->required();
  bench->add_option("--time-limit", limit, "Deadline, e.g. 30s, 24h or 48h (default 24h)");
  bench->add_option("--backend", backend, "scripted:<fixture> or wire")->required();
  bench->add_option("--tools", tools, "Tool fixture (.toolfix.json)");
  bench->add_option("--out", out, "Answer JSON output file")->required();
  bench->add_option("--dir", dir, "Project directory for durable state");

  auto* inspect = app.add_subcommand("inspect", "Print the state summary of a project directory");
  std::string inspect_dir;
  inspect->add_option("project-dir", inspect_dir, "Project directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*serve) return cmd_serve(config_path, port);
    if (*run) return cmd_run(brief, backend, tools, dir, max_steps);
    if (*bench) return cmd_bench(problem, limit, backend, tools, out, dir);
    if (*inspect) return cmd_inspect(inspect_dir);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return e.code() == ErrorCode::ConfigError ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 2;
}

}  // namespace quire
