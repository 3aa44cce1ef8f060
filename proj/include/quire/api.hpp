#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "quire/engine.hpp"

namespace httplib {
class Server;
}

namespace quire {

struct ApiConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  /// "scripted:<fixture path>" or "wire" (endpoint from the environment).
  std::string backend;
  /// Recorded search and fetch results; when empty a `<name>.toolfix.json`
  /// next to a `<name>.fixture.json` script is used if present.
  std::string tools_fixture;
  std::string search_endpoint;
  std::vector<std::string> fetch_allowlist;
  Limits sandbox_limits;
  std::size_t sandbox_concurrency = 4;
  ReviewConfig review;
  std::vector<std::string> cors_origins;
  std::optional<std::filesystem::path> data_dir;
  std::string clock = "logical";
  /// Run agents in a background thread; when false projects advance only
  /// through POST /v1/projects/{id}/tick.
  bool run_agents = true;
  std::size_t tick_budget = 4;
  /// Bearer token; empty means local-only mode.
  std::string token;

  /// Reads the JSON config; API_TOKEN from the environment overrides
  /// "token". Throws ConfigError.
  static ApiConfig from_json(const Json& j);
  static ApiConfig load_file(const std::string& path);
  /// Throws ConfigError.
  void validate() const;
};

/// Fresh backend router for one project. Throws ConfigError.
std::shared_ptr<BackendRouter> make_router(const std::string& backend_spec);
/// The tool fixture belonging to a scripted backend spec, if any.
std::string default_tools_fixture(const std::string& backend_spec);
/// Project options for the backend and tool settings of `config`.
ProjectOptions make_project_options(const ApiConfig& config, const std::string& id,
                                    std::optional<std::filesystem::path> dir,
                                    std::shared_ptr<SandboxPool> sandbox);

/// Parses "30s", "15m", "24h", "500ms" or a bare number of seconds.
/// Throws ConfigError.
std::chrono::milliseconds parse_duration(const std::string& text);

/// HTTP service hosting any number of projects.
class Service {
 public:
  explicit Service(ApiConfig config);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and starts serving. Throws BindFailure.
  void start();
  /// Stops serving, joins the worker threads and persists every project.
  void stop();
  int port() const noexcept { return port_; }
  const ApiConfig& config() const noexcept { return config_; }

  std::string create_project(const std::string& brief,
                             const std::vector<std::pair<std::string, std::string>>& attachments);
  Project* project(const std::string& id) const;
  std::vector<std::string> project_ids() const;

 private:
  void routes();
  void runner();
  void reopen_existing();

  ApiConfig config_;
  std::unique_ptr<httplib::Server> server_;
  std::shared_ptr<SandboxPool> sandbox_;
  std::thread listener_;
  std::thread runner_;
  std::atomic<bool> stopping_{false};
  std::atomic<bool> started_{false};
  int port_ = 0;
  mutable std::mutex mu_;
  std::map<std::string, std::unique_ptr<Project>> projects_;
  std::vector<std::string> order_;
  std::uint64_t next_project_ = 1;
};

/// Entry point of the `quire` command line tool.
int cli_main(int argc, char** argv);

}  // namespace quire
