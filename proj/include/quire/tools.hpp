#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "quire/common.hpp"

namespace quire {

class Workspace;

struct Limits {
  double wall_seconds = 10;
  double cpu_seconds = 10;
  std::uint64_t memory_bytes = 1ULL << 30;
  std::uint64_t max_output_bytes = 1 << 20;
};

struct CodeJob {
  std::string runtime;
  std::map<std::string, std::string> files;
  std::string entry;  // whitespace-separated command line
  std::string stdin_data;
  Limits limits;
};

struct Usage {
  double wall = 0;
  double cpu = 0;
  std::uint64_t peak_memory = 0;
};

struct CodeResult {
  int exit_code = 0;
  std::string stdout_data;
  std::string stderr_data;
  bool stdout_truncated = false;
  bool stderr_truncated = false;
  std::map<std::string, std::string> produced_files;
  Usage usage;
  bool timed_out = false;
  bool isolated = false;
  std::string error;  // per-job failure inside execute_parallel
};

void to_json(Json& j, const Limits& l);
void from_json(const Json& j, Limits& l);
void to_json(Json& j, const CodeResult& r);
/// Reads a job from tool arguments, filling unset limits from `defaults`.
CodeJob job_from_json(const Json& j, const Limits& defaults);

struct SandboxConfig {
  std::filesystem::path root;
  /// Runtime tag -> argv prefix; the entry's tokens are appended.
  std::map<std::string, std::vector<std::string>> runtimes = {
      {"python", {"python3", "-B"}}, {"sh", {"/bin/sh"}}, {"exec", {}}};
  /// Binaries an entry may start with when not shipped in the job files.
  std::set<std::string> allowed_binaries = {"python3", "sh", "/bin/sh", "true", "false", "echo", "cat", "ls"};
  std::size_t max_concurrency = 4;
  Limits caps{600, 600, 8ULL << 30, 64ULL << 20};
  Limits defaults;
  /// When false, a sandbox that cannot unshare mount and network namespaces
  /// runs with directory isolation only.
  bool require_isolation = false;
};

/// Local pool of fork/exec sandboxes. Each job runs in its own directory, in
/// a fresh process group with rlimits, and (when the kernel allows) in new
/// mount and network namespaces where sibling job directories are hidden.
class SandboxPool {
 public:
  explicit SandboxPool(SandboxConfig config);
  ~SandboxPool();

  SandboxPool(const SandboxPool&) = delete;
  SandboxPool& operator=(const SandboxPool&) = delete;

  /// Throws RuntimeUnavailable, InvalidJob, SandboxSetupFailure.
  CodeResult execute(const CodeJob& job);
  /// Per-job errors are reported in CodeResult::error.
  std::vector<CodeResult> execute_parallel(const std::vector<CodeJob>& jobs, std::size_t max_concurrency);

  /// Called with the number of running sandboxes after every start and stop.
  void set_observer(std::function<void(std::size_t running)> observer);
  std::size_t peak_running() const noexcept { return peak_.load(); }
  const SandboxConfig& config() const noexcept { return config_; }

 private:
  void validate(const CodeJob& job) const;
  void acquire();
  void release();

  SandboxConfig config_;
  bool owns_root_ = false;
  std::atomic<std::uint64_t> next_job_{1};
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t running_ = 0;
  std::atomic<std::size_t> peak_{0};
  std::function<void(std::size_t)> observer_;
};

struct SearchHit {
  std::string title;
  std::string uri;
  std::string snippet;
  std::string source;
  bool operator==(const SearchHit&) const = default;
};

void to_json(Json& j, const SearchHit& h);
void from_json(const Json& j, SearchHit& h);

struct Document {
  std::string content_type;
  std::string bytes;
};

class SearchProvider {
 public:
  virtual ~SearchProvider() = default;
  virtual std::vector<SearchHit> search(const std::string& query, std::size_t k) = 0;
};

class FetchProvider {
 public:
  virtual ~FetchProvider() = default;
  virtual Document fetch(const std::string& uri) = 0;
};

/// Lowercase, trimmed, inner whitespace collapsed.
std::string canonical_query(std::string_view query);

/// Recorded search hits and documents from a `.toolfix.json` file:
/// {"strict": bool, "search": {query: [hit...]}, "fetch": {uri: {content_type, body}}}.
class FixtureTools final : public SearchProvider, public FetchProvider {
 public:
  explicit FixtureTools(const Json& doc, std::uint64_t max_document_bytes = 8 << 20);
  static std::shared_ptr<FixtureTools> load_file(const std::string& path);

  std::vector<SearchHit> search(const std::string& query, std::size_t k) override;
  Document fetch(const std::string& uri) override;

 private:
  bool strict_;
  std::uint64_t max_bytes_;
  std::map<std::string, std::vector<SearchHit>> search_;
  std::map<std::string, Document> fetch_;
};

/// Search against a JSON endpoint: GET <endpoint>?q=<query>&k=<k> returning
/// [{"title","uri","snippet"}].
class HttpSearchProvider final : public SearchProvider {
 public:
  explicit HttpSearchProvider(std::string endpoint);
  std::vector<SearchHit> search(const std::string& query, std::size_t k) override;

 private:
  std::string endpoint_;
};

/// Live fetch restricted to URI prefixes in the allowlist.
class HttpFetchProvider final : public FetchProvider {
 public:
  HttpFetchProvider(std::vector<std::string> allowlist, std::uint64_t max_bytes = 8 << 20);
  Document fetch(const std::string& uri) override;

 private:
  std::vector<std::string> allowlist_;
  std::uint64_t max_bytes_;
};

struct ToolOutcome {
  Json summary;  // what the calling agent sees
  std::vector<std::string> written;  // workspace paths committed
};

/// Dispatches external tool calls, commits their artifacts under the
/// caller's scope (`ws/<id>/search`, `ws/<id>/sources`, `ws/<id>/code`) and
/// appends every invocation to `tools/log.jsonl`.
class ToolBox {
 public:
  static constexpr std::string_view kLogPath = "tools/log.jsonl";

  ToolBox(Workspace& workspace, std::shared_ptr<Clock> clock);

  void set_search(std::shared_ptr<SearchProvider> p) { search_ = std::move(p); }
  void set_fetch(std::shared_ptr<FetchProvider> p) { fetch_ = std::move(p); }
  void set_sandbox(std::shared_ptr<SandboxPool> p) { sandbox_ = std::move(p); }
  SandboxPool* sandbox() const noexcept { return sandbox_.get(); }

  /// Throws the tool's own errors (ProviderUnavailable, FetchDenied, ...)
  /// after logging them.
  ToolOutcome invoke(const std::string& agent, const std::string& scope, const std::string& tool, const Json& args);

  /// True once the URI has been fetched successfully.
  bool verified(const std::string& uri) const;

  Json state() const;
  void restore(const Json& state);

 private:
  ToolOutcome run(const std::string& agent, const std::string& prefix, const std::string& tool, const Json& args);
  std::uint64_t next_index(const std::string& dir) const;

  Workspace& workspace_;
  std::shared_ptr<Clock> clock_;
  std::shared_ptr<SearchProvider> search_;
  std::shared_ptr<FetchProvider> fetch_;
  std::shared_ptr<SandboxPool> sandbox_;
  mutable std::mutex mu_;
  std::set<std::string> fetched_;
  std::uint64_t seq_ = 0;
};

}  // namespace quire
