#include <fcntl.h>
#include <poll.h>
#include <sched.h>
#include <signal.h>
#include <sys/mount.h>
#include <sys/resource.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include "quire/error.hpp"
#include "quire/tools.hpp"
#include "quire/workspace.hpp"

namespace quire {

namespace fs = std::filesystem;

void to_json(Json& j, const Limits& l) {
  j = Json{{"wall_seconds", l.wall_seconds},
           {"cpu_seconds", l.cpu_seconds},
           {"memory_bytes", l.memory_bytes},
           {"max_output_bytes", l.max_output_bytes}};
}

void from_json(const Json& j, Limits& l) {
  l.wall_seconds = j.value("wall_seconds", l.wall_seconds);
  l.cpu_seconds = j.value("cpu_seconds", l.cpu_seconds);
  l.memory_bytes = j.value("memory_bytes", l.memory_bytes);
  l.max_output_bytes = j.value("max_output_bytes", l.max_output_bytes);
}

void to_json(Json& j, const CodeResult& r) {
  Json produced = Json::object();
  for (const auto& [p, c] : r.produced_files) produced[p] = c;
  j = Json{{"exit_code", r.exit_code},
           {"stdout", r.stdout_data},
           {"stderr", r.stderr_data},
           {"stdout_truncated", r.stdout_truncated},
           {"stderr_truncated", r.stderr_truncated},
           {"produced_files", produced},
           {"usage", {{"wall", r.usage.wall}, {"cpu", r.usage.cpu}, {"peak_memory", r.usage.peak_memory}}},
           {"timed_out", r.timed_out},
           {"isolated", r.isolated}};
  if (!r.error.empty()) j["error"] = r.error;
}

CodeJob job_from_json(const Json& j, const Limits& defaults) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidJob, "job must be an object");
  CodeJob job;
  try {
    job.runtime = j.at("runtime").get<std::string>();
    job.entry = j.at("entry").get<std::string>();
    if (j.contains("files")) {
      for (const auto& [path, content] : j["files"].items()) job.files[path] = content.get<std::string>();
    }
    job.stdin_data = j.value("stdin", std::string{});
    job.limits = defaults;
    if (j.contains("limits")) from_json(j["limits"], job.limits);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::InvalidJob, std::string("malformed job: ") + e.what());
  }
  return job;
}

namespace {

std::vector<std::string> split_command(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  bool in_token = false;
  char quote = 0;
  for (char c : s) {
    if (quote != 0) {
      if (c == quote) {
        quote = 0;
      } else {
        cur.push_back(c);
      }
    } else if (c == '\'' || c == '"') {
      quote = c;
      in_token = true;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      if (in_token) out.push_back(std::move(cur));
      cur.clear();
      in_token = false;
    } else {
      cur.push_back(c);
      in_token = true;
    }
  }
  if (quote != 0) throw Error(ErrorCode::InvalidJob, "unterminated quote in entry");
  if (in_token) out.push_back(std::move(cur));
  return out;
}

std::optional<std::string> find_binary(const std::string& name) {
  if (name.find('/') != std::string::npos) {
    if (::access(name.c_str(), X_OK) == 0) return name;
    return std::nullopt;
  }
  for (const char* dir : {"/usr/local/bin", "/usr/bin", "/bin"}) {
    std::string p = std::string(dir) + "/" + name;
    if (::access(p.c_str(), X_OK) == 0) return p;
  }
  return std::nullopt;
}

bool positive(const Limits& l) {
  return l.wall_seconds > 0 && l.cpu_seconds > 0 && l.memory_bytes > 0 && l.max_output_bytes > 0;
}

bool within(const Limits& l, const Limits& cap) {
  return l.wall_seconds <= cap.wall_seconds && l.cpu_seconds <= cap.cpu_seconds &&
         l.memory_bytes <= cap.memory_bytes && l.max_output_bytes <= cap.max_output_bytes;
}

// Async-signal-safe helpers for the forked child.
void child_fail(int status_fd, char code, int exit_code) {
  ssize_t ignored = ::write(status_fd, &code, 1);
  (void)ignored;
  ::_exit(exit_code);
}

void fd_path(char* buf, int fd) {
  const char prefix[] = "/proc/self/fd/";
  std::memcpy(buf, prefix, sizeof(prefix) - 1);
  char digits[16];
  int n = 0;
  do {
    digits[n++] = static_cast<char>('0' + fd % 10);
    fd /= 10;
  } while (fd > 0);
  char* out = buf + sizeof(prefix) - 1;
  while (n > 0) *out++ = digits[--n];
  *out = '\0';
}

/// Where an isolated job sees its own directory. Fixed so that paths in job
/// output do not depend on the pool root or the job counter.
constexpr const char* kJobMount = "/tmp/job";

/// Hides the pool root and the host /tmp behind empty tmpfs mounts and binds
/// the job directory at kJobMount.
bool isolate(const char* root, const char* dir) {
  if (::unshare(CLONE_NEWNS | CLONE_NEWNET) != 0) return false;
  if (::mount(nullptr, "/", nullptr, MS_REC | MS_PRIVATE, nullptr) != 0) return false;
  int fd = ::open(dir, O_PATH | O_DIRECTORY | O_CLOEXEC);
  if (fd < 0) return false;
  if (::mount("tmpfs", root, "tmpfs", MS_NOSUID | MS_NODEV, "size=64k,mode=0755") != 0) return false;
  if (::mount("tmpfs", "/tmp", "tmpfs", MS_NOSUID | MS_NODEV, "size=64k,mode=0755") != 0) {
    ::umount2(root, MNT_DETACH);
    return false;
  }
  char src[64];
  fd_path(src, fd);
  if (::mkdir(kJobMount, 0755) != 0 || ::mount(src, kJobMount, nullptr, MS_BIND, nullptr) != 0) {
    ::umount2("/tmp", MNT_DETACH);
    ::umount2(root, MNT_DETACH);
    return false;
  }
  ::close(fd);
  return true;
}

struct Pipe {
  int fd[2] = {-1, -1};
  Pipe() {
    if (::pipe2(fd, O_CLOEXEC) != 0) throw Error(ErrorCode::SandboxSetupFailure, "pipe2 failed");
  }
  ~Pipe() {
    close_read();
    close_write();
  }
  void close_read() {
    if (fd[0] >= 0) ::close(fd[0]);
    fd[0] = -1;
  }
  void close_write() {
    if (fd[1] >= 0) ::close(fd[1]);
    fd[1] = -1;
  }
};

double seconds(const timeval& tv) { return static_cast<double>(tv.tv_sec) + tv.tv_usec / 1e6; }

}  // namespace

SandboxPool::SandboxPool(SandboxConfig config) : config_(std::move(config)) {
  ::signal(SIGPIPE, SIG_IGN);
  if (config_.max_concurrency == 0) throw Error(ErrorCode::ConfigError, "sandbox.max_concurrency must be >= 1");
  if (config_.root.empty()) {
    std::string tmpl = (fs::temp_directory_path() / "quire-sandbox-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw Error(ErrorCode::SandboxSetupFailure, "cannot create sandbox root");
    config_.root = tmpl;
    owns_root_ = true;
  } else {
    fs::create_directories(config_.root);
  }
  config_.root = fs::canonical(config_.root);
}

SandboxPool::~SandboxPool() {
  if (owns_root_) {
    std::error_code ec;
    fs::remove_all(config_.root, ec);
  }
}

void SandboxPool::set_observer(std::function<void(std::size_t)> observer) {
  std::lock_guard lock(mu_);
  observer_ = std::move(observer);
}

void SandboxPool::validate(const CodeJob& job) const {
  auto rt = config_.runtimes.find(job.runtime);
  if (rt == config_.runtimes.end()) throw Error(ErrorCode::RuntimeUnavailable, "runtime '" + job.runtime + "'");
  if (!rt->second.empty() && !find_binary(rt->second.front())) {
    throw Error(ErrorCode::RuntimeUnavailable, "interpreter not installed: " + rt->second.front());
  }
  if (!positive(job.limits)) throw Error(ErrorCode::InvalidJob, "limits must be positive");
  if (!within(job.limits, config_.caps)) throw Error(ErrorCode::InvalidJob, "limits exceed the configured caps");
  for (const auto& [path, content] : job.files) {
    try {
      if (Workspace::normalize_path(path) != path) throw Error(ErrorCode::InvalidPath, path);
    } catch (const Error&) {
      throw Error(ErrorCode::InvalidJob, "bad job file path '" + path + "'");
    }
  }
  auto tokens = split_command(job.entry);
  if (tokens.empty()) throw Error(ErrorCode::InvalidJob, "empty entry");
  if (rt->second.empty()) {
    if (!job.files.count(tokens[0]) && !config_.allowed_binaries.count(tokens[0])) {
      throw Error(ErrorCode::InvalidJob, "entry must start with a job file or an allowlisted binary");
    }
    if (!job.files.count(tokens[0]) && !find_binary(tokens[0])) {
      throw Error(ErrorCode::RuntimeUnavailable, "binary not installed: " + tokens[0]);
    }
  } else {
    auto script = std::find_if(tokens.begin(), tokens.end(), [](const std::string& t) { return t.front() != '-'; });
    if (script == tokens.end() || !job.files.count(*script)) {
      throw Error(ErrorCode::InvalidJob, "entry must name a file shipped with the job");
    }
  }
}

void SandboxPool::acquire() {
  std::function<void(std::size_t)> observer;
  std::size_t now = 0;
  {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return running_ < config_.max_concurrency; });
    now = ++running_;
    observer = observer_;
  }
  std::size_t prev = peak_.load();
  while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
  }
  if (observer) observer(now);
}

void SandboxPool::release() {
  std::function<void(std::size_t)> observer;
  std::size_t now = 0;
  {
    std::lock_guard lock(mu_);
    now = --running_;
    observer = observer_;
  }
  cv_.notify_one();
  if (observer) observer(now);
}

CodeResult SandboxPool::execute(const CodeJob& job) {
  validate(job);
  acquire();
  struct Release {
    SandboxPool* pool;
    ~Release() { pool->release(); }
  } release_guard{this};

  const fs::path dir = config_.root / ("j" + std::to_string(next_job_++));
  fs::create_directories(dir);
  struct Cleanup {
    fs::path dir;
    ~Cleanup() {
      std::error_code ec;
      fs::remove_all(dir, ec);
    }
  } cleanup{dir};
  for (const auto& [path, content] : job.files) {
    fs::path p = dir / path;
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << content;
    if (!out) throw Error(ErrorCode::SandboxSetupFailure, "cannot stage " + path);
  }

  std::vector<std::string> args = config_.runtimes.at(job.runtime);
  auto tokens = split_command(job.entry);
  if (args.empty() && job.files.count(tokens[0])) {
    fs::permissions(dir / tokens[0], fs::perms::owner_exec | fs::perms::group_exec, fs::perm_options::add);
    tokens[0] = "./" + tokens[0];
  }
  args.insert(args.end(), tokens.begin(), tokens.end());
  std::string exe = args.front();
  if (exe.rfind("./", 0) != 0) {
    auto found = find_binary(exe);
    if (!found) throw Error(ErrorCode::RuntimeUnavailable, "binary not installed: " + exe);
    exe = *found;
  }
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  std::string home = "HOME=" + dir.string();
  std::string home_isolated = std::string("HOME=") + kJobMount;
  std::string env_path = "PATH=/usr/local/bin:/usr/bin:/bin";
  std::string env_lang = "LANG=C.UTF-8";
  std::string env_pyc = "PYTHONDONTWRITEBYTECODE=1";
  std::vector<char*> envp = {home.data(), env_path.data(), env_lang.data(), env_pyc.data(), nullptr};
  const std::string root_s = config_.root.string();
  const std::string dir_s = dir.string();
  const bool require = config_.require_isolation;
  const rlim_t cpu = static_cast<rlim_t>(std::ceil(job.limits.cpu_seconds));
  const rlim_t mem = static_cast<rlim_t>(job.limits.memory_bytes);

  Pipe in, out, err, status;
  const auto start = std::chrono::steady_clock::now();
  pid_t pid = ::fork();
  if (pid < 0) throw Error(ErrorCode::SandboxSetupFailure, "fork failed");
  if (pid == 0) {
    ::setpgid(0, 0);
    ::signal(SIGPIPE, SIG_DFL);
    ::dup2(in.fd[0], 0);
    ::dup2(out.fd[1], 1);
    ::dup2(err.fd[1], 2);
    const bool isolated = isolate(root_s.c_str(), dir_s.c_str());
    if (!isolated && require) child_fail(status.fd[1], 'I', 126);
    char flag = isolated ? 'Y' : 'N';
    if (::write(status.fd[1], &flag, 1) != 1) ::_exit(126);
    if (isolated) envp[0] = home_isolated.data();
    if (::chdir(isolated ? kJobMount : dir_s.c_str()) != 0) child_fail(status.fd[1], 'D', 126);
    rlimit rl{cpu, cpu + 1};
    ::setrlimit(RLIMIT_CPU, &rl);
    rl = {mem, mem};
    ::setrlimit(RLIMIT_AS, &rl);
    rl = {0, 0};
    ::setrlimit(RLIMIT_CORE, &rl);
    ::execve(exe.c_str(), argv.data(), envp.data());
    child_fail(status.fd[1], 'E', 127);
  }
  ::setpgid(pid, pid);
  in.close_read();
  out.close_write();
  err.close_write();
  status.close_write();

  std::string status_bytes;
  char buf[65536];
  for (;;) {
    ssize_t n = ::read(status.fd[0], buf, sizeof buf);
    if (n > 0) {
      status_bytes.append(buf, static_cast<std::size_t>(n));
      continue;
    }
    if (n < 0 && errno == EINTR) continue;
    break;
  }
  CodeResult result;
  result.isolated = status_bytes.find('Y') != std::string::npos;
  if (status_bytes.find('I') != std::string::npos || status_bytes.find('D') != std::string::npos) {
    ::waitpid(pid, nullptr, 0);
    throw Error(ErrorCode::SandboxSetupFailure, "could not isolate the job (namespaces unavailable)");
  }

  ::fcntl(in.fd[1], F_SETFL, O_NONBLOCK);
  std::size_t stdin_off = 0;
  if (job.stdin_data.empty()) in.close_write();
  const auto deadline = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                    std::chrono::duration<double>(job.limits.wall_seconds));
  const std::uint64_t cap = job.limits.max_output_bytes;
  auto take = [&](int fd, std::string& sink, bool& truncated) -> bool {
    ssize_t n = ::read(fd, buf, sizeof buf);
    if (n < 0 && (errno == EINTR || errno == EAGAIN)) return true;
    if (n <= 0) return false;
    std::size_t room = sink.size() < cap ? static_cast<std::size_t>(cap - sink.size()) : 0;
    std::size_t keep = std::min(room, static_cast<std::size_t>(n));
    sink.append(buf, keep);
    if (keep < static_cast<std::size_t>(n)) truncated = true;
    return true;
  };
  bool out_open = true, err_open = true;
  while (out_open || err_open) {
    auto now = std::chrono::steady_clock::now();
    if (!result.timed_out && now >= deadline) {
      ::kill(-pid, SIGKILL);
      result.timed_out = true;
    }
    int wait_ms = 100;
    if (!result.timed_out) {
      auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
      wait_ms = static_cast<int>(std::clamp<long long>(left, 1, 100));
    }
    pollfd fds[3];
    nfds_t count = 0;
    int idx_out = -1, idx_err = -1, idx_in = -1;
    if (out_open) {
      idx_out = static_cast<int>(count);
      fds[count++] = {out.fd[0], POLLIN, 0};
    }
    if (err_open) {
      idx_err = static_cast<int>(count);
      fds[count++] = {err.fd[0], POLLIN, 0};
    }
    if (in.fd[1] >= 0) {
      idx_in = static_cast<int>(count);
      fds[count++] = {in.fd[1], POLLOUT, 0};
    }
    int rc = ::poll(fds, count, wait_ms);
    if (rc < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (idx_out >= 0 && (fds[idx_out].revents & (POLLIN | POLLHUP | POLLERR))) {
      out_open = take(out.fd[0], result.stdout_data, result.stdout_truncated);
    }
    if (idx_err >= 0 && (fds[idx_err].revents & (POLLIN | POLLHUP | POLLERR))) {
      err_open = take(err.fd[0], result.stderr_data, result.stderr_truncated);
    }
    if (idx_in >= 0 && fds[idx_in].revents) {
      if (fds[idx_in].revents & (POLLERR | POLLHUP)) {
        in.close_write();
      } else {
        ssize_t n = ::write(in.fd[1], job.stdin_data.data() + stdin_off, job.stdin_data.size() - stdin_off);
        if (n > 0) stdin_off += static_cast<std::size_t>(n);
        if ((n < 0 && errno != EAGAIN && errno != EINTR) || stdin_off >= job.stdin_data.size()) in.close_write();
      }
    }
  }
  in.close_write();

  int wstatus = 0;
  rusage ru{};
  for (;;) {
    pid_t r = ::wait4(pid, &wstatus, WNOHANG, &ru);
    if (r == pid) break;
    if (r < 0 && errno != EINTR) break;
    if (!result.timed_out && std::chrono::steady_clock::now() >= deadline) {
      ::kill(-pid, SIGKILL);
      result.timed_out = true;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  ::kill(-pid, SIGKILL);  // stray members of the job's process group
  result.usage.wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.usage.cpu = seconds(ru.ru_utime) + seconds(ru.ru_stime);
  result.usage.peak_memory = static_cast<std::uint64_t>(ru.ru_maxrss) * 1024;
  if (WIFEXITED(wstatus)) {
    result.exit_code = WEXITSTATUS(wstatus);
  } else if (WIFSIGNALED(wstatus)) {
    result.exit_code = 128 + WTERMSIG(wstatus);
  }
  if (result.timed_out) result.exit_code = 137;
  if (status_bytes.find('E') != std::string::npos && result.stderr_data.empty()) {
    result.stderr_data = "exec failed: " + exe + "\n";
  }

  std::error_code ec;
  for (auto it = fs::recursive_directory_iterator(dir, ec); !ec && it != fs::recursive_directory_iterator();
       it.increment(ec)) {
    if (!it->is_regular_file() || it->file_size() > config_.caps.max_output_bytes) continue;
    const std::string rel = fs::relative(it->path(), dir).generic_string();
    std::ifstream f(it->path(), std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    auto orig = job.files.find(rel);
    if (orig == job.files.end() || orig->second != ss.str()) result.produced_files[rel] = ss.str();
  }
  return result;
}

std::vector<CodeResult> SandboxPool::execute_parallel(const std::vector<CodeJob>& jobs, std::size_t max_concurrency) {
  if (max_concurrency < 1) throw Error(ErrorCode::InvalidJob, "max_concurrency must be >= 1");
  std::vector<CodeResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        results[i] = execute(jobs[i]);
      } catch (const std::exception& e) {
        results[i] = CodeResult{};
        results[i].exit_code = -1;
        results[i].error = e.what();
      }
    }
  };
  std::vector<std::thread> threads;
  const std::size_t n = std::min(max_concurrency, jobs.size());
  for (std::size_t i = 0; i < n; ++i) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  return results;
}

}  // namespace quire
