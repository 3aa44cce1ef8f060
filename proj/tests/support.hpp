#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>

#include "quire/engine.hpp"
#include "quire/error.hpp"

namespace qt {

namespace fs = std::filesystem;

inline std::string fixture(const std::string& name) { return std::string(QUIRE_FIXTURE_DIR) + "/" + name; }
inline std::string golden(const std::string& name) { return std::string(QUIRE_GOLDEN_DIR) + "/" + name; }

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

/// Directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("quire-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter.fetch_add(1)));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

/// Builds scripted-backend fixtures in code.
class Script {
 public:
  explicit Script(bool strict = false) : strict_(strict) {}

  Script& say(const std::string& agent, const std::string& text, const std::string& contains = {}) {
    return add(agent, contains, quire::Json{{"text", text}});
  }
  Script& call(const std::string& agent, const std::string& tool, quire::Json args, const std::string& contains = {}) {
    return calls(agent, {{tool, std::move(args)}}, contains);
  }
  Script& calls(const std::string& agent, const std::vector<std::pair<std::string, quire::Json>>& tools,
                const std::string& contains = {}) {
    quire::Json list = quire::Json::array();
    for (const auto& [name, args] : tools) list.push_back({{"name", name}, {"arguments", args}});
    return add(agent, contains, quire::Json{{"tool_calls", list}});
  }
  std::string str() const { return quire::Json{{"strict", strict_}, {"entries", entries_}}.dump(); }

 private:
  Script& add(const std::string& agent, const std::string& contains, quire::Json respond) {
    quire::Json match{{"agent", agent}};
    if (!contains.empty()) match["contains"] = contains;
    entries_.push_back({{"match", match}, {"respond", std::move(respond)}});
    return *this;
  }

  bool strict_;
  quire::Json entries_ = quire::Json::array();
};

inline std::shared_ptr<quire::SandboxPool> shared_sandbox() {
  static auto pool = std::make_shared<quire::SandboxPool>(quire::SandboxConfig{});
  return pool;
}

inline quire::ProjectOptions scripted_options(const std::string& script, const std::string& toolfix = {},
                                              std::optional<fs::path> dir = std::nullopt) {
  quire::ProjectOptions o;
  o.id = "p1";
  o.dir = std::move(dir);
  o.router = std::make_shared<quire::BackendRouter>(std::shared_ptr<quire::ModelBackend>(quire::load_script(script)));
  if (!toolfix.empty()) {
    auto fx = quire::FixtureTools::load_file(toolfix);
    o.search = fx;
    o.fetch = fx;
  }
  o.sandbox = shared_sandbox();
  return o;
}

inline quire::ProjectOptions s1_options(std::optional<fs::path> dir = std::nullopt) {
  return scripted_options(slurp(fixture("s1.fixture.json")), fixture("s1.toolfix.json"), std::move(dir));
}

inline const std::string kS1Brief =
    "I'd like a project on upper bounds for the number of unit distances among n points. The attached note "
    "lists what I know so far.";
inline const std::string kS1Note = "# Notes\nPlanar bound: O(n^(4/3)). Spatial case: gap between constructions and bounds.\n";

/// The user's side of the S1 conversation, one step per call; each step
/// assumes the project was run to quiescence before it.
struct S1User {
  static constexpr int kSteps = 4;
  template <class Chat, class Approve>
  static void step(int i, Chat chat, Approve approve) {
    switch (i) {
      case 0: chat("Both variants, please: the planar question and the spatial one."); break;
      case 1: chat("Good. Please rephrase goal 2 so that it names incidences explicitly."); break;
      case 2: approve(); break;
      case 3: chat("A thought for the literature workstream: try pruning point sets by minimum degree first."); break;
    }
  }
};

/// Runs S1 end to end in process.
inline std::unique_ptr<quire::Project> run_s1(std::optional<fs::path> dir = std::nullopt) {
  auto p = quire::Project::start(s1_options(std::move(dir)), kS1Brief, {{"unit-distances-note.md", kS1Note}});
  p->run_until_quiescent();
  for (int i = 0; i < S1User::kSteps; ++i) {
    S1User::step(
        i, [&](const std::string& t) { p->handle_user_message(t); },
        [&] {
          std::map<std::string, quire::GoalDecision> d;
          for (const auto& g : p->goals()) d[g.id] = quire::GoalDecision{};
          p->approve_goals("user", d);
        });
    p->run_until_quiescent();
  }
  return p;
}

inline std::vector<std::string> labels(const std::vector<quire::ActionRecord>& records) {
  std::vector<std::string> out;
  for (const auto& r : records) out.push_back(r.label);
  return out;
}

inline const std::vector<std::string> kS1Trajectory = {"search_literature", "update_report", "fetch_document",
                                               "update_report",     "receive_instruction", "update_report",
                                               "submit_for_review", "mark_complete"};

}  // namespace qt
