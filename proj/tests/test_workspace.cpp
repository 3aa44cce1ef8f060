#include <doctest.h>

#include <thread>

#include "quire/digest.hpp"
#include "quire/error.hpp"
#include "quire/workspace.hpp"
#include "support.hpp"

using namespace quire;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidState;
}

}  // namespace

TEST_CASE("first write on an empty store is version 1") {
  Workspace ws("p1");
  const auto v = ws.write_file("ws1/report.json", "{}", "agent-A");
  CHECK(v.version == 1);
  CHECK(v.author == "agent-A");
  CHECK(v.size == 2);
  CHECK(v.digest == sha256_hex("{}"));
}

TEST_CASE("stale expected_version is a VersionConflict") {
  Workspace ws("p1");
  ws.write_file("a", "1", "x");
  ws.write_file("a", "2", "x");
  CHECK(code_of([&] { ws.write_file("a", "3", "x", 1); }) == ErrorCode::VersionConflict);
  CHECK(ws.write_file("a", "3", "x", 2).version == 3);
  CHECK(ws.write_file("fresh", "1", "x", 0).version == 1);
}

TEST_CASE("reads return what was written, by version") {
  Workspace ws("p1");
  ws.write_file("f", "first", "a");
  ws.write_file("f", "second", "b");
  ws.write_file("f", "third", "a");
  CHECK(ws.read_file("f") == "third");
  CHECK(ws.read_file("f", 1) == "first");
  CHECK(ws.read_file("f", 1) == ws.read_file("f", 1));
  CHECK(code_of([&] { ws.read_file("f", 4); }) == ErrorCode::VersionOutOfRange);
  CHECK(code_of([&] { ws.read_file("never"); }) == ErrorCode::NotFound);
}

TEST_CASE("history lists every version with its author and is unaffected by reads") {
  Workspace ws("p1");
  ws.write_file("f", "1", "a");
  ws.write_file("f", "2", "b");
  ws.write_file("f", "3", "c");
  const auto before = ws.history("f");
  (void)ws.read_file("f", 2);
  (void)ws.read_file("f");
  const auto after = ws.history("f");
  REQUIRE(after.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(after[i].version == i + 1);
    CHECK(after[i].digest == before[i].digest);
  }
  CHECK(after[0].author == "a");
  CHECK(after[2].author == "c");
}

TEST_CASE("list_files filters by prefix") {
  Workspace ws("p1");
  CHECK(ws.list_files("").empty());
  ws.write_file("a/x", "", "u");
  ws.write_file("a/y", "", "u");
  ws.write_file("b/z", "", "u");
  CHECK(ws.list_files("a/") == std::vector<std::string>{"a/x", "a/y"});
  CHECK(ws.list_files("").size() == 3);
}

TEST_CASE("paths are normalized and '..' is rejected") {
  CHECK(Workspace::normalize_path("/a//b/./c") == "a/b/c");
  CHECK(code_of([] { Workspace::normalize_path("a/../b"); }) == ErrorCode::InvalidPath);
  CHECK(code_of([] { Workspace::normalize_path("//"); }) == ErrorCode::InvalidPath);
}

TEST_CASE("append_file extends the previous version") {
  Workspace ws("p1");
  ws.append_file("log.jsonl", "a\n", "u");
  ws.append_file("log.jsonl", "b\n", "u");
  CHECK(ws.read_file("log.jsonl") == "a\nb\n");
  CHECK(ws.read_file("log.jsonl", 1) == "a\n");
}

TEST_CASE("a durable store reopens with its full history") {
  qt::TempDir dir;
  {
    Workspace ws("p1", dir.path());
    ws.write_file("ws1/report.json", "v1", "a");
    ws.write_file("ws1/report.json", "v2", "b");
    ws.append_file("bus/log.jsonl", "x\n", "bus");
  }
  Workspace again("p1", dir.path());
  CHECK(again.read_file("ws1/report.json", 1) == "v1");
  CHECK(again.read_file("ws1/report.json") == "v2");
  CHECK(again.history("ws1/report.json")[1].author == "b");
  CHECK(again.read_file("bus/log.jsonl") == "x\n");
}

TEST_CASE("concurrent writers only ever extend each path's history") {
  Workspace ws("p1");
  constexpr int kWriters = 4;
  constexpr int kWrites = 50;
  std::vector<std::thread> threads;
  std::atomic<int> conflicts{0};
  for (int t = 0; t < kWriters; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < kWrites; ++i) {
        ws.write_file("shared", std::to_string(t) + ":" + std::to_string(i), "w" + std::to_string(t));
        ws.write_file("own/" + std::to_string(t), std::to_string(i), "w", static_cast<std::uint64_t>(i));
        try {
          const auto latest = ws.latest_version("cas").value_or(0);
          ws.write_file("cas", std::to_string(i), "w", latest);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::VersionConflict) throw;
          ++conflicts;
        }
      }
    });
  }
  // Snapshot while writers run; every snapshot must be a prefix of the end state.
  std::vector<std::vector<FileVersion>> snapshots;
  for (int i = 0; i < 20; ++i) {
    if (ws.exists("shared")) snapshots.push_back(ws.history("shared"));
    std::this_thread::yield();
  }
  for (auto& th : threads) th.join();
  const auto final_history = ws.history("shared");
  CHECK(final_history.size() == kWriters * kWrites);
  for (const auto& s : snapshots) {
    REQUIRE(s.size() <= final_history.size());
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i].digest == final_history[i].digest);
  }
  for (int t = 0; t < kWriters; ++t) CHECK(ws.latest_version("own/" + std::to_string(t)) == kWrites);
  CHECK(*ws.latest_version("cas") + conflicts.load() == kWriters * kWrites);
}
