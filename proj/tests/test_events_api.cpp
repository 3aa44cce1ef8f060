#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <thread>
#include <sys/wait.h>

#include "http_support.hpp"
#include "quire/error.hpp"
#include "quire/events.hpp"
#include "quire/workspace.hpp"

using namespace quire;
using namespace std::chrono_literals;

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

int run_cli(const std::string& args) {
  const int rc = std::system((std::string(QUIRE_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("event frames") {
  ProjectEvent e;
  e.id = 3;
  e.kind = EventKind::ReportUpdated;
  e.payload = Json{{"version", 2}, {"workstream", "ws1"}};
  CHECK(encode_event(e) == "id: 3\nevent: report_updated\ndata: {\"version\":2,\"workstream\":\"ws1\"}\n\n");
  for (auto k : {EventKind::ChatMessage, EventKind::GoalUpdate, EventKind::WorkstreamStatus, EventKind::ReportUpdated,
                 EventKind::Alert, EventKind::FinalAnswer}) {
    CHECK(parse_event_kind(to_string(k)) == k);
  }
}

TEST_CASE("the event log is gap-free and resumable") {
  auto clock = std::make_shared<LogicalClock>();
  Workspace ws("p1", std::nullopt, clock);
  EventLog log(&ws, clock);
  CHECK(log.last_id() == 0);
  for (int i = 0; i < 10; ++i) CHECK(log.emit(EventKind::ChatMessage, Json{{"n", i}}) == std::uint64_t(i + 1));
  const auto rest = log.after(7);
  REQUIRE(rest.size() == 3);
  CHECK(rest[0].id == 8);
  CHECK(rest[2].payload["n"] == 9);
  CHECK(log.after(10).empty());
  CHECK(log.after(0, 4).size() == 4);
  CHECK_FALSE(log.wait_for(10, 20ms));
  CHECK(log.wait_for(9, 0ms));

  EventLog reloaded(&ws, clock);
  reloaded.reload();
  CHECK(reloaded.after(0) == log.after(0));
  const std::string text = ws.read_file(std::string(EventLog::kLogPath));
  CHECK(std::count(text.begin(), text.end(), '\n') == 10);
}

TEST_CASE("durations") {
  CHECK(parse_duration("30s") == 30s);
  CHECK(parse_duration("15m") == 15min);
  CHECK(parse_duration("24h") == 24h);
  CHECK(parse_duration("500ms") == 500ms);
  CHECK(parse_duration("2") == 2s);
  CHECK(code_of([] { parse_duration("soon"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { parse_duration("0s"); }) == ErrorCode::ConfigError);
}

TEST_CASE("service configuration is validated") {
  const auto ok = ApiConfig::from_json(Json{{"listen", "127.0.0.1:9090"}, {"backend", "scripted:x.json"}});
  CHECK(ok.port == 9090);
  CHECK(ok.host == "127.0.0.1");
  CHECK(ApiConfig::from_json(Json{{"backend", {{"kind", "scripted"}, {"fixture", "f.json"}}}}).backend == "scripted:f.json");
  CHECK(code_of([] { ApiConfig::from_json(Json{{"port", 1}}); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { ApiConfig::from_json(Json{{"backend", {{"kind", "wire"}, {"fixture", "f"}}}}); }) ==
        ErrorCode::ConfigError);
  CHECK(code_of([] { ApiConfig::from_json(Json{{"backend", "magic"}}); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { ApiConfig::from_json(Json{{"backend", "wire"}, {"port", 70000}}); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { ApiConfig::from_json(Json{{"backend", "wire"}, {"host", "0.0.0.0"}}); }) ==
        ErrorCode::ConfigError);
  CHECK(ApiConfig::from_json(Json{{"backend", "wire"}, {"host", "0.0.0.0"}, {"token", "t"}}).token == "t");
  CHECK(code_of([] { ApiConfig::from_json(Json::array()); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { ApiConfig::load_file("/nonexistent/quire.json"); }) == ErrorCode::ConfigError);
  CHECK(default_tools_fixture("scripted:" + qt::fixture("s1.fixture.json")) == qt::fixture("s1.toolfix.json"));
  CHECK(default_tools_fixture("scripted:" + qt::fixture("bench_quick.fixture.json")).empty());
  CHECK(default_tools_fixture("wire").empty());
}

TEST_CASE("health, and a second service on the same port fails to bind") {
  Service a(qt::s1_api_config());
  a.start();
  httplib::Client cli("127.0.0.1", a.port());
  auto res = cli.Get("/v1/health");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(Json::parse(res->body)["status"] == "ok");

  auto cfg = qt::s1_api_config();
  cfg.port = a.port();
  Service b(cfg);
  CHECK(code_of([&] { b.start(); }) == ErrorCode::BindFailure);
}

TEST_CASE("errors map to status codes") {
  Service svc(qt::s1_api_config());
  svc.start();
  httplib::Client cli("127.0.0.1", svc.port());
  auto missing = cli.Get("/v1/projects/p9");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  CHECK(Json::parse(missing->body)["error"] == "NotFound");
  auto empty = cli.Post("/v1/projects", R"({"brief":"  "})", "application/json");
  REQUIRE(empty);
  CHECK(empty->status == 400);
  auto bad = cli.Post("/v1/projects", "{not json", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
}

TEST_CASE("the reference scenario over HTTP matches the in-process run") {
  auto local = qt::run_s1();
  Service svc(qt::s1_api_config());
  svc.start();
  const std::string pid = qt::run_s1_http(svc.port());
  CHECK(pid == "p1");
  httplib::Client cli("127.0.0.1", svc.port());

  for (const auto& path : {"ws/ws1/report.json", "ws/ws2/report.json", "events/log.jsonl", "bus/log.jsonl"}) {
    auto res = cli.Get("/v1/projects/p1/files/" + std::string(path));
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(res->body == local->workspace().read_file(path));
  }
  const Json traj = qt::get_json(cli, "/v1/workstreams/ws1/trajectory");
  std::vector<std::string> got;
  for (const auto& r : traj["records"]) got.push_back(r["label"]);
  CHECK(got == qt::kS1Trajectory);

  const Json ws = qt::get_json(cli, "/v1/projects/p1/workstreams");
  REQUIRE(ws["workstreams"].size() == 3);
  CHECK(ws["workstreams"][0]["status"] == "completed");
  CHECK(ws["workstreams"][0]["global_id"] == "p1.ws1");
  CHECK(qt::get_json(cli, "/v1/projects/p1/alerts")["alerts"].size() == 1);

  auto md = cli.Get("/v1/workstreams/ws1/report?format=markdown");
  REQUIRE(md);
  CHECK(md->body == render(local->reports().load("ws1"), RenderFormat::Markdown));
  CHECK(qt::get_json(cli, "/v1/workstreams/p1.ws2/review")["sessions"].size() == 1);
}

TEST_CASE("event stream replays from Last-Event-ID without gaps") {
  Service svc(qt::s1_api_config());
  svc.start();
  const std::string pid = qt::run_s1_http(svc.port());
  const auto all = qt::read_events(svc.port(), pid, 0, SIZE_MAX, false);
  REQUIRE(all.size() > 10);
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i].id == i + 1);

  std::vector<std::uint64_t> ids;
  std::uint64_t last = 0;
  while (ids.size() < all.size()) {
    const auto part = qt::read_events(svc.port(), pid, last, 3, false);
    REQUIRE_FALSE(part.empty());
    for (const auto& f : part) ids.push_back(f.id);
    last = part.back().id;
  }
  REQUIRE(ids.size() == all.size());
  for (std::size_t i = 0; i < ids.size(); ++i) CHECK(ids[i] == i + 1);
  const auto tail = qt::read_events(svc.port(), pid, 7, SIZE_MAX, false);
  REQUIRE_FALSE(tail.empty());
  CHECK(tail.front().id == 8);
  CHECK(tail.front().data == all[7].data);
}

TEST_CASE("background runner: a live follower sees every event once, in order") {
  auto local = qt::run_s1();
  auto cfg = qt::s1_api_config();
  cfg.run_agents = true;
  Service svc(cfg);
  svc.start();

  std::atomic<bool> stop{false};
  std::vector<std::uint64_t> ids;
  std::thread follower([&] {
    std::uint64_t last = 0;
    while (!stop) {
      for (const auto& f : qt::read_events(svc.port(), "p1", last, SIZE_MAX, true, {}, &stop)) {
        ids.push_back(f.id);
        last = f.id;
      }
      if (!stop) std::this_thread::sleep_for(5ms);
    }
  });
  const std::string pid = qt::run_s1_http(svc.port(), {}, false);
  Project* remote = svc.project(pid);
  const std::uint64_t total = remote->events().last_id();
  for (int i = 0; i < 400 && (ids.empty() || ids.back() < total); ++i) std::this_thread::sleep_for(5ms);
  stop = true;
  follower.join();

  REQUIRE(ids.size() == total);
  for (std::size_t i = 0; i < ids.size(); ++i) CHECK(ids[i] == i + 1);
  CHECK(remote->workspace().read_file("ws/ws1/report.json") == local->workspace().read_file("ws/ws1/report.json"));
  CHECK(remote->workspace().read_file(std::string(EventLog::kLogPath)) ==
        local->workspace().read_file(std::string(EventLog::kLogPath)));
  CHECK(remote->workstream("ws1").status == WorkstreamStatus::Completed);
}

TEST_CASE("bearer tokens guard everything but health") {
  auto cfg = qt::s1_api_config();
  cfg.token = "letmein";
  Service svc(cfg);
  svc.start();
  httplib::Client cli("127.0.0.1", svc.port());
  auto health = cli.Get("/v1/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  auto denied = cli.Get("/v1/projects");
  REQUIRE(denied);
  CHECK(denied->status == 401);
  auto wrong = cli.Get("/v1/projects", qt::bearer("nope"));
  REQUIRE(wrong);
  CHECK(wrong->status == 401);
  auto allowed = cli.Get("/v1/projects", qt::bearer("letmein"));
  REQUIRE(allowed);
  CHECK(allowed->status == 200);
  auto by_param = cli.Get("/v1/projects?token=letmein");
  REQUIRE(by_param);
  CHECK(by_param->status == 200);
}

TEST_CASE("uploads and goal decisions over HTTP") {
  Service svc(qt::s1_api_config());
  svc.start();
  httplib::Client cli("127.0.0.1", svc.port());
  httplib::MultipartFormDataItems form = {{"brief", qt::kS1Brief, "", ""},
                                          {"note", qt::kS1Note, "unit-distances-note.md", "text/markdown"}};
  auto created = cli.Post("/v1/projects", form);
  REQUIRE(created);
  REQUIRE(created->status == 201);
  const std::string pid = Json::parse(created->body)["project_id"];
  auto note = cli.Get("/v1/projects/" + pid + "/files/uploads/unit-distances-note.md");
  REQUIRE(note);
  CHECK(note->body == qt::kS1Note);
  CHECK(note->get_header_value("X-Version") == "1");

  const Json up = qt::post_json(cli, "/v1/projects/" + pid + "/uploads", {{"name", "extra.txt"}, {"content", "x"}});
  CHECK(up["paths"] == Json::array({"uploads/extra.txt"}));

  auto early = cli.Post("/v1/projects/" + pid + "/goals", R"({"decisions":{"g1":"approve"}})", "application/json");
  REQUIRE(early);
  CHECK(early->status == 409);
  auto bad = cli.Post("/v1/projects/" + pid + "/goals", R"({"decisions":{"g1":"maybe"}})", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
}

TEST_CASE("command line exit codes") {
  CHECK(run_cli("--no-such-flag") == 2);
  CHECK(run_cli("bench --problem x") == 2);
  CHECK(run_cli("serve --config /nonexistent/quire.json") == 2);

  qt::TempDir tmp;
  const auto out = tmp.path() / "answer.json";
  CHECK(run_cli("bench --problem " + qt::fixture("bench_problem.md") + " --time-limit 10s --backend scripted:" +
                qt::fixture("bench_quick.fixture.json") + " --out " + out.string()) == 0);
  const Json answer = Json::parse(qt::slurp(out));
  CHECK(answer["forced"] == false);
  CHECK(answer["error"].is_null());
  CHECK(answer["answer"].get<std::string>().find("O(n^(4/3))") != std::string::npos);

  const auto dir = tmp.path() / "proj";
  CHECK(run_cli("bench --problem " + qt::fixture("bench_problem.md") + " --time-limit 10s --backend scripted:" +
                qt::fixture("bench_quick.fixture.json") + " --out " + out.string() + " --dir " + dir.string()) == 0);
  CHECK(run_cli("inspect " + dir.string()) == 0);
}
