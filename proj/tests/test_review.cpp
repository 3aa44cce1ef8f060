#include <doctest.h>

#include "quire/agent.hpp"
#include "quire/error.hpp"
#include "quire/review.hpp"
#include "quire/workspace.hpp"

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

Verdict approve() { return Verdict{}; }

Verdict reject(std::initializer_list<std::string> texts) {
  Verdict v;
  v.approve = false;
  for (const auto& t : texts) v.issues.push_back(make_issue(Severity::Blocking, "b1", t));
  return v;
}

ReviewRound round_of(std::map<std::string, Verdict> verdicts) {
  ReviewRound r;
  r.report_version = 1;
  r.verdicts = std::move(verdicts);
  return r;
}

ReviewSession session_with(std::vector<std::string> reviewers, std::size_t max_rounds = 5) {
  ReviewSession s;
  s.id = "ws1.review1";
  s.workstream = "ws1";
  s.reviewers = std::move(reviewers);
  s.max_rounds = max_rounds;
  return s;
}

ReviewSession with_issue_sets(std::vector<std::set<std::string>> sets, std::size_t max_rounds = 5) {
  ReviewSession s = session_with({"r"}, max_rounds);
  for (std::size_t i = 0; i < sets.size(); ++i) {
    ReviewRound r;
    r.index = i + 1;
    Verdict v;
    v.approve = false;
    r.verdicts["r"] = v;
    r.open_issues = sets[i];
    s.rounds.push_back(r);
  }
  return s;
}

/// Runtime, reports and review manager over one scripted fixture.
struct Rig {
  explicit Rig(const std::string& fixture, ReviewConfig cfg = {})
      : clock(std::make_shared<LogicalClock>()),
        ws("p1", std::nullopt, clock),
        bus(&ws),
        gateway(std::make_shared<BackendRouter>(std::shared_ptr<ModelBackend>(load_script(fixture))), &ws, clock),
        runtime(ws, bus, gateway, clock),
        reports(ws),
        reviews(ws, bus, runtime, reports, cfg),
        exec(bus, runtime, nullptr) {
    runtime.spawn(default_spec(Role::ProjectCoordinator, "user"));
    runtime.spawn(default_spec(Role::WorkstreamCoordinator, "pc", "ws1"));
    reports.create("ws1", "T", "ws1.coord");
    ReportDelta d;
    d.append.push_back({"", BlockKind::Exposition, "How the count was obtained."});
    reports.update_report("ws1", d, "ws1.coord");
  }

  std::shared_ptr<LogicalClock> clock;
  Workspace ws;
  Bus bus;
  ModelGateway gateway;
  AgentRuntime runtime;
  ReportStore reports;
  ReviewManager reviews;
  BasicExecutor exec;
};

std::string verdict_entry(const std::string& agent, const std::string& text) {
  return Json{{"match", {{"agent", agent}}}, {"respond", {{"text", text}}}}.dump();
}

}  // namespace

TEST_CASE("issue ids are stable under whitespace and distinct by location") {
  CHECK(issue_id("b1", "missing  case") == issue_id("b1", " missing case\n"));
  CHECK(issue_id("b1", "x") != issue_id("b2", "x"));
  CHECK(make_issue(Severity::Minor, "", "t").location == "global");
}

TEST_CASE("verdict bodies") {
  CHECK(parse_verdict_body(R"({"verdict":"approve"})").approve);
  const auto v = parse_verdict_body(R"({"verdict":"reject","issues":[{"severity":"minor","location":"b2","text":"t"}]})");
  CHECK_FALSE(v.approve);
  REQUIRE(v.issues.size() == 1);
  CHECK(v.issues[0].severity == Severity::Minor);
  CHECK(code_of([] { parse_verdict_body(R"({"verdict":"reject","issues":[]})"); }) == ErrorCode::UnparseableAction);
  CHECK(code_of([] { parse_verdict_body(R"({"verdict":"maybe"})"); }) == ErrorCode::UnparseableAction);
  CHECK(code_of([] { parse_verdict_body("approve"); }) == ErrorCode::UnparseableAction);
}

TEST_CASE("stall detection examples") {
  CHECK_FALSE(detect_stall(with_issue_sets({{"a", "b"}, {"a"}})));
  CHECK(detect_stall(with_issue_sets({{"a"}, {"a", "c"}})));
  CHECK(detect_stall(with_issue_sets({{"a"}, {"a"}})));
  CHECK_FALSE(detect_stall(with_issue_sets({{"a"}})));
  CHECK_FALSE(detect_stall(with_issue_sets({{"a"}, {"b"}, {"c"}, {"d"}})));
  CHECK(detect_stall(with_issue_sets({{"a"}, {"b"}, {"c"}, {"d"}, {"e"}})));
  CHECK(detect_stall(with_issue_sets({{"a"}}, 1)));
  CHECK_FALSE(detect_stall(session_with({"r"})));
}

TEST_CASE("unanimous approval closes the session as approved") {
  auto s = session_with({"r1", "r2", "r3"});
  append_round(s, round_of({{"r1", approve()}, {"r2", approve()}, {"r3", approve()}}));
  CHECK(s.status == SessionStatus::Approved);
  CHECK(s.rounds.size() == 1);
  CHECK(code_of([&] { append_round(s, round_of({{"r1", approve()}, {"r2", approve()}, {"r3", approve()}})); }) ==
        ErrorCode::SessionClosed);
}

TEST_CASE("shrinking rejections reach approval") {
  auto s = session_with({"r1", "r2", "r3"});
  append_round(s, round_of({{"r1", reject({"x"})}, {"r2", reject({"y"})}, {"r3", approve()}}));
  CHECK(s.status == SessionStatus::Open);
  append_round(s, round_of({{"r1", reject({"x"})}, {"r2", approve()}, {"r3", approve()}}));
  CHECK(s.status == SessionStatus::Open);
  append_round(s, round_of({{"r1", approve()}, {"r2", approve()}, {"r3", approve()}}));
  CHECK(s.status == SessionStatus::Approved);
  CHECK(s.rounds.size() == 3);
  CHECK(s.rounds[1].open_issues.size() == 1);
}

TEST_CASE("rounds need exactly one verdict per reviewer") {
  auto s = session_with({"r1", "r2"});
  CHECK(code_of([&] { append_round(s, round_of({{"r1", approve()}})); }) == ErrorCode::InvalidState);
  CHECK(code_of([&] { append_round(s, round_of({{"r1", approve()}, {"r2", approve()}, {"r9", approve()}})); }) ==
        ErrorCode::InvalidState);
  CHECK(s.rounds.empty());
}

TEST_CASE("every verdict sequence terminates within the round budget") {
  // Each reviewer per round: approve, reject with issue A, or reject with issue B.
  const std::vector<Verdict> choices = {approve(), reject({"A"}), reject({"B"})};
  std::size_t sequences = 0, approved = 0, stalled = 0;
  for (int code = 0; code < 729; ++code) {
    int c = code;
    auto s = session_with({"r1", "r2"}, 3);
    for (std::size_t round = 0; round < 3 && s.status == SessionStatus::Open; ++round) {
      const Verdict& a = choices[c % 3];
      c /= 3;
      const Verdict& b = choices[c % 3];
      c /= 3;
      append_round(s, round_of({{"r1", a}, {"r2", b}}));
      const auto& last = s.rounds.back();
      if (last.all_approve()) {
        REQUIRE(s.status == SessionStatus::Approved);
      } else {
        REQUIRE(s.status != SessionStatus::Approved);
        REQUIRE((s.status == SessionStatus::Stalled) == detect_stall(s));
      }
    }
    ++sequences;
    REQUIRE(s.status != SessionStatus::Open);
    REQUIRE(s.rounds.size() <= 3);
    if (s.status == SessionStatus::Approved) ++approved;
    if (s.status == SessionStatus::Stalled) ++stalled;
  }
  CHECK(sequences == 729);
  CHECK(approved + stalled == 729);
  CHECK(approved > 0);
  CHECK(stalled > 0);
}

TEST_CASE("open_review spawns fresh reviewers with verification tools") {
  Rig rig(R"({"entries":[]})");
  const auto s = rig.reviews.open_review("ws1", "ws1.coord", 2);
  REQUIRE(s.reviewers.size() == 3);
  CHECK(s.reviewers == std::vector<std::string>{"ws1.rev1", "ws1.rev2", "ws1.rev3"});
  for (const auto& r : s.reviewers) {
    const auto spec = rig.runtime.spec(r);
    CHECK(spec.parent == "ws1.coord");
    CHECK(spec.tool_allowlist.count("fetch_document") == 1);
    CHECK(spec.tool_allowlist.count("execute_code") == 1);
    CHECK(rig.reviews.is_reviewer(r));
  }
  const auto again = rig.reviews.open_review("ws1", "ws1.coord", 2, 1);
  CHECK(again.id == "ws1.review2");
  CHECK(again.reviewers == std::vector<std::string>{"ws1.rev4"});
  CHECK(rig.ws.exists(ReviewManager::path_for("ws1")));
  CHECK(code_of([&] { rig.reviews.open_review("ws9", "ws1.coord", 1); }) == ErrorCode::ReportNotFound);
  CHECK(code_of([&] { rig.reviews.open_review("ws1", "ws1.coord", 7); }) == ErrorCode::ReportNotFound);
}

TEST_CASE("a scripted round collects one verdict per reviewer") {
  const std::string fixture = "{\"entries\":[" + verdict_entry("ws1.rev1", "APPROVE") + "," +
                              verdict_entry("ws1.rev2", "REJECT\n- [blocking] b1: the bound is not justified") + "]}";
  Rig rig(fixture, ReviewConfig{2, 5, 2, 8});
  const auto s = rig.reviews.open_review("ws1", "ws1.coord", 2);
  const auto round = rig.reviews.run_round(s.id, 2, rig.exec);
  CHECK(round.index == 1);
  CHECK(round.verdicts.at("ws1.rev1").approve);
  CHECK_FALSE(round.verdicts.at("ws1.rev2").approve);
  CHECK(round.open_issues == std::set<std::string>{issue_id("b1", "the bound is not justified")});
  CHECK(rig.reviews.session(s.id).status == SessionStatus::Open);

  const auto to_coord = rig.bus.poll("ws1.coord", 10);
  REQUIRE(to_coord.size() == 2);
  for (const auto& m : to_coord) CHECK(m.kind == MessageKind::ReviewVerdict);
  CHECK(code_of([&] { rig.reviews.run_round(s.id, 1, rig.exec); }) == ErrorCode::InvalidState);
  CHECK(code_of([&] { rig.reviews.run_round(s.id, 5, rig.exec); }) == ErrorCode::ReportNotFound);
}

TEST_CASE("a reviewer that never answers counts as a blocking rejection") {
  Rig rig(R"({"entries":[]})", ReviewConfig{1, 5, 2, 3});
  const auto s = rig.reviews.open_review("ws1", "ws1.coord", 2);
  const auto round = rig.reviews.run_round(s.id, 2, rig.exec);
  const auto& v = round.verdicts.at("ws1.rev1");
  CHECK_FALSE(v.approve);
  REQUIRE(v.issues.size() == 1);
  CHECK(v.issues[0].text.find("no verdict") != std::string::npos);
}

TEST_CASE("close_as_escalated requires a stall and attaches the report and issues") {
  const std::string fixture = "{\"entries\":[" + verdict_entry("ws1.rev1", "REJECT\n- [blocking] b1: gap") + "," +
                              verdict_entry("ws1.rev1", "REJECT\n- [blocking] b1: gap") + "]}";
  Rig rig(fixture, ReviewConfig{1, 5, 2, 8});
  const auto s = rig.reviews.open_review("ws1", "ws1.coord", 2);
  rig.reviews.run_round(s.id, 2, rig.exec);
  CHECK(code_of([&] { rig.reviews.close_as_escalated(s.id); }) == ErrorCode::NotStalled);
  rig.reviews.run_round(s.id, 2, rig.exec);
  CHECK(rig.reviews.session(s.id).status == SessionStatus::Stalled);
  CHECK(code_of([&] { rig.reviews.run_round(s.id, 2, rig.exec); }) == ErrorCode::SessionClosed);

  const auto esc = rig.reviews.close_as_escalated(s.id);
  const auto to_pc = rig.bus.poll("pc", 10);
  REQUIRE(to_pc.size() == 1);
  CHECK(to_pc[0].id == esc);
  CHECK(to_pc[0].kind == MessageKind::Escalation);
  CHECK(to_pc[0].attachments ==
        std::vector<std::string>{ReportStore::path_for("ws1"), ReviewManager::issues_path_for("ws1")});
  const Json issues = Json::parse(rig.ws.read_file(ReviewManager::issues_path_for("ws1")));
  CHECK(issues["issues"].size() == 1);
  CHECK(issues["rounds"].size() == 2);
  CHECK(code_of([&] { rig.reviews.close_as_escalated(s.id); }) == ErrorCode::SessionClosed);
}

TEST_CASE("an approved session cannot be escalated") {
  Rig rig("{\"entries\":[" + verdict_entry("ws1.rev1", "APPROVE") + "]}", ReviewConfig{1, 5, 2, 8});
  const auto s = rig.reviews.open_review("ws1", "ws1.coord", 2);
  rig.reviews.run_round(s.id, 2, rig.exec);
  CHECK(rig.reviews.session(s.id).status == SessionStatus::Approved);
  CHECK(code_of([&] { rig.reviews.close_as_escalated(s.id); }) == ErrorCode::NotStalled);
}

TEST_CASE("review state persists and restores") {
  Rig rig("{\"entries\":[" + verdict_entry("ws1.rev1", "APPROVE") + "]}", ReviewConfig{1, 5, 2, 8});
  const auto s = rig.reviews.open_review("ws1", "ws1.coord", 2);
  rig.reviews.run_round(s.id, 2, rig.exec);
  const Json persisted = Json::parse(rig.ws.read_file(ReviewManager::path_for("ws1")));
  CHECK(persisted["sessions"][0]["status"] == "approved");

  ReviewManager other(rig.ws, rig.bus, rig.runtime, rig.reports);
  other.restore(rig.reviews.state());
  CHECK(other.is_reviewer("ws1.rev1"));
  const auto back = other.latest_for("ws1");
  REQUIRE(back.has_value());
  CHECK(back->status == SessionStatus::Approved);
  CHECK(Json(*back) == Json(rig.reviews.session(s.id)));
}
