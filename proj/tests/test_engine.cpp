#include <doctest.h>

#include <chrono>

#include "quire/engine.hpp"
#include "quire/error.hpp"
#include "support.hpp"

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

const Json kThreeGoals{{"research_question", "How many unit distances can n points have?"},
                       {"goals", {"Survey known bounds.", "Formalize the incidence count.", "Search small cases."}}};

qt::Script proposing() {
  qt::Script s;
  s.call("pc", "propose_goals", kThreeGoals);
  return s;
}

/// A project whose first goal is approved and has one workstream, with `wc`
/// scripted for the workstream coordinator.
std::unique_ptr<Project> with_workstream(qt::Script script, std::optional<qt::fs::path> dir = std::nullopt) {
  script.call("pc", "create_workstream", Json{{"goal", "g1"}, {"instructions", "Go."}}, "Goals approved");
  auto p = Project::start(qt::scripted_options(script.str(), {}, std::move(dir)), "Unit distances, please.");
  p->run_until_quiescent();
  p->approve_goals("user", {{"g1", GoalDecision{}}});
  p->run_until_quiescent();
  return p;
}

qt::Script approving_reviewers(qt::Script s, int rounds = 1) {
  for (int r = 0; r < rounds; ++r) {
    for (int i = 1; i <= 3; ++i) s.say("ws1.rev" + std::to_string(i), "APPROVE");
  }
  return s;
}

const Json kExposition{{"append", {{{"kind", "exposition"}, {"text", "We counted pairs at distance one."}}}}};

bool has_record(const std::vector<ActionRecord>& traj, const std::string& label, bool accepted) {
  return std::any_of(traj.begin(), traj.end(),
                     [&](const ActionRecord& r) { return r.label == label && r.accepted == accepted; });
}

}  // namespace

TEST_CASE("starting a project records the brief and its uploads") {
  qt::Script s;
  s.say("pc", "Planar or spatial?");
  auto p = Project::start(qt::scripted_options(s.str()), "A project on unit distances.", {{"note.md", "# n"}});
  CHECK(p->state() == ProjectState::Onboarding);
  CHECK(p->workspace().read_file("uploads/note.md") == "# n");
  REQUIRE(p->chat().size() == 1);
  CHECK(p->chat()[0].from == "user");
  CHECK(p->chat()[0].attachments == std::vector<std::string>{"uploads/note.md"});
  p->run_until_quiescent();
  REQUIRE(p->chat().size() == 2);
  CHECK(p->chat()[1].from == "pc");
  CHECK(p->chat()[1].body == "Planar or spatial?");
  CHECK(code_of([&] { p->upload("../x", ""); }) == ErrorCode::InvalidPath);
  CHECK(code_of([] { Project::start(qt::scripted_options("{\"entries\":[]}"), "  "); }) == ErrorCode::InvalidSpec);
}

TEST_CASE("goal proposals and revisions") {
  auto s = proposing();
  s.call("pc", "propose_goals", Json{{"research_question", ""}, {"goals", {"Survey bounds.", "Count incidences."}}},
         "rephrase");
  auto p = Project::start(qt::scripted_options(s.str()), "Unit distances.");
  p->run_until_quiescent();
  CHECK(p->state() == ProjectState::GoalsProposed);
  auto goals = p->goals();
  REQUIRE(goals.size() == 3);
  CHECK(goals[2].id == "g3");
  CHECK(goals[0].status == GoalStatus::Proposed);

  p->handle_user_message("Please rephrase, and drop the third goal.");
  p->run_until_quiescent();
  goals = p->goals();
  REQUIRE(goals.size() == 2);
  CHECK(goals[1].id == "g2");
  CHECK(goals[1].text == "Count incidences.");
  CHECK(p->research_question() == "How many unit distances can n points have?");
}

TEST_CASE("an empty goal list is rejected as malformed") {
  qt::Script s;
  s.call("pc", "propose_goals", Json{{"research_question", "q"}, {"goals", Json::array()}});
  auto p = Project::start(qt::scripted_options(s.str()), "Unit distances.");
  p->run_until_quiescent();
  CHECK(p->state() == ProjectState::Onboarding);
  const auto traj = p->trajectory("pc");
  REQUIRE_FALSE(traj.empty());
  CHECK(traj[0].label == "invalid_response");
  CHECK(traj[0].outcome["error"].get<std::string>().find("MalformedProposal") != std::string::npos);
}

TEST_CASE("goal approval belongs to the user and may select a subset") {
  auto p = Project::start(qt::scripted_options(proposing().str()), "Unit distances.");
  CHECK(code_of([&] { p->approve_goals("user", {{"g1", {}}}); }) == ErrorCode::InvalidState);
  p->run_until_quiescent();
  CHECK(code_of([&] { p->approve_goals("pc", {{"g1", {}}}); }) == ErrorCode::NotUser);
  CHECK(code_of([&] { p->approve_goals("user", {{"g1", GoalDecision{false, {}}}}); }) == ErrorCode::NoGoalsApproved);
  CHECK(code_of([&] { p->approve_goals("user", {{"g9", {}}}); }) == ErrorCode::UnknownGoal);
  p->approve_goals("user", {{"g1", {}}, {"3", GoalDecision{true, "Search configurations up to 12 points."}}});
  const auto goals = p->goals();
  CHECK(p->state() == ProjectState::Active);
  CHECK(goals[0].status == GoalStatus::Approved);
  CHECK(goals[1].status == GoalStatus::Proposed);
  CHECK(goals[2].status == GoalStatus::Approved);
  CHECK(goals[2].text == "Search configurations up to 12 points.");
  CHECK(p->chat().back().body.find("g3: Search configurations up to 12 points.") != std::string::npos);
}

TEST_CASE("workstreams need an approved goal; one goal may have several") {
  auto p = Project::start(qt::scripted_options(proposing().str()), "Unit distances.");
  p->run_until_quiescent();
  p->approve_goals("user", {{"g1", {}}});
  CHECK(code_of([&] { p->create_workstream("g2", "x"); }) == ErrorCode::GoalNotApproved);
  CHECK(code_of([&] { p->create_workstream("g7", "x"); }) == ErrorCode::UnknownGoal);
  const auto a = p->create_workstream("g1", "literature first");
  const auto b = p->create_workstream("g1", "computation first", "Small cases");
  CHECK(a == "ws1");
  CHECK(b == "ws2");
  CHECK(p->goals()[0].workstreams == std::vector<std::string>{"ws1", "ws2"});
  const auto ws2 = p->workstream("ws2");
  CHECK(ws2.status == WorkstreamStatus::Pending);
  CHECK(ws2.coordinator == "ws2.coord");
  CHECK(ws2.title == "Small cases");
  CHECK(p->reports().latest_version("ws2") == 1);
  CHECK(p->workstream_of("ws2.coord") == std::optional<std::string>("ws2"));
  CHECK(code_of([&] { p->workstream("ws9"); }) == ErrorCode::UnknownWorkstream);
}

TEST_CASE("a premature mark_complete is rejected and the workstream keeps running") {
  qt::Script s = proposing();
  s.calls("ws1.coord", {{"update_report", kExposition}, {"mark_complete", Json{{"summary", "done"}}}});
  auto p = with_workstream(s);
  const auto ws = p->workstream("ws1");
  CHECK(ws.status == WorkstreamStatus::Running);
  const auto traj = p->trajectory("ws1.coord");
  CHECK(has_record(traj, "update_report", true));
  CHECK(has_record(traj, "mark_complete", false));
  CHECK(p->reports().load("ws1").status == ReportStatus::Incremental);
  CHECK(code_of([&] { p->conclude_workstream("ws1", WorkstreamStatus::Completed, "done"); }) ==
        ErrorCode::GateViolation);
  CHECK(p->workstream("ws1").status == WorkstreamStatus::Running);
}

TEST_CASE("an edit after approval needs a fresh review before completion") {
  qt::Script s = proposing();
  s.call("ws1.coord", "update_report", kExposition);
  s.call("ws1.coord", "submit_for_review", Json::object());
  s.call("ws1.coord", "update_report", Json{{"append", {{{"kind", "paragraph"}, {"text", "One more remark."}}}}});
  s.call("ws1.coord", "mark_complete", Json{{"summary", "done"}});
  auto p = with_workstream(approving_reviewers(s));
  CHECK(p->workstream("ws1").status == WorkstreamStatus::Running);
  const auto traj = p->trajectory("ws1.coord");
  CHECK(has_record(traj, "submit_for_review", true));
  CHECK(has_record(traj, "mark_complete", false));
}

TEST_CASE("approval then mark_complete completes the workstream with a final report") {
  qt::Script s = proposing();
  s.call("ws1.coord", "update_report", kExposition);
  s.call("ws1.coord", "submit_for_review", Json::object());
  s.call("ws1.coord", "mark_complete", Json{{"summary", "bound recorded"}});
  auto p = with_workstream(approving_reviewers(s));
  const auto ws = p->workstream("ws1");
  CHECK(ws.status == WorkstreamStatus::Completed);
  CHECK(ws.summary == "bound recorded");
  CHECK(p->reports().load("ws1").status == ReportStatus::Final);
  CHECK(p->runtime().terminated("ws1.coord"));
  REQUIRE(ws.transitions.size() == 3);
  CHECK(ws.transitions[1].to == WorkstreamStatus::InReview);
  CHECK(ws.transitions[2].to == WorkstreamStatus::Completed);
  CHECK(code_of([&] { p->conclude_workstream("ws1", WorkstreamStatus::Failed, "late"); }) == ErrorCode::InvalidState);
}

TEST_CASE("a failed workstream keeps its files and warns the user") {
  qt::Script s = proposing();
  s.call("ws1.coord", "search_literature", Json{{"query", "unit distances"}});
  auto script = s;
  script.call("pc", "create_workstream", Json{{"goal", "g1"}, {"instructions", "Go."}}, "Goals approved");
  auto opts = qt::scripted_options(script.str());
  auto fx = std::make_shared<FixtureTools>(
      Json::parse(R"({"search":{"unit distances":[{"title":"S","uri":"https://example.org/s"}]}})"));
  opts.search = fx;
  auto p = Project::start(std::move(opts), "Unit distances.");
  p->run_until_quiescent();
  p->approve_goals("user", {{"g1", {}}});
  p->run_until_quiescent();
  CHECK(code_of([&] { p->conclude_workstream("ws1", WorkstreamStatus::Failed, " "); }) == ErrorCode::GateViolation);
  p->conclude_workstream("ws1", WorkstreamStatus::Failed, "the search found nothing usable");
  const auto ws = p->workstream("ws1");
  CHECK(ws.status == WorkstreamStatus::Failed);
  REQUIRE(ws.warnings.size() == 1);
  CHECK(ws.warnings[0].find("the search found nothing usable") != std::string::npos);
  const auto files = p->workspace().list_files("ws/ws1/");
  CHECK(std::find(files.begin(), files.end(), "ws/ws1/search/1.json") != files.end());
  CHECK(std::find(files.begin(), files.end(), "ws/ws1/report.json") != files.end());
  CHECK(p->runtime().terminated("ws1.coord"));
}

TEST_CASE("a tick with nothing runnable does nothing") {
  auto p = Project::start(qt::scripted_options("{\"entries\":[]}"), "Unit distances.");
  p->run_until_quiescent();
  CHECK(p->quiescent());
  const auto t = p->tick(5);
  CHECK(t.steps == 0);
  CHECK(t.agents.empty());
  CHECK(t.records == 0);
}

TEST_CASE("the transition relation") {
  using W = WorkstreamStatus;
  const std::vector<W> all = {W::Pending, W::Running, W::InReview, W::Completed, W::Failed, W::Unfinished};
  std::size_t edges = 0;
  for (auto from : all) {
    for (auto to : all) {
      if (transition_allowed(from, to)) {
        ++edges;
        CHECK_FALSE(is_terminal(from));
        CHECK(from != to);
      }
    }
  }
  CHECK(edges == 6);
  CHECK(transition_allowed(W::InReview, W::Completed));
  CHECK_FALSE(transition_allowed(W::Running, W::Completed));
  CHECK_FALSE(transition_allowed(W::Pending, W::Failed));
  for (auto s : all) CHECK(parse_workstream_status(to_string(s)) == s);
}

TEST_CASE("recorded transitions follow the relation in the reference scenario") {
  auto p = qt::run_s1();
  for (const auto& ws : p->workstreams()) {
    auto at = WorkstreamStatus::Pending;
    for (const auto& t : ws.transitions) {
      CHECK(t.from == at);
      CHECK(transition_allowed(t.from, t.to));
      at = t.to;
    }
    CHECK(at == ws.status);
  }
}

TEST_CASE("a durable project resumes after a restart exactly where it stopped") {
  qt::TempDir straight_dir, crash_dir;
  auto straight = qt::run_s1(straight_dir.path());

  {
    auto p = Project::start(qt::s1_options(crash_dir.path()), qt::kS1Brief, {{"unit-distances-note.md", qt::kS1Note}});
    p->run_until_quiescent();
    p->handle_user_message("Both variants, please: the planar question and the spatial one.");
    p->tick(1);
  }
  auto resumed = Project::open(qt::s1_options(crash_dir.path()));
  resumed->run_until_quiescent();
  for (int i = 1; i < qt::S1User::kSteps; ++i) {
    qt::S1User::step(
        i, [&](const std::string& t) { resumed->handle_user_message(t); },
        [&] {
          std::map<std::string, GoalDecision> d;
          for (const auto& g : resumed->goals()) d[g.id] = GoalDecision{};
          resumed->approve_goals("user", d);
        });
    resumed->run_until_quiescent();
  }
  CHECK(resumed->state_json() == straight->state_json());
  CHECK(resumed->workspace().read_file("ws/ws1/report.json") == straight->workspace().read_file("ws/ws1/report.json"));
  CHECK(resumed->workspace().read_file(std::string(EventLog::kLogPath)) ==
        straight->workspace().read_file(std::string(EventLog::kLogPath)));
  CHECK(code_of([] { Project::open(qt::s1_options(qt::fs::path("/nonexistent/quire"))); }) == ErrorCode::Persistence);
}

TEST_CASE("grace period") {
  CHECK(grace_period(30s) == 5s);
  CHECK(grace_period(1000s) == 10s);
  CHECK(grace_period(4s) == 2s);
  CHECK(grace_period(24h) == std::chrono::milliseconds(864000));
}

TEST_CASE("final-answer mode returns a quick answer without forcing") {
  qt::Script s;
  s.call("pc", "final_answer", Json{{"text", "At most O(n^(4/3))."}});
  std::unique_ptr<Project> p;
  const auto a = run_final_answer_mode(qt::scripted_options(s.str()), "Bound the unit distances.", 5s, 1s, &p);
  CHECK(a.text == "At most O(n^(4/3)).");
  CHECK_FALSE(a.forced);
  CHECK_FALSE(a.error.has_value());
  CHECK(p->mode() == ProjectMode::FinalAnswer);
  CHECK(p->goals().at(0).status == GoalStatus::Approved);
}

TEST_CASE("final-answer mode forces a stalling coordinator") {
  qt::Script s;
  s.call("pc", "final_answer", Json{{"text", "Partial: O(n^(4/3))."}}, "Time limit reached");
  const auto t0 = std::chrono::steady_clock::now();
  const auto a = run_final_answer_mode(qt::scripted_options(s.str()), "Bound the unit distances.", 600ms, 200ms);
  const auto took = std::chrono::steady_clock::now() - t0;
  CHECK(a.forced);
  CHECK(a.text == "Partial: O(n^(4/3)).");
  CHECK(took >= 400ms);
  CHECK(took < 2s);
}

TEST_CASE("final-answer mode gives an empty forced answer when nothing arrives") {
  const auto a = run_final_answer_mode(qt::scripted_options("{\"entries\":[]}"), "Bound it.", 300ms, 100ms);
  CHECK(a.forced);
  CHECK(a.text.empty());
  REQUIRE(a.error.has_value());
  CHECK(a.error->find("NoAnswer") != std::string::npos);
  CHECK(code_of([] { run_final_answer_mode(qt::scripted_options("{\"entries\":[]}"), "x", 0ms); }) ==
        ErrorCode::InvalidSpec);
}

TEST_CASE("a perpetually rejected report stops after the round budget with one alert") {
  auto p = Project::start(qt::scripted_options(qt::slurp(qt::fixture("stall5.fixture.json"))), "Check the lemma.");
  p->run_until_quiescent();
  p->approve_goals("user", {{"g1", {}}});
  p->run_until_quiescent();
  const auto ws = p->workstream("ws1");
  CHECK(ws.status == WorkstreamStatus::Unfinished);
  const auto sessions = p->reviews().sessions_for("ws1");
  REQUIRE(sessions.size() == 1);
  CHECK(sessions[0].rounds.size() == 5);
  CHECK(sessions[0].status == SessionStatus::Stalled);
  REQUIRE(p->alerts().size() == 1);
  CHECK(p->alerts()[0].attachments ==
        std::vector<std::string>{"ws/ws1/report.json", "ws/ws1/review-issues.json"});
  const Report r = p->reports().load("ws1");
  CHECK(std::any_of(r.annotations.begin(), r.annotations.end(),
                    [](const MarginNote& n) { return n.provenance.kind == ProvenanceKind::Reviewer; }));
}
