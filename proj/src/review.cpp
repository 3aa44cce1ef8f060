#include "quire/review.hpp"

#include <algorithm>

#include "quire/digest.hpp"
#include "quire/error.hpp"
#include "quire/workspace.hpp"

namespace quire {

std::string issue_id(std::string_view location, std::string_view text) {
  return "i" + sha256_hex(std::string(location) + "\n" + normalize_text(text)).substr(0, 16);
}

Issue make_issue(Severity severity, std::string location, std::string text) {
  if (location.empty()) location = "global";
  Issue i;
  i.id = issue_id(location, text);
  i.severity = severity;
  i.location = std::move(location);
  i.text = std::move(text);
  return i;
}

Verdict parse_verdict_body(const std::string& body) {
  Json j;
  try {
    j = Json::parse(body);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::UnparseableAction, std::string("verdict body: ") + e.what());
  }
  if (!j.is_object() || !j.contains("verdict") || !j["verdict"].is_string()) {
    throw Error(ErrorCode::UnparseableAction, "verdict body needs a verdict field");
  }
  Verdict v;
  const std::string word = j["verdict"];
  if (word == "approve") {
    v.approve = true;
    return v;
  }
  if (word != "reject") throw Error(ErrorCode::UnparseableAction, "verdict must be approve or reject");
  v.approve = false;
  for (const auto& i : j.value("issues", Json::array())) {
    if (!i.is_object() || !i.contains("text") || !i["text"].is_string()) {
      throw Error(ErrorCode::UnparseableAction, "issue needs text");
    }
    v.issues.push_back(make_issue(parse_severity(i.value("severity", std::string("blocking"))),
                                  i.value("location", std::string("global")), i["text"].get<std::string>()));
  }
  if (v.issues.empty()) throw Error(ErrorCode::UnparseableAction, "a rejection needs at least one issue");
  return v;
}

bool ReviewRound::all_approve() const {
  return !verdicts.empty() &&
         std::all_of(verdicts.begin(), verdicts.end(), [](const auto& kv) { return kv.second.approve; });
}

std::string_view to_string(SessionStatus status) noexcept {
  switch (status) {
    case SessionStatus::Open: return "open";
    case SessionStatus::Approved: return "approved";
    case SessionStatus::Stalled: return "stalled";
  }
  return "open";
}

namespace {

SessionStatus parse_session_status(const std::string& s) {
  if (s == "open") return SessionStatus::Open;
  if (s == "approved") return SessionStatus::Approved;
  if (s == "stalled") return SessionStatus::Stalled;
  throw Error(ErrorCode::Persistence, "unknown session status " + s);
}

}  // namespace

void to_json(Json& j, const Issue& i) {
  j = Json{{"id", i.id}, {"severity", to_string(i.severity)}, {"location", i.location}, {"text", i.text}};
}

void from_json(const Json& j, Issue& i) {
  j.at("id").get_to(i.id);
  i.severity = parse_severity(j.at("severity").get<std::string>());
  j.at("location").get_to(i.location);
  j.at("text").get_to(i.text);
}

void to_json(Json& j, const Verdict& v) {
  j = Json{{"verdict", v.approve ? "approve" : "reject"}, {"issues", v.issues}};
}

void from_json(const Json& j, Verdict& v) {
  v.approve = j.at("verdict").get<std::string>() == "approve";
  v.issues = j.value("issues", std::vector<Issue>{});
}

void to_json(Json& j, const ReviewRound& r) {
  j = Json{{"index", r.index}, {"report_version", r.report_version}, {"verdicts", r.verdicts},
           {"open_issues", r.open_issues}};
}

void from_json(const Json& j, ReviewRound& r) {
  j.at("index").get_to(r.index);
  j.at("report_version").get_to(r.report_version);
  r.verdicts = j.at("verdicts").get<std::map<std::string, Verdict>>();
  r.open_issues = j.at("open_issues").get<std::set<std::string>>();
}

void to_json(Json& j, const ReviewSession& s) {
  j = Json{{"id", s.id},
           {"workstream", s.workstream},
           {"coordinator", s.coordinator},
           {"reviewers", s.reviewers},
           {"rounds", s.rounds},
           {"status", to_string(s.status)},
           {"max_rounds", s.max_rounds},
           {"stall_window", s.stall_window}};
  j["escalation"] = s.escalation ? Json(*s.escalation) : Json(nullptr);
  j["issues_path"] = s.issues_path ? Json(*s.issues_path) : Json(nullptr);
}

void from_json(const Json& j, ReviewSession& s) {
  j.at("id").get_to(s.id);
  j.at("workstream").get_to(s.workstream);
  j.at("coordinator").get_to(s.coordinator);
  j.at("reviewers").get_to(s.reviewers);
  s.rounds = j.at("rounds").get<std::vector<ReviewRound>>();
  s.status = parse_session_status(j.at("status"));
  j.at("max_rounds").get_to(s.max_rounds);
  j.at("stall_window").get_to(s.stall_window);
  s.escalation.reset();
  s.issues_path.reset();
  if (j.contains("escalation") && j["escalation"].is_string()) s.escalation = j["escalation"].get<std::string>();
  if (j.contains("issues_path") && j["issues_path"].is_string()) s.issues_path = j["issues_path"].get<std::string>();
}

bool detect_stall(const ReviewSession& s) {
  if (s.rounds.empty() || s.rounds.back().all_approve()) return false;
  if (s.rounds.size() >= s.max_rounds) return true;
  const std::size_t window = std::max<std::size_t>(s.stall_window, 2);
  if (s.rounds.size() < window) return false;
  for (std::size_t i = s.rounds.size() - window + 1; i < s.rounds.size(); ++i) {
    const auto& before = s.rounds[i - 1].open_issues;
    const auto& after = s.rounds[i].open_issues;
    if (!std::includes(after.begin(), after.end(), before.begin(), before.end())) return false;
  }
  return true;
}

void append_round(ReviewSession& s, ReviewRound round) {
  if (s.status != SessionStatus::Open) throw Error(ErrorCode::SessionClosed, s.id + " is " + std::string(to_string(s.status)));
  if (s.rounds.size() >= s.max_rounds) throw Error(ErrorCode::SessionClosed, s.id + " has used every round");
  for (const auto& r : s.reviewers) {
    if (!round.verdicts.count(r)) throw Error(ErrorCode::InvalidState, "no verdict from " + r);
  }
  if (round.verdicts.size() != s.reviewers.size()) throw Error(ErrorCode::InvalidState, "verdict from a non-reviewer");
  round.index = s.rounds.size() + 1;
  round.open_issues.clear();
  for (const auto& [_, v] : round.verdicts) {
    for (const auto& i : v.issues) round.open_issues.insert(i.id);
  }
  s.rounds.push_back(std::move(round));
  if (s.rounds.back().all_approve()) {
    s.status = SessionStatus::Approved;
  } else if (detect_stall(s)) {
    s.status = SessionStatus::Stalled;
  }
}

namespace {

/// Forwards reviewer actions and keeps the first well-formed verdict.
class CapturingExecutor final : public ActionExecutor {
 public:
  explicit CapturingExecutor(ActionExecutor& base) : base_(base) {}

  Outcome execute(const std::string& agent, const AgentSpec& spec, const Action& action) override {
    const auto* m = std::get_if<act::SendMessage>(&action);
    if (m == nullptr || m->kind != MessageKind::ReviewVerdict) return base_.execute(agent, spec, action);
    if (verdict_) return Outcome{false, Json{{"error", "verdict already submitted this round"}}};
    Verdict v = parse_verdict_body(m->body);
    act::SendMessage out = *m;
    out.to = "parent";
    out.body = Json(v).dump();
    Outcome o = base_.execute(agent, spec, out);
    if (o.accepted) {
      verdict_ = std::move(v);
      o.idle_after = true;
    }
    return o;
  }

  const std::optional<Verdict>& verdict() const { return verdict_; }

 private:
  ActionExecutor& base_;
  std::optional<Verdict> verdict_;
};

}  // namespace

ReviewManager::ReviewManager(Workspace& workspace, Bus& bus, AgentRuntime& runtime, ReportStore& reports,
                             ReviewConfig config)
    : workspace_(workspace), bus_(bus), runtime_(runtime), reports_(reports), config_(config) {}

std::string ReviewManager::path_for(std::string_view workstream) { return "ws/" + std::string(workstream) + "/review.json"; }

std::string ReviewManager::issues_path_for(std::string_view workstream) {
  return "ws/" + std::string(workstream) + "/review-issues.json";
}

ReviewSession& ReviewManager::get(const std::string& session_id) {
  for (auto& s : sessions_) {
    if (s.id == session_id) return s;
  }
  throw Error(ErrorCode::NotFound, "review session " + session_id);
}

void ReviewManager::persist(const std::string& workstream) {
  Json doc{{"workstream", workstream}, {"sessions", Json::array()}};
  for (const auto& s : sessions_) {
    if (s.workstream == workstream) doc["sessions"].push_back(s);
  }
  workspace_.write_file(path_for(workstream), doc.dump(2) + "\n", "review");
}

ReviewSession ReviewManager::open_review(const std::string& workstream, const std::string& coordinator,
                                         std::uint64_t report_version, std::optional<std::size_t> n_reviewers) {
  std::lock_guard lock(mu_);
  if (!reports_.exists(workstream) || report_version == 0 || report_version > reports_.latest_version(workstream)) {
    throw Error(ErrorCode::ReportNotFound, workstream + " v" + std::to_string(report_version));
  }
  const std::size_t n = n_reviewers.value_or(config_.n_reviewers);
  if (n == 0) throw Error(ErrorCode::InvalidSpec, "a review needs at least one reviewer");
  ReviewSession s;
  s.id = workstream + ".review" +
         std::to_string(std::count_if(sessions_.begin(), sessions_.end(),
                                      [&](const ReviewSession& x) { return x.workstream == workstream; }) +
                        1);
  s.workstream = workstream;
  s.coordinator = coordinator;
  s.max_rounds = config_.max_rounds;
  s.stall_window = config_.stall_window;
  for (std::size_t i = 0; i < n; ++i) {
    AgentSpec spec = default_spec(Role::Reviewer, coordinator, workstream);
    spec.brief = "Review the working report of workstream " + workstream + " each time it is sent to you.";
    const std::string id = runtime_.spawn(std::move(spec));
    runtime_.set_idle(id, true);
    s.reviewers.push_back(id);
    reviewers_.insert(id);
  }
  sessions_.push_back(s);
  persist(workstream);
  return s;
}

ReviewRound ReviewManager::run_round(const std::string& session_id, std::uint64_t report_version,
                                     ActionExecutor& executor) {
  std::lock_guard lock(mu_);
  ReviewSession& s = get(session_id);
  if (s.status != SessionStatus::Open) {
    throw Error(ErrorCode::SessionClosed, s.id + " is " + std::string(to_string(s.status)));
  }
  if (s.rounds.size() >= s.max_rounds) throw Error(ErrorCode::SessionClosed, s.id + " has used every round");
  if (report_version == 0 || report_version > reports_.latest_version(s.workstream)) {
    throw Error(ErrorCode::ReportNotFound, s.workstream + " v" + std::to_string(report_version));
  }
  if (!s.rounds.empty() && report_version < s.rounds.back().report_version) {
    throw Error(ErrorCode::InvalidState, "report version older than the previous round");
  }
  const Report report = reports_.load(s.workstream, report_version);
  const std::string body = "Review round " + std::to_string(s.rounds.size() + 1) + " of at most " +
                           std::to_string(s.max_rounds) + ", report version " + std::to_string(report_version) +
                           ".\n\n" + render(report, RenderFormat::Markdown);

  ReviewRound round;
  round.report_version = report_version;
  for (const auto& reviewer : s.reviewers) {
    Message request;
    request.sender = s.coordinator;
    request.recipient = reviewer;
    request.kind = MessageKind::ReviewRequest;
    request.body = body;
    request.attachments = {ReportStore::path_for(s.workstream)};
    bus_.send(request);

    CapturingExecutor capture(executor);
    for (std::size_t i = 0; i < config_.max_reviewer_steps && !capture.verdict(); ++i) {
      if (runtime_.terminated(reviewer)) break;
      runtime_.step(reviewer, capture);
      if (!capture.verdict() && !runtime_.runnable(reviewer)) break;
    }
    if (capture.verdict()) {
      round.verdicts[reviewer] = *capture.verdict();
    } else {
      Verdict v;
      v.approve = false;
      v.issues.push_back(make_issue(Severity::Blocking, "global", "reviewer " + reviewer + " returned no verdict"));
      round.verdicts[reviewer] = std::move(v);
    }
    runtime_.set_idle(reviewer, true);
  }
  append_round(s, round);
  persist(s.workstream);
  return s.rounds.back();
}

std::string ReviewManager::close_as_escalated(const std::string& session_id) {
  std::lock_guard lock(mu_);
  ReviewSession& s = get(session_id);
  if (s.escalation) throw Error(ErrorCode::SessionClosed, s.id + " was already escalated");
  if (!detect_stall(s)) throw Error(ErrorCode::NotStalled, s.id);
  s.status = SessionStatus::Stalled;

  Json issues = Json::array();
  std::set<std::string> seen;
  const ReviewRound& last = s.rounds.back();
  for (const auto& [reviewer, v] : last.verdicts) {
    for (const auto& i : v.issues) {
      Json ij = i;
      ij["reviewer"] = reviewer;
      issues.push_back(std::move(ij));
    }
  }
  Json diffs = Json::array();
  for (std::size_t r = 0; r < s.rounds.size(); ++r) {
    Json added = Json::array(), resolved = Json::array();
    const std::set<std::string> empty;
    const auto& before = r == 0 ? empty : s.rounds[r - 1].open_issues;
    const auto& after = s.rounds[r].open_issues;
    for (const auto& id : after) {
      if (!before.count(id)) added.push_back(id);
    }
    for (const auto& id : before) {
      if (!after.count(id)) resolved.push_back(id);
    }
    diffs.push_back({{"round", r + 1}, {"added", added}, {"resolved", resolved}});
  }
  const std::string issues_path = issues_path_for(s.workstream);
  workspace_.write_file(issues_path,
                        Json{{"session", s.id}, {"report_version", last.report_version}, {"issues", issues},
                             {"rounds", diffs}}
                                .dump(2) +
                            "\n",
                        s.coordinator);
  s.issues_path = issues_path;

  const std::string body = "Review of workstream " + s.workstream + " stalled after " +
                           std::to_string(s.rounds.size()) + " rounds with " +
                           std::to_string(last.open_issues.size()) + " open issue(s); the report (v" +
                           std::to_string(last.report_version) + ") and the issue list are attached.";
  s.escalation = bus_.escalate(s.coordinator, body, {ReportStore::path_for(s.workstream), issues_path});
  persist(s.workstream);
  return *s.escalation;
}

ReviewSession ReviewManager::session(const std::string& session_id) const {
  std::lock_guard lock(mu_);
  return const_cast<ReviewManager*>(this)->get(session_id);
}

std::optional<ReviewSession> ReviewManager::latest_for(const std::string& workstream) const {
  std::lock_guard lock(mu_);
  for (auto it = sessions_.rbegin(); it != sessions_.rend(); ++it) {
    if (it->workstream == workstream) return *it;
  }
  return std::nullopt;
}

std::vector<ReviewSession> ReviewManager::sessions_for(const std::string& workstream) const {
  std::lock_guard lock(mu_);
  std::vector<ReviewSession> out;
  for (const auto& s : sessions_) {
    if (s.workstream == workstream) out.push_back(s);
  }
  return out;
}

bool ReviewManager::is_reviewer(const std::string& agent) const {
  std::lock_guard lock(mu_);
  return reviewers_.count(agent) > 0;
}

Json ReviewManager::state() const {
  std::lock_guard lock(mu_);
  return Json{{"sessions", sessions_}};
}

void ReviewManager::restore(const Json& state) {
  std::lock_guard lock(mu_);
  sessions_ = state.at("sessions").get<std::vector<ReviewSession>>();
  reviewers_.clear();
  for (const auto& s : sessions_) reviewers_.insert(s.reviewers.begin(), s.reviewers.end());
}

}  // namespace quire
