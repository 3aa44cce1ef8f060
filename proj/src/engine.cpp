#include "quire/engine.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>

#include "quire/error.hpp"

namespace quire {

namespace fs = std::filesystem;

std::string_view to_string(ProjectState s) noexcept {
  switch (s) {
    case ProjectState::Onboarding: return "onboarding";
    case ProjectState::GoalsProposed: return "goals_proposed";
    case ProjectState::Active: return "active";
  }
  return "onboarding";
}

std::string_view to_string(ProjectMode m) noexcept {
  return m == ProjectMode::Interactive ? "interactive" : "final_answer";
}

std::string_view to_string(GoalStatus s) noexcept { return s == GoalStatus::Proposed ? "proposed" : "approved"; }

std::string_view to_string(WorkstreamStatus s) noexcept {
  switch (s) {
    case WorkstreamStatus::Pending: return "pending";
    case WorkstreamStatus::Running: return "running";
    case WorkstreamStatus::InReview: return "in_review";
    case WorkstreamStatus::Completed: return "completed";
    case WorkstreamStatus::Failed: return "failed";
    case WorkstreamStatus::Unfinished: return "unfinished";
  }
  return "pending";
}

WorkstreamStatus parse_workstream_status(std::string_view s) {
  for (auto w : {WorkstreamStatus::Pending, WorkstreamStatus::Running, WorkstreamStatus::InReview,
                 WorkstreamStatus::Completed, WorkstreamStatus::Failed, WorkstreamStatus::Unfinished}) {
    if (to_string(w) == s) return w;
  }
  throw Error(ErrorCode::Persistence, "unknown workstream status " + std::string(s));
}

namespace {

ProjectState parse_project_state(std::string_view s) {
  for (auto p : {ProjectState::Onboarding, ProjectState::GoalsProposed, ProjectState::Active}) {
    if (to_string(p) == s) return p;
  }
  throw Error(ErrorCode::Persistence, "unknown project state " + std::string(s));
}

std::optional<std::string> opt_str(const Json& j, const char* key) {
  if (j.contains(key) && j[key].is_string()) return j[key].get<std::string>();
  return std::nullopt;
}

Json opt_json(const std::optional<std::string>& s) { return s ? Json(*s) : Json(nullptr); }

std::string excerpt(const std::string& text, std::size_t n) {
  std::string t = normalize_text(text);
  if (t.size() <= n) return t;
  return t.substr(0, n) + "...";
}

}  // namespace

bool is_terminal(WorkstreamStatus s) noexcept {
  return s == WorkstreamStatus::Completed || s == WorkstreamStatus::Failed || s == WorkstreamStatus::Unfinished;
}

bool transition_allowed(WorkstreamStatus from, WorkstreamStatus to) noexcept {
  using W = WorkstreamStatus;
  return (from == W::Pending && to == W::Running) || (from == W::Running && to == W::InReview) ||
         (from == W::InReview && to == W::Running) || (from == W::InReview && to == W::Completed) ||
         (from == W::Running && to == W::Failed) || (from == W::InReview && to == W::Unfinished);
}

void to_json(Json& j, const Goal& g) {
  j = Json{{"id", g.id}, {"text", g.text}, {"status", to_string(g.status)}, {"workstreams", g.workstreams}};
}

void from_json(const Json& j, Goal& g) {
  j.at("id").get_to(g.id);
  j.at("text").get_to(g.text);
  g.status = j.at("status").get<std::string>() == "approved" ? GoalStatus::Approved : GoalStatus::Proposed;
  j.at("workstreams").get_to(g.workstreams);
}

void to_json(Json& j, const Workstream& w) {
  Json transitions = Json::array();
  for (const auto& t : w.transitions) {
    transitions.push_back({{"from", to_string(t.from)}, {"to", to_string(t.to)}, {"at", t.at}});
  }
  j = Json{{"id", w.id},
           {"goal", w.goal},
           {"coordinator", w.coordinator},
           {"title", w.title},
           {"instructions", w.instructions},
           {"status", to_string(w.status)},
           {"report_path", w.report_path},
           {"warnings", w.warnings},
           {"review_session", opt_json(w.review_session)},
           {"approved_version", w.approved_version ? Json(*w.approved_version) : Json(nullptr)},
           {"summary", w.summary},
           {"transitions", transitions}};
}

void from_json(const Json& j, Workstream& w) {
  j.at("id").get_to(w.id);
  j.at("goal").get_to(w.goal);
  j.at("coordinator").get_to(w.coordinator);
  j.at("title").get_to(w.title);
  j.at("instructions").get_to(w.instructions);
  w.status = parse_workstream_status(j.at("status").get<std::string>());
  j.at("report_path").get_to(w.report_path);
  j.at("warnings").get_to(w.warnings);
  w.review_session = opt_str(j, "review_session");
  w.approved_version.reset();
  if (j.contains("approved_version") && j["approved_version"].is_number()) {
    w.approved_version = j["approved_version"].get<std::uint64_t>();
  }
  w.summary = j.value("summary", std::string{});
  w.transitions.clear();
  for (const auto& t : j.value("transitions", Json::array())) {
    w.transitions.push_back({parse_workstream_status(t.at("from").get<std::string>()),
                             parse_workstream_status(t.at("to").get<std::string>()), t.at("at").get<std::int64_t>()});
  }
}

void to_json(Json& j, const ChatEntry& c) {
  j = Json{{"message_id", c.message_id}, {"from", c.from},         {"to", c.to}, {"kind", c.kind},
           {"body", c.body},             {"attachments", c.attachments}, {"at", c.at}};
}

void from_json(const Json& j, ChatEntry& c) {
  j.at("message_id").get_to(c.message_id);
  j.at("from").get_to(c.from);
  j.at("to").get_to(c.to);
  j.at("kind").get_to(c.kind);
  j.at("body").get_to(c.body);
  j.at("attachments").get_to(c.attachments);
  j.at("at").get_to(c.at);
}

void to_json(Json& j, const AlertEntry& a) {
  j = Json{{"message_id", a.message_id}, {"from", a.from}, {"body", a.body}, {"attachments", a.attachments},
           {"in_reply_to", opt_json(a.in_reply_to)}, {"at", a.at}};
}

void from_json(const Json& j, AlertEntry& a) {
  j.at("message_id").get_to(a.message_id);
  j.at("from").get_to(a.from);
  j.at("body").get_to(a.body);
  j.at("attachments").get_to(a.attachments);
  a.in_reply_to = opt_str(j, "in_reply_to");
  j.at("at").get_to(a.at);
}

void to_json(Json& j, const FinalAnswer& f) {
  j = Json{{"text", f.text}, {"produced_at", f.produced_at}, {"forced", f.forced}, {"error", opt_json(f.error)}};
}

void from_json(const Json& j, FinalAnswer& f) {
  j.at("text").get_to(f.text);
  j.at("produced_at").get_to(f.produced_at);
  j.at("forced").get_to(f.forced);
  f.error = opt_str(j, "error");
}

void to_json(Json& j, const TickSummary& t) {
  j = Json{{"steps", t.steps}, {"agents", t.agents}, {"records", t.records}};
}

/// Applies engine-level actions under the project lock. Gate failures throw,
/// which the runtime records as rejected actions.
class EngineExecutor final : public BasicExecutor {
 public:
  explicit EngineExecutor(Project& p) : BasicExecutor(*p.bus_, *p.runtime_, p.tools_.get()), p_(p) {}

  Outcome execute(const std::string& agent, const AgentSpec& spec, const Action& action) override {
    if (auto* a = std::get_if<act::UpdateReport>(&action)) return update_report(agent, *a);
    if (auto* a = std::get_if<act::SubmitForReview>(&action)) return submit(agent, *a);
    if (auto* a = std::get_if<act::MarkComplete>(&action)) return mark_complete(agent, *a);
    if (auto* a = std::get_if<act::AbandonWorkstream>(&action)) return abandon(agent, *a);
    if (auto* a = std::get_if<act::ProposeGoals>(&action)) return propose(agent, *a);
    if (auto* a = std::get_if<act::CreateWorkstream>(&action)) return create(agent, *a);
    if (auto* a = std::get_if<act::GiveFinalAnswer>(&action)) return final_answer(agent, *a);
    if (std::holds_alternative<act::SpawnSubAgent>(action) && !spec.workstream.empty() &&
        is_terminal(p_.ws_ref(spec.workstream).status)) {
      throw Error(ErrorCode::SpawnDenied, "workstream " + spec.workstream + " has concluded");
    }
    return BasicExecutor::execute(agent, spec, action);
  }

 protected:
  std::string resolve_recipient(const std::string& agent, const AgentSpec& spec, const std::string& to) override {
    for (const auto& ws : p_.workstreams_) {
      if (ws.id == to) return ws.coordinator;
    }
    return BasicExecutor::resolve_recipient(agent, spec, to);
  }

 private:
  Workstream& own(const std::string& agent) {
    for (auto& ws : p_.workstreams_) {
      if (ws.coordinator == agent) return ws;
    }
    throw Error(ErrorCode::InvalidState, agent + " coordinates no workstream");
  }

  void require_pc(const std::string& agent) {
    if (runtime_.spec(agent).role != Role::ProjectCoordinator) {
      throw Error(ErrorCode::InvalidState, "only the project coordinator may do this");
    }
  }

  Outcome update_report(const std::string& agent, const act::UpdateReport& a) {
    Workstream& ws = own(agent);
    if (is_terminal(ws.status)) throw Error(ErrorCode::InvalidState, ws.id + " has concluded");
    if (ws.status == WorkstreamStatus::InReview) p_.set_status(ws, WorkstreamStatus::Running);
    const std::uint64_t v = p_.reports_->update_report(ws.id, a.delta, agent);
    p_.events_->emit(EventKind::ReportUpdated, Json{{"workstream", ws.id}, {"version", v}, {"status", "incremental"}});
    return Outcome{true, Json{{"workstream", ws.id}, {"version", v}}};
  }

  Outcome submit(const std::string& agent, const act::SubmitForReview& a) {
    Workstream& ws = own(agent);
    if (ws.status != WorkstreamStatus::Running) {
      throw Error(ErrorCode::InvalidState, ws.id + " is " + std::string(to_string(ws.status)));
    }
    const std::uint64_t latest = p_.reports_->latest_version(ws.id);
    const std::uint64_t version = a.version.value_or(latest);
    if (version == 0 || version > latest) throw Error(ErrorCode::ReportNotFound, ws.id + " v" + std::to_string(version));
    auto current = p_.reviews_->latest_for(ws.id);
    std::string sid;
    if (current && current->status == SessionStatus::Open) {
      sid = current->id;
    } else {
      sid = p_.reviews_->open_review(ws.id, agent, version).id;
    }
    ws.review_session = sid;
    ws.approved_version.reset();
    p_.set_status(ws, WorkstreamStatus::InReview);

    const ReviewRound round = p_.reviews_->run_round(sid, version, *this);
    const ReviewSession session = p_.reviews_->session(sid);
    Json detail{{"session", sid},
                {"round", round.index},
                {"report_version", round.report_version},
                {"status", to_string(session.status)},
                {"verdicts", round.verdicts}};
    if (session.status == SessionStatus::Approved) {
      const std::uint64_t v = p_.reports_->supersede_reviewer_notes(ws.id, "engine");
      if (v != latest) p_.events_->emit(EventKind::ReportUpdated, Json{{"workstream", ws.id}, {"version", v}, {"status", "incremental"}});
      ws.approved_version = v;
      return Outcome{true, detail};
    }
    if (session.status == SessionStatus::Stalled) {
      stall(ws, session);
      detail["status"] = "stalled";
      return Outcome{true, detail, true};
    }
    p_.set_status(ws, WorkstreamStatus::Running);
    return Outcome{true, detail};
  }

  void stall(Workstream& ws, const ReviewSession& s) {
    const std::string escalation = p_.reviews_->close_as_escalated(s.id);
    const ReviewSession closed = p_.reviews_->session(s.id);
    const std::string issues_path = closed.issues_path.value_or(ReviewManager::issues_path_for(ws.id));

    // Contested blocks get reviewer-provenance notes so the stalled sections stand out.
    const Report report = p_.reports_->load(ws.id);
    std::map<std::string, std::vector<std::string>> contested;
    for (const auto& [_, verdict] : closed.rounds.back().verdicts) {
      for (const auto& issue : verdict.issues) {
        if (issue.location == "global" || report.find_block(issue.location) == nullptr) continue;
        auto& texts = contested[issue.location];
        if (std::find(texts.begin(), texts.end(), issue.text) == texts.end()) texts.push_back(issue.text);
      }
    }
    for (const auto& [block, texts] : contested) {
      MarginNote note;
      note.anchor = {block, 0, normalize_text(report.find_block(block)->text).size()};
      note.text = "Contested in review:";
      for (const auto& t : texts) note.text += " " + t;
      note.provenance = {ProvenanceKind::Reviewer, issues_path, std::nullopt};
      p_.reports_->annotate(ws.id, note, "engine");
    }
    if (!contested.empty()) {
      p_.events_->emit(EventKind::ReportUpdated, Json{{"workstream", ws.id},
                                                       {"version", p_.reports_->latest_version(ws.id)},
                                                       {"status", "incremental"}});
    }

    const std::size_t open = closed.rounds.back().open_issues.size();
    const std::string summary = "review stalled after " + std::to_string(closed.rounds.size()) + " rounds with " +
                                std::to_string(open) + " open issue(s)";
    p_.conclude_locked(ws, WorkstreamStatus::Unfinished, summary);
    const std::string pc = p_.runtime_->spec(ws.coordinator).parent;
    bus_.escalate(pc, "Workstream " + ws.id + " is unfinished: " + summary + ". The report and the issue list are attached.",
                  {ws.report_path, issues_path}, escalation);
  }

  Outcome mark_complete(const std::string& agent, const act::MarkComplete& a) {
    Workstream& ws = own(agent);
    const auto session = p_.reviews_->latest_for(ws.id);
    if (ws.status != WorkstreamStatus::InReview || !session || session->status != SessionStatus::Approved) {
      throw Error(ErrorCode::GateViolation, "the latest report has not been approved by every reviewer");
    }
    const std::uint64_t latest = p_.reports_->latest_version(ws.id);
    if (ws.approved_version != latest) {
      throw Error(ErrorCode::GateViolation, "the report changed after approval; submit it for review again");
    }
    const std::uint64_t v = p_.reports_->finalize(ws.id, agent);
    p_.events_->emit(EventKind::ReportUpdated, Json{{"workstream", ws.id}, {"version", v}, {"status", "final"}});
    p_.conclude_locked(ws, WorkstreamStatus::Completed, a.summary.empty() ? "completed" : a.summary);
    return Outcome{true, Json{{"workstream", ws.id}, {"status", "completed"}, {"version", v}}, true};
  }

  Outcome abandon(const std::string& agent, const act::AbandonWorkstream& a) {
    Workstream& ws = own(agent);
    p_.conclude_locked(ws, WorkstreamStatus::Failed, a.summary);
    return Outcome{true, Json{{"workstream", ws.id}, {"status", "failed"}}, true};
  }

  Outcome propose(const std::string& agent, const act::ProposeGoals& a) {
    require_pc(agent);
    p_.apply_proposal(a.research_question, a.goals);
    return Outcome{true, Json{{"goals", p_.goals_}}};
  }

  Outcome create(const std::string& agent, const act::CreateWorkstream& a) {
    require_pc(agent);
    const std::string id = p_.create_workstream_locked(a.goal, a.instructions, a.title, a.continue_from);
    return Outcome{true, Json{{"workstream", id}, {"coordinator", p_.ws_ref(id).coordinator}}};
  }

  Outcome final_answer(const std::string& agent, const act::GiveFinalAnswer& a) {
    require_pc(agent);
    Message m;
    m.sender = agent;
    m.recipient = std::string(kUser);
    m.kind = MessageKind::FinalAnswer;
    m.body = a.text;
    const std::string id = bus_.send(m);
    return Outcome{true, Json{{"message", id}}, true};
  }

  Project& p_;
};

Project::Project(ProjectOptions options) : options_(std::move(options)), id_(options_.id) {
  if (!options_.router) throw Error(ErrorCode::ConfigError, "no model backend configured");
  clock_ = make_clock(options_.clock);
  std::optional<fs::path> files;
  if (options_.dir) files = *options_.dir / "files";
  workspace_ = std::make_unique<Workspace>(id_, files, clock_);
  bus_ = std::make_unique<Bus>(workspace_.get());
  gateway_ = std::make_unique<ModelGateway>(options_.router, workspace_.get(), clock_);
  runtime_ = std::make_unique<AgentRuntime>(*workspace_, *bus_, *gateway_, clock_, options_.runtime);
  reports_ = std::make_unique<ReportStore>(*workspace_);
  tools_ = std::make_unique<ToolBox>(*workspace_, clock_);
  if (options_.search) tools_->set_search(options_.search);
  if (options_.fetch) tools_->set_fetch(options_.fetch);
  if (options_.sandbox) tools_->set_sandbox(options_.sandbox);
  reports_->set_uri_verifier([this](const std::string& uri) { return tools_->verified(uri); });
  reviews_ = std::make_unique<ReviewManager>(*workspace_, *bus_, *runtime_, *reports_, options_.review);
  events_ = std::make_unique<EventLog>(workspace_.get(), clock_);
  executor_ = std::make_unique<EngineExecutor>(*this);
  runtime_->set_context_provider([this](const AgentSpec& spec) { return context_for(spec); });
}

Project::~Project() { events_->notify_all(); }

namespace {

AgentSpec coordinator_spec(bool final_mode) {
  AgentSpec spec = default_spec(Role::ProjectCoordinator, std::string(kUser));
  spec.name = "pc";
  spec.brief = final_mode
                   ? "Final-answer mode. The user's message states a problem to solve; the single approved goal is "
                     "g1, \"solve the problem\". Work on it directly or through workstreams and give your answer "
                     "with final_answer before the time limit."
                   : "Act as a sounding board for the user's research idea. Once the central question is clear, "
                     "propose high-level goals with propose_goals and wait for the user to approve them. Start "
                     "workstreams only on approved goals.";
  return spec;
}

}  // namespace

std::unique_ptr<Project> Project::start(ProjectOptions options, const std::string& brief,
                                        const std::vector<std::pair<std::string, std::string>>& attachments) {
  if (normalize_text(brief).empty()) throw Error(ErrorCode::InvalidSpec, "the brief is empty");
  std::unique_ptr<Project> p(new Project(std::move(options)));
  std::lock_guard lock(p->mu_);
  p->runtime_->spawn(coordinator_spec(false));
  std::vector<std::string> paths;
  for (const auto& [name, content] : attachments) paths.push_back(p->upload(name, content));
  p->handle_user_message(brief, paths);
  return p;
}

std::unique_ptr<Project> Project::start_final_answer(ProjectOptions options, const std::string& problem) {
  if (normalize_text(problem).empty()) throw Error(ErrorCode::InvalidSpec, "the problem is empty");
  std::unique_ptr<Project> p(new Project(std::move(options)));
  std::lock_guard lock(p->mu_);
  p->mode_ = ProjectMode::FinalAnswer;
  p->state_ = ProjectState::Active;
  p->research_question_ = problem;
  p->goals_.push_back(Goal{"g1", "solve the problem", GoalStatus::Approved, {}});
  p->next_goal_ = 2;
  p->runtime_->spawn(coordinator_spec(true));
  p->emit_goals();
  p->handle_user_message(problem);
  return p;
}

std::unique_ptr<Project> Project::open(ProjectOptions options) {
  if (!options.dir) throw Error(ErrorCode::Persistence, "no project directory");
  const fs::path file = *options.dir / "state" / "engine.json";
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::Persistence, "cannot read " + file.string());
  Json state;
  try {
    state = Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::Persistence, file.string() + ": " + e.what());
  }
  options.id = state.at("id").get<std::string>();
  std::unique_ptr<Project> p(new Project(std::move(options)));
  std::lock_guard lock(p->mu_);
  p->restore(state);
  return p;
}

Json Project::state_json() const {
  std::lock_guard lock(mu_);
  return Json{{"format", 1},
              {"id", id_},
              {"mode", to_string(mode_)},
              {"state", to_string(state_)},
              {"research_question", research_question_},
              {"goals", goals_},
              {"workstreams", workstreams_},
              {"chat", chat_},
              {"alerts", alerts_},
              {"final_answer", final_answer_ ? Json(*final_answer_) : Json(nullptr)},
              {"forced", forced_},
              {"cursor", cursor_},
              {"next_goal", next_goal_},
              {"next_ws", next_ws_},
              {"clock", clock_->peek()},
              {"bus", bus_->state()},
              {"runtime", runtime_->state()},
              {"reviews", reviews_->state()},
              {"gateway", gateway_->state()},
              {"tools", tools_->state()}};
}

void Project::restore(const Json& s) {
  try {
    mode_ = s.at("mode").get<std::string>() == "final_answer" ? ProjectMode::FinalAnswer : ProjectMode::Interactive;
    state_ = parse_project_state(s.at("state").get<std::string>());
    research_question_ = s.at("research_question");
    goals_ = s.at("goals").get<std::vector<Goal>>();
    workstreams_ = s.at("workstreams").get<std::vector<Workstream>>();
    chat_ = s.at("chat").get<std::vector<ChatEntry>>();
    alerts_ = s.at("alerts").get<std::vector<AlertEntry>>();
    final_answer_.reset();
    if (s.at("final_answer").is_object()) final_answer_ = s["final_answer"].get<FinalAnswer>();
    forced_ = s.at("forced");
    cursor_ = s.at("cursor");
    next_goal_ = s.at("next_goal");
    next_ws_ = s.at("next_ws");
    clock_->restore(s.at("clock").get<std::int64_t>());
    bus_->restore(s.at("bus"));
    runtime_->restore(s.at("runtime"));
    reviews_->restore(s.at("reviews"));
    gateway_->restore(s.at("gateway"));
    tools_->restore(s.at("tools"));
    events_->reload();
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::Persistence, std::string("engine state: ") + e.what());
  }
}

void Project::persist() {
  if (!options_.dir) return;
  const fs::path dir = *options_.dir / "state";
  fs::create_directories(dir);
  const fs::path tmp = dir / "engine.json.tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << state_json().dump(1) << "\n";
    out.flush();
    if (!out) throw Error(ErrorCode::Persistence, "cannot write " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, dir / "engine.json", ec);
  if (ec) throw Error(ErrorCode::Persistence, "cannot replace engine state: " + ec.message());
}

std::string Project::upload(const std::string& name, const std::string& content) {
  std::lock_guard lock(mu_);
  if (name.empty() || name.find('/') != std::string::npos || name == "." || name == "..") {
    throw Error(ErrorCode::InvalidPath, "upload name '" + name + "'");
  }
  const std::string path = "uploads/" + name;
  workspace_->write_file(path, content, std::string(kUser));
  persist();
  return path;
}

std::string Project::record_user_message(const Message& m) {
  ChatEntry c{m.id, m.sender, m.recipient, std::string(to_string(m.kind)), m.body, m.attachments, clock_->now()};
  events_->emit(EventKind::ChatMessage, Json{{"message_id", c.message_id},
                                             {"from", c.from},
                                             {"to", c.to},
                                             {"kind", c.kind},
                                             {"body", c.body},
                                             {"attachments", c.attachments}});
  chat_.push_back(std::move(c));
  return m.id;
}

std::string Project::handle_user_message(const std::string& text, const std::vector<std::string>& attachments) {
  std::lock_guard lock(mu_);
  Message m;
  m.sender = std::string(kUser);
  m.recipient = "pc";
  m.kind = MessageKind::UserChat;
  m.body = text;
  if (!attachments.empty()) {
    m.body += "\n\nAttached:";
    for (const auto& a : attachments) m.body += " " + a;
  }
  m.attachments = attachments;
  m.id = bus_->send(m);
  record_user_message(m);
  persist();
  return m.id;
}

void Project::force_final_answer(const std::string& text) {
  std::lock_guard lock(mu_);
  Message m;
  m.sender = std::string(kUser);
  m.recipient = "pc";
  m.kind = MessageKind::Instruction;
  m.body = text;
  m.id = bus_->send(m);
  forced_ = true;
  record_user_message(m);
  persist();
}

Goal& Project::goal_ref(const std::string& key) {
  for (auto& g : goals_) {
    if (g.id == key) return g;
  }
  // Agents sometimes name goals by position or by text.
  if (!key.empty() && std::all_of(key.begin(), key.end(), [](unsigned char c) { return std::isdigit(c); })) {
    const std::size_t idx = std::stoul(key);
    if (idx >= 1 && idx <= goals_.size()) return goals_[idx - 1];
  }
  for (auto& g : goals_) {
    if (normalize_text(g.text) == normalize_text(key)) return g;
  }
  throw Error(ErrorCode::UnknownGoal, key);
}

Workstream& Project::ws_ref(const std::string& id) {
  for (auto& w : workstreams_) {
    if (w.id == id) return w;
  }
  throw Error(ErrorCode::UnknownWorkstream, id);
}

void Project::emit_goals() {
  events_->emit(EventKind::GoalUpdate, Json{{"state", to_string(state_)},
                                            {"research_question", research_question_},
                                            {"goals", goals_}});
}

void Project::emit_status(const Workstream& ws) {
  events_->emit(EventKind::WorkstreamStatus, Json{{"workstream", ws.id},
                                                  {"goal", ws.goal},
                                                  {"title", ws.title},
                                                  {"status", to_string(ws.status)},
                                                  {"warnings", ws.warnings},
                                                  {"summary", ws.summary}});
}

void Project::set_status(Workstream& ws, WorkstreamStatus to) {
  if (is_terminal(ws.status) || !transition_allowed(ws.status, to)) {
    throw Error(ErrorCode::InvalidState, ws.id + ": " + std::string(to_string(ws.status)) + " -> " +
                                             std::string(to_string(to)) + " is not a legal transition");
  }
  ws.transitions.push_back({ws.status, to, clock_->now()});
  ws.status = to;
  emit_status(ws);
}

void Project::apply_proposal(const std::string& question, const std::vector<std::string>& goals) {
  if (goals.empty()) throw Error(ErrorCode::MalformedProposal, "no goals proposed");
  if (!question.empty()) research_question_ = question;
  if (state_ == ProjectState::Active) {
    for (const auto& text : goals) {
      goals_.push_back(Goal{"g" + std::to_string(next_goal_++), text, GoalStatus::Proposed, {}});
    }
  } else {
    // A revision rewrites the open proposal position by position.
    std::vector<Goal> kept;
    std::size_t i = 0;
    for (auto& g : goals_) {
      if (g.status == GoalStatus::Approved) {
        kept.push_back(g);
      } else if (i < goals.size()) {
        g.text = goals[i++];
        kept.push_back(g);
      }
    }
    for (; i < goals.size(); ++i) kept.push_back(Goal{"g" + std::to_string(next_goal_++), goals[i], GoalStatus::Proposed, {}});
    goals_ = std::move(kept);
    state_ = ProjectState::GoalsProposed;
  }
  emit_goals();
}

void Project::approve_goals(const std::string& caller, const std::map<std::string, GoalDecision>& decisions) {
  std::lock_guard lock(mu_);
  if (caller != kUser) throw Error(ErrorCode::NotUser, "goal approval belongs to the user, not " + caller);
  if (state_ == ProjectState::Onboarding) throw Error(ErrorCode::InvalidState, "no goals have been proposed");
  std::vector<std::pair<Goal*, const GoalDecision*>> chosen;
  for (const auto& [id, d] : decisions) {
    Goal& g = goal_ref(id);
    if (d.approve && g.status == GoalStatus::Proposed) chosen.emplace_back(&g, &d);
  }
  if (chosen.empty()) throw Error(ErrorCode::NoGoalsApproved, "no proposed goal was approved");
  std::string body = "Goals approved:";
  for (auto& [g, d] : chosen) {
    if (d->edit && !normalize_text(*d->edit).empty()) g->text = *d->edit;
    g->status = GoalStatus::Approved;
    body += "\n- " + g->id + ": " + g->text;
  }
  state_ = ProjectState::Active;
  emit_goals();
  Message m;
  m.sender = std::string(kUser);
  m.recipient = "pc";
  m.kind = MessageKind::UserChat;
  m.body = body;
  m.id = bus_->send(m);
  record_user_message(m);
  persist();
}

std::string Project::create_workstream_locked(const std::string& goal, const std::string& instructions,
                                              const std::string& title,
                                              const std::optional<std::string>& continue_from) {
  Goal& g = goal_ref(goal);
  if (g.status != GoalStatus::Approved) throw Error(ErrorCode::GoalNotApproved, g.id);
  std::optional<Report> seed;
  if (continue_from && !continue_from->empty()) seed = reports_->load(ws_ref(*continue_from).id);
  const std::string id = "ws" + std::to_string(next_ws_++);
  const std::string report_title = title.empty() ? g.text : title;
  reports_->create(id, report_title, "engine", seed);

  AgentSpec spec = default_spec(Role::WorkstreamCoordinator, "pc", id);
  spec.brief = "Research question: " + research_question_ + "\nGoal " + g.id + ": " + g.text +
               (instructions.empty() ? std::string() : "\nInstructions: " + instructions) + "\nWorkstream " + id +
               "; working report at " + ReportStore::path_for(id) + ".";
  if (continue_from && !continue_from->empty()) spec.brief += "\nContinues from workstream " + *continue_from + ".";
  Workstream ws;
  ws.id = id;
  ws.goal = g.id;
  ws.title = report_title;
  ws.instructions = instructions;
  ws.report_path = ReportStore::path_for(id);
  ws.coordinator = runtime_->spawn(std::move(spec));
  g.workstreams.push_back(id);
  workstreams_.push_back(std::move(ws));
  emit_status(workstreams_.back());
  events_->emit(EventKind::ReportUpdated, Json{{"workstream", id}, {"version", 1}, {"status", "incremental"}});
  return id;
}

std::string Project::create_workstream(const std::string& goal, const std::string& instructions,
                                       const std::string& title, const std::optional<std::string>& continue_from) {
  std::lock_guard lock(mu_);
  const std::string id = create_workstream_locked(goal, instructions, title, continue_from);
  persist();
  return id;
}

void Project::terminate_tree(const std::string& agent) {
  runtime_->terminate(agent);
  for (const auto& d : runtime_->descendants(agent)) runtime_->terminate(d);
}

void Project::conclude_locked(Workstream& ws, WorkstreamStatus outcome, const std::string& summary) {
  if (is_terminal(ws.status)) throw Error(ErrorCode::InvalidState, ws.id + " has already concluded");
  if (!is_terminal(outcome)) throw Error(ErrorCode::InvalidState, "not a terminal outcome");
  if (outcome == WorkstreamStatus::Completed) {
    const auto session = reviews_->latest_for(ws.id);
    if (!session || session->status != SessionStatus::Approved) {
      throw Error(ErrorCode::GateViolation, ws.id + " has no approved review");
    }
    const Report report = reports_->load(ws.id);
    if (report.status != ReportStatus::Final) throw Error(ErrorCode::GateViolation, ws.id + " report is not final");
    if (has_blocking(validate_report(report, *workspace_, true))) {
      throw Error(ErrorCode::GateViolation, ws.id + " report has blocking defects");
    }
  } else if (normalize_text(summary).empty()) {
    throw Error(ErrorCode::GateViolation, "a failed or unfinished workstream needs a summary");
  }
  if (!transition_allowed(ws.status, outcome)) {
    throw Error(ErrorCode::GateViolation, ws.id + " cannot conclude " + std::string(to_string(outcome)) + " while " +
                                              std::string(to_string(ws.status)));
  }
  ws.summary = summary;
  if (outcome != WorkstreamStatus::Completed) {
    ws.warnings.push_back("Workstream " + ws.id + " " + std::string(to_string(outcome)) + ": " + summary);
  }
  set_status(ws, outcome);
  Message m;
  m.sender = ws.coordinator;
  m.recipient = runtime_->spec(ws.coordinator).parent;
  m.kind = MessageKind::StatusUpdate;
  m.body = "Workstream " + ws.id + " concluded " + std::string(to_string(outcome)) + ": " + summary;
  bus_->send(m);
  terminate_tree(ws.coordinator);
}

void Project::conclude_workstream(const std::string& workstream, WorkstreamStatus outcome, const std::string& summary) {
  std::lock_guard lock(mu_);
  conclude_locked(ws_ref(workstream), outcome, summary);
  persist();
}

void Project::drain_user_mailbox() {
  for (const auto& m : bus_->poll(kUser, SIZE_MAX)) {
    switch (m.kind) {
      case MessageKind::Alert: {
        AlertEntry a{m.id, m.sender, m.body, m.attachments, m.in_reply_to, clock_->now()};
        events_->emit(EventKind::Alert, Json{{"message_id", a.message_id},
                                             {"from", a.from},
                                             {"body", a.body},
                                             {"attachments", a.attachments},
                                             {"in_reply_to", opt_json(a.in_reply_to)}});
        alerts_.push_back(std::move(a));
        break;
      }
      case MessageKind::FinalAnswer: {
        if (final_answer_) break;
        FinalAnswer f{m.body, clock_->now(), forced_, std::nullopt};
        events_->emit(EventKind::FinalAnswer,
                      Json{{"message_id", m.id}, {"text", f.text}, {"forced", f.forced}, {"produced_at", f.produced_at}});
        final_answer_ = std::move(f);
        break;
      }
      default: {
        ChatEntry c{m.id, m.sender, m.recipient, std::string(to_string(m.kind)), m.body, m.attachments, clock_->now()};
        events_->emit(EventKind::ChatMessage, Json{{"message_id", c.message_id},
                                                   {"from", c.from},
                                                   {"to", c.to},
                                                   {"kind", c.kind},
                                                   {"body", c.body},
                                                   {"attachments", c.attachments}});
        chat_.push_back(std::move(c));
      }
    }
  }
}

TickSummary Project::tick(std::size_t budget) {
  std::lock_guard lock(mu_);
  TickSummary summary;
  while (summary.steps < budget) {
    const auto agents = runtime_->agents();
    std::optional<std::size_t> chosen;
    for (std::size_t i = 0; i < agents.size(); ++i) {
      const std::size_t idx = (cursor_ + i) % agents.size();
      if (reviews_->is_reviewer(agents[idx])) continue;
      if (runtime_->runnable(agents[idx])) {
        chosen = idx;
        break;
      }
    }
    if (!chosen) break;
    const std::string agent = agents[*chosen];
    cursor_ = *chosen + 1;
    for (auto& ws : workstreams_) {
      if (ws.coordinator == agent && ws.status == WorkstreamStatus::Pending) set_status(ws, WorkstreamStatus::Running);
    }
    try {
      summary.records += runtime_->step(agent, *executor_).size();
    } catch (const Error& e) {
      // Engine-side failures surface as escalations instead of stopping the project.
      runtime_->set_idle(agent, true);
      try {
        bus_->escalate(agent, std::string("step failed: ") + e.what(), {});
      } catch (const Error&) {
      }
    }
    drain_user_mailbox();
    ++summary.steps;
    summary.agents.push_back(agent);
  }
  drain_user_mailbox();
  persist();
  return summary;
}

bool Project::quiescent() const {
  std::lock_guard lock(mu_);
  for (const auto& a : runtime_->agents()) {
    if (!reviews_->is_reviewer(a) && runtime_->runnable(a)) return false;
  }
  return true;
}

std::size_t Project::run_until_quiescent(std::size_t max_steps) {
  std::size_t steps = 0;
  while (steps < max_steps && !quiescent()) steps += tick(1).steps;
  return steps;
}

std::string Project::context_for(const AgentSpec& spec) const {
  if (spec.role == Role::Reviewer) return {};
  if (spec.role == Role::ProjectCoordinator) {
    std::ostringstream out;
    out << "Project " << id_ << " (" << to_string(state_) << ", " << to_string(mode_) << ")";
    if (!research_question_.empty()) out << "\nQuestion: " << research_question_;
    for (const auto& g : goals_) out << "\nGoal " << g.id << " [" << to_string(g.status) << "]: " << g.text;
    for (const auto& w : workstreams_) {
      out << "\nWorkstream " << w.id << " (goal " << w.goal << "): " << to_string(w.status);
    }
    return out.str();
  }
  if (spec.workstream.empty() || !reports_->exists(spec.workstream)) return {};
  const Report r = reports_->load(spec.workstream);
  std::ostringstream out;
  out << "Report " << spec.workstream << " v" << reports_->latest_version(spec.workstream) << " ("
      << to_string(r.status) << "): " << r.title;
  for (const auto& b : r.blocks) out << "\n- " << b.id << " [" << to_string(b.kind) << "] " << excerpt(b.text, 100);
  std::size_t live = 0;
  for (const auto& n : r.annotations) live += (!n.dangling && !n.superseded) ? 1 : 0;
  out << "\nNotes: " << live << "; references: " << r.references.size();
  return out.str();
}

ProjectState Project::state() const {
  std::lock_guard lock(mu_);
  return state_;
}

ProjectMode Project::mode() const {
  std::lock_guard lock(mu_);
  return mode_;
}

std::string Project::research_question() const {
  std::lock_guard lock(mu_);
  return research_question_;
}

std::vector<Goal> Project::goals() const {
  std::lock_guard lock(mu_);
  return goals_;
}

std::vector<Workstream> Project::workstreams() const {
  std::lock_guard lock(mu_);
  return workstreams_;
}

Workstream Project::workstream(const std::string& id) const {
  std::lock_guard lock(mu_);
  return const_cast<Project*>(this)->ws_ref(id);
}

std::optional<std::string> Project::workstream_of(const std::string& agent) const {
  std::lock_guard lock(mu_);
  if (!runtime_->exists(agent)) return std::nullopt;
  const std::string ws = runtime_->spec(agent).workstream;
  if (ws.empty()) return std::nullopt;
  return ws;
}

std::vector<ChatEntry> Project::chat() const {
  std::lock_guard lock(mu_);
  return chat_;
}

std::vector<AlertEntry> Project::alerts() const {
  std::lock_guard lock(mu_);
  return alerts_;
}

std::optional<FinalAnswer> Project::final_answer() const {
  std::lock_guard lock(mu_);
  return final_answer_;
}

std::vector<ActionRecord> Project::trajectory(const std::string& agent) const {
  std::lock_guard lock(mu_);
  return runtime_->trajectory(agent);
}

Json Project::summary_json() const {
  std::lock_guard lock(mu_);
  Json ws = Json::array();
  for (const auto& w : workstreams_) {
    ws.push_back({{"id", w.id},
                  {"goal", w.goal},
                  {"title", w.title},
                  {"coordinator", w.coordinator},
                  {"status", to_string(w.status)},
                  {"warnings", w.warnings},
                  {"review_session", opt_json(w.review_session)},
                  {"report_version", reports_->exists(w.id) ? reports_->latest_version(w.id) : 0}});
  }
  return Json{{"id", id_},
              {"mode", to_string(mode_)},
              {"state", to_string(state_)},
              {"research_question", research_question_},
              {"goals", goals_},
              {"workstreams", ws},
              {"chat_messages", chat_.size()},
              {"alerts", alerts_},
              {"final_answer", final_answer_ ? Json(*final_answer_) : Json(nullptr)},
              {"last_event", events_->last_id()},
              {"agents", runtime_->agents()}};
}

std::chrono::milliseconds grace_period(std::chrono::milliseconds deadline) {
  using std::chrono::milliseconds;
  return std::min(std::max(milliseconds(5000), deadline / 100), deadline / 2);
}

FinalAnswer run_final_answer_mode(ProjectOptions options, const std::string& problem,
                                  std::chrono::milliseconds deadline, std::optional<std::chrono::milliseconds> grace,
                                  std::unique_ptr<Project>* out_project) {
  using Steady = std::chrono::steady_clock;
  if (deadline.count() <= 0) throw Error(ErrorCode::InvalidSpec, "the time limit must be positive");
  const auto g = grace.value_or(grace_period(deadline));
  const auto begin = Steady::now();
  const auto force_at = begin + deadline - g;
  const auto hard_end = begin + deadline + g;
  std::unique_ptr<Project> project = Project::start_final_answer(std::move(options), problem);
  bool forced = false;
  while (!project->final_answer()) {
    const auto now = Steady::now();
    if (now >= hard_end) break;
    if (!forced && now >= force_at) {
      project->force_final_answer(std::string(kForcedAnswerText));
      forced = true;
    }
    if (project->quiescent()) {
      const auto next = forced ? hard_end : force_at;
      std::this_thread::sleep_for(std::min<Steady::duration>(std::chrono::milliseconds(20), next - now));
    } else {
      project->tick(1);
    }
  }
  FinalAnswer answer;
  if (auto a = project->final_answer()) {
    answer = *a;
  } else {
    answer.text = "";
    answer.forced = true;
    answer.produced_at = project->clock().now();
    answer.error = std::string(to_string(ErrorCode::NoAnswer)) + ": no final answer before the hard deadline";
  }
  if (out_project) *out_project = std::move(project);
  return answer;
}

}  // namespace quire
