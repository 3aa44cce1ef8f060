#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "quire/agent.hpp"
#include "quire/bus.hpp"
#include "quire/events.hpp"
#include "quire/model.hpp"
#include "quire/report.hpp"
#include "quire/review.hpp"
#include "quire/tools.hpp"
#include "quire/workspace.hpp"

namespace quire {

enum class ProjectState { Onboarding, GoalsProposed, Active };
enum class ProjectMode { Interactive, FinalAnswer };
enum class GoalStatus { Proposed, Approved };
enum class WorkstreamStatus { Pending, Running, InReview, Completed, Failed, Unfinished };

std::string_view to_string(ProjectState s) noexcept;
std::string_view to_string(ProjectMode m) noexcept;
std::string_view to_string(GoalStatus s) noexcept;
std::string_view to_string(WorkstreamStatus s) noexcept;
WorkstreamStatus parse_workstream_status(std::string_view s);

bool is_terminal(WorkstreamStatus s) noexcept;
/// The declared workstream transition relation.
bool transition_allowed(WorkstreamStatus from, WorkstreamStatus to) noexcept;

struct Goal {
  std::string id;
  std::string text;
  GoalStatus status = GoalStatus::Proposed;
  std::vector<std::string> workstreams;
};

struct Transition {
  WorkstreamStatus from = WorkstreamStatus::Pending;
  WorkstreamStatus to = WorkstreamStatus::Pending;
  std::int64_t at = 0;
};

struct Workstream {
  std::string id;
  std::string goal;
  std::string coordinator;
  std::string title;
  std::string instructions;
  WorkstreamStatus status = WorkstreamStatus::Pending;
  std::string report_path;
  std::vector<std::string> warnings;
  std::optional<std::string> review_session;
  /// Report version the latest approval covers, after engine bookkeeping.
  std::optional<std::uint64_t> approved_version;
  std::string summary;
  std::vector<Transition> transitions;
};

struct ChatEntry {
  std::string message_id;
  std::string from;
  std::string to;
  std::string kind;
  std::string body;
  std::vector<std::string> attachments;
  std::int64_t at = 0;
};

struct AlertEntry {
  std::string message_id;
  std::string from;
  std::string body;
  std::vector<std::string> attachments;
  std::optional<std::string> in_reply_to;
  std::int64_t at = 0;
};

struct FinalAnswer {
  std::string text;
  std::int64_t produced_at = 0;
  bool forced = false;
  std::optional<std::string> error;
};

struct TickSummary {
  std::size_t steps = 0;
  std::vector<std::string> agents;
  std::size_t records = 0;
};

void to_json(Json& j, const Goal& g);
void from_json(const Json& j, Goal& g);
void to_json(Json& j, const Workstream& w);
void from_json(const Json& j, Workstream& w);
void to_json(Json& j, const ChatEntry& c);
void from_json(const Json& j, ChatEntry& c);
void to_json(Json& j, const AlertEntry& a);
void from_json(const Json& j, AlertEntry& a);
void to_json(Json& j, const FinalAnswer& f);
void from_json(const Json& j, FinalAnswer& f);
void to_json(Json& j, const TickSummary& t);

/// Everything a project needs that is not part of its persisted state.
struct ProjectOptions {
  std::string id = "p1";
  /// Durable projects keep files under `<dir>/files` and engine state in
  /// `<dir>/state/engine.json`.
  std::optional<std::filesystem::path> dir;
  std::shared_ptr<BackendRouter> router;
  std::shared_ptr<SearchProvider> search;
  std::shared_ptr<FetchProvider> fetch;
  std::shared_ptr<SandboxPool> sandbox;
  std::string clock = "logical";
  ReviewConfig review;
  RuntimeConfig runtime;
};

struct GoalDecision {
  bool approve = true;
  std::optional<std::string> edit;  // approve with this wording
};

class EngineExecutor;

/// One research project. Every public member is safe to call from any thread;
/// mutations serialize on the project lock.
class Project {
 public:
  static std::unique_ptr<Project> start(ProjectOptions options, const std::string& brief,
                                        const std::vector<std::pair<std::string, std::string>>& attachments = {});
  /// Final-answer mode: no onboarding, one approved goal, the problem goes
  /// straight to the coordinator.
  static std::unique_ptr<Project> start_final_answer(ProjectOptions options, const std::string& problem);
  /// Reopens a durable project from `options.dir`. Throws Persistence.
  static std::unique_ptr<Project> open(ProjectOptions options);

  ~Project();
  Project(const Project&) = delete;
  Project& operator=(const Project&) = delete;

  std::string handle_user_message(const std::string& text, const std::vector<std::string>& attachments = {});
  /// Throws NotUser, NoGoalsApproved, UnknownGoal, InvalidState.
  void approve_goals(const std::string& caller, const std::map<std::string, GoalDecision>& decisions);
  /// Throws GoalNotApproved, UnknownGoal, UnknownWorkstream.
  std::string create_workstream(const std::string& goal, const std::string& instructions,
                                const std::string& title = {}, const std::optional<std::string>& continue_from = {});
  /// Throws GateViolation, InvalidState, UnknownWorkstream.
  void conclude_workstream(const std::string& workstream, WorkstreamStatus outcome, const std::string& summary);
  TickSummary tick(std::size_t budget);
  /// No agent can make progress without new input.
  bool quiescent() const;
  /// Ticks until quiescent or `max_steps` steps have run; returns the steps.
  std::size_t run_until_quiescent(std::size_t max_steps = 10000);
  /// Commits an uploaded file under `uploads/` and returns its path.
  std::string upload(const std::string& name, const std::string& content);
  /// Sends the coordinator the deadline instruction of final-answer mode.
  void force_final_answer(const std::string& text);

  const std::string& id() const noexcept { return id_; }
  ProjectState state() const;
  ProjectMode mode() const;
  std::string research_question() const;
  std::vector<Goal> goals() const;
  std::vector<Workstream> workstreams() const;
  Workstream workstream(const std::string& id) const;
  std::optional<std::string> workstream_of(const std::string& agent) const;
  std::vector<ChatEntry> chat() const;
  std::vector<AlertEntry> alerts() const;
  std::optional<FinalAnswer> final_answer() const;
  std::vector<ActionRecord> trajectory(const std::string& agent) const;
  Json summary_json() const;

  Workspace& workspace() noexcept { return *workspace_; }
  Bus& bus() noexcept { return *bus_; }
  AgentRuntime& runtime() noexcept { return *runtime_; }
  ReportStore& reports() noexcept { return *reports_; }
  ReviewManager& reviews() noexcept { return *reviews_; }
  EventLog& events() noexcept { return *events_; }
  ToolBox& tools() noexcept { return *tools_; }
  ModelGateway& gateway() noexcept { return *gateway_; }
  Clock& clock() noexcept { return *clock_; }

  Json state_json() const;

 private:
  friend class EngineExecutor;

  explicit Project(ProjectOptions options);
  void persist();
  void restore(const Json& state);
  void drain_user_mailbox();
  void set_status(Workstream& ws, WorkstreamStatus to);
  Workstream& ws_ref(const std::string& id);
  Goal& goal_ref(const std::string& id);
  void emit_goals();
  void emit_status(const Workstream& ws);
  std::string create_workstream_locked(const std::string& goal, const std::string& instructions,
                                       const std::string& title, const std::optional<std::string>& continue_from);
  void conclude_locked(Workstream& ws, WorkstreamStatus outcome, const std::string& summary);
  void terminate_tree(const std::string& agent);
  std::string context_for(const AgentSpec& spec) const;
  void apply_proposal(const std::string& question, const std::vector<std::string>& goals);
  std::string record_user_message(const Message& m);

  ProjectOptions options_;
  std::string id_;
  std::shared_ptr<Clock> clock_;
  std::unique_ptr<Workspace> workspace_;
  std::unique_ptr<Bus> bus_;
  std::unique_ptr<ModelGateway> gateway_;
  std::unique_ptr<AgentRuntime> runtime_;
  std::unique_ptr<ReportStore> reports_;
  std::unique_ptr<ReviewManager> reviews_;
  std::unique_ptr<ToolBox> tools_;
  std::unique_ptr<EventLog> events_;
  std::unique_ptr<EngineExecutor> executor_;

  mutable std::recursive_mutex mu_;
  ProjectState state_ = ProjectState::Onboarding;
  ProjectMode mode_ = ProjectMode::Interactive;
  std::string research_question_;
  std::vector<Goal> goals_;
  std::vector<Workstream> workstreams_;
  std::vector<ChatEntry> chat_;
  std::vector<AlertEntry> alerts_;
  std::optional<FinalAnswer> final_answer_;
  bool forced_ = false;
  std::size_t cursor_ = 0;
  std::uint64_t next_goal_ = 1;
  std::uint64_t next_ws_ = 1;
};

/// min(max(5 s, deadline / 100), deadline / 2).
std::chrono::milliseconds grace_period(std::chrono::milliseconds deadline);

/// Runs a final-answer project until the coordinator answers. At
/// deadline - grace the coordinator is told to answer now; at deadline + grace
/// the run ends with an empty, forced answer carrying an error marker.
FinalAnswer run_final_answer_mode(ProjectOptions options, const std::string& problem,
                                  std::chrono::milliseconds deadline,
                                  std::optional<std::chrono::milliseconds> grace = std::nullopt,
                                  std::unique_ptr<Project>* out_project = nullptr);

inline constexpr std::string_view kForcedAnswerText =
    "Time limit reached. Give your final answer now with the final_answer tool, even if it is incomplete.";

}  // namespace quire
