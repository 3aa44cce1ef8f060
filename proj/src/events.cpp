#include "quire/events.hpp"

#include <sstream>

#include "quire/error.hpp"
#include "quire/workspace.hpp"

namespace quire {

namespace {

constexpr std::pair<EventKind, std::string_view> kKinds[] = {
    {EventKind::ChatMessage, "chat_message"},        {EventKind::GoalUpdate, "goal_update"},
    {EventKind::WorkstreamStatus, "workstream_status"}, {EventKind::ReportUpdated, "report_updated"},
    {EventKind::Alert, "alert"},                     {EventKind::FinalAnswer, "final_answer"},
};

std::string dump_line(const Json& j) { return j.dump(-1, ' ', false, Json::error_handler_t::replace); }

}  // namespace

std::string_view to_string(EventKind kind) noexcept {
  for (const auto& [k, name] : kKinds) {
    if (k == kind) return name;
  }
  return "chat_message";
}

EventKind parse_event_kind(std::string_view s) {
  for (const auto& [k, name] : kKinds) {
    if (name == s) return k;
  }
  throw Error(ErrorCode::Persistence, "unknown event kind " + std::string(s));
}

void to_json(Json& j, const ProjectEvent& e) {
  j = Json{{"id", e.id}, {"kind", to_string(e.kind)}, {"payload", e.payload}, {"at", e.at}};
}

void from_json(const Json& j, ProjectEvent& e) {
  j.at("id").get_to(e.id);
  e.kind = parse_event_kind(j.at("kind").get<std::string>());
  e.payload = j.at("payload");
  j.at("at").get_to(e.at);
}

std::string encode_event(const ProjectEvent& e) {
  Json data = e.payload;
  return "id: " + std::to_string(e.id) + "\nevent: " + std::string(to_string(e.kind)) + "\ndata: " + dump_line(data) +
         "\n\n";
}

EventLog::EventLog(Workspace* workspace, std::shared_ptr<Clock> clock)
    : workspace_(workspace), clock_(std::move(clock)) {}

std::uint64_t EventLog::emit(EventKind kind, Json payload) {
  std::lock_guard lock(mu_);
  ProjectEvent e;
  e.id = events_.size() + 1;
  e.kind = kind;
  e.payload = std::move(payload);
  e.at = clock_ ? clock_->now() : 0;
  if (workspace_ != nullptr) workspace_->append_file(kLogPath, dump_line(Json(e)) + "\n", "engine");
  events_.push_back(std::move(e));
  cv_.notify_all();
  return events_.back().id;
}

std::vector<ProjectEvent> EventLog::after(std::uint64_t after, std::size_t max) const {
  std::lock_guard lock(mu_);
  std::vector<ProjectEvent> out;
  for (std::size_t i = after; i < events_.size() && out.size() < max; ++i) out.push_back(events_[i]);
  return out;
}

std::uint64_t EventLog::last_id() const {
  std::lock_guard lock(mu_);
  return events_.size();
}

bool EventLog::wait_for(std::uint64_t after, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  return cv_.wait_for(lock, timeout, [&] { return events_.size() > after; });
}

void EventLog::notify_all() const { cv_.notify_all(); }

void EventLog::reload() {
  std::lock_guard lock(mu_);
  events_.clear();
  if (workspace_ == nullptr || !workspace_->exists(kLogPath)) return;
  std::istringstream in(workspace_->read_file(kLogPath));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ProjectEvent e = Json::parse(line).get<ProjectEvent>();
    if (e.id != events_.size() + 1) throw Error(ErrorCode::Persistence, "event log has a gap at " + std::to_string(e.id));
    events_.push_back(std::move(e));
  }
}

}  // namespace quire
