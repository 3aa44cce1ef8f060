#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "quire/common.hpp"

namespace quire {

class Workspace;

enum class EventKind { ChatMessage, GoalUpdate, WorkstreamStatus, ReportUpdated, Alert, FinalAnswer };

std::string_view to_string(EventKind kind) noexcept;
EventKind parse_event_kind(std::string_view s);

struct ProjectEvent {
  std::uint64_t id = 0;
  EventKind kind = EventKind::ChatMessage;
  Json payload = Json::object();
  std::int64_t at = 0;

  bool operator==(const ProjectEvent&) const = default;
};

void to_json(Json& j, const ProjectEvent& e);
void from_json(const Json& j, ProjectEvent& e);

/// One event-stream frame: "id: N\nevent: kind\ndata: <json>\n\n".
std::string encode_event(const ProjectEvent& e);

/// Gap-free, append-only event log of one project, mirrored to
/// `events/log.jsonl`.
class EventLog {
 public:
  static constexpr std::string_view kLogPath = "events/log.jsonl";

  EventLog(Workspace* workspace, std::shared_ptr<Clock> clock);

  std::uint64_t emit(EventKind kind, Json payload);
  /// Events with id > after, at most `max` of them.
  std::vector<ProjectEvent> after(std::uint64_t after, std::size_t max = SIZE_MAX) const;
  std::uint64_t last_id() const;
  /// Blocks until an event with id > after exists or the timeout passes.
  bool wait_for(std::uint64_t after, std::chrono::milliseconds timeout) const;
  /// Wakes every waiter; used on shutdown.
  void notify_all() const;

  /// Reloads the log from the workspace.
  void reload();

 private:
  Workspace* workspace_;
  std::shared_ptr<Clock> clock_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::vector<ProjectEvent> events_;
};

}  // namespace quire
