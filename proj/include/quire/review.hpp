#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "quire/agent.hpp"
#include "quire/common.hpp"
#include "quire/report.hpp"

namespace quire {

class Workspace;

struct Issue {
  std::string id;  // stable across rounds for identical (location, normalized text)
  Severity severity = Severity::Blocking;
  std::string location;  // block id or "global"
  std::string text;

  bool operator==(const Issue&) const = default;
};

std::string issue_id(std::string_view location, std::string_view text);
Issue make_issue(Severity severity, std::string location, std::string text);

struct Verdict {
  bool approve = true;
  std::vector<Issue> issues;  // empty iff approve

  bool operator==(const Verdict&) const = default;
};

/// Decodes the body of a ReviewVerdict message. Throws UnparseableAction.
Verdict parse_verdict_body(const std::string& body);

struct ReviewRound {
  std::uint64_t index = 0;  // 1-based
  std::uint64_t report_version = 0;
  std::map<std::string, Verdict> verdicts;
  std::set<std::string> open_issues;

  bool all_approve() const;
};

enum class SessionStatus { Open, Approved, Stalled };
std::string_view to_string(SessionStatus status) noexcept;

struct ReviewConfig {
  std::size_t n_reviewers = 3;
  std::size_t max_rounds = 5;
  std::size_t stall_window = 2;
  std::size_t max_reviewer_steps = 8;
};

struct ReviewSession {
  std::string id;
  std::string workstream;
  std::string coordinator;
  std::vector<std::string> reviewers;
  std::vector<ReviewRound> rounds;
  SessionStatus status = SessionStatus::Open;
  std::size_t max_rounds = 5;
  std::size_t stall_window = 2;
  std::optional<std::string> escalation;
  std::optional<std::string> issues_path;

  const ReviewRound* last() const { return rounds.empty() ? nullptr : &rounds.back(); }
};

void to_json(Json& j, const Issue& i);
void from_json(const Json& j, Issue& i);
void to_json(Json& j, const Verdict& v);
void from_json(const Json& j, Verdict& v);
void to_json(Json& j, const ReviewRound& r);
void from_json(const Json& j, ReviewRound& r);
void to_json(Json& j, const ReviewSession& s);
void from_json(const Json& j, ReviewSession& s);

/// True when the last round is not unanimous and either the round budget is
/// spent or the open issue set has not shrunk (each round a superset of the
/// one before) over the last `stall_window` rounds.
bool detect_stall(const ReviewSession& session);

/// Appends a round and recomputes the status. Throws SessionClosed.
void append_round(ReviewSession& session, ReviewRound round);

/// Review sessions of all workstreams of one project.
class ReviewManager {
 public:
  ReviewManager(Workspace& workspace, Bus& bus, AgentRuntime& runtime, ReportStore& reports, ReviewConfig config = {});

  static std::string path_for(std::string_view workstream);
  static std::string issues_path_for(std::string_view workstream);

  /// Spawns fresh reviewers under the coordinator. Throws ReportNotFound.
  ReviewSession open_review(const std::string& workstream, const std::string& coordinator,
                            std::uint64_t report_version, std::optional<std::size_t> n_reviewers = std::nullopt);

  /// Sends the report to every reviewer and steps each until it returns a
  /// verdict. Actions other than the verdict go to `executor`. Throws
  /// SessionClosed, ReportNotFound, InvalidState.
  ReviewRound run_round(const std::string& session_id, std::uint64_t report_version, ActionExecutor& executor);

  /// Writes the issue list, escalates from the coordinator with the report
  /// and the issues attached and returns the escalation id. Throws NotStalled,
  /// SessionClosed.
  std::string close_as_escalated(const std::string& session_id);

  ReviewSession session(const std::string& session_id) const;
  std::optional<ReviewSession> latest_for(const std::string& workstream) const;
  std::vector<ReviewSession> sessions_for(const std::string& workstream) const;
  bool is_reviewer(const std::string& agent) const;
  const ReviewConfig& config() const noexcept { return config_; }

  Json state() const;
  void restore(const Json& state);

 private:
  ReviewSession& get(const std::string& session_id);
  void persist(const std::string& workstream);

  Workspace& workspace_;
  Bus& bus_;
  AgentRuntime& runtime_;
  ReportStore& reports_;
  ReviewConfig config_;
  mutable std::recursive_mutex mu_;
  std::vector<ReviewSession> sessions_;
  std::set<std::string> reviewers_;
};

}  // namespace quire
