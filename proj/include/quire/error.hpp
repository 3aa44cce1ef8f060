#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace quire {

enum class ErrorCode {
  // workspace
  InvalidPath,
  VersionConflict,
  NotFound,
  VersionOutOfRange,
  Persistence,
  // bus
  UnknownRecipient,
  UnknownSender,
  RoutingViolation,
  InvalidAttachment,
  // model
  BackendTimeout,
  BackendUnavailable,
  ScriptMismatch,
  ScriptExhausted,
  FixtureParseError,
  DisallowedTool,
  UnparseableAction,
  // tools
  RuntimeUnavailable,
  SandboxSetupFailure,
  InvalidJob,
  ProviderUnavailable,
  QueryNotInFixture,
  FetchDenied,
  FetchFailed,
  // agent-core
  SpawnDenied,
  InvalidSpec,
  UnknownAgent,
  AgentTerminated,
  // review
  ReportNotFound,
  SessionClosed,
  NotStalled,
  // report
  UnknownBlock,
  DanglingAnchor,
  BadLocator,
  // engine
  MalformedProposal,
  NotUser,
  NoGoalsApproved,
  GoalNotApproved,
  GateViolation,
  InvalidState,
  UnknownWorkstream,
  UnknownGoal,
  NoAnswer,
  // api
  BindFailure,
  ConfigError,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace quire
