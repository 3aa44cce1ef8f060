#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "quire/bus.hpp"
#include "quire/common.hpp"
#include "quire/report.hpp"

namespace quire {

enum class Role { ProjectCoordinator, WorkstreamCoordinator, Reviewer, LiteratureAgent, CodingAgent, ProverAgent };

std::string_view to_string(Role role) noexcept;
Role parse_role(std::string_view s);
/// Short tag used in generated agent ids, e.g. "code" in "ws3.code1".
std::string_view role_code(Role role) noexcept;
bool can_spawn(Role role) noexcept;

struct AgentSpec {
  Role role = Role::CodingAgent;
  std::string prompt_profile;  // empty = role default
  std::set<std::string> tool_allowlist;
  std::string parent;
  std::string backend_binding;  // empty = role name
  std::string brief;
  std::string workstream;  // empty for project-level agents
  std::optional<std::string> name;

  bool operator==(const AgentSpec&) const = default;
};

void to_json(Json& j, const AgentSpec& s);
void from_json(const Json& j, AgentSpec& s);

/// Spec with the role's default allowlist and profile.
AgentSpec default_spec(Role role, std::string parent, std::string workstream = {});
std::set<std::string> default_allowlist(Role role);
/// Tools every agent of the role may call regardless of its allowlist.
const std::set<std::string>& builtin_tools(Role role);
/// Built-ins plus the allowlist.
std::set<std::string> allowed_tools(const AgentSpec& spec);

inline constexpr std::string_view kExternalTools[] = {"search_literature", "fetch_document", "execute_code",
                                                      "execute_parallel"};
bool is_external_tool(std::string_view name) noexcept;
bool is_builtin_tool(std::string_view name) noexcept;

struct ToolSchema {
  std::string name;
  std::string description;
  Json parameters;
};

/// Descriptor for any known tool. Throws DisallowedTool for unknown names.
const ToolSchema& tool_schema(std::string_view name);

namespace act {

struct CallTool {
  std::string name;
  Json arguments;
};
struct SendMessage {
  std::string to;  // agent id, "parent", "user", or a workstream id
  std::optional<MessageKind> kind;
  std::string body;
  std::vector<std::string> attachments;
  std::optional<std::string> in_reply_to;
};
struct UpdateReport {
  ReportDelta delta;
};
struct SpawnSubAgent {
  AgentSpec spec;
};
struct SubmitForReview {
  std::optional<std::uint64_t> version;
};
struct MarkComplete {
  std::string summary;
};
struct Escalate {
  std::string body;
  std::vector<std::string> attachments;
  bool synthesized = false;
};
struct GiveFinalAnswer {
  std::string text;
};
struct Wait {};
struct ProposeGoals {
  std::string research_question;
  std::vector<std::string> goals;
};
struct CreateWorkstream {
  std::string goal;
  std::string instructions;
  std::string title;
  std::optional<std::string> continue_from;
};
struct AbandonWorkstream {
  std::string summary;
};

}  // namespace act

using Action = std::variant<act::CallTool, act::SendMessage, act::UpdateReport, act::SpawnSubAgent,
                            act::SubmitForReview, act::MarkComplete, act::Escalate, act::GiveFinalAnswer, act::Wait,
                            act::ProposeGoals, act::CreateWorkstream, act::AbandonWorkstream>;

/// Trajectory label: the tool name for CallTool, the action type otherwise.
std::string action_label(const Action& action);
Json action_to_json(const Action& action);

/// Maps one tool call to an action. Throws UnparseableAction on bad
/// arguments and MalformedProposal on an empty goal list.
Action action_from_call(const std::string& name, const Json& arguments);

}  // namespace quire
