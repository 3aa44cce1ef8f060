#include <algorithm>
#include <map>

#include "quire/agent_types.hpp"
#include "quire/error.hpp"

namespace quire {

namespace {

constexpr std::pair<Role, std::string_view> kRoles[] = {
    {Role::ProjectCoordinator, "project_coordinator"},
    {Role::WorkstreamCoordinator, "workstream_coordinator"},
    {Role::Reviewer, "reviewer"},
    {Role::LiteratureAgent, "literature_agent"},
    {Role::CodingAgent, "coding_agent"},
    {Role::ProverAgent, "prover_agent"},
};

const std::set<std::string> kPcBuiltins = {"send_message", "escalate",          "final_answer", "wait",
                                           "propose_goals", "create_workstream", "spawn_agent"};
const std::set<std::string> kWcBuiltins = {"send_message",      "update_report", "spawn_agent",
                                           "submit_for_review", "mark_complete", "escalate",
                                           "abandon_workstream", "wait"};
const std::set<std::string> kReviewerBuiltins = {"submit_verdict", "send_message", "escalate", "wait"};
const std::set<std::string> kWorkerBuiltins = {"send_message", "escalate", "wait"};

Json obj_schema(Json properties, std::vector<std::string> required) {
  return Json{{"type", "object"}, {"properties", std::move(properties)}, {"required", std::move(required)}};
}

const std::map<std::string, ToolSchema, std::less<>>& catalog() {
  static const std::map<std::string, ToolSchema, std::less<>> kCatalog = [] {
    const Json str{{"type", "string"}};
    const Json strs{{"type", "array"}, {"items", {{"type", "string"}}}};
    const Json job{{"type", "object"},
                   {"properties",
                    {{"runtime", str},
                     {"files", {{"type", "object"}}},
                     {"entry", str},
                     {"stdin", str},
                     {"limits", {{"type", "object"}}}}},
                   {"required", {"runtime", "entry"}}};
    std::vector<ToolSchema> tools = {
        {"send_message", "Send a message to an adjacent agent ('parent', a child id, a workstream id, or 'user').",
         obj_schema({{"to", str}, {"body", str}, {"kind", str}, {"attachments", strs}, {"in_reply_to", str}},
                    {"to", "body"})},
        {"update_report", "Apply a delta to the workstream report (remove, edit, append, annotate, references).",
         obj_schema({{"remove", strs},
                     {"edit", {{"type", "array"}}},
                     {"append", {{"type", "array"}}},
                     {"annotate", {{"type", "array"}}},
                     {"references", {{"type", "array"}}},
                     {"title", str}},
                    {})},
        {"spawn_agent", "Create a sub-agent under the caller.",
         obj_schema({{"role", str}, {"brief", str}, {"name", str}, {"tools", strs}, {"profile", str}, {"backend", str}},
                    {"role", "brief"})},
        {"submit_for_review", "Submit a report version to the review panel.",
         obj_schema({{"version", {{"type", "integer"}}}}, {})},
        {"mark_complete", "Conclude the workstream; accepted only after unanimous approval of the latest version.",
         obj_schema({{"summary", str}}, {})},
        {"escalate", "Raise a roadblock to the parent agent.", obj_schema({{"body", str}, {"attachments", strs}}, {"body"})},
        {"final_answer", "Give the final answer to the user.", obj_schema({{"text", str}}, {"text"})},
        {"wait", "Do nothing until a new message arrives.", obj_schema(Json::object(), {})},
        {"submit_verdict", "Approve the report, or reject it with at least one issue.",
         obj_schema({{"verdict", {{"type", "string"}, {"enum", {"approve", "reject"}}}},
                     {"issues",
                      {{"type", "array"},
                       {"items", obj_schema({{"severity", str}, {"location", str}, {"text", str}}, {"text"})}}}},
                    {"verdict"})},
        {"propose_goals", "Propose the research question and goals for user approval.",
         obj_schema({{"research_question", str}, {"goals", strs}}, {"goals"})},
        {"create_workstream", "Start a workstream on an approved goal.",
         obj_schema({{"goal", str}, {"instructions", str}, {"title", str}, {"continue_from", str}}, {"goal"})},
        {"abandon_workstream", "Conclude the workstream as failed.", obj_schema({{"summary", str}}, {"summary"})},
        {"search_literature", "Search the literature.", obj_schema({{"query", str}, {"k", {{"type", "integer"}}}}, {"query"})},
        {"fetch_document", "Fetch a document by URI.", obj_schema({{"uri", str}}, {"uri"})},
        {"execute_code", "Run a code job in an isolated sandbox.", job},
        {"execute_parallel", "Run several code jobs concurrently.",
         obj_schema({{"jobs", {{"type", "array"}, {"items", job}}}, {"max_concurrency", {{"type", "integer"}}}},
                    {"jobs"})},
    };
    std::map<std::string, ToolSchema, std::less<>> out;
    for (auto& t : tools) out.emplace(t.name, std::move(t));
    return out;
  }();
  return kCatalog;
}

std::string req_string(const Json& args, const char* key) {
  if (!args.contains(key) || !args[key].is_string()) {
    throw Error(ErrorCode::UnparseableAction, std::string("missing string argument '") + key + "'");
  }
  return args[key].get<std::string>();
}

std::string opt_string(const Json& args, const char* key) {
  if (!args.contains(key) || args[key].is_null()) return {};
  if (!args[key].is_string()) throw Error(ErrorCode::UnparseableAction, std::string("argument '") + key + "' must be a string");
  return args[key].get<std::string>();
}

std::vector<std::string> opt_strings(const Json& args, const char* key) {
  if (!args.contains(key) || args[key].is_null()) return {};
  try {
    return args[key].get<std::vector<std::string>>();
  } catch (const Json::exception&) {
    throw Error(ErrorCode::UnparseableAction, std::string("argument '") + key + "' must be a list of strings");
  }
}

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace

std::string_view to_string(Role role) noexcept {
  for (const auto& [r, name] : kRoles) {
    if (r == role) return name;
  }
  return "?";
}

Role parse_role(std::string_view s) {
  for (const auto& [r, name] : kRoles) {
    if (name == s) return r;
  }
  throw Error(ErrorCode::InvalidSpec, "unknown role '" + std::string(s) + "'");
}

std::string_view role_code(Role role) noexcept {
  switch (role) {
    case Role::ProjectCoordinator: return "pc";
    case Role::WorkstreamCoordinator: return "coord";
    case Role::Reviewer: return "rev";
    case Role::LiteratureAgent: return "lit";
    case Role::CodingAgent: return "code";
    case Role::ProverAgent: return "prove";
  }
  return "agent";
}

bool can_spawn(Role role) noexcept {
  return role == Role::ProjectCoordinator || role == Role::WorkstreamCoordinator;
}

void to_json(Json& j, const AgentSpec& s) {
  j = Json{{"role", to_string(s.role)},
           {"prompt_profile", s.prompt_profile},
           {"tool_allowlist", s.tool_allowlist},
           {"parent", s.parent},
           {"backend_binding", s.backend_binding},
           {"brief", s.brief},
           {"workstream", s.workstream},
           {"name", s.name ? Json(*s.name) : Json(nullptr)}};
}

void from_json(const Json& j, AgentSpec& s) {
  s.role = parse_role(j.at("role").get<std::string>());
  s.prompt_profile = j.value("prompt_profile", std::string{});
  s.tool_allowlist = j.value("tool_allowlist", std::set<std::string>{});
  s.parent = j.value("parent", std::string{});
  s.backend_binding = j.value("backend_binding", std::string{});
  s.brief = j.value("brief", std::string{});
  s.workstream = j.value("workstream", std::string{});
  if (j.contains("name") && !j["name"].is_null()) {
    s.name = j["name"].get<std::string>();
  } else {
    s.name.reset();
  }
}

std::set<std::string> default_allowlist(Role role) {
  switch (role) {
    case Role::WorkstreamCoordinator: return {std::begin(kExternalTools), std::end(kExternalTools)};
    case Role::Reviewer: return {"fetch_document", "execute_code", "search_literature"};
    case Role::CodingAgent: return {"execute_code", "execute_parallel"};
    case Role::LiteratureAgent: return {"search_literature", "fetch_document"};
    case Role::ProjectCoordinator:
    case Role::ProverAgent: return {};
  }
  return {};
}

AgentSpec default_spec(Role role, std::string parent, std::string workstream) {
  AgentSpec s;
  s.role = role;
  s.prompt_profile = std::string(to_string(role));
  s.tool_allowlist = default_allowlist(role);
  s.parent = std::move(parent);
  s.workstream = std::move(workstream);
  return s;
}

const std::set<std::string>& builtin_tools(Role role) {
  switch (role) {
    case Role::ProjectCoordinator: return kPcBuiltins;
    case Role::WorkstreamCoordinator: return kWcBuiltins;
    case Role::Reviewer: return kReviewerBuiltins;
    default: return kWorkerBuiltins;
  }
}

std::set<std::string> allowed_tools(const AgentSpec& spec) {
  std::set<std::string> out = builtin_tools(spec.role);
  for (const auto& t : spec.tool_allowlist) {
    if (is_external_tool(t)) out.insert(t);
  }
  return out;
}

bool is_external_tool(std::string_view name) noexcept {
  return std::find(std::begin(kExternalTools), std::end(kExternalTools), name) != std::end(kExternalTools);
}

bool is_builtin_tool(std::string_view name) noexcept {
  return !is_external_tool(name) && catalog().find(name) != catalog().end();
}

const ToolSchema& tool_schema(std::string_view name) {
  auto it = catalog().find(name);
  if (it == catalog().end()) throw Error(ErrorCode::DisallowedTool, "unknown tool '" + std::string(name) + "'");
  return it->second;
}

std::string action_label(const Action& action) {
  return std::visit(Overloaded{
                        [](const act::CallTool& a) { return a.name; },
                        [](const act::SendMessage&) { return std::string("send_message"); },
                        [](const act::UpdateReport&) { return std::string("update_report"); },
                        [](const act::SpawnSubAgent&) { return std::string("spawn_agent"); },
                        [](const act::SubmitForReview&) { return std::string("submit_for_review"); },
                        [](const act::MarkComplete&) { return std::string("mark_complete"); },
                        [](const act::Escalate&) { return std::string("escalate"); },
                        [](const act::GiveFinalAnswer&) { return std::string("final_answer"); },
                        [](const act::Wait&) { return std::string("wait"); },
                        [](const act::ProposeGoals&) { return std::string("propose_goals"); },
                        [](const act::CreateWorkstream&) { return std::string("create_workstream"); },
                        [](const act::AbandonWorkstream&) { return std::string("abandon_workstream"); },
                    },
                    action);
}

Json action_to_json(const Action& action) {
  return std::visit(
      Overloaded{
          [](const act::CallTool& a) { return Json{{"type", "call_tool"}, {"name", a.name}, {"arguments", a.arguments}}; },
          [](const act::SendMessage& a) {
            return Json{{"type", "send_message"},
                        {"to", a.to},
                        {"kind", a.kind ? Json(to_string(*a.kind)) : Json(nullptr)},
                        {"body", a.body},
                        {"attachments", a.attachments},
                        {"in_reply_to", a.in_reply_to ? Json(*a.in_reply_to) : Json(nullptr)}};
          },
          [](const act::UpdateReport& a) { return Json{{"type", "update_report"}, {"delta", a.delta}}; },
          [](const act::SpawnSubAgent& a) { return Json{{"type", "spawn_agent"}, {"spec", a.spec}}; },
          [](const act::SubmitForReview& a) {
            return Json{{"type", "submit_for_review"}, {"version", a.version ? Json(*a.version) : Json(nullptr)}};
          },
          [](const act::MarkComplete& a) { return Json{{"type", "mark_complete"}, {"summary", a.summary}}; },
          [](const act::Escalate& a) {
            Json j{{"type", "escalate"}, {"body", a.body}, {"attachments", a.attachments}};
            if (a.synthesized) j["synthesized"] = true;
            return j;
          },
          [](const act::GiveFinalAnswer& a) { return Json{{"type", "final_answer"}, {"text", a.text}}; },
          [](const act::Wait&) { return Json{{"type", "wait"}}; },
          [](const act::ProposeGoals& a) {
            return Json{{"type", "propose_goals"}, {"research_question", a.research_question}, {"goals", a.goals}};
          },
          [](const act::CreateWorkstream& a) {
            return Json{{"type", "create_workstream"},
                        {"goal", a.goal},
                        {"instructions", a.instructions},
                        {"title", a.title},
                        {"continue_from", a.continue_from ? Json(*a.continue_from) : Json(nullptr)}};
          },
          [](const act::AbandonWorkstream& a) { return Json{{"type", "abandon_workstream"}, {"summary", a.summary}}; },
      },
      action);
}

Action action_from_call(const std::string& name, const Json& raw) {
  const Json args = raw.is_null() ? Json::object() : raw;
  if (!args.is_object()) throw Error(ErrorCode::UnparseableAction, "arguments of '" + name + "' must be an object");

  if (is_external_tool(name)) return act::CallTool{name, args};
  if (name == "send_message") {
    act::SendMessage m;
    m.to = req_string(args, "to");
    m.body = req_string(args, "body");
    if (auto kind = opt_string(args, "kind"); !kind.empty()) m.kind = parse_message_kind(kind);
    m.attachments = opt_strings(args, "attachments");
    if (auto r = opt_string(args, "in_reply_to"); !r.empty()) m.in_reply_to = r;
    return m;
  }
  if (name == "update_report") {
    return act::UpdateReport{parse_delta(args.contains("delta") ? args["delta"] : args)};
  }
  if (name == "spawn_agent") {
    AgentSpec spec;
    spec.role = parse_role(req_string(args, "role"));
    spec.brief = req_string(args, "brief");
    spec.prompt_profile = opt_string(args, "profile");
    if (spec.prompt_profile.empty()) spec.prompt_profile = std::string(to_string(spec.role));
    spec.backend_binding = opt_string(args, "backend");
    if (args.contains("tools")) {
      auto tools = opt_strings(args, "tools");
      spec.tool_allowlist = {tools.begin(), tools.end()};
    } else {
      spec.tool_allowlist = default_allowlist(spec.role);
    }
    if (auto n = opt_string(args, "name"); !n.empty()) spec.name = n;
    return act::SpawnSubAgent{std::move(spec)};
  }
  if (name == "submit_for_review") {
    act::SubmitForReview s;
    if (args.contains("version") && !args["version"].is_null()) {
      if (!args["version"].is_number_unsigned()) throw Error(ErrorCode::UnparseableAction, "version must be positive");
      s.version = args["version"].get<std::uint64_t>();
    }
    return s;
  }
  if (name == "mark_complete") return act::MarkComplete{opt_string(args, "summary")};
  if (name == "escalate") return act::Escalate{req_string(args, "body"), opt_strings(args, "attachments")};
  if (name == "final_answer") return act::GiveFinalAnswer{req_string(args, "text")};
  if (name == "wait") return act::Wait{};
  if (name == "submit_verdict") {
    const std::string verdict = req_string(args, "verdict");
    Json body{{"verdict", verdict}};
    if (verdict == "approve") {
      body["issues"] = Json::array();
    } else if (verdict == "reject") {
      if (!args.contains("issues") || !args["issues"].is_array() || args["issues"].empty()) {
        throw Error(ErrorCode::UnparseableAction, "a rejection needs at least one issue");
      }
      Json issues = Json::array();
      for (const auto& i : args["issues"]) {
        if (!i.is_object()) throw Error(ErrorCode::UnparseableAction, "issue must be an object");
        const std::string severity = i.value("severity", std::string("blocking"));
        parse_severity(severity);
        issues.push_back({{"severity", severity},
                          {"location", i.value("location", std::string("global"))},
                          {"text", req_string(i, "text")}});
      }
      body["issues"] = issues;
    } else {
      throw Error(ErrorCode::UnparseableAction, "verdict must be approve or reject");
    }
    return act::SendMessage{"parent", MessageKind::ReviewVerdict, body.dump(), {}, std::nullopt};
  }
  if (name == "propose_goals") {
    act::ProposeGoals p;
    p.research_question = opt_string(args, "research_question");
    p.goals = opt_strings(args, "goals");
    if (p.goals.empty()) throw Error(ErrorCode::MalformedProposal, "goal proposal is empty");
    for (const auto& g : p.goals) {
      if (normalize_text(g).empty()) throw Error(ErrorCode::MalformedProposal, "goal text is empty");
    }
    return p;
  }
  if (name == "create_workstream") {
    act::CreateWorkstream c;
    c.goal = req_string(args, "goal");
    c.instructions = opt_string(args, "instructions");
    c.title = opt_string(args, "title");
    if (auto from = opt_string(args, "continue_from"); !from.empty()) c.continue_from = from;
    return c;
  }
  if (name == "abandon_workstream") return act::AbandonWorkstream{req_string(args, "summary")};
  throw Error(ErrorCode::DisallowedTool, "unknown tool '" + name + "'");
}

}  // namespace quire
