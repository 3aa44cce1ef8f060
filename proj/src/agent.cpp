#include "quire/agent.hpp"

#include <algorithm>
#include <sstream>

#include "quire/error.hpp"
#include "quire/tools.hpp"
#include "quire/workspace.hpp"

namespace quire {

void to_json(Json& j, const ActionRecord& r) {
  j = Json{{"agent", r.agent},     {"step", r.step},       {"turn", r.turn},         {"triggers", r.triggers},
           {"model_call", r.model_call}, {"label", r.label}, {"action", r.action}, {"accepted", r.accepted},
           {"outcome", r.outcome}, {"at", r.at}};
}

void from_json(const Json& j, ActionRecord& r) {
  j.at("agent").get_to(r.agent);
  j.at("step").get_to(r.step);
  r.turn = j.value("turn", std::uint64_t{0});
  r.triggers = j.value("triggers", std::vector<std::string>{});
  r.model_call = j.value("model_call", std::string{});
  j.at("label").get_to(r.label);
  r.action = j.value("action", Json::object());
  r.accepted = j.value("accepted", true);
  r.outcome = j.value("outcome", Json::object());
  r.at = j.value("at", std::int64_t{0});
}

namespace {

bool valid_agent_id(const std::string& id) {
  if (id.empty() || id.size() > 64 || id == kUser) return false;
  return std::all_of(id.begin(), id.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '.' || c == '_' || c == '-';
  });
}

std::string message_turn(const Message& m) {
  std::string text = "[" + std::string(to_string(m.kind)) + " from " + m.sender + ", " + m.id + "] " + m.body;
  if (!m.attachments.empty()) {
    text += "\nattachments:";
    for (const auto& a : m.attachments) text += " " + a;
  }
  return text;
}

std::string dump(const Json& j) { return j.dump(-1, ' ', false, Json::error_handler_t::replace); }

}  // namespace

AgentRuntime::AgentRuntime(Workspace& workspace, Bus& bus, ModelGateway& gateway, std::shared_ptr<Clock> clock,
                           RuntimeConfig config)
    : workspace_(workspace), bus_(bus), gateway_(gateway), clock_(std::move(clock)), config_(config) {}

std::string AgentRuntime::trajectory_path(const std::string& agent) { return "agents/" + agent + "/trajectory.jsonl"; }

std::string AgentRuntime::profile_path(const std::string& profile) { return "profiles/" + profile + ".md"; }

std::string AgentRuntime::default_profile(Role role) {
  const std::string convention =
      "\n\nAct through tool calls. Without tool calls, put one or more ```action blocks holding "
      "{\"name\": ..., \"arguments\": {...}} in the text. Plain text is sent to your parent.";
  switch (role) {
    case Role::ProjectCoordinator:
      return "You are the project coordinator and the only agent that talks to the user. Clarify the research "
             "question, propose goals for approval, start workstreams on approved goals, relay the user's steering "
             "to the workstreams, and surface blockers to the user." +
             convention;
    case Role::WorkstreamCoordinator:
      return "You coordinate one workstream. Investigate the assigned goal with the tools and sub-agents you have, "
             "keep the working report current after every finding, explain the research process in an exposition "
             "block, and submit the report for review. Mark the workstream complete only after every reviewer has "
             "approved the latest version." +
             convention;
    case Role::Reviewer:
      return "You review a working report for correctness, references and style. Cross-check references and code "
             "outputs with your tools. Answer APPROVE, or REJECT followed by lines of the form "
             "\"- [blocking|minor] <block id or global>: <issue>\". Reviewers keep their memory between rounds.";
    case Role::LiteratureAgent:
      return "You search and read the literature for your parent and report concise findings with URIs." + convention;
    case Role::CodingAgent:
      return "You write and run code in sandboxes for your parent. Report results, including failures, verbatim." +
             convention;
    case Role::ProverAgent:
      return "You attempt rigorous proofs of the statements your parent sends and report them in full, stating "
             "clearly where an argument is incomplete." +
             convention;
  }
  return convention;
}

AgentState& AgentRuntime::get(const std::string& agent) {
  std::lock_guard lock(mu_);
  auto it = agents_.find(agent);
  if (it == agents_.end()) throw Error(ErrorCode::UnknownAgent, agent);
  return *it->second;
}

const AgentState& AgentRuntime::get(const std::string& agent) const {
  std::lock_guard lock(mu_);
  auto it = agents_.find(agent);
  if (it == agents_.end()) throw Error(ErrorCode::UnknownAgent, agent);
  return *it->second;
}

std::string AgentRuntime::spawn(AgentSpec spec) {
  if (spec.role == Role::ProjectCoordinator) {
    if (spec.parent != kUser) throw Error(ErrorCode::InvalidSpec, "the project coordinator's parent is the user");
  } else {
    if (spec.parent == kUser || spec.parent.empty()) {
      throw Error(ErrorCode::InvalidSpec, "only the project coordinator reports to the user");
    }
    const AgentState& parent = get(spec.parent);
    if (!can_spawn(parent.spec.role)) {
      throw Error(ErrorCode::SpawnDenied, std::string(to_string(parent.spec.role)) + " may not create agents");
    }
    if (parent.terminated) throw Error(ErrorCode::SpawnDenied, "parent " + spec.parent + " has terminated");
    if (spec.workstream.empty()) spec.workstream = parent.spec.workstream;
  }
  for (const auto& t : spec.tool_allowlist) {
    if (!is_external_tool(t)) throw Error(ErrorCode::InvalidSpec, "unknown tool in allowlist: " + t);
  }
  if (spec.role == Role::Reviewer &&
      (!spec.tool_allowlist.count("fetch_document") || !spec.tool_allowlist.count("execute_code"))) {
    throw Error(ErrorCode::InvalidSpec, "reviewers need fetch_document and execute_code");
  }
  if (spec.prompt_profile.empty()) spec.prompt_profile = std::string(to_string(spec.role));

  std::string id;
  {
    std::lock_guard lock(mu_);
    if (spec.name) {
      id = *spec.name;
      if (!valid_agent_id(id)) throw Error(ErrorCode::InvalidSpec, "invalid agent name '" + id + "'");
      if (agents_.count(id)) throw Error(ErrorCode::InvalidSpec, "agent '" + id + "' already exists");
    } else if (spec.role == Role::ProjectCoordinator) {
      id = "pc";
    } else if (spec.role == Role::WorkstreamCoordinator && !spec.workstream.empty() &&
               !agents_.count(spec.workstream + ".coord")) {
      id = spec.workstream + ".coord";
    } else {
      const std::string scope = spec.workstream.empty() ? "pc" : spec.workstream;
      const std::string base = scope + "." + std::string(role_code(spec.role));
      do {
        id = base + std::to_string(++counters_[base]);
      } while (agents_.count(id));
    }
    if (agents_.count(id)) throw Error(ErrorCode::InvalidSpec, "agent '" + id + "' already exists");
  }
  bus_.register_agent(id, spec.parent);
  workspace_.write_file(trajectory_path(id), "", id);
  auto state = std::make_unique<AgentState>();
  state->id = id;
  state->spec = std::move(spec);
  std::lock_guard lock(mu_);
  agents_.emplace(id, std::move(state));
  trajectories_[id];
  order_.push_back(id);
  return id;
}

ModelRequest AgentRuntime::build_request(const AgentState& a) const {
  ModelRequest req;
  req.agent_role = std::string(to_string(a.spec.role));
  req.agent = a.id;
  const std::string profile_file = profile_path(a.spec.prompt_profile);
  req.system = workspace_.exists(profile_file) ? workspace_.read_file(profile_file) : default_profile(a.spec.role);
  req.system += "\n\nYou are " + a.id + "; your parent is " + a.spec.parent + ".";
  if (!a.spec.workstream.empty()) req.system += " Workstream: " + a.spec.workstream + ".";
  for (const auto& name : allowed_tools(a.spec)) req.tools.push_back(tool_schema(name));
  if (!a.spec.brief.empty()) req.transcript.push_back({"brief", a.spec.brief});
  if (context_provider_) {
    std::string digest = context_provider_(a.spec);
    if (!digest.empty()) req.transcript.push_back({"report", std::move(digest)});
  }
  const std::size_t k = std::min(config_.context_turns, a.history.size());
  req.transcript.insert(req.transcript.end(), a.history.end() - static_cast<std::ptrdiff_t>(k), a.history.end());
  req.seed = 0;
  return req;
}

void AgentRuntime::push_turn(AgentState& a, Turn t) {
  a.history.push_back(std::move(t));
  if (a.history.size() > config_.history_cap) {
    a.history.erase(a.history.begin(),
                    a.history.begin() + static_cast<std::ptrdiff_t>(a.history.size() - config_.history_cap));
  }
}

ActionRecord AgentRuntime::record(AgentState& a, const std::vector<std::string>& triggers, const std::string& call,
                                  const std::string& label, Json action, bool accepted, Json outcome) {
  ActionRecord r;
  r.agent = a.id;
  r.step = a.next_step++;
  r.turn = a.turns;
  r.triggers = triggers;
  r.model_call = call;
  r.label = label;
  r.action = std::move(action);
  r.accepted = accepted;
  r.outcome = std::move(outcome);
  r.at = clock_ ? clock_->now() : 0;
  workspace_.append_file(trajectory_path(a.id), dump(Json(r)) + "\n", a.id);
  std::lock_guard lock(mu_);
  trajectories_[a.id].push_back(r);
  return r;
}

void AgentRuntime::synthesize_escalation(AgentState& a, ActionExecutor& executor,
                                         const std::vector<std::string>& triggers, const std::string& call,
                                         const std::string& body, std::vector<ActionRecord>& records) {
  act::Escalate e{body, {}, true};
  Outcome o;
  try {
    o = executor.execute(a.id, a.spec, e);
  } catch (const Error& err) {
    o = Outcome{false, Json{{"error", err.what()}}};
  }
  records.push_back(record(a, triggers, call, "escalate", action_to_json(e), o.accepted, o.detail));
  a.failures = 0;
  a.idle = true;
}

std::vector<ActionRecord> AgentRuntime::fail(AgentState& a, ActionExecutor& executor,
                                             const std::vector<std::string>& triggers, const std::string& call,
                                             const std::string& reason, std::vector<ActionRecord> records) {
  records.push_back(record(a, triggers, call, "invalid_response", Json{{"type", "invalid_response"}, {"error", reason}},
                           false, Json{{"error", reason}}));
  push_turn(a, {"result", "Your last response could not be used: " + reason});
  if (++a.failures >= config_.failure_limit) {
    synthesize_escalation(a, executor, triggers, call,
                          std::to_string(a.failures) + " consecutive unusable model responses; last error: " + reason,
                          records);
  }
  return records;
}

std::vector<ActionRecord> AgentRuntime::step(const std::string& agent, ActionExecutor& executor) {
  AgentState& a = get(agent);
  if (a.terminated) throw Error(ErrorCode::AgentTerminated, agent);

  const auto mail = bus_.poll(agent, config_.mailbox_batch);
  std::vector<std::string> triggers;
  if (!mail.empty()) a.idle = false;
  for (const auto& m : mail) {
    triggers.push_back(m.id);
    push_turn(a, {"message", message_turn(m)});
  }
  const ModelRequest req = build_request(a);
  ++a.turns;

  std::vector<ActionRecord> records;
  auto receive_records = [&](const std::string& call) {
    for (const auto& m : mail) {
      if (m.kind != MessageKind::Instruction || m.sender != a.spec.parent) continue;
      records.push_back(record(a, {m.id}, call, "receive_instruction",
                               Json{{"type", "receive_instruction"}, {"message", m.id}, {"from", m.sender}, {"body", m.body}},
                               true, Json::object()));
    }
  };

  ModelGateway::Result result;
  try {
    result = gateway_.complete(req, a.spec.backend_binding);
  } catch (const ModelCallError& e) {
    receive_records(e.call_id());
    synthesize_escalation(a, executor, triggers, e.call_id(), std::string("model backend failed: ") + e.what(),
                          records);
    return records;
  }
  receive_records(result.call_id);

  TextPolicy policy;
  policy.mode = a.spec.role == Role::Reviewer ? TextPolicy::Mode::Verdict : TextPolicy::Mode::Message;
  policy.parent_is_user = a.spec.parent == kUser;
  ParsedActions parsed;
  try {
    parsed = parse_actions(result.response, allowed_tools(a.spec), policy);
  } catch (const Error& e) {
    switch (e.code()) {
      case ErrorCode::UnparseableAction:
      case ErrorCode::DisallowedTool:
      case ErrorCode::MalformedProposal:
      case ErrorCode::InvalidSpec:
        return fail(a, executor, triggers, result.call_id, e.what(), std::move(records));
      default: throw;
    }
  }
  if (parsed.refused) return fail(a, executor, triggers, result.call_id, "the model refused", std::move(records));
  a.failures = 0;

  for (const auto& action : parsed.actions) {
    if (std::holds_alternative<act::Wait>(action)) {
      a.idle = true;
      continue;
    }
    if (a.terminated) break;
    Outcome o;
    try {
      o = executor.execute(agent, a.spec, action);
    } catch (const Error& e) {
      o = Outcome{false, Json{{"error", e.what()}}};
    }
    Json aj = action_to_json(action);
    const std::string label = action_label(action);
    push_turn(a, {"assistant", dump(aj)});
    push_turn(a, {"result", label + (o.accepted ? " accepted: " : " rejected: ") + dump(o.detail)});
    records.push_back(record(a, triggers, result.call_id, label, std::move(aj), o.accepted, o.detail));
    if (o.idle_after) a.idle = true;
  }
  return records;
}

std::vector<ActionRecord> AgentRuntime::trajectory(const std::string& agent) const {
  std::lock_guard lock(mu_);
  auto it = trajectories_.find(agent);
  if (it == trajectories_.end()) throw Error(ErrorCode::UnknownAgent, agent);
  return it->second;
}

bool AgentRuntime::exists(const std::string& agent) const {
  std::lock_guard lock(mu_);
  return agents_.count(agent) > 0;
}

bool AgentRuntime::runnable(const std::string& agent) const {
  const AgentState& a = get(agent);
  return !a.terminated && (!a.idle || bus_.pending(agent) > 0);
}

bool AgentRuntime::terminated(const std::string& agent) const { return get(agent).terminated; }

void AgentRuntime::terminate(const std::string& agent) { get(agent).terminated = true; }

void AgentRuntime::set_idle(const std::string& agent, bool idle) { get(agent).idle = idle; }

AgentSpec AgentRuntime::spec(const std::string& agent) const { return get(agent).spec; }

AgentState AgentRuntime::snapshot(const std::string& agent) const { return get(agent); }

std::vector<std::string> AgentRuntime::agents() const {
  std::lock_guard lock(mu_);
  return order_;
}

std::vector<std::string> AgentRuntime::descendants(const std::string& agent) const {
  std::vector<std::string> out;
  std::lock_guard lock(mu_);
  std::vector<std::string> frontier{agent};
  while (!frontier.empty()) {
    std::string cur = frontier.back();
    frontier.pop_back();
    for (const auto& id : order_) {
      if (agents_.at(id)->spec.parent == cur) {
        out.push_back(id);
        frontier.push_back(id);
      }
    }
  }
  return out;
}

Json AgentRuntime::state() const {
  std::lock_guard lock(mu_);
  Json agents = Json::array();
  for (const auto& id : order_) {
    const AgentState& a = *agents_.at(id);
    agents.push_back({{"id", a.id},
                      {"spec", a.spec},
                      {"history", a.history},
                      {"idle", a.idle},
                      {"terminated", a.terminated},
                      {"failures", a.failures},
                      {"next_step", a.next_step},
                      {"turns", a.turns}});
  }
  return Json{{"agents", agents}, {"counters", counters_}};
}

void AgentRuntime::restore(const Json& state) {
  std::lock_guard lock(mu_);
  order_.clear();
  agents_.clear();
  trajectories_.clear();
  counters_ = state.value("counters", std::map<std::string, std::uint64_t>{});
  for (const auto& j : state.at("agents")) {
    auto a = std::make_unique<AgentState>();
    a->id = j.at("id");
    a->spec = j.at("spec").get<AgentSpec>();
    a->history = j.at("history").get<std::vector<Turn>>();
    a->idle = j.at("idle");
    a->terminated = j.at("terminated");
    a->failures = j.at("failures");
    a->next_step = j.at("next_step");
    a->turns = j.at("turns");
    auto& traj = trajectories_[a->id];
    const std::string path = trajectory_path(a->id);
    if (workspace_.exists(path)) {
      std::istringstream in(workspace_.read_file(path));
      std::string line;
      while (std::getline(in, line)) {
        if (!line.empty()) traj.push_back(Json::parse(line).get<ActionRecord>());
      }
    }
    if (traj.size() != a->next_step) throw Error(ErrorCode::Persistence, "trajectory of " + a->id + " is out of sync");
    order_.push_back(a->id);
    agents_.emplace(a->id, std::move(a));
  }
}

std::string BasicExecutor::resolve_recipient(const std::string& agent, const AgentSpec& spec, const std::string& to) {
  if (to == "parent") return spec.parent;
  if (to == kUser) return std::string(kUser);
  if (!runtime_.exists(to)) throw Error(ErrorCode::UnknownRecipient, to);
  (void)agent;
  return to;
}

Outcome BasicExecutor::execute(const std::string& agent, const AgentSpec& spec, const Action& action) {
  if (auto* m = std::get_if<act::SendMessage>(&action)) return send(agent, spec, *m);
  if (auto* c = std::get_if<act::CallTool>(&action)) return call_tool(agent, spec, *c);
  if (auto* e = std::get_if<act::Escalate>(&action)) return escalate(agent, *e);
  if (auto* s = std::get_if<act::SpawnSubAgent>(&action)) return spawn(agent, spec, *s);
  throw Error(ErrorCode::InvalidState, action_label(action) + " is not available here");
}

Outcome BasicExecutor::send(const std::string& agent, const AgentSpec& spec, const act::SendMessage& m) {
  Message msg;
  msg.sender = agent;
  msg.recipient = resolve_recipient(agent, spec, m.to);
  if (m.kind) {
    msg.kind = *m.kind;
  } else if (msg.recipient == spec.parent) {
    msg.kind = msg.recipient == kUser ? MessageKind::UserChat : MessageKind::StatusUpdate;
  } else if (runtime_.exists(msg.recipient) && runtime_.spec(msg.recipient).parent == agent) {
    msg.kind = MessageKind::Instruction;
  } else {
    msg.kind = MessageKind::StatusUpdate;
  }
  msg.body = m.body;
  msg.attachments = m.attachments;
  msg.in_reply_to = m.in_reply_to;
  const std::string id = bus_.send(msg);
  return Outcome{true, Json{{"message", id}, {"to", msg.recipient}, {"kind", to_string(msg.kind)}}};
}

Outcome BasicExecutor::call_tool(const std::string& agent, const AgentSpec& spec, const act::CallTool& c) {
  if (tools_ == nullptr) throw Error(ErrorCode::ProviderUnavailable, "no tools configured");
  if (!spec.tool_allowlist.count(c.name)) throw Error(ErrorCode::DisallowedTool, c.name);
  return Outcome{true, tools_->invoke(agent, spec.workstream, c.name, c.arguments).summary};
}

Outcome BasicExecutor::escalate(const std::string& agent, const act::Escalate& e) {
  const std::string id = bus_.escalate(agent, e.body, e.attachments);
  return Outcome{true, Json{{"message", id}, {"to", bus_.parent_of(agent).value_or("")}}};
}

Outcome BasicExecutor::spawn(const std::string& agent, const AgentSpec& spec, const act::SpawnSubAgent& s) {
  AgentSpec child = s.spec;
  child.parent = agent;
  if (child.workstream.empty()) child.workstream = spec.workstream;
  const std::string id = runtime_.spawn(std::move(child));
  return Outcome{true, Json{{"agent", id}}};
}

}  // namespace quire
