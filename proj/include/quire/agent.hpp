#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "quire/agent_types.hpp"
#include "quire/bus.hpp"
#include "quire/common.hpp"
#include "quire/model.hpp"

namespace quire {

class Workspace;
class ToolBox;

struct ActionRecord {
  std::string agent;
  std::uint64_t step = 0;  // contiguous per agent, from 0
  std::uint64_t turn = 0;  // model turn that produced the record
  std::vector<std::string> triggers;
  std::string model_call;
  std::string label;
  Json action;
  bool accepted = true;
  Json outcome;
  std::int64_t at = 0;
};

void to_json(Json& j, const ActionRecord& r);
void from_json(const Json& j, ActionRecord& r);

struct Outcome {
  bool accepted = true;
  Json detail = Json::object();
  bool idle_after = false;
};

class ActionExecutor {
 public:
  virtual ~ActionExecutor() = default;
  virtual Outcome execute(const std::string& agent, const AgentSpec& spec, const Action& action) = 0;
};

struct RuntimeConfig {
  std::size_t context_turns = 20;
  int failure_limit = 3;
  std::size_t mailbox_batch = 64;
  std::size_t history_cap = 200;
};

struct AgentState {
  std::string id;
  AgentSpec spec;
  std::vector<Turn> history;
  bool idle = false;
  bool terminated = false;
  int failures = 0;
  std::uint64_t next_step = 0;
  std::uint64_t turns = 0;
};

/// Owns every agent of a project: registration, the step loop and the
/// trajectories. Steps of one agent must not overlap; distinct agents may be
/// stepped from different threads.
class AgentRuntime {
 public:
  AgentRuntime(Workspace& workspace, Bus& bus, ModelGateway& gateway, std::shared_ptr<Clock> clock,
               RuntimeConfig config = {});

  static std::string trajectory_path(const std::string& agent);
  static std::string profile_path(const std::string& profile);
  static std::string default_profile(Role role);

  /// Throws SpawnDenied, InvalidSpec, UnknownAgent.
  std::string spawn(AgentSpec spec);

  /// One model turn. Throws UnknownAgent and AgentTerminated.
  std::vector<ActionRecord> step(const std::string& agent, ActionExecutor& executor);

  std::vector<ActionRecord> trajectory(const std::string& agent) const;
  bool exists(const std::string& agent) const;
  bool runnable(const std::string& agent) const;
  bool terminated(const std::string& agent) const;
  void terminate(const std::string& agent);
  void set_idle(const std::string& agent, bool idle);
  AgentSpec spec(const std::string& agent) const;
  AgentState snapshot(const std::string& agent) const;
  /// Agent ids in spawn order.
  std::vector<std::string> agents() const;
  std::vector<std::string> descendants(const std::string& agent) const;

  /// Supplies the report digest placed in each context.
  void set_context_provider(std::function<std::string(const AgentSpec&)> provider) {
    context_provider_ = std::move(provider);
  }

  const RuntimeConfig& config() const noexcept { return config_; }
  Bus& bus() noexcept { return bus_; }

  Json state() const;
  /// Restores agent state; trajectories are reloaded from the workspace.
  void restore(const Json& state);

 private:
  AgentState& get(const std::string& agent);
  const AgentState& get(const std::string& agent) const;
  ModelRequest build_request(const AgentState& a) const;
  ActionRecord record(AgentState& a, const std::vector<std::string>& triggers, const std::string& call,
                      const std::string& label, Json action, bool accepted, Json outcome);
  void push_turn(AgentState& a, Turn t);
  std::vector<ActionRecord> fail(AgentState& a, ActionExecutor& executor, const std::vector<std::string>& triggers,
                                 const std::string& call, const std::string& reason,
                                 std::vector<ActionRecord> records);
  void synthesize_escalation(AgentState& a, ActionExecutor& executor, const std::vector<std::string>& triggers,
                             const std::string& call, const std::string& body, std::vector<ActionRecord>& records);

  Workspace& workspace_;
  Bus& bus_;
  ModelGateway& gateway_;
  std::shared_ptr<Clock> clock_;
  RuntimeConfig config_;
  std::function<std::string(const AgentSpec&)> context_provider_;

  mutable std::mutex mu_;
  std::vector<std::string> order_;
  std::map<std::string, std::unique_ptr<AgentState>> agents_;
  std::map<std::string, std::vector<ActionRecord>> trajectories_;
  std::map<std::string, std::uint64_t> counters_;
};

/// Executes messaging, escalation, tool calls and sub-agent spawns.
/// Engine-specific actions are rejected.
class BasicExecutor : public ActionExecutor {
 public:
  BasicExecutor(Bus& bus, AgentRuntime& runtime, ToolBox* tools) : bus_(bus), runtime_(runtime), tools_(tools) {}

  Outcome execute(const std::string& agent, const AgentSpec& spec, const Action& action) override;

 protected:
  /// Maps "parent", "user" and agent ids to a bus address.
  virtual std::string resolve_recipient(const std::string& agent, const AgentSpec& spec, const std::string& to);

  Outcome send(const std::string& agent, const AgentSpec& spec, const act::SendMessage& m);
  Outcome call_tool(const std::string& agent, const AgentSpec& spec, const act::CallTool& c);
  Outcome escalate(const std::string& agent, const act::Escalate& e);
  Outcome spawn(const std::string& agent, const AgentSpec& spec, const act::SpawnSubAgent& s);

  Bus& bus_;
  AgentRuntime& runtime_;
  ToolBox* tools_;
};

}  // namespace quire
