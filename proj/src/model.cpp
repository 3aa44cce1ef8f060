#include "quire/model.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>

#include "quire/workspace.hpp"

namespace quire {

std::string_view to_string(Finish f) noexcept {
  switch (f) {
    case Finish::Stop: return "stop";
    case Finish::ToolCall: return "tool_call";
    case Finish::Length: return "length";
    case Finish::Refusal: return "refusal";
  }
  return "stop";
}

Finish parse_finish(std::string_view s) {
  if (s == "stop") return Finish::Stop;
  if (s == "tool_call" || s == "tool_calls") return Finish::ToolCall;
  if (s == "length") return Finish::Length;
  if (s == "refusal") return Finish::Refusal;
  throw Error(ErrorCode::FixtureParseError, "unknown finish reason '" + std::string(s) + "'");
}

void to_json(Json& j, const Turn& t) { j = Json{{"speaker", t.speaker}, {"text", t.text}}; }

void from_json(const Json& j, Turn& t) {
  j.at("speaker").get_to(t.speaker);
  j.at("text").get_to(t.text);
}

void to_json(Json& j, const ModelRequest& r) {
  Json tools = Json::array();
  for (const auto& t : r.tools) tools.push_back(t.name);
  j = Json{{"agent_role", r.agent_role}, {"agent", r.agent},
           {"system", r.system},         {"transcript", r.transcript},
           {"tools", tools},             {"max_output_tokens", r.max_output_tokens},
           {"seed", r.seed ? Json(*r.seed) : Json(nullptr)}};
}

void to_json(Json& j, const ModelResponse& r) {
  Json calls = Json::array();
  for (const auto& c : r.tool_calls) calls.push_back({{"name", c.name}, {"arguments", c.arguments}});
  j = Json{{"text", r.text}, {"tool_calls", calls}, {"finish", to_string(r.finish)}};
}

void from_json(const Json& j, ModelResponse& r) {
  if (!j.is_object()) throw Error(ErrorCode::FixtureParseError, "response must be an object");
  r = ModelResponse{};
  r.text = j.value("text", std::string{});
  if (j.contains("tool_calls")) {
    for (const auto& c : j["tool_calls"]) {
      ToolCall call;
      call.name = c.at("name").get<std::string>();
      call.arguments = c.value("arguments", Json::object());
      r.tool_calls.push_back(std::move(call));
    }
  }
  if (j.contains("finish")) {
    r.finish = parse_finish(j["finish"].get<std::string>());
  } else {
    r.finish = r.tool_calls.empty() ? Finish::Stop : Finish::ToolCall;
  }
  if (r.tool_calls.empty() != (r.finish != Finish::ToolCall)) {
    throw Error(ErrorCode::FixtureParseError, "tool_calls must be non-empty exactly when finish is tool_call");
  }
}

ModelResponse ModelBackend::complete(const ModelRequest& request, CallStats* stats) {
  CallStats local;
  ModelResponse r = do_complete(request, stats ? *stats : local);
  if (r.finish == Finish::ToolCall && r.tool_calls.empty()) r.finish = Finish::Stop;
  if (r.finish != Finish::ToolCall && !r.tool_calls.empty()) r.finish = Finish::ToolCall;
  return r;
}

ModelResponse canned_wait() {
  ModelResponse r;
  r.tool_calls.push_back({"wait", Json::object()});
  r.finish = Finish::ToolCall;
  return r;
}

ScriptedBackend::ScriptedBackend(std::vector<Entry> entries, bool strict)
    : entries_(std::move(entries)), strict_(strict), used_(entries_.size(), false) {}

bool ScriptedBackend::selects(const Entry& e, const ModelRequest& r) const {
  if (e.agent_role && *e.agent_role != r.agent_role) return false;
  if (e.agent && *e.agent != r.agent) return false;
  return true;
}

ModelResponse ScriptedBackend::do_complete(const ModelRequest& request, CallStats&) {
  std::lock_guard lock(mu_);
  const std::string last = request.transcript.empty() ? std::string() : request.transcript.back().text;
  bool had_entries = false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const Entry& e = entries_[i];
    if (!selects(e, request)) continue;
    had_entries = true;
    if (used_[i]) continue;
    if (e.contains && last.find(*e.contains) == std::string::npos) {
      if (strict_) {
        throw Error(ErrorCode::ScriptMismatch, "entry " + std::to_string(i) + " expects '" + *e.contains +
                                                   "' in the last turn of " + request.agent);
      }
      return canned_wait();
    }
    used_[i] = true;
    return e.respond;
  }
  if (strict_) {
    if (had_entries) throw Error(ErrorCode::ScriptExhausted, "no entries left for " + request.agent);
    throw Error(ErrorCode::ScriptMismatch, "no entry matches role " + request.agent_role);
  }
  return canned_wait();
}

std::size_t ScriptedBackend::consumed() const {
  std::lock_guard lock(mu_);
  return static_cast<std::size_t>(std::count(used_.begin(), used_.end(), true));
}

Json ScriptedBackend::state() const {
  std::lock_guard lock(mu_);
  Json used = Json::array();
  for (std::size_t i = 0; i < used_.size(); ++i) {
    if (used_[i]) used.push_back(i);
  }
  return Json{{"consumed", used}};
}

void ScriptedBackend::restore(const Json& state) {
  std::lock_guard lock(mu_);
  std::fill(used_.begin(), used_.end(), false);
  for (const auto& i : state.value("consumed", Json::array())) {
    auto idx = i.get<std::size_t>();
    if (idx >= used_.size()) throw Error(ErrorCode::Persistence, "script state does not fit the fixture");
    used_[idx] = true;
  }
}

std::unique_ptr<ScriptedBackend> load_script(std::string_view fixture_bytes) {
  Json doc;
  try {
    doc = Json::parse(fixture_bytes);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::FixtureParseError, std::string("fixture is not JSON: ") + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::FixtureParseError, "fixture must be an object");
  const bool strict = doc.value("strict", false);
  std::vector<ScriptedBackend::Entry> entries;
  const Json list = doc.value("entries", Json::array());
  if (!list.is_array()) throw Error(ErrorCode::FixtureParseError, "entries must be an array");
  for (std::size_t i = 0; i < list.size(); ++i) {
    try {
      const Json& e = list[i];
      if (!e.is_object() || !e.contains("respond")) throw Error(ErrorCode::FixtureParseError, "missing respond");
      ScriptedBackend::Entry entry;
      if (e.contains("match")) {
        const Json& m = e["match"];
        if (!m.is_object()) throw Error(ErrorCode::FixtureParseError, "match must be an object");
        if (m.contains("agent_role")) entry.agent_role = m["agent_role"].get<std::string>();
        if (m.contains("agent")) entry.agent = m["agent"].get<std::string>();
        if (m.contains("contains")) entry.contains = m["contains"].get<std::string>();
      }
      entry.respond = e["respond"].get<ModelResponse>();
      entries.push_back(std::move(entry));
    } catch (const Error& err) {
      throw Error(ErrorCode::FixtureParseError, "entry " + std::to_string(i) + ": " + err.what());
    } catch (const Json::exception& err) {
      throw Error(ErrorCode::FixtureParseError, "entry " + std::to_string(i) + ": " + err.what());
    }
  }
  return std::make_unique<ScriptedBackend>(std::move(entries), strict);
}

std::unique_ptr<ScriptedBackend> load_script_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read fixture " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_script(ss.str());
}

BackendRouter::BackendRouter(std::shared_ptr<ModelBackend> fallback) {
  if (!fallback) throw Error(ErrorCode::ConfigError, "router needs a default backend");
  backends_["default"] = std::move(fallback);
}

void BackendRouter::bind(const std::string& key, std::shared_ptr<ModelBackend> backend) {
  backends_[key] = std::move(backend);
}

ModelBackend& BackendRouter::resolve(const std::string& binding, const std::string& role) const {
  if (!binding.empty()) {
    if (auto it = backends_.find(binding); it != backends_.end()) return *it->second;
  }
  if (auto it = backends_.find(role); it != backends_.end()) return *it->second;
  return *backends_.at("default");
}

Json BackendRouter::state() const {
  Json out = Json::object();
  for (const auto& [key, backend] : backends_) out[key] = backend->state();
  return out;
}

void BackendRouter::restore(const Json& state) {
  for (const auto& [key, backend] : backends_) {
    if (state.contains(key)) backend->restore(state[key]);
  }
}

ModelGateway::ModelGateway(std::shared_ptr<BackendRouter> router, Workspace* workspace, std::shared_ptr<Clock> clock)
    : router_(std::move(router)), workspace_(workspace), clock_(std::move(clock)) {}

ModelGateway::Result ModelGateway::complete(const ModelRequest& request, const std::string& binding) {
  std::string id;
  {
    std::lock_guard lock(mu_);
    id = "c" + std::to_string(next_id_++);
  }
  ModelBackend& backend = router_->resolve(binding, request.agent_role);
  CallStats stats;
  Json entry{{"id", id}, {"agent", request.agent}, {"binding", binding}, {"backend", backend.name()},
             {"request", request}};
  auto log = [&](Json& e) {
    e["retries"] = stats.retries;
    e["at"] = clock_ ? clock_->now() : 0;
    if (workspace_ != nullptr) {
      workspace_->append_file(kLogPath, e.dump(-1, ' ', false, Json::error_handler_t::replace) + "\n", "model");
    }
  };
  try {
    ModelResponse response = backend.complete(request, &stats);
    entry["response"] = response;
    log(entry);
    return {id, std::move(response)};
  } catch (const Error& e) {
    entry["error"] = e.what();
    log(entry);
    throw ModelCallError(e.code(), e.what(), id);
  }
}

Json ModelGateway::state() const { return Json{{"next_id", next_id_}, {"backends", router_->state()}}; }

void ModelGateway::restore(const Json& state) {
  next_id_ = state.at("next_id");
  router_->restore(state.value("backends", Json::object()));
}

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

Action checked(const std::string& name, const Json& args, const std::set<std::string>& allowed) {
  if (!allowed.count(name)) throw Error(ErrorCode::DisallowedTool, "tool '" + name + "' is not allowed here");
  return action_from_call(name, args);
}

void parse_fenced_object(const Json& obj, const std::set<std::string>& allowed, std::vector<Action>& out) {
  if (!obj.is_object() || !obj.contains("name") || !obj["name"].is_string()) {
    throw Error(ErrorCode::UnparseableAction, "action block needs a \"name\"");
  }
  out.push_back(checked(obj["name"].get<std::string>(), obj.value("arguments", Json::object()), allowed));
}

std::vector<Action> parse_verdict_text(const std::string& text, const std::set<std::string>& allowed) {
  std::istringstream in(text);
  std::string first;
  std::getline(in, first);
  first = trim(first);
  auto word = first.substr(0, first.find_first_of(" \t:.,"));
  if (word == "APPROVE") return {checked("submit_verdict", Json{{"verdict", "approve"}}, allowed)};
  if (word != "REJECT") throw Error(ErrorCode::UnparseableAction, "reviewer text must start with APPROVE or REJECT");
  static const std::regex kIssue(R"(^\s*-\s*\[(blocking|minor)\]\s*([^:]+?)\s*:\s*(.+?)\s*$)");
  Json issues = Json::array();
  std::string line;
  while (std::getline(in, line)) {
    std::smatch m;
    if (std::regex_match(line, m, kIssue)) {
      issues.push_back({{"severity", m[1].str()}, {"location", m[2].str()}, {"text", m[3].str()}});
    }
  }
  if (issues.empty()) throw Error(ErrorCode::UnparseableAction, "REJECT without issue lines");
  return {checked("submit_verdict", Json{{"verdict", "reject"}, {"issues", issues}}, allowed)};
}

}  // namespace

ParsedActions parse_actions(const ModelResponse& response, const std::set<std::string>& allowed,
                            const TextPolicy& policy) {
  ParsedActions out;
  switch (response.finish) {
    case Finish::Length: throw Error(ErrorCode::UnparseableAction, "response was truncated");
    case Finish::Refusal: out.refused = true; return out;
    default: break;
  }
  if (!response.tool_calls.empty()) {
    for (const auto& call : response.tool_calls) out.actions.push_back(checked(call.name, call.arguments, allowed));
    return out;
  }

  static const std::regex kFence("```action[ \\t]*\\r?\\n([\\s\\S]*?)```");
  auto begin = std::sregex_iterator(response.text.begin(), response.text.end(), kFence);
  for (auto it = begin; it != std::sregex_iterator(); ++it) {
    Json block;
    try {
      block = Json::parse((*it)[1].str());
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::UnparseableAction, std::string("action block is not JSON: ") + e.what());
    }
    if (block.is_array()) {
      for (const auto& obj : block) parse_fenced_object(obj, allowed, out.actions);
    } else {
      parse_fenced_object(block, allowed, out.actions);
    }
  }
  if (begin != std::sregex_iterator()) {
    if (out.actions.empty()) throw Error(ErrorCode::UnparseableAction, "empty action block");
    return out;
  }

  const std::string text = trim(response.text);
  if (text.empty()) {
    out.actions.push_back(act::Wait{});
    return out;
  }
  if (policy.mode == TextPolicy::Mode::Verdict) {
    out.actions = parse_verdict_text(text, allowed);
    return out;
  }
  if (!allowed.count("send_message")) throw Error(ErrorCode::DisallowedTool, "agent may not send messages");
  act::SendMessage m;
  m.to = "parent";
  m.kind = policy.parent_is_user ? MessageKind::UserChat : MessageKind::StatusUpdate;
  m.body = text;
  out.actions.push_back(std::move(m));
  return out;
}

}  // namespace quire
