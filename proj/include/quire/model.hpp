#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "quire/agent_types.hpp"
#include "quire/common.hpp"
#include "quire/error.hpp"

namespace quire {

class Workspace;

struct Turn {
  std::string speaker;
  std::string text;
  bool operator==(const Turn&) const = default;
};

struct ModelRequest {
  std::string agent_role;
  std::string agent;
  std::string system;
  std::vector<Turn> transcript;
  std::vector<ToolSchema> tools;
  int max_output_tokens = 4096;
  std::optional<std::uint64_t> seed;
};

struct ToolCall {
  std::string name;
  Json arguments = Json::object();
  bool operator==(const ToolCall&) const = default;
};

enum class Finish { Stop, ToolCall, Length, Refusal };
std::string_view to_string(Finish f) noexcept;
Finish parse_finish(std::string_view s);

struct ModelResponse {
  std::string text;
  std::vector<ToolCall> tool_calls;
  Finish finish = Finish::Stop;
  bool operator==(const ModelResponse&) const = default;
};

void to_json(Json& j, const Turn& t);
void from_json(const Json& j, Turn& t);
void to_json(Json& j, const ModelRequest& r);
void to_json(Json& j, const ModelResponse& r);
/// Accepts a response literal; finish defaults to tool_call when calls are
/// present and stop otherwise. Throws FixtureParseError on inconsistency.
void from_json(const Json& j, ModelResponse& r);

struct CallStats {
  int retries = 0;
};

class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  /// Completes one request. The returned response satisfies
  /// "tool_calls non-empty iff finish == tool_call".
  ModelResponse complete(const ModelRequest& request, CallStats* stats = nullptr);

  virtual std::string name() const = 0;
  /// Replay position for crash-restart; empty for stateless backends.
  virtual Json state() const { return Json::object(); }
  virtual void restore(const Json&) {}

 protected:
  virtual ModelResponse do_complete(const ModelRequest& request, CallStats& stats) = 0;
};

/// The response handed out when nothing in a lenient script applies.
ModelResponse canned_wait();

/// Deterministic replay of a fixture. Entries are consumed in order: a
/// request takes the first unconsumed entry whose role/agent selector
/// matches, and only that entry's substring condition is then checked.
class ScriptedBackend final : public ModelBackend {
 public:
  struct Entry {
    std::optional<std::string> agent_role;
    std::optional<std::string> agent;
    std::optional<std::string> contains;
    ModelResponse respond;
  };

  ScriptedBackend(std::vector<Entry> entries, bool strict);

  std::string name() const override { return "scripted"; }
  Json state() const override;
  void restore(const Json& state) override;

  std::size_t consumed() const;
  std::size_t size() const noexcept { return entries_.size(); }
  bool strict() const noexcept { return strict_; }

 protected:
  ModelResponse do_complete(const ModelRequest& request, CallStats& stats) override;

 private:
  bool selects(const Entry& e, const ModelRequest& r) const;

  std::vector<Entry> entries_;
  bool strict_;
  mutable std::mutex mu_;
  std::vector<bool> used_;
};

/// Parses a `.fixture.json` document. Throws FixtureParseError.
std::unique_ptr<ScriptedBackend> load_script(std::string_view fixture_bytes);
std::unique_ptr<ScriptedBackend> load_script_file(const std::string& path);

struct WireConfig {
  std::string endpoint;  // full URL, e.g. http://127.0.0.1:8000/v1/complete
  std::string api_key;
  std::string dialect = "native";  // native | openai
  std::string model;
  int max_retries = 4;
  std::chrono::milliseconds base_backoff{200};
  std::chrono::milliseconds max_backoff{5000};
  std::chrono::seconds timeout{120};
  double temperature = 0.0;

  /// Reads MODEL_ENDPOINT, MODEL_API_KEY, MODEL_DIALECT and MODEL_NAME.
  /// Throws ConfigError when MODEL_ENDPOINT is unset.
  static WireConfig from_env();
};

/// JSON-over-HTTP backend. Connection failures and 408/429/5xx responses are
/// retried with exponential backoff; other statuses fail immediately.
class WireBackend final : public ModelBackend {
 public:
  explicit WireBackend(WireConfig config);
  std::string name() const override { return "wire:" + config_.dialect; }
  const WireConfig& config() const noexcept { return config_; }

  static Json encode_request(const ModelRequest& request, const WireConfig& config);
  static ModelResponse decode_response(const Json& body, std::string_view dialect);

 protected:
  ModelResponse do_complete(const ModelRequest& request, CallStats& stats) override;

 private:
  WireConfig config_;
};

/// Picks a backend by binding key, then role name, then "default".
class BackendRouter {
 public:
  explicit BackendRouter(std::shared_ptr<ModelBackend> fallback);
  void bind(const std::string& key, std::shared_ptr<ModelBackend> backend);
  ModelBackend& resolve(const std::string& binding, const std::string& role) const;

  Json state() const;
  void restore(const Json& state);

 private:
  std::map<std::string, std::shared_ptr<ModelBackend>> backends_;
};

/// Error from a logged model call; carries the call id so the trajectory can
/// reference the failed call.
class ModelCallError : public Error {
 public:
  ModelCallError(ErrorCode code, const std::string& message, std::string call_id)
      : Error(code, message), call_id_(std::move(call_id)) {}
  const std::string& call_id() const noexcept { return call_id_; }

 private:
  std::string call_id_;
};

/// Every call, successful or not, is appended to `model/calls.jsonl` before
/// the caller sees the outcome.
class ModelGateway {
 public:
  static constexpr std::string_view kLogPath = "model/calls.jsonl";

  struct Result {
    std::string call_id;
    ModelResponse response;
  };

  ModelGateway(std::shared_ptr<BackendRouter> router, Workspace* workspace, std::shared_ptr<Clock> clock);

  Result complete(const ModelRequest& request, const std::string& binding);
  BackendRouter& router() noexcept { return *router_; }

  Json state() const;
  void restore(const Json& state);

 private:
  std::shared_ptr<BackendRouter> router_;
  Workspace* workspace_;
  std::shared_ptr<Clock> clock_;
  std::mutex mu_;
  std::uint64_t next_id_ = 1;
};

struct TextPolicy {
  enum class Mode { Message, Verdict };
  Mode mode = Mode::Message;
  bool parent_is_user = false;
};

struct ParsedActions {
  std::vector<Action> actions;
  bool refused = false;
};

/// Turns a model response into actions.
///
/// Tool calls map one-to-one. Text may carry ```action fenced blocks holding
/// {"name","arguments"} objects (or an array of them); other text follows the
/// policy: reviewers must answer APPROVE or REJECT with "- [severity]
/// location: text" issue lines, everyone else sends the text to the parent.
/// Empty text is a Wait. Throws DisallowedTool, UnparseableAction and
/// MalformedProposal.
ParsedActions parse_actions(const ModelResponse& response, const std::set<std::string>& allowed,
                            const TextPolicy& policy = {});

}  // namespace quire
