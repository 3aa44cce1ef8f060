#include <httplib.h>

#include <cstdlib>
#include <thread>

#include "quire/model.hpp"

namespace quire {

namespace {

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Url split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::ConfigError, "endpoint must be an absolute URL: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v != nullptr && *v != '\0' ? std::string(v) : fallback;
}

std::string wire_role(const std::string& speaker) { return speaker == "assistant" ? "assistant" : "user"; }

std::string wire_content(const Turn& t) {
  if (t.speaker == "assistant" || t.speaker == "user") return t.text;
  return "[" + t.speaker + "] " + t.text;
}

bool retryable(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

WireConfig WireConfig::from_env() {
  WireConfig c;
  c.endpoint = env_or("MODEL_ENDPOINT", "");
  if (c.endpoint.empty()) throw Error(ErrorCode::ConfigError, "MODEL_ENDPOINT is not set");
  c.api_key = env_or("MODEL_API_KEY", "");
  c.dialect = env_or("MODEL_DIALECT", "native");
  c.model = env_or("MODEL_NAME", "");
  if (c.dialect != "native" && c.dialect != "openai") {
    throw Error(ErrorCode::ConfigError, "unknown MODEL_DIALECT '" + c.dialect + "'");
  }
  return c;
}

WireBackend::WireBackend(WireConfig config) : config_(std::move(config)) {
  split_url(config_.endpoint);
  if (config_.dialect != "native" && config_.dialect != "openai") {
    throw Error(ErrorCode::ConfigError, "unknown dialect '" + config_.dialect + "'");
  }
}

Json WireBackend::encode_request(const ModelRequest& request, const WireConfig& config) {
  Json messages = Json::array();
  if (config.dialect == "openai") messages.push_back({{"role", "system"}, {"content", request.system}});
  for (const auto& t : request.transcript) messages.push_back({{"role", wire_role(t.speaker)}, {"content", wire_content(t)}});
  Json tools = Json::array();
  for (const auto& t : request.tools) {
    if (config.dialect == "openai") {
      tools.push_back({{"type", "function"},
                       {"function", {{"name", t.name}, {"description", t.description}, {"parameters", t.parameters}}}});
    } else {
      tools.push_back({{"name", t.name}, {"description", t.description}, {"parameters", t.parameters}});
    }
  }
  Json body{{"messages", messages}, {"max_tokens", request.max_output_tokens}, {"temperature", config.temperature}};
  if (!config.model.empty()) body["model"] = config.model;
  if (!tools.empty()) body["tools"] = tools;
  if (request.seed) body["seed"] = *request.seed;
  if (config.dialect == "native") {
    body["system"] = request.system;
    body["agent_role"] = request.agent_role;
  }
  return body;
}

ModelResponse WireBackend::decode_response(const Json& body, std::string_view dialect) {
  try {
    if (dialect == "native") return body.get<ModelResponse>();
    const Json& choice = body.at("choices").at(0);
    const Json& msg = choice.at("message");
    ModelResponse r;
    if (msg.contains("content") && msg["content"].is_string()) r.text = msg["content"].get<std::string>();
    if (msg.contains("tool_calls") && msg["tool_calls"].is_array()) {
      for (const auto& c : msg["tool_calls"]) {
        const Json& fn = c.at("function");
        ToolCall call;
        call.name = fn.at("name").get<std::string>();
        const Json& args = fn.value("arguments", Json("{}"));
        call.arguments = args.is_string() ? Json::parse(args.get<std::string>()) : args;
        r.tool_calls.push_back(std::move(call));
      }
    }
    const std::string reason = choice.value("finish_reason", std::string("stop"));
    if (!r.tool_calls.empty()) {
      r.finish = Finish::ToolCall;
    } else if (reason == "length") {
      r.finish = Finish::Length;
    } else if (reason == "content_filter" || reason == "refusal") {
      r.finish = Finish::Refusal;
    } else {
      r.finish = Finish::Stop;
    }
    return r;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::BackendUnavailable, std::string("malformed model response: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::BackendUnavailable, std::string("malformed model response: ") + e.what());
  }
}

ModelResponse WireBackend::do_complete(const ModelRequest& request, CallStats& stats) {
  const Url url = split_url(config_.endpoint);
  httplib::Client client(url.origin);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  client.set_write_timeout(config_.timeout);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
  const std::string payload = encode_request(request, config_).dump();

  std::string last_error = "no attempt made";
  bool last_was_timeout = false;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      ++stats.retries;
      auto delay = config_.base_backoff * (1LL << std::min(attempt - 1, 20));
      std::this_thread::sleep_for(std::min<std::chrono::milliseconds>(delay, config_.max_backoff));
    }
    auto res = client.Post(url.path, headers, payload, "application/json");
    if (!res) {
      const auto err = res.error();
      last_was_timeout = err == httplib::Error::Read || err == httplib::Error::Write ||
                         err == httplib::Error::ConnectionTimeout;
      last_error = "transport error: " + httplib::to_string(err);
      continue;
    }
    if (res->status >= 200 && res->status < 300) {
      Json body;
      try {
        body = Json::parse(res->body);
      } catch (const Json::exception& e) {
        throw Error(ErrorCode::BackendUnavailable, std::string("response is not JSON: ") + e.what());
      }
      return decode_response(body, config_.dialect);
    }
    if (!retryable(res->status)) {
      throw Error(ErrorCode::BackendUnavailable, "endpoint answered " + std::to_string(res->status));
    }
    last_was_timeout = res->status == 408;
    last_error = "endpoint answered " + std::to_string(res->status);
  }
  throw Error(last_was_timeout ? ErrorCode::BackendTimeout : ErrorCode::BackendUnavailable,
              "retries exhausted (" + std::to_string(config_.max_retries) + "): " + last_error);
}

}  // namespace quire
