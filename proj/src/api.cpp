#include "quire/api.hpp"

#include <sys/socket.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

#include <httplib.h>

#include "quire/error.hpp"

namespace quire {

namespace fs = std::filesystem;

std::chrono::milliseconds parse_duration(const std::string& text) {
  static const std::regex re(R"(^\s*([0-9]+(?:\.[0-9]+)?)\s*(ms|s|m|h|d)?\s*$)");
  std::smatch m;
  if (!std::regex_match(text, m, re)) throw Error(ErrorCode::ConfigError, "bad duration '" + text + "'");
  const double value = std::stod(m[1]);
  const std::string unit = m[2].matched ? m[2].str() : "s";
  double ms = value;
  if (unit == "s") ms *= 1000;
  if (unit == "m") ms *= 60000;
  if (unit == "h") ms *= 3600000;
  if (unit == "d") ms *= 86400000;
  if (ms <= 0) throw Error(ErrorCode::ConfigError, "duration must be positive: '" + text + "'");
  return std::chrono::milliseconds(static_cast<std::int64_t>(ms));
}

ApiConfig ApiConfig::from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, "config must be a JSON object");
  ApiConfig c;
  try {
    if (j.contains("listen")) {
      const std::string listen = j["listen"];
      const auto colon = listen.rfind(':');
      if (colon == std::string::npos) throw Error(ErrorCode::ConfigError, "listen must be host:port");
      c.host = listen.substr(0, colon);
      c.port = std::stoi(listen.substr(colon + 1));
    }
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    if (j.contains("backend")) {
      const Json& b = j["backend"];
      if (b.is_string()) {
        c.backend = b.get<std::string>();
      } else if (b.is_object()) {
        const std::string kind = b.value("kind", std::string{});
        if (kind == "scripted") {
          c.backend = "scripted:" + b.value("fixture", std::string{});
        } else if (kind == "wire") {
          if (b.contains("fixture")) throw Error(ErrorCode::ConfigError, "a wire backend takes no fixture");
          c.backend = "wire";
        } else {
          throw Error(ErrorCode::ConfigError, "backend kind must be scripted or wire");
        }
      } else {
        throw Error(ErrorCode::ConfigError, "backend must be a string or an object");
      }
    }
    c.tools_fixture = j.value("tools_fixture", std::string{});
    c.search_endpoint = j.value("search_endpoint", std::string{});
    c.fetch_allowlist = j.value("fetch_allowlist", std::vector<std::string>{});
    if (j.contains("sandbox")) {
      const Json& s = j["sandbox"];
      c.sandbox_limits = s.value("limits", Json(c.sandbox_limits)).get<Limits>();
      c.sandbox_concurrency = s.value("max_concurrency", c.sandbox_concurrency);
    }
    if (j.contains("review")) {
      const Json& r = j["review"];
      c.review.n_reviewers = r.value("n_reviewers", c.review.n_reviewers);
      c.review.max_rounds = r.value("max_rounds", c.review.max_rounds);
      c.review.stall_window = r.value("stall_window", c.review.stall_window);
    }
    c.cors_origins = j.value("cors_origins", std::vector<std::string>{});
    if (j.contains("data_dir")) c.data_dir = fs::path(j["data_dir"].get<std::string>());
    c.clock = j.value("clock", c.clock);
    c.run_agents = j.value("run_agents", c.run_agents);
    c.tick_budget = j.value("tick_budget", c.tick_budget);
    c.token = j.value("token", std::string{});
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ConfigError, e.what());
  } catch (const std::invalid_argument& e) {
    throw Error(ErrorCode::ConfigError, e.what());
  }
  if (const char* env = std::getenv("API_TOKEN"); env != nullptr && *env != '\0') c.token = env;
  c.validate();
  return c;
}

ApiConfig ApiConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read config " + path);
  try {
    return from_json(Json::parse(in));
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::ConfigError, path + ": " + e.what());
  }
}

namespace {

bool is_loopback(const std::string& host) {
  return host == "127.0.0.1" || host == "localhost" || host == "::1" || host.rfind("127.", 0) == 0;
}

}  // namespace

void ApiConfig::validate() const {
  if (backend.empty()) throw Error(ErrorCode::ConfigError, "no backend selected");
  if (backend != "wire" && backend.rfind("scripted:", 0) != 0) {
    throw Error(ErrorCode::ConfigError, "backend must be 'wire' or 'scripted:<fixture>'");
  }
  if (backend.rfind("scripted:", 0) == 0 && backend.size() == 9) {
    throw Error(ErrorCode::ConfigError, "scripted backend needs a fixture path");
  }
  if (port < 0 || port > 65535) throw Error(ErrorCode::ConfigError, "port out of range");
  if (token.empty() && !is_loopback(host)) {
    throw Error(ErrorCode::ConfigError, "listening on " + host + " requires API_TOKEN");
  }
  if (review.n_reviewers == 0 || review.max_rounds == 0) throw Error(ErrorCode::ConfigError, "review limits must be positive");
}

std::shared_ptr<BackendRouter> make_router(const std::string& spec) {
  if (spec.rfind("scripted:", 0) == 0) {
    std::shared_ptr<ModelBackend> b = load_script_file(spec.substr(9));
    return std::make_shared<BackendRouter>(std::move(b));
  }
  if (spec == "wire") return std::make_shared<BackendRouter>(std::make_shared<WireBackend>(WireConfig::from_env()));
  throw Error(ErrorCode::ConfigError, "unknown backend '" + spec + "'");
}

std::string default_tools_fixture(const std::string& spec) {
  if (spec.rfind("scripted:", 0) != 0) return {};
  std::string path = spec.substr(9);
  const std::string suffix = ".fixture.json";
  if (path.size() <= suffix.size() || path.compare(path.size() - suffix.size(), suffix.size(), suffix) != 0) return {};
  path = path.substr(0, path.size() - suffix.size()) + ".toolfix.json";
  return fs::exists(path) ? path : std::string{};
}

ProjectOptions make_project_options(const ApiConfig& config, const std::string& id, std::optional<fs::path> dir,
                                    std::shared_ptr<SandboxPool> sandbox) {
  ProjectOptions o;
  o.id = id;
  o.dir = std::move(dir);
  o.router = make_router(config.backend);
  const std::string toolfix = config.tools_fixture.empty() ? default_tools_fixture(config.backend) : config.tools_fixture;
  if (!toolfix.empty()) {
    auto fx = FixtureTools::load_file(toolfix);
    o.search = fx;
    o.fetch = fx;
  }
  if (!config.search_endpoint.empty()) o.search = std::make_shared<HttpSearchProvider>(config.search_endpoint);
  if (!config.fetch_allowlist.empty()) o.fetch = std::make_shared<HttpFetchProvider>(config.fetch_allowlist);
  o.sandbox = std::move(sandbox);
  o.clock = config.clock;
  o.review = config.review;
  return o;
}

namespace {

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound:
    case ErrorCode::VersionOutOfRange:
    case ErrorCode::UnknownWorkstream:
    case ErrorCode::UnknownGoal:
    case ErrorCode::UnknownAgent:
    case ErrorCode::ReportNotFound: return 404;
    case ErrorCode::NotUser: return 403;
    case ErrorCode::GateViolation:
    case ErrorCode::InvalidState:
    case ErrorCode::NoGoalsApproved:
    case ErrorCode::GoalNotApproved:
    case ErrorCode::VersionConflict: return 409;
    case ErrorCode::InvalidPath:
    case ErrorCode::InvalidSpec:
    case ErrorCode::UnparseableAction:
    case ErrorCode::MalformedProposal:
    case ErrorCode::ConfigError: return 400;
    default: return 500;
  }
}

void send_json(httplib::Response& res, const Json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(-1, ' ', false, Json::error_handler_t::replace), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, Json{{"error", code}, {"message", message}}, status);
}

Json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  try {
    Json j = Json::parse(req.body);
    if (!j.is_object()) throw Error(ErrorCode::InvalidSpec, "request body must be a JSON object");
    return j;
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::InvalidSpec, std::string("request body is not JSON: ") + e.what());
  }
}

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

Handler guarded(Handler h) {
  return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
    try {
      h(req, res);
    } catch (const Error& e) {
      send_error(res, http_status(e.code()), std::string(to_string(e.code())), e.what());
    } catch (const Json::exception& e) {
      send_error(res, 400, "InvalidSpec", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "Internal", e.what());
    }
  };
}

Json workstream_json(Project& p, const Workstream& w) {
  Json j = w;
  j["project"] = p.id();
  j["global_id"] = p.id() + "." + w.id;
  j["report_version"] = p.reports().latest_version(w.id);
  return j;
}

}  // namespace

Service::Service(ApiConfig config) : config_(std::move(config)) {
  config_.validate();
  SandboxConfig sc;
  sc.defaults = config_.sandbox_limits;
  sc.max_concurrency = std::max<std::size_t>(1, config_.sandbox_concurrency);
  sandbox_ = std::make_shared<SandboxPool>(sc);
  server_ = std::make_unique<httplib::Server>();
  // SO_REUSEADDR only: a second service on a busy port must fail to bind.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  if (config_.data_dir) reopen_existing();
  routes();
}

Service::~Service() { stop(); }

void Service::reopen_existing() {
  fs::create_directories(*config_.data_dir);
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(*config_.data_dir)) {
    if (fs::exists(entry.path() / "state" / "engine.json")) ids.push_back(entry.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  for (const auto& id : ids) {
    auto p = Project::open(make_project_options(config_, id, *config_.data_dir / id, sandbox_));
    if (id.size() > 1 && id[0] == 'p' && std::all_of(id.begin() + 1, id.end(), ::isdigit)) {
      next_project_ = std::max<std::uint64_t>(next_project_, std::stoull(id.substr(1)) + 1);
    }
    order_.push_back(id);
    projects_.emplace(id, std::move(p));
  }
}

std::string Service::create_project(const std::string& brief,
                                    const std::vector<std::pair<std::string, std::string>>& attachments) {
  std::string id;
  {
    std::lock_guard lock(mu_);
    id = "p" + std::to_string(next_project_++);
  }
  std::optional<fs::path> dir;
  if (config_.data_dir) dir = *config_.data_dir / id;
  auto p = Project::start(make_project_options(config_, id, dir, sandbox_), brief, attachments);
  std::lock_guard lock(mu_);
  order_.push_back(id);
  projects_.emplace(id, std::move(p));
  return id;
}

Project* Service::project(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = projects_.find(id);
  if (it == projects_.end()) throw Error(ErrorCode::NotFound, "project " + id);
  return it->second.get();
}

std::vector<std::string> Service::project_ids() const {
  std::lock_guard lock(mu_);
  return order_;
}

void Service::start() {
  if (started_) return;
  bool ok = config_.port == 0 ? (port_ = server_->bind_to_any_port(config_.host)) > 0
                              : server_->bind_to_port(config_.host, config_.port);
  if (!ok) {
    throw Error(ErrorCode::BindFailure, "cannot listen on " + config_.host + ":" + std::to_string(config_.port));
  }
  if (config_.port != 0) port_ = config_.port;
  started_ = true;
  listener_ = std::thread([this] { server_->listen_after_bind(); });
  if (config_.run_agents) runner_ = std::thread([this] { runner(); });
  server_->wait_until_ready();
}

void Service::stop() {
  if (stopping_.exchange(true)) return;
  {
    std::lock_guard lock(mu_);
    for (auto& [_, p] : projects_) p->events().notify_all();
  }
  if (server_) server_->stop();
  if (listener_.joinable()) listener_.join();
  if (runner_.joinable()) runner_.join();
  std::lock_guard lock(mu_);
  for (auto& [_, p] : projects_) p->tick(0);  // persists
}

void Service::runner() {
  while (!stopping_) {
    bool worked = false;
    for (const auto& id : project_ids()) {
      if (stopping_) break;
      Project* p = project(id);
      if (!p->quiescent()) {
        worked = p->tick(config_.tick_budget).steps > 0 || worked;
      }
    }
    if (!worked) std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
}

void Service::routes() {
  auto& s = *server_;
  const ApiConfig& cfg = config_;

  s.set_pre_routing_handler([&cfg](const httplib::Request& req, httplib::Response& res) {
    const std::string origin = req.get_header_value("Origin");
    if (!origin.empty() && (std::find(cfg.cors_origins.begin(), cfg.cors_origins.end(), origin) != cfg.cors_origins.end() ||
                            std::find(cfg.cors_origins.begin(), cfg.cors_origins.end(), "*") != cfg.cors_origins.end())) {
      res.set_header("Access-Control-Allow-Origin", origin);
      res.set_header("Vary", "Origin");
      res.set_header("Access-Control-Allow-Headers", "Authorization, Content-Type, Last-Event-ID");
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    }
    if (req.method == "OPTIONS") {
      res.status = 204;
      return httplib::Server::HandlerResponse::Handled;
    }
    if (cfg.token.empty() || req.path == "/v1/health") return httplib::Server::HandlerResponse::Unhandled;
    const std::string auth = req.get_header_value("Authorization");
    const bool ok = auth == "Bearer " + cfg.token || (req.has_param("token") && req.get_param_value("token") == cfg.token);
    if (!ok) {
      send_error(res, 401, "Unauthorized", "missing or wrong bearer token");
      return httplib::Server::HandlerResponse::Handled;
    }
    return httplib::Server::HandlerResponse::Unhandled;
  });

  s.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, Json{{"status", "ok"}}); });

  s.Post("/v1/projects", guarded([this](const httplib::Request& req, httplib::Response& res) {
           std::string brief;
           std::vector<std::pair<std::string, std::string>> attachments;
           if (req.is_multipart_form_data()) {
             brief = req.get_file_value("brief").content;
             for (const auto& [key, file] : req.files) {
               if (key != "brief" && !file.filename.empty()) attachments.emplace_back(file.filename, file.content);
             }
           } else {
             const Json body = parse_body(req);
             brief = body.value("brief", std::string{});
             for (const auto& a : body.value("attachments", Json::array())) {
               attachments.emplace_back(a.at("name").get<std::string>(), a.value("content", std::string{}));
             }
           }
           if (normalize_text(brief).empty()) throw Error(ErrorCode::InvalidSpec, "brief is required");
           send_json(res, Json{{"project_id", create_project(brief, attachments)}}, 201);
         }));

  s.Get("/v1/projects", guarded([this](const httplib::Request&, httplib::Response& res) {
          send_json(res, Json{{"projects", project_ids()}});
        }));

  s.Get(R"(/v1/projects/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
          Project* p = project(req.matches[1]);
          Json j = p->summary_json();
          j["quiescent"] = p->quiescent();
          j["chat"] = p->chat();
          send_json(res, j);
        }));

  s.Post(R"(/v1/projects/([^/]+)/chat)", guarded([this](const httplib::Request& req, httplib::Response& res) {
           Project* p = project(req.matches[1]);
           const Json body = parse_body(req);
           const std::string text = body.value("text", std::string{});
           if (normalize_text(text).empty()) throw Error(ErrorCode::InvalidSpec, "text is required");
           const auto attachments = body.value("attachments", std::vector<std::string>{});
           send_json(res, Json{{"message_id", p->handle_user_message(text, attachments)}}, 201);
         }));

  s.Post(R"(/v1/projects/([^/]+)/uploads)", guarded([this](const httplib::Request& req, httplib::Response& res) {
           Project* p = project(req.matches[1]);
           Json paths = Json::array();
           if (req.is_multipart_form_data()) {
             for (const auto& [_, file] : req.files) {
               if (!file.filename.empty()) paths.push_back(p->upload(file.filename, file.content));
             }
           } else {
             const Json body = parse_body(req);
             paths.push_back(p->upload(body.at("name").get<std::string>(), body.value("content", std::string{})));
           }
           send_json(res, Json{{"paths", paths}}, 201);
         }));

  s.Post(R"(/v1/projects/([^/]+)/goals)", guarded([this](const httplib::Request& req, httplib::Response& res) {
           Project* p = project(req.matches[1]);
           const Json body = parse_body(req);
           std::map<std::string, GoalDecision> decisions;
           const Json decision_list = body.value("decisions", Json::object());
           for (const auto& [goal, d] : decision_list.items()) {
             GoalDecision gd;
             if (d.is_string()) {
               const std::string word = d;
               if (word != "approve" && word != "reject") throw Error(ErrorCode::InvalidSpec, "decision must be approve, reject or {edit}");
               gd.approve = word == "approve";
             } else if (d.is_object() && d.contains("edit")) {
               gd.edit = d["edit"].get<std::string>();
             } else {
               throw Error(ErrorCode::InvalidSpec, "decision must be approve, reject or {edit}");
             }
             decisions[goal] = gd;
           }
           p->approve_goals(std::string(kUser), decisions);
           send_json(res, Json{{"state", to_string(p->state())}, {"goals", p->goals()}});
         }));

  s.Post(R"(/v1/projects/([^/]+)/tick)", guarded([this](const httplib::Request& req, httplib::Response& res) {
           Project* p = project(req.matches[1]);
           const Json body = parse_body(req);
           const TickSummary t = p->tick(body.value("budget", std::size_t{1}));
           Json j = t;
           j["quiescent"] = p->quiescent();
           send_json(res, j);
         }));

  s.Get(R"(/v1/projects/([^/]+)/workstreams)", guarded([this](const httplib::Request& req, httplib::Response& res) {
          Project* p = project(req.matches[1]);
          Json list = Json::array();
          for (const auto& w : p->workstreams()) list.push_back(workstream_json(*p, w));
          send_json(res, Json{{"workstreams", list}});
        }));

  s.Get(R"(/v1/projects/([^/]+)/alerts)", guarded([this](const httplib::Request& req, httplib::Response& res) {
          send_json(res, Json{{"alerts", project(req.matches[1])->alerts()}});
        }));

  s.Get(R"(/v1/projects/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
    Project* p = nullptr;
    std::uint64_t after = 0;
    try {
      p = project(req.matches[1]);
      if (req.has_param("after")) after = std::stoull(req.get_param_value("after"));
      if (req.has_header("Last-Event-ID")) after = std::max<std::uint64_t>(after, std::stoull(req.get_header_value("Last-Event-ID")));
    } catch (const Error& e) {
      return send_error(res, http_status(e.code()), std::string(to_string(e.code())), e.what());
    } catch (const std::exception& e) {
      return send_error(res, 400, "InvalidSpec", std::string("bad event cursor: ") + e.what());
    }
    const bool follow = !(req.has_param("follow") && req.get_param_value("follow") == "0");
    res.set_header("Cache-Control", "no-cache");
    auto cursor = std::make_shared<std::uint64_t>(after);
    res.set_chunked_content_provider("text/event-stream", [this, p, cursor, follow](std::size_t, httplib::DataSink& sink) {
      for (const auto& e : p->events().after(*cursor, 256)) {
        const std::string frame = encode_event(e);
        if (!sink.write(frame.data(), frame.size())) return false;
        *cursor = e.id;
      }
      if (p->events().last_id() > *cursor) return true;
      if (!follow || stopping_) {
        sink.done();
        return true;
      }
      if (!p->events().wait_for(*cursor, std::chrono::milliseconds(250))) {
        static const std::string keepalive = ": keepalive\n\n";
        if (!sink.write(keepalive.data(), keepalive.size())) return false;
      }
      return !stopping_.load();
    });
  });

  auto resolve_ws = [this](const std::string& key, const httplib::Request& req) -> std::pair<Project*, std::string> {
    const auto dot = key.find('.');
    if (dot != std::string::npos) {
      Project* p = project(key.substr(0, dot));
      const std::string ws = key.substr(dot + 1);
      p->workstream(ws);
      return {p, ws};
    }
    if (req.has_param("project")) {
      Project* p = project(req.get_param_value("project"));
      p->workstream(key);
      return {p, key};
    }
    std::vector<Project*> hits;
    for (const auto& id : project_ids()) {
      Project* p = project(id);
      try {
        p->workstream(key);
        hits.push_back(p);
      } catch (const Error&) {
      }
    }
    if (hits.empty()) throw Error(ErrorCode::UnknownWorkstream, key);
    if (hits.size() > 1) throw Error(ErrorCode::InvalidSpec, key + " is ambiguous; use <project>." + key);
    return {hits.front(), key};
  };

  s.Get(R"(/v1/workstreams/([^/]+))", guarded([resolve_ws](const httplib::Request& req, httplib::Response& res) {
          auto [p, ws] = resolve_ws(req.matches[1], req);
          Json j = workstream_json(*p, p->workstream(ws));
          j["agents"] = Json::array();
          for (const auto& a : p->runtime().agents()) {
            if (p->runtime().spec(a).workstream == ws) j["agents"].push_back(a);
          }
          send_json(res, j);
        }));

  s.Get(R"(/v1/workstreams/([^/]+)/report)", guarded([resolve_ws](const httplib::Request& req, httplib::Response& res) {
          auto [p, ws] = resolve_ws(req.matches[1], req);
          const RenderFormat fmt = parse_render_format(req.has_param("format") ? req.get_param_value("format") : "structured");
          std::optional<std::uint64_t> version;
          if (req.has_param("version")) version = std::stoull(req.get_param_value("version"));
          const Report r = p->reports().load(ws, version);
          res.set_content(render(r, fmt), std::string(content_type(fmt)));
        }));

  s.Get(R"(/v1/workstreams/([^/]+)/trajectory)", guarded([resolve_ws](const httplib::Request& req, httplib::Response& res) {
          auto [p, ws] = resolve_ws(req.matches[1], req);
          const std::string agent = req.has_param("agent") ? req.get_param_value("agent") : p->workstream(ws).coordinator;
          if (p->runtime().spec(agent).workstream != ws) throw Error(ErrorCode::UnknownAgent, agent + " is not in " + ws);
          send_json(res, Json{{"workstream", ws}, {"agent", agent}, {"records", p->trajectory(agent)}});
        }));

  s.Get(R"(/v1/workstreams/([^/]+)/review)", guarded([resolve_ws](const httplib::Request& req, httplib::Response& res) {
          auto [p, ws] = resolve_ws(req.matches[1], req);
          send_json(res, Json{{"workstream", ws}, {"sessions", p->reviews().sessions_for(ws)}});
        }));

  s.Get(R"(/v1/projects/([^/]+)/files)", guarded([this](const httplib::Request& req, httplib::Response& res) {
          Project* p = project(req.matches[1]);
          send_json(res, Json{{"files", p->workspace().list_files(req.has_param("prefix") ? req.get_param_value("prefix") : "")}});
        }));

  s.Get(R"(/v1/projects/([^/]+)/files/(.+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
          Project* p = project(req.matches[1]);
          const std::string path = req.matches[2];
          std::optional<std::uint64_t> version;
          if (req.has_param("version")) version = std::stoull(req.get_param_value("version"));
          const FileVersion meta = p->workspace().metadata(path, version);
          res.set_header("X-Version", std::to_string(meta.version));
          res.set_header("X-Digest", meta.digest);
          res.set_content(p->workspace().read_file(path, version), "application/octet-stream");
        }));
}

}  // namespace quire
