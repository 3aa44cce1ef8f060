#include <httplib.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "quire/digest.hpp"
#include "quire/error.hpp"
#include "quire/report.hpp"
#include "quire/tools.hpp"
#include "quire/workspace.hpp"

namespace quire {

void to_json(Json& j, const SearchHit& h) {
  j = Json{{"title", h.title}, {"uri", h.uri}, {"snippet", h.snippet}, {"source", h.source}};
}

void from_json(const Json& j, SearchHit& h) {
  j.at("title").get_to(h.title);
  j.at("uri").get_to(h.uri);
  h.snippet = j.value("snippet", std::string{});
  h.source = j.value("source", std::string{});
}

std::string canonical_query(std::string_view query) {
  std::string out = normalize_text(query);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

namespace {

std::pair<std::string, std::string> split_origin(const std::string& uri) {
  auto scheme_end = uri.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::FetchFailed, "not an absolute URI: " + uri);
  auto path_start = uri.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {uri, "/"};
  return {uri.substr(0, path_start), uri.substr(path_start)};
}

std::string extension_for(const std::string& content_type) {
  if (content_type.find("pdf") != std::string::npos) return "pdf";
  if (content_type.find("html") != std::string::npos) return "html";
  if (content_type.find("json") != std::string::npos) return "json";
  if (content_type.rfind("text/", 0) == 0) return "txt";
  return "bin";
}

std::string clip(const std::string& s, std::size_t n) { return s.size() <= n ? s : s.substr(0, n) + "..."; }

}  // namespace

FixtureTools::FixtureTools(const Json& doc, std::uint64_t max_document_bytes) : max_bytes_(max_document_bytes) {
  try {
    strict_ = doc.value("strict", false);
    const Json search = doc.value("search", Json::object());
    const Json fetch = doc.value("fetch", Json::object());
    for (const auto& [query, hits] : search.items()) {
      auto& list = search_[canonical_query(query)];
      for (const auto& h : hits) {
        SearchHit hit = h.get<SearchHit>();
        if (hit.source.empty()) hit.source = "fixture";
        if (!is_well_formed_uri(hit.uri)) throw Error(ErrorCode::FixtureParseError, "malformed hit uri " + hit.uri);
        list.push_back(std::move(hit));
      }
    }
    for (const auto& [uri, d] : fetch.items()) {
      fetch_[uri] = Document{d.value("content_type", std::string("text/plain")), d.at("body").get<std::string>()};
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::FixtureParseError, std::string("tool fixture: ") + e.what());
  }
}

std::shared_ptr<FixtureTools> FixtureTools::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read tool fixture " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return std::make_shared<FixtureTools>(Json::parse(ss.str()));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::FixtureParseError, std::string("tool fixture is not JSON: ") + e.what());
  }
}

std::vector<SearchHit> FixtureTools::search(const std::string& query, std::size_t k) {
  if (k == 0) return {};
  auto it = search_.find(canonical_query(query));
  if (it == search_.end()) {
    if (strict_) throw Error(ErrorCode::QueryNotInFixture, canonical_query(query));
    return {};
  }
  std::vector<SearchHit> out(it->second.begin(), it->second.begin() + std::min(k, it->second.size()));
  return out;
}

Document FixtureTools::fetch(const std::string& uri) {
  auto it = fetch_.find(uri);
  if (it == fetch_.end()) throw Error(ErrorCode::FetchDenied, "uri not in fixture: " + uri);
  if (it->second.bytes.size() > max_bytes_) throw Error(ErrorCode::FetchFailed, "document exceeds size cap");
  return it->second;
}

HttpSearchProvider::HttpSearchProvider(std::string endpoint) : endpoint_(std::move(endpoint)) {}

std::vector<SearchHit> HttpSearchProvider::search(const std::string& query, std::size_t k) {
  if (k == 0) return {};
  if (endpoint_.empty()) throw Error(ErrorCode::ProviderUnavailable, "no search endpoint configured");
  auto [origin, path] = split_origin(endpoint_);
  httplib::Client client(origin);
  client.set_read_timeout(std::chrono::seconds(30));
  httplib::Params params{{"q", query}, {"k", std::to_string(k)}};
  auto res = client.Get(path, params, httplib::Headers{});
  if (!res || res->status != 200) throw Error(ErrorCode::ProviderUnavailable, "search endpoint unreachable");
  std::vector<SearchHit> out;
  try {
    for (const auto& h : Json::parse(res->body)) {
      SearchHit hit = h.get<SearchHit>();
      if (hit.source.empty()) hit.source = origin;
      if (!is_well_formed_uri(hit.uri)) continue;
      out.push_back(std::move(hit));
      if (out.size() == k) break;
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ProviderUnavailable, std::string("malformed search response: ") + e.what());
  }
  return out;
}

HttpFetchProvider::HttpFetchProvider(std::vector<std::string> allowlist, std::uint64_t max_bytes)
    : allowlist_(std::move(allowlist)), max_bytes_(max_bytes) {}

Document HttpFetchProvider::fetch(const std::string& uri) {
  const bool allowed = std::any_of(allowlist_.begin(), allowlist_.end(),
                                   [&](const std::string& prefix) { return uri.rfind(prefix, 0) == 0; });
  if (!allowed || !is_well_formed_uri(uri)) throw Error(ErrorCode::FetchDenied, "uri not allowlisted: " + uri);
  auto [origin, path] = split_origin(uri);
  httplib::Client client(origin);
  client.set_follow_location(true);
  client.set_read_timeout(std::chrono::seconds(60));
  std::string body;
  bool oversize = false;
  auto res = client.Get(path, [&](const char* data, std::size_t len) {
    if (body.size() + len > max_bytes_) {
      oversize = true;
      return false;
    }
    body.append(data, len);
    return true;
  });
  if (oversize) throw Error(ErrorCode::FetchFailed, "document exceeds size cap of " + std::to_string(max_bytes_));
  if (!res) throw Error(ErrorCode::FetchFailed, "transport error: " + httplib::to_string(res.error()));
  if (res->status != 200) throw Error(ErrorCode::FetchFailed, "status " + std::to_string(res->status));
  return Document{res->get_header_value("Content-Type"), std::move(body)};
}

ToolBox::ToolBox(Workspace& workspace, std::shared_ptr<Clock> clock)
    : workspace_(workspace), clock_(std::move(clock)) {}

std::uint64_t ToolBox::next_index(const std::string& dir) const {
  std::uint64_t max = 0;
  for (const auto& path : workspace_.list_files(dir + "/")) {
    std::string seg = path.substr(dir.size() + 1);
    seg = seg.substr(0, seg.find_first_of("/."));
    if (seg.rfind("job", 0) == 0) seg = seg.substr(3);
    try {
      max = std::max<std::uint64_t>(max, std::stoull(seg));
    } catch (const std::exception&) {
    }
  }
  return max + 1;
}

ToolOutcome ToolBox::invoke(const std::string& agent, const std::string& scope, const std::string& tool,
                            const Json& args) {
  const std::string prefix = scope.empty() ? "project" : "ws/" + scope;
  Json entry{{"agent", agent}, {"scope", scope}, {"tool", tool}, {"args", args}};
  auto log = [&](Json& e) {
    {
      std::lock_guard lock(mu_);
      e["seq"] = ++seq_;
    }
    e["at"] = clock_ ? clock_->now() : 0;
    workspace_.append_file(kLogPath, e.dump(-1, ' ', false, Json::error_handler_t::replace) + "\n", "tools");
  };
  try {
    ToolOutcome outcome = run(agent, prefix, tool, args);
    entry["ok"] = true;
    entry["result_digest"] = sha256_hex(outcome.summary.dump(-1, ' ', false, Json::error_handler_t::replace));
    entry["written"] = outcome.written;
    log(entry);
    return outcome;
  } catch (const Error& e) {
    entry["ok"] = false;
    entry["error"] = e.what();
    log(entry);
    throw;
  }
}

ToolOutcome ToolBox::run(const std::string& agent, const std::string& prefix, const std::string& tool,
                         const Json& args) {
  ToolOutcome out;
  if (tool == "search_literature") {
    if (!args.contains("query") || !args["query"].is_string()) {
      throw Error(ErrorCode::UnparseableAction, "search_literature needs a query");
    }
    const std::string query = args["query"];
    const long long k = args.value("k", 5LL);
    if (k < 0) throw Error(ErrorCode::UnparseableAction, "k must be >= 0");
    if (!search_) throw Error(ErrorCode::ProviderUnavailable, "no literature provider configured");
    auto hits = search_->search(query, static_cast<std::size_t>(k));
    const std::string path = prefix + "/search/" + std::to_string(next_index(prefix + "/search")) + ".json";
    Json doc{{"query", query}, {"k", k}, {"hits", hits}};
    workspace_.write_file(path, doc.dump(2) + "\n", agent);
    out.written.push_back(path);
    out.summary = Json{{"query", query}, {"hits", hits}, {"path", path}};
    return out;
  }
  if (tool == "fetch_document") {
    if (!args.contains("uri") || !args["uri"].is_string()) {
      throw Error(ErrorCode::UnparseableAction, "fetch_document needs a uri");
    }
    const std::string uri = args["uri"];
    if (!fetch_) throw Error(ErrorCode::ProviderUnavailable, "no fetch provider configured");
    Document doc = fetch_->fetch(uri);
    const std::string path = prefix + "/sources/" + std::to_string(next_index(prefix + "/sources")) + "." +
                             extension_for(doc.content_type);
    workspace_.write_file(path, doc.bytes, agent);
    {
      std::lock_guard lock(mu_);
      fetched_.insert(uri);
    }
    out.written.push_back(path);
    const bool text = doc.content_type.rfind("text/", 0) == 0 || doc.content_type.find("json") != std::string::npos;
    out.summary = Json{{"uri", uri}, {"content_type", doc.content_type}, {"size", doc.bytes.size()}, {"path", path}};
    if (text) out.summary["excerpt"] = clip(doc.bytes, 2000);
    return out;
  }
  if (tool == "execute_code" || tool == "execute_parallel") {
    if (!sandbox_) throw Error(ErrorCode::RuntimeUnavailable, "no sandbox configured");
    std::vector<CodeJob> jobs;
    std::size_t max_concurrency = 1;
    if (tool == "execute_code") {
      jobs.push_back(job_from_json(args, sandbox_->config().defaults));
    } else {
      if (!args.contains("jobs") || !args["jobs"].is_array()) {
        throw Error(ErrorCode::UnparseableAction, "execute_parallel needs a jobs list");
      }
      for (const auto& j : args["jobs"]) jobs.push_back(job_from_json(j, sandbox_->config().defaults));
      max_concurrency = args.value("max_concurrency", jobs.empty() ? std::size_t{1} : jobs.size());
    }
    std::vector<CodeResult> results;
    if (tool == "execute_code") {
      results.push_back(sandbox_->execute(jobs.front()));
    } else {
      results = sandbox_->execute_parallel(jobs, max_concurrency);
    }
    const std::string code_dir = prefix + "/code";
    std::uint64_t n = next_index(code_dir);
    Json summaries = Json::array();
    for (std::size_t i = 0; i < results.size(); ++i, ++n) {
      const std::string dir = code_dir + "/job" + std::to_string(n);
      for (const auto& [p, c] : jobs[i].files) {
        workspace_.write_file(dir + "/" + p, c, agent);
        out.written.push_back(dir + "/" + p);
      }
      for (const auto& [p, c] : results[i].produced_files) {
        workspace_.write_file(dir + "/" + p, c, agent);
        out.written.push_back(dir + "/" + p);
      }
      Json record = results[i];
      record.erase("produced_files");
      record["runtime"] = jobs[i].runtime;
      record["entry"] = jobs[i].entry;
      workspace_.write_file(dir + "/result.json", record.dump(2, ' ', false, Json::error_handler_t::replace) + "\n",
                            agent);
      out.written.push_back(dir + "/result.json");
      Json s{{"exit_code", results[i].exit_code},
             {"stdout", clip(results[i].stdout_data, 4000)},
             {"stderr", clip(results[i].stderr_data, 4000)},
             {"timed_out", results[i].timed_out},
             {"path", dir + "/result.json"}};
      if (!results[i].error.empty()) s["error"] = results[i].error;
      summaries.push_back(std::move(s));
    }
    out.summary = tool == "execute_code" ? summaries.at(0) : Json{{"results", summaries}};
    return out;
  }
  throw Error(ErrorCode::DisallowedTool, "unknown external tool '" + tool + "'");
}

bool ToolBox::verified(const std::string& uri) const {
  std::lock_guard lock(mu_);
  return fetched_.count(uri) > 0;
}

Json ToolBox::state() const {
  std::lock_guard lock(mu_);
  return Json{{"fetched", fetched_}, {"seq", seq_}};
}

void ToolBox::restore(const Json& state) {
  std::lock_guard lock(mu_);
  fetched_ = state.value("fetched", std::set<std::string>{});
  seq_ = state.value("seq", std::uint64_t{0});
}

}  // namespace quire
