#include "quire/workspace.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "quire/digest.hpp"
#include "quire/error.hpp"

namespace quire {

namespace fs = std::filesystem;

void to_json(Json& j, const FileVersion& v) {
  j = Json{{"path", v.path},           {"version", v.version}, {"author", v.author},
           {"created_at", v.created_at}, {"digest", v.digest},   {"size", v.size}};
}

void from_json(const Json& j, FileVersion& v) {
  j.at("path").get_to(v.path);
  j.at("version").get_to(v.version);
  j.at("author").get_to(v.author);
  j.at("created_at").get_to(v.created_at);
  j.at("digest").get_to(v.digest);
  j.at("size").get_to(v.size);
}

void to_json(Json& j, const WorkspaceSnapshot& s) {
  j = Json{{"project_id", s.project_id},
           {"digest_algorithm", s.digest_algorithm},
           {"latest", s.latest},
           {"file_count", s.file_count}};
}

namespace {

std::string encode_path(const std::string& path) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : path) {
    if (std::isalnum(c) || c == '.' || c == '_' || c == '-') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 0x0f]);
    }
  }
  // "." and ".." are not usable as directory names.
  if (out == "." || out == "..") out = "%2E" + out.substr(1);
  return out;
}

std::string decode_path(const std::string& name) {
  std::string out;
  for (std::size_t i = 0; i < name.size(); ++i) {
    if (name[i] == '%' && i + 2 < name.size()) {
      out.push_back(static_cast<char>(std::stoi(name.substr(i + 1, 2), nullptr, 16)));
      i += 2;
    } else {
      out.push_back(name[i]);
    }
  }
  return out;
}

std::string blob_name(std::uint64_t version) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "v%06llu.blob", static_cast<unsigned long long>(version));
  return buf;
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::Persistence, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_all(const fs::path& p, std::string_view data) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  out.flush();
  if (!out) throw Error(ErrorCode::Persistence, "cannot write " + p.string());
}

}  // namespace

struct Workspace::Entry {
  struct Version {
    FileVersion meta;
    std::shared_ptr<std::string> buffer;
    std::size_t length = 0;
  };

  std::mutex mu;
  std::vector<Version> versions;
  // Hash state matching the content of the last version.
  std::optional<Sha256> hasher;

  std::string content(std::size_t index) const {
    const auto& v = versions[index];
    return v.buffer->substr(0, v.length);
  }
};

std::string Workspace::normalize_path(std::string_view path) {
  std::vector<std::string_view> segments;
  std::size_t i = 0;
  while (i <= path.size()) {
    std::size_t j = path.find('/', i);
    if (j == std::string_view::npos) j = path.size();
    std::string_view seg = path.substr(i, j - i);
    if (seg == "..") throw Error(ErrorCode::InvalidPath, "'..' segment in " + std::string(path));
    if (!seg.empty() && seg != ".") segments.push_back(seg);
    i = j + 1;
  }
  if (segments.empty()) throw Error(ErrorCode::InvalidPath, "empty path");
  std::string out;
  for (auto seg : segments) {
    if (!out.empty()) out.push_back('/');
    out.append(seg);
  }
  for (unsigned char c : out) {
    if (c < 0x20) throw Error(ErrorCode::InvalidPath, "control character in path");
  }
  return out;
}

Workspace::Workspace(std::string project_id, std::optional<fs::path> dir, std::shared_ptr<Clock> clock)
    : project_id_(std::move(project_id)), dir_(std::move(dir)), clock_(std::move(clock)) {
  if (!clock_) clock_ = std::make_shared<LogicalClock>();
  if (dir_) {
    fs::create_directories(*dir_ / "files");
    load();
  }
}

Workspace::~Workspace() = default;

std::shared_ptr<Workspace::Entry> Workspace::find(const std::string& normalized) const {
  std::shared_lock lock(map_mutex_);
  auto it = entries_.find(normalized);
  return it == entries_.end() ? nullptr : it->second;
}

std::shared_ptr<Workspace::Entry> Workspace::find_or_create(const std::string& normalized) {
  if (auto e = find(normalized)) return e;
  std::unique_lock lock(map_mutex_);
  auto& slot = entries_[normalized];
  if (!slot) slot = std::make_shared<Entry>();
  return slot;
}

FileVersion Workspace::write_file(std::string_view path, std::string_view content, std::string_view author,
                                  std::optional<std::uint64_t> expected_version) {
  return commit(normalize_path(path), content, author, expected_version, false);
}

FileVersion Workspace::append_file(std::string_view path, std::string_view content, std::string_view author) {
  return commit(normalize_path(path), content, author, std::nullopt, true);
}

FileVersion Workspace::commit(const std::string& path, std::string_view content, std::string_view author,
                              std::optional<std::uint64_t> expected_version, bool append) {
  auto entry = find_or_create(path);
  std::lock_guard lock(entry->mu);
  const std::uint64_t latest = entry->versions.size();
  if (expected_version && *expected_version != latest) {
    throw Error(ErrorCode::VersionConflict, path + ": expected version " + std::to_string(*expected_version) +
                                                ", latest is " + std::to_string(latest));
  }

  Entry::Version next;
  bool chained = false;
  if (append && latest > 0) {
    auto& last = entry->versions.back();
    if (last.buffer->size() == last.length) {
      last.buffer->append(content);
      next.buffer = last.buffer;
    } else {
      next.buffer = std::make_shared<std::string>(entry->content(latest - 1));
      next.buffer->append(content);
    }
    next.length = next.buffer->size();
    if (!entry->hasher) {
      entry->hasher.emplace();
      entry->hasher->update(std::string_view(*next.buffer).substr(0, last.length));
    }
    entry->hasher->update(content);
    chained = true;
  } else {
    next.buffer = std::make_shared<std::string>(content);
    next.length = content.size();
    entry->hasher.emplace();
    entry->hasher->update(content);
  }

  next.meta.path = path;
  next.meta.version = latest + 1;
  next.meta.author = std::string(author);
  next.meta.created_at = clock_->now();
  next.meta.digest = entry->hasher->hex();
  next.meta.size = next.length;

  if (dir_) {
    fs::path pdir = *dir_ / "files" / encode_path(path);
    fs::create_directories(pdir);
    write_all(pdir / blob_name(next.meta.version), content);
    Json line = next.meta;
    if (chained) line["base"] = latest;
    std::ofstream idx(pdir / "index.jsonl", std::ios::app | std::ios::binary);
    idx << line.dump() << '\n';
    idx.flush();
    if (!idx) throw Error(ErrorCode::Persistence, "cannot append index for " + path);
  }

  entry->versions.push_back(std::move(next));
  return entry->versions.back().meta;
}

void Workspace::load() {
  for (const auto& dirent : fs::directory_iterator(*dir_ / "files")) {
    if (!dirent.is_directory()) continue;
    const std::string path = decode_path(dirent.path().filename().string());
    std::ifstream idx(dirent.path() / "index.jsonl", std::ios::binary);
    if (!idx) continue;
    auto entry = std::make_shared<Entry>();
    std::string line;
    while (std::getline(idx, line)) {
      Json j = Json::parse(line, nullptr, /*allow_exceptions=*/false);
      // A torn trailing line from an interrupted write is ignored.
      if (j.is_discarded()) break;
      Entry::Version v;
      v.meta = j.get<FileVersion>();
      if (v.meta.version != entry->versions.size() + 1) {
        throw Error(ErrorCode::Persistence, path + ": non-contiguous version " + std::to_string(v.meta.version));
      }
      std::string blob = read_all(dirent.path() / blob_name(v.meta.version));
      if (j.contains("base")) {
        auto& prev = entry->versions.back();
        if (prev.buffer->size() == prev.length) {
          prev.buffer->append(blob);
          v.buffer = prev.buffer;
        } else {
          v.buffer = std::make_shared<std::string>(entry->content(entry->versions.size() - 1) + blob);
        }
        entry->hasher->update(blob);
      } else {
        v.buffer = std::make_shared<std::string>(std::move(blob));
        entry->hasher.emplace();
        entry->hasher->update(*v.buffer);
      }
      v.length = v.buffer->size();
      if (entry->hasher->hex() != v.meta.digest || v.length != v.meta.size) {
        throw Error(ErrorCode::Persistence, path + ": digest mismatch at version " + std::to_string(v.meta.version));
      }
      entry->versions.push_back(std::move(v));
    }
    if (!entry->versions.empty()) entries_[path] = std::move(entry);
  }
}

std::string Workspace::read_file(std::string_view path, std::optional<std::uint64_t> version) const {
  const std::string p = normalize_path(path);
  auto entry = find(p);
  if (!entry) throw Error(ErrorCode::NotFound, p);
  std::lock_guard lock(entry->mu);
  if (entry->versions.empty()) throw Error(ErrorCode::NotFound, p);
  const std::uint64_t v = version.value_or(entry->versions.size());
  if (v < 1 || v > entry->versions.size()) {
    throw Error(ErrorCode::VersionOutOfRange,
                p + "@" + std::to_string(v) + " (latest " + std::to_string(entry->versions.size()) + ")");
  }
  return entry->content(v - 1);
}

std::vector<FileVersion> Workspace::history(std::string_view path) const {
  const std::string p = normalize_path(path);
  auto entry = find(p);
  if (!entry) throw Error(ErrorCode::NotFound, p);
  std::lock_guard lock(entry->mu);
  if (entry->versions.empty()) throw Error(ErrorCode::NotFound, p);
  std::vector<FileVersion> out;
  out.reserve(entry->versions.size());
  for (const auto& v : entry->versions) out.push_back(v.meta);
  return out;
}

FileVersion Workspace::metadata(std::string_view path, std::optional<std::uint64_t> version) const {
  const std::string p = normalize_path(path);
  auto entry = find(p);
  if (!entry) throw Error(ErrorCode::NotFound, p);
  std::lock_guard lock(entry->mu);
  if (entry->versions.empty()) throw Error(ErrorCode::NotFound, p);
  const std::uint64_t v = version.value_or(entry->versions.size());
  if (v < 1 || v > entry->versions.size()) throw Error(ErrorCode::VersionOutOfRange, p + "@" + std::to_string(v));
  return entry->versions[v - 1].meta;
}

std::vector<std::string> Workspace::list_files(std::string_view prefix) const {
  std::vector<std::string> out;
  std::shared_lock lock(map_mutex_);
  for (auto it = entries_.lower_bound(std::string(prefix)); it != entries_.end(); ++it) {
    if (it->first.compare(0, prefix.size(), prefix) != 0) break;
    std::lock_guard elock(it->second->mu);
    if (!it->second->versions.empty()) out.push_back(it->first);
  }
  return out;
}

bool Workspace::exists(std::string_view path) const { return latest_version(path).has_value(); }

std::optional<std::uint64_t> Workspace::latest_version(std::string_view path) const {
  std::string p;
  try {
    p = normalize_path(path);
  } catch (const Error&) {
    return std::nullopt;
  }
  auto entry = find(p);
  if (!entry) return std::nullopt;
  std::lock_guard lock(entry->mu);
  if (entry->versions.empty()) return std::nullopt;
  return entry->versions.size();
}

WorkspaceSnapshot Workspace::snapshot() const {
  WorkspaceSnapshot s;
  s.project_id = project_id_;
  s.digest_algorithm = std::string(kDigestAlgorithm);
  std::shared_lock lock(map_mutex_);
  for (const auto& [path, entry] : entries_) {
    std::lock_guard elock(entry->mu);
    if (!entry->versions.empty()) s.latest[path] = entry->versions.size();
  }
  s.file_count = s.latest.size();
  return s;
}

}  // namespace quire
