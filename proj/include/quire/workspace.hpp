#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "quire/common.hpp"

namespace quire {

/// Metadata of one immutable version of a workspace path.
struct FileVersion {
  std::string path;
  std::uint64_t version = 0;
  std::string author;
  std::int64_t created_at = 0;
  std::string digest;
  std::uint64_t size = 0;
};

void to_json(Json& j, const FileVersion& v);
void from_json(const Json& j, FileVersion& v);

struct WorkspaceSnapshot {
  std::string project_id;
  std::string digest_algorithm;
  std::map<std::string, std::uint64_t> latest;
  std::size_t file_count = 0;
};

void to_json(Json& j, const WorkspaceSnapshot& s);

/// Append-only, versioned, path-addressed file store shared by every agent of
/// a project.
///
/// Every write creates a new version; nothing is ever mutated or deleted.
/// Callers that must not clobber a concurrent writer pass the version they
/// last read as `expected_version` and retry on VersionConflict.
///
/// When constructed with a directory the store is durable: each path gets its
/// own subdirectory holding numbered blobs plus an `index.jsonl` of metadata,
/// and reopening the directory restores the full history.
class Workspace {
 public:
  static constexpr std::string_view kDigestAlgorithm = "sha256";

  explicit Workspace(std::string project_id, std::optional<std::filesystem::path> dir = std::nullopt,
                     std::shared_ptr<Clock> clock = nullptr);
  ~Workspace();

  Workspace(const Workspace&) = delete;
  Workspace& operator=(const Workspace&) = delete;

  FileVersion write_file(std::string_view path, std::string_view content, std::string_view author,
                         std::optional<std::uint64_t> expected_version = std::nullopt);

  /// Writes a new version whose content is the previous content followed by
  /// `content`. Used for the jsonl logs; storage cost is proportional to the
  /// appended bytes only.
  FileVersion append_file(std::string_view path, std::string_view content, std::string_view author);

  std::string read_file(std::string_view path, std::optional<std::uint64_t> version = std::nullopt) const;
  std::vector<FileVersion> history(std::string_view path) const;
  std::vector<std::string> list_files(std::string_view prefix) const;

  bool exists(std::string_view path) const;
  std::optional<std::uint64_t> latest_version(std::string_view path) const;
  FileVersion metadata(std::string_view path, std::optional<std::uint64_t> version = std::nullopt) const;
  WorkspaceSnapshot snapshot() const;

  const std::string& project_id() const noexcept { return project_id_; }
  const std::optional<std::filesystem::path>& directory() const noexcept { return dir_; }

  /// Normalizes a slash-separated path: strips leading/duplicate slashes and
  /// "." segments. Throws InvalidPath on empty paths or ".." segments.
  static std::string normalize_path(std::string_view path);

 private:
  struct Entry;

  std::shared_ptr<Entry> find(const std::string& normalized) const;
  std::shared_ptr<Entry> find_or_create(const std::string& normalized);
  FileVersion commit(const std::string& path, std::string_view content, std::string_view author,
                     std::optional<std::uint64_t> expected_version, bool append);
  void load();

  std::string project_id_;
  std::optional<std::filesystem::path> dir_;
  std::shared_ptr<Clock> clock_;
  mutable std::shared_mutex map_mutex_;
  std::map<std::string, std::shared_ptr<Entry>> entries_;
};

}  // namespace quire
