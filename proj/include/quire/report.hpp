#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "quire/common.hpp"

namespace quire {

class Workspace;

enum class BlockKind { Heading, Paragraph, Theorem, Proof, Code, AttachmentRef, Exposition };
enum class ProvenanceKind { UserSuggestion, ExternalLiterature, InternalFile, Computation, Reviewer };
enum class ReportStatus { Incremental, Final };
enum class Severity { Blocking, Minor };

std::string_view to_string(BlockKind kind) noexcept;
std::string_view to_string(ProvenanceKind kind) noexcept;
std::string_view to_string(ReportStatus status) noexcept;
std::string_view to_string(Severity severity) noexcept;
BlockKind parse_block_kind(std::string_view s);
ProvenanceKind parse_provenance_kind(std::string_view s);
Severity parse_severity(std::string_view s);

struct Block {
  std::string id;
  BlockKind kind = BlockKind::Paragraph;
  std::string text;

  bool operator==(const Block&) const = default;
};

/// Character span over the block's normalized text (see normalize_text).
struct Anchor {
  std::string block;
  std::size_t start = 0;
  std::size_t end = 0;

  bool operator==(const Anchor&) const = default;
};

struct Provenance {
  ProvenanceKind kind = ProvenanceKind::Computation;
  std::string locator;
  // Pinned workspace version when the locator is a workspace path.
  std::optional<std::uint64_t> version;

  bool operator==(const Provenance&) const = default;
};

struct MarginNote {
  std::string id;
  Anchor anchor;
  std::string text;
  Provenance provenance;
  bool dangling = false;
  bool superseded = false;

  bool operator==(const MarginNote&) const = default;
};

struct Reference {
  enum class Kind { Internal, External };
  Kind kind = Kind::External;
  std::string path;
  std::uint64_t version = 0;
  std::string uri;
  std::string title;
  bool verified = false;

  bool operator==(const Reference&) const = default;
};

struct Report {
  std::string workstream;
  std::string title;
  std::vector<Block> blocks;
  std::vector<MarginNote> annotations;
  std::vector<Reference> references;
  ReportStatus status = ReportStatus::Incremental;
  std::uint64_t next_block = 1;
  std::uint64_t next_note = 1;

  const Block* find_block(std::string_view id) const;
  bool operator==(const Report&) const = default;
};

/// One edit to a report: removals, then edits, then appends, then new
/// annotations and references.
struct ReportDelta {
  struct Edit {
    std::string id;
    std::string text;
    bool operator==(const Edit&) const = default;
  };
  std::vector<std::string> remove;
  std::vector<Edit> edit;
  std::vector<Block> append;  // empty id = assign one
  std::vector<MarginNote> annotate;
  std::vector<Reference> references;
  std::optional<std::string> title;

  bool empty() const;
  bool operator==(const ReportDelta&) const = default;
};

struct Defect {
  Severity severity = Severity::Minor;
  std::string code;
  std::string message;
  std::string location;
};

void to_json(Json& j, const Block& b);
void from_json(const Json& j, Block& b);
void to_json(Json& j, const MarginNote& n);
void from_json(const Json& j, MarginNote& n);
void to_json(Json& j, const Reference& r);
void from_json(const Json& j, Reference& r);
void to_json(Json& j, const Report& r);
void from_json(const Json& j, Report& r);
void to_json(Json& j, const ReportDelta& d);
void to_json(Json& j, const Defect& d);

/// Parses an update delta as produced by agents. Throws UnparseableAction on
/// schema errors.
ReportDelta parse_delta(const Json& j);

/// Trimmed, with every whitespace run collapsed to one space.
std::string normalize_text(std::string_view text);
bool is_well_formed_uri(std::string_view uri);

/// Applies `delta` to `base` and returns the new report. Annotations whose
/// anchors no longer resolve are flagged dangling. Throws UnknownBlock,
/// DanglingAnchor, BadLocator, InvalidSpec.
Report apply_delta(const Report& base, const ReportDelta& delta, const Workspace& workspace);

/// Checks the note against the report and the workspace, pinning internal
/// locators to the latest version. Throws DanglingAnchor or BadLocator.
MarginNote resolve_note(const Report& report, MarginNote note, const Workspace& workspace);

std::vector<Defect> validate_report(const Report& report, const Workspace& workspace, bool final_candidate = false);
bool has_blocking(const std::vector<Defect>& defects);

enum class RenderFormat { Structured, Markdown, Latex };
RenderFormat parse_render_format(std::string_view s);
std::string_view content_type(RenderFormat format) noexcept;

std::string render(const Report& report, RenderFormat format);
Report parse_structured(std::string_view bytes);

/// Report documents stored at `ws/<id>/report.json`. The store never holds
/// state of its own; every read goes to the workspace.
class ReportStore {
 public:
  explicit ReportStore(Workspace& workspace) : workspace_(workspace) {}

  static std::string path_for(std::string_view workstream);

  /// Decides whether an external reference counts as verified.
  void set_uri_verifier(std::function<bool(const std::string&)> verifier) { verifier_ = std::move(verifier); }

  std::uint64_t create(const std::string& workstream, const std::string& title, const std::string& author,
                       const std::optional<Report>& seed = std::nullopt);
  bool exists(std::string_view workstream) const;
  Report load(std::string_view workstream, std::optional<std::uint64_t> version = std::nullopt) const;
  std::uint64_t latest_version(std::string_view workstream) const;

  std::uint64_t update_report(const std::string& workstream, const ReportDelta& delta, const std::string& author);
  std::string annotate(const std::string& workstream, const MarginNote& note, const std::string& author);
  std::uint64_t finalize(const std::string& workstream, const std::string& author);
  /// Marks every reviewer-provenance note superseded.
  std::uint64_t supersede_reviewer_notes(const std::string& workstream, const std::string& author);

 private:
  std::uint64_t commit(const std::string& workstream, const Report& report, const std::string& author,
                       std::uint64_t expected);

  Workspace& workspace_;
  std::function<bool(const std::string&)> verifier_;
};

}  // namespace quire
