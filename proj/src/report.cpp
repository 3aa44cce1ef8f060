#include "quire/report.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <set>
#include <sstream>

#include "quire/error.hpp"
#include "quire/workspace.hpp"

namespace quire {

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::pair<E, std::string_view> (&table)[N], ErrorCode code,
             std::string_view what) {
  for (const auto& [e, name] : table) {
    if (name == s) return e;
  }
  throw Error(code, "unknown " + std::string(what) + " '" + std::string(s) + "'");
}

template <typename E, std::size_t N>
std::string_view enum_name(E e, const std::pair<E, std::string_view> (&table)[N]) {
  for (const auto& [v, name] : table) {
    if (v == e) return name;
  }
  return "?";
}

constexpr std::pair<BlockKind, std::string_view> kBlockKinds[] = {
    {BlockKind::Heading, "heading"}, {BlockKind::Paragraph, "paragraph"},
    {BlockKind::Theorem, "theorem"}, {BlockKind::Proof, "proof"},
    {BlockKind::Code, "code"},       {BlockKind::AttachmentRef, "attachment_ref"},
    {BlockKind::Exposition, "exposition"},
};

constexpr std::pair<ProvenanceKind, std::string_view> kProvenanceKinds[] = {
    {ProvenanceKind::UserSuggestion, "user_suggestion"},
    {ProvenanceKind::ExternalLiterature, "external_literature"},
    {ProvenanceKind::InternalFile, "internal_file"},
    {ProvenanceKind::Computation, "computation"},
    {ProvenanceKind::Reviewer, "reviewer"},
};

constexpr std::pair<ReportStatus, std::string_view> kStatuses[] = {
    {ReportStatus::Incremental, "incremental"},
    {ReportStatus::Final, "final"},
};

constexpr std::pair<Severity, std::string_view> kSeverities[] = {
    {Severity::Blocking, "blocking"},
    {Severity::Minor, "minor"},
};

bool has_scheme(std::string_view s) { return s.find("://") != std::string_view::npos; }

std::string strip_fragment(std::string_view locator) {
  auto hash = locator.find('#');
  return std::string(locator.substr(0, hash));
}

std::string html_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string latex_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\textbackslash{}"; break;
      case '{': out += "\\{"; break;
      case '}': out += "\\}"; break;
      case '$': out += "\\$"; break;
      case '&': out += "\\&"; break;
      case '#': out += "\\#"; break;
      case '^': out += "\\textasciicircum{}"; break;
      case '_': out += "\\_"; break;
      case '~': out += "\\textasciitilde{}"; break;
      case '%': out += "\\%"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

// Minimal escaping for URLs placed inside \href and \url.
std::string latex_url(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '%' || c == '#' || c == '\\' || c == '{' || c == '}') out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

bool anchor_resolves(const Report& report, const Anchor& anchor) {
  const Block* b = report.find_block(anchor.block);
  if (b == nullptr) return false;
  const auto len = normalize_text(b->text).size();
  return anchor.start <= anchor.end && anchor.end <= len;
}

std::string fresh_block_id(Report& r) {
  for (;;) {
    std::string id = "b" + std::to_string(r.next_block++);
    if (r.find_block(id) == nullptr) return id;
  }
}

}  // namespace

std::string_view to_string(BlockKind kind) noexcept { return enum_name(kind, kBlockKinds); }
std::string_view to_string(ProvenanceKind kind) noexcept { return enum_name(kind, kProvenanceKinds); }
std::string_view to_string(ReportStatus status) noexcept { return enum_name(status, kStatuses); }
std::string_view to_string(Severity severity) noexcept { return enum_name(severity, kSeverities); }

BlockKind parse_block_kind(std::string_view s) {
  return parse_enum(s, kBlockKinds, ErrorCode::UnparseableAction, "block kind");
}
ProvenanceKind parse_provenance_kind(std::string_view s) {
  return parse_enum(s, kProvenanceKinds, ErrorCode::UnparseableAction, "provenance kind");
}
Severity parse_severity(std::string_view s) {
  return parse_enum(s, kSeverities, ErrorCode::UnparseableAction, "severity");
}

const Block* Report::find_block(std::string_view id) const {
  for (const auto& b : blocks) {
    if (b.id == id) return &b;
  }
  return nullptr;
}

bool ReportDelta::empty() const {
  return remove.empty() && edit.empty() && append.empty() && annotate.empty() && references.empty() && !title;
}

void to_json(Json& j, const Block& b) { j = Json{{"id", b.id}, {"kind", to_string(b.kind)}, {"text", b.text}}; }

void from_json(const Json& j, Block& b) {
  b.id = j.value("id", std::string{});
  b.kind = parse_block_kind(j.value("kind", std::string("paragraph")));
  j.at("text").get_to(b.text);
}

void to_json(Json& j, const MarginNote& n) {
  Json prov{{"kind", to_string(n.provenance.kind)}, {"locator", n.provenance.locator}};
  if (n.provenance.version) prov["version"] = *n.provenance.version;
  j = Json{{"id", n.id},
           {"anchor", {{"block", n.anchor.block}, {"start", n.anchor.start}, {"end", n.anchor.end}}},
           {"text", n.text},
           {"provenance", prov},
           {"dangling", n.dangling},
           {"superseded", n.superseded}};
}

void from_json(const Json& j, MarginNote& n) {
  n.id = j.value("id", std::string{});
  const auto& a = j.at("anchor");
  a.at("block").get_to(n.anchor.block);
  n.anchor.start = a.value("start", std::size_t{0});
  n.anchor.end = a.value("end", std::size_t{0});
  j.at("text").get_to(n.text);
  const auto& p = j.at("provenance");
  n.provenance.kind = parse_provenance_kind(p.at("kind").get<std::string>());
  p.at("locator").get_to(n.provenance.locator);
  if (p.contains("version") && !p["version"].is_null()) {
    n.provenance.version = p["version"].get<std::uint64_t>();
  } else {
    n.provenance.version.reset();
  }
  n.dangling = j.value("dangling", false);
  n.superseded = j.value("superseded", false);
}

void to_json(Json& j, const Reference& r) {
  if (r.kind == Reference::Kind::Internal) {
    j = Json{{"type", "internal"}, {"path", r.path}, {"version", r.version}};
  } else {
    j = Json{{"type", "external"}, {"uri", r.uri}, {"title", r.title}, {"verified", r.verified}};
  }
}

void from_json(const Json& j, Reference& r) {
  r = Reference{};
  const std::string type = j.value("type", std::string(j.contains("uri") ? "external" : "internal"));
  if (type == "internal") {
    r.kind = Reference::Kind::Internal;
    j.at("path").get_to(r.path);
    r.version = j.value("version", std::uint64_t{0});
  } else if (type == "external") {
    r.kind = Reference::Kind::External;
    j.at("uri").get_to(r.uri);
    r.title = j.value("title", std::string{});
    r.verified = j.value("verified", false);
  } else {
    throw Error(ErrorCode::UnparseableAction, "unknown reference type '" + type + "'");
  }
}

void to_json(Json& j, const Report& r) {
  j = Json{{"workstream", r.workstream},   {"title", r.title},
           {"status", to_string(r.status)}, {"blocks", r.blocks},
           {"annotations", r.annotations}, {"references", r.references},
           {"next_block", r.next_block},   {"next_note", r.next_note}};
}

void from_json(const Json& j, Report& r) {
  j.at("workstream").get_to(r.workstream);
  j.at("title").get_to(r.title);
  r.status = parse_enum(j.at("status").get<std::string>(), kStatuses, ErrorCode::Persistence, "report status");
  r.blocks = j.at("blocks").get<std::vector<Block>>();
  r.annotations = j.at("annotations").get<std::vector<MarginNote>>();
  r.references = j.at("references").get<std::vector<Reference>>();
  r.next_block = j.value("next_block", std::uint64_t{1});
  r.next_note = j.value("next_note", std::uint64_t{1});
}

void to_json(Json& j, const ReportDelta& d) {
  j = Json::object();
  if (!d.remove.empty()) j["remove"] = d.remove;
  if (!d.edit.empty()) {
    j["edit"] = Json::array();
    for (const auto& e : d.edit) j["edit"].push_back({{"id", e.id}, {"text", e.text}});
  }
  if (!d.append.empty()) j["append"] = d.append;
  if (!d.annotate.empty()) j["annotate"] = d.annotate;
  if (!d.references.empty()) j["references"] = d.references;
  if (d.title) j["title"] = *d.title;
}

void to_json(Json& j, const Defect& d) {
  j = Json{{"severity", to_string(d.severity)}, {"code", d.code}, {"message", d.message}, {"location", d.location}};
}

ReportDelta parse_delta(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::UnparseableAction, "report delta must be an object");
  ReportDelta d;
  try {
    if (j.contains("remove")) d.remove = j["remove"].get<std::vector<std::string>>();
    if (j.contains("edit")) {
      for (const auto& e : j["edit"]) d.edit.push_back({e.at("id").get<std::string>(), e.at("text").get<std::string>()});
    }
    if (j.contains("append")) d.append = j["append"].get<std::vector<Block>>();
    if (j.contains("annotate")) {
      for (auto n : j["annotate"]) {
        // Agents may anchor a whole block by omitting the span.
        if (!n.contains("anchor") && n.contains("block")) n["anchor"] = {{"block", n["block"]}};
        MarginNote note = n.get<MarginNote>();
        if (!n.at("anchor").contains("end")) note.anchor.end = std::string::npos;
        d.annotate.push_back(std::move(note));
      }
    }
    if (j.contains("references")) d.references = j["references"].get<std::vector<Reference>>();
    if (j.contains("title")) d.title = j["title"].get<std::string>();
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::UnparseableAction, std::string("malformed report delta: ") + e.what());
  }
  if (d.empty()) throw Error(ErrorCode::UnparseableAction, "empty report delta");
  return d;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(c);
    }
  }
  return out;
}

bool is_well_formed_uri(std::string_view uri) {
  static const std::regex kUri(R"(^[A-Za-z][A-Za-z0-9+.\-]*://[^\s/?#]+[^\s]*$)");
  return std::regex_match(uri.begin(), uri.end(), kUri);
}

MarginNote resolve_note(const Report& report, MarginNote note, const Workspace& workspace) {
  const Block* block = report.find_block(note.anchor.block);
  if (block == nullptr) throw Error(ErrorCode::DanglingAnchor, "no block '" + note.anchor.block + "'");
  const auto len = normalize_text(block->text).size();
  if (note.anchor.end == std::string::npos) note.anchor.end = len;
  if (note.anchor.start > note.anchor.end || note.anchor.end > len) {
    throw Error(ErrorCode::DanglingAnchor, "span " + std::to_string(note.anchor.start) + "-" +
                                               std::to_string(note.anchor.end) + " outside block '" +
                                               block->id + "' (length " + std::to_string(len) + ")");
  }
  auto& loc = note.provenance.locator;
  if (loc.empty()) throw Error(ErrorCode::BadLocator, "empty provenance locator");

  const bool uri = has_scheme(loc);
  if (note.provenance.kind == ProvenanceKind::ExternalLiterature && !uri) {
    throw Error(ErrorCode::BadLocator, "literature provenance needs a URI: " + loc);
  }
  if (note.provenance.kind == ProvenanceKind::InternalFile && uri) {
    throw Error(ErrorCode::BadLocator, "internal provenance needs a workspace path: " + loc);
  }
  if (uri) {
    if (!is_well_formed_uri(loc)) throw Error(ErrorCode::BadLocator, "malformed URI: " + loc);
    note.provenance.version.reset();
  } else if (loc.rfind("msg:", 0) == 0 && note.provenance.kind != ProvenanceKind::InternalFile) {
    if (loc.size() == 4) throw Error(ErrorCode::BadLocator, "empty message reference");
    note.provenance.version.reset();
  } else {
    const std::string path = strip_fragment(loc);
    auto latest = workspace.latest_version(path);
    if (!latest) throw Error(ErrorCode::BadLocator, "workspace path does not exist: " + path);
    if (note.provenance.version && (*note.provenance.version < 1 || *note.provenance.version > *latest)) {
      throw Error(ErrorCode::BadLocator, "version out of range for " + path);
    }
    if (!note.provenance.version) note.provenance.version = *latest;
  }
  note.dangling = false;
  return note;
}

Report apply_delta(const Report& base, const ReportDelta& delta, const Workspace& workspace) {
  Report r = base;
  for (const auto& id : delta.remove) {
    auto it = std::find_if(r.blocks.begin(), r.blocks.end(), [&](const Block& b) { return b.id == id; });
    if (it == r.blocks.end()) throw Error(ErrorCode::UnknownBlock, id);
    r.blocks.erase(it);
  }
  for (const auto& e : delta.edit) {
    auto it = std::find_if(r.blocks.begin(), r.blocks.end(), [&](const Block& b) { return b.id == e.id; });
    if (it == r.blocks.end()) throw Error(ErrorCode::UnknownBlock, e.id);
    it->text = e.text;
  }
  for (Block b : delta.append) {
    if (b.id.empty()) {
      b.id = fresh_block_id(r);
    } else if (r.find_block(b.id) != nullptr) {
      throw Error(ErrorCode::InvalidSpec, "duplicate block id '" + b.id + "'");
    }
    r.blocks.push_back(std::move(b));
  }
  for (auto& note : r.annotations) {
    if (!anchor_resolves(r, note.anchor)) note.dangling = true;
  }
  for (const auto& n : delta.annotate) {
    MarginNote note = resolve_note(r, n, workspace);
    if (note.id.empty()) {
      note.id = "n" + std::to_string(r.next_note++);
    } else if (std::any_of(r.annotations.begin(), r.annotations.end(),
                           [&](const MarginNote& m) { return m.id == note.id; })) {
      throw Error(ErrorCode::InvalidSpec, "duplicate note id '" + note.id + "'");
    }
    r.annotations.push_back(std::move(note));
  }
  for (Reference ref : delta.references) {
    if (ref.kind == Reference::Kind::Internal) {
      ref.path = Workspace::normalize_path(ref.path);
      auto latest = workspace.latest_version(ref.path);
      if (!latest) throw Error(ErrorCode::BadLocator, "internal reference to missing path " + ref.path);
      if (ref.version == 0) ref.version = *latest;
      if (ref.version > *latest) throw Error(ErrorCode::BadLocator, "internal reference beyond latest version");
      ref.uri.clear();
      ref.title.clear();
      ref.verified = false;
    } else {
      if (!is_well_formed_uri(ref.uri)) throw Error(ErrorCode::BadLocator, "malformed URI: " + ref.uri);
      ref.path.clear();
      ref.version = 0;
    }
    if (std::find(r.references.begin(), r.references.end(), ref) == r.references.end()) {
      r.references.push_back(std::move(ref));
    }
  }
  if (delta.title) r.title = *delta.title;
  return r;
}

std::vector<Defect> validate_report(const Report& report, const Workspace& workspace, bool final_candidate) {
  std::vector<Defect> out;
  const bool final = final_candidate || report.status == ReportStatus::Final;

  std::set<std::string> ids;
  for (const auto& b : report.blocks) {
    if (!ids.insert(b.id).second) {
      out.push_back({Severity::Blocking, "duplicate_block_id", "block id '" + b.id + "' is used twice", b.id});
    }
    if (b.kind == BlockKind::Proof && normalize_text(b.text).empty()) {
      out.push_back({Severity::Minor, "empty_proof", "proof block is empty", b.id});
    }
  }
  const bool has_exposition = std::any_of(report.blocks.begin(), report.blocks.end(), [](const Block& b) {
    return b.kind == BlockKind::Exposition && !normalize_text(b.text).empty();
  });
  if (!has_exposition) {
    out.push_back({final ? Severity::Blocking : Severity::Minor, "missing_exposition",
                   "no exposition block explaining the research process", "global"});
  }
  for (const auto& ref : report.references) {
    if (ref.kind == Reference::Kind::Internal) {
      auto latest = workspace.latest_version(ref.path);
      if (!latest || ref.version < 1 || ref.version > *latest) {
        out.push_back({Severity::Blocking, "dangling_internal_reference",
                       "internal reference does not resolve: " + ref.path + "@" + std::to_string(ref.version),
                       ref.path});
      }
    } else if (!is_well_formed_uri(ref.uri)) {
      out.push_back({Severity::Blocking, "malformed_external_reference", "malformed URI: " + ref.uri, ref.uri});
    } else if (!ref.verified) {
      out.push_back({Severity::Minor, "unverified_external_reference",
                     "external reference was never fetched: " + ref.uri, ref.uri});
    }
  }
  for (const auto& note : report.annotations) {
    bool dangling = note.dangling || !anchor_resolves(report, note.anchor);
    if (!dangling && note.provenance.version) {
      auto latest = workspace.latest_version(strip_fragment(note.provenance.locator));
      dangling = !latest || *note.provenance.version > *latest;
    }
    if (dangling) {
      out.push_back({Severity::Blocking, "dangling_annotation", "margin note '" + note.id + "' does not resolve",
                     note.anchor.block});
    }
  }
  return out;
}

bool has_blocking(const std::vector<Defect>& defects) {
  return std::any_of(defects.begin(), defects.end(), [](const Defect& d) { return d.severity == Severity::Blocking; });
}

RenderFormat parse_render_format(std::string_view s) {
  if (s == "structured" || s == "json") return RenderFormat::Structured;
  if (s == "markdown" || s == "md") return RenderFormat::Markdown;
  if (s == "latex" || s == "tex") return RenderFormat::Latex;
  throw Error(ErrorCode::InvalidSpec, "unknown render format '" + std::string(s) + "'");
}

std::string_view content_type(RenderFormat format) noexcept {
  switch (format) {
    case RenderFormat::Structured: return "application/json";
    case RenderFormat::Markdown: return "text/markdown; charset=utf-8";
    case RenderFormat::Latex: return "application/x-latex";
  }
  return "application/octet-stream";
}

namespace {

std::string render_markdown(const Report& r) {
  std::ostringstream out;
  out << "# " << r.title << "\n";
  for (const auto& b : r.blocks) {
    out << "\n<a id=\"" << html_escape(b.id) << "\"></a>\n";
    switch (b.kind) {
      case BlockKind::Heading: out << "## " << b.text << "\n"; break;
      case BlockKind::Paragraph: out << b.text << "\n"; break;
      case BlockKind::Exposition: out << "**Research process.** " << b.text << "\n"; break;
      case BlockKind::Theorem: out << "**Theorem.** " << b.text << "\n"; break;
      case BlockKind::Proof: out << "*Proof.* " << b.text << " \xE2\x88\x8E\n"; break;
      case BlockKind::Code: out << "```\n" << b.text << (b.text.ends_with('\n') ? "" : "\n") << "```\n"; break;
      case BlockKind::AttachmentRef: out << "Attachment: [" << b.text << "](files/" << b.text << ")\n"; break;
    }
    for (const auto& n : r.annotations) {
      if (n.anchor.block != b.id) continue;
      std::string cls = "margin-note";
      if (n.dangling) cls += " dangling";
      if (n.superseded) cls += " superseded";
      out << "<aside class=\"" << cls << "\" data-note=\"" << html_escape(n.id) << "\" data-span=\""
          << n.anchor.start << "-" << n.anchor.end << "\" data-provenance=\"" << to_string(n.provenance.kind)
          << "\" data-locator=\"" << html_escape(n.provenance.locator);
      if (n.provenance.version) out << "@" << *n.provenance.version;
      out << "\">" << html_escape(n.text) << "</aside>\n";
    }
  }
  for (const auto& n : r.annotations) {
    if (r.find_block(n.anchor.block) == nullptr) {
      out << "\n<aside class=\"margin-note dangling\" data-note=\"" << html_escape(n.id) << "\">"
          << html_escape(n.text) << "</aside>\n";
    }
  }
  if (!r.references.empty()) {
    out << "\n## References\n\n";
    for (const auto& ref : r.references) {
      if (ref.kind == Reference::Kind::Internal) {
        out << "- [" << ref.path << " (v" << ref.version << ")](files/" << ref.path << "?version=" << ref.version
            << ")\n";
      } else {
        out << "- [" << (ref.title.empty() ? ref.uri : ref.title) << "](" << ref.uri << ")"
            << (ref.verified ? "" : " (unverified)") << "\n";
      }
    }
  }
  return out.str();
}

std::string render_latex(const Report& r) {
  std::ostringstream out;
  out << "\\documentclass{article}\n"
         "\\usepackage[utf8]{inputenc}\n"
         "\\usepackage{amsthm}\n"
         "\\usepackage{hyperref}\n"
         "\\newtheorem{theorem}{Theorem}\n"
         "\\title{"
      << latex_escape(r.title)
      << "}\n"
         "\\begin{document}\n"
         "\\maketitle\n";
  for (const auto& b : r.blocks) {
    out << "\n\\label{block:" << latex_escape(b.id) << "}\n";
    switch (b.kind) {
      case BlockKind::Heading: out << "\\section*{" << latex_escape(b.text) << "}\n"; break;
      case BlockKind::Paragraph: out << latex_escape(b.text) << "\n"; break;
      case BlockKind::Exposition: out << "\\paragraph{Research process.} " << latex_escape(b.text) << "\n"; break;
      case BlockKind::Theorem: out << "\\begin{theorem}\n" << latex_escape(b.text) << "\n\\end{theorem}\n"; break;
      case BlockKind::Proof: out << "\\begin{proof}\n" << latex_escape(b.text) << "\n\\end{proof}\n"; break;
      case BlockKind::Code: out << "\\begin{verbatim}\n" << b.text << "\n\\end{verbatim}\n"; break;
      case BlockKind::AttachmentRef:
        out << "Attachment: \\href{files/" << latex_url(b.text) << "}{\\texttt{" << latex_escape(b.text) << "}}\n";
        break;
    }
    for (const auto& n : r.annotations) {
      if (n.anchor.block != b.id) continue;
      out << "\\marginpar{\\footnotesize " << (n.superseded ? "[superseded] " : "") << (n.dangling ? "[dangling] " : "")
          << latex_escape(n.text) << " [" << to_string(n.provenance.kind) << ": ";
      if (has_scheme(n.provenance.locator)) {
        out << "\\url{" << latex_url(n.provenance.locator) << "}";
      } else {
        out << "\\texttt{" << latex_escape(n.provenance.locator) << "}";
      }
      out << "]}\n";
    }
  }
  if (!r.references.empty()) {
    out << "\n\\begin{thebibliography}{99}\n";
    std::size_t i = 1;
    for (const auto& ref : r.references) {
      out << "\\bibitem{ref" << i++ << "} ";
      if (ref.kind == Reference::Kind::Internal) {
        out << "Workspace file \\texttt{" << latex_escape(ref.path) << "}, version " << ref.version << ".\n";
      } else {
        out << latex_escape(ref.title.empty() ? ref.uri : ref.title) << ". \\url{" << latex_url(ref.uri) << "}"
            << (ref.verified ? "" : " (unverified)") << ".\n";
      }
    }
    out << "\\end{thebibliography}\n";
  }
  out << "\\end{document}\n";
  return out.str();
}

}  // namespace

std::string render(const Report& report, RenderFormat format) {
  switch (format) {
    case RenderFormat::Structured:
      return Json(report).dump(2, ' ', false, Json::error_handler_t::replace) + "\n";
    case RenderFormat::Markdown: return render_markdown(report);
    case RenderFormat::Latex: return render_latex(report);
  }
  return {};
}

Report parse_structured(std::string_view bytes) {
  try {
    return Json::parse(bytes).get<Report>();
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::Persistence, std::string("malformed report document: ") + e.what());
  }
}

std::string ReportStore::path_for(std::string_view workstream) { return "ws/" + std::string(workstream) + "/report.json"; }

std::uint64_t ReportStore::create(const std::string& workstream, const std::string& title, const std::string& author,
                                  const std::optional<Report>& seed) {
  Report r = seed.value_or(Report{});
  r.workstream = workstream;
  r.title = title;
  r.status = ReportStatus::Incremental;
  return workspace_.write_file(path_for(workstream), render(r, RenderFormat::Structured), author, 0).version;
}

bool ReportStore::exists(std::string_view workstream) const { return workspace_.exists(path_for(workstream)); }

Report ReportStore::load(std::string_view workstream, std::optional<std::uint64_t> version) const {
  const auto path = path_for(workstream);
  if (!workspace_.exists(path)) throw Error(ErrorCode::ReportNotFound, std::string(workstream));
  return parse_structured(workspace_.read_file(path, version));
}

std::uint64_t ReportStore::latest_version(std::string_view workstream) const {
  auto v = workspace_.latest_version(path_for(workstream));
  if (!v) throw Error(ErrorCode::ReportNotFound, std::string(workstream));
  return *v;
}

std::uint64_t ReportStore::commit(const std::string& workstream, const Report& report, const std::string& author,
                                  std::uint64_t expected) {
  return workspace_.write_file(path_for(workstream), render(report, RenderFormat::Structured), author, expected)
      .version;
}

std::uint64_t ReportStore::update_report(const std::string& workstream, const ReportDelta& delta,
                                         const std::string& author) {
  const std::uint64_t base_version = latest_version(workstream);
  Report next = apply_delta(load(workstream, base_version), delta, workspace_);
  if (verifier_) {
    for (auto& ref : next.references) {
      if (ref.kind == Reference::Kind::External && !ref.verified) ref.verified = verifier_(ref.uri);
    }
  }
  return commit(workstream, next, author, base_version);
}

std::string ReportStore::annotate(const std::string& workstream, const MarginNote& note, const std::string& author) {
  ReportDelta delta;
  delta.annotate.push_back(note);
  const std::uint64_t base_version = latest_version(workstream);
  Report next = apply_delta(load(workstream, base_version), delta, workspace_);
  commit(workstream, next, author, base_version);
  return next.annotations.back().id;
}

std::uint64_t ReportStore::finalize(const std::string& workstream, const std::string& author) {
  const std::uint64_t base_version = latest_version(workstream);
  Report r = load(workstream, base_version);
  auto defects = validate_report(r, workspace_, true);
  if (has_blocking(defects)) {
    std::string codes;
    for (const auto& d : defects) {
      if (d.severity == Severity::Blocking) codes += (codes.empty() ? "" : ", ") + d.code;
    }
    throw Error(ErrorCode::GateViolation, "report has blocking defects: " + codes);
  }
  r.status = ReportStatus::Final;
  return commit(workstream, r, author, base_version);
}

std::uint64_t ReportStore::supersede_reviewer_notes(const std::string& workstream, const std::string& author) {
  const std::uint64_t base_version = latest_version(workstream);
  Report r = load(workstream, base_version);
  bool changed = false;
  for (auto& n : r.annotations) {
    if (n.provenance.kind == ProvenanceKind::Reviewer && !n.superseded) {
      n.superseded = true;
      changed = true;
    }
  }
  if (!changed) return base_version;
  return commit(workstream, r, author, base_version);
}

}  // namespace quire
