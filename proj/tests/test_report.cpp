#include <doctest.h>

#include <algorithm>

#include "generators.hpp"
#include "quire/error.hpp"
#include "quire/report.hpp"
#include "quire/workspace.hpp"

using namespace quire;

namespace {

bool has_code(const std::vector<Defect>& defects, const std::string& code, Severity severity) {
  return std::any_of(defects.begin(), defects.end(),
                     [&](const Defect& d) { return d.code == code && d.severity == severity; });
}

ReportDelta append_one(BlockKind kind, std::string text) {
  ReportDelta d;
  d.append.push_back({"", kind, std::move(text)});
  return d;
}

MarginNote note_on(std::string block, ProvenanceKind kind, std::string locator, std::string text = "n") {
  MarginNote n;
  n.anchor = {std::move(block), 0, std::string::npos};
  n.provenance = {kind, std::move(locator), std::nullopt};
  n.text = std::move(text);
  return n;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidState;
}

}  // namespace

TEST_CASE("appending to an empty report yields version 2 with one block") {
  Workspace ws("p1");
  ReportStore store(ws);
  CHECK(store.create("ws1", "T", "ws1.coord") == 1);
  CHECK(store.update_report("ws1", append_one(BlockKind::Paragraph, "hello"), "ws1.coord") == 2);
  const Report r = store.load("ws1");
  REQUIRE(r.blocks.size() == 1);
  CHECK(r.blocks[0].id == "b1");
}

TEST_CASE("deleting an annotated block flags the note dangling") {
  Workspace ws("p1");
  ReportStore store(ws);
  store.create("ws1", "T", "c");
  store.update_report("ws1", append_one(BlockKind::Paragraph, "method"), "c");
  store.annotate("ws1", note_on("b1", ProvenanceKind::Computation, "https://example.org/run"), "c");
  ReportDelta del;
  del.remove = {"b1"};
  store.update_report("ws1", del, "c");
  const Report r = store.load("ws1");
  REQUIRE(r.annotations.size() == 1);
  CHECK(r.annotations[0].dangling);
  CHECK(has_code(validate_report(r, ws), "dangling_annotation", Severity::Blocking));
}

TEST_CASE("editing an unknown block is UnknownBlock") {
  Workspace ws("p1");
  ReportStore store(ws);
  store.create("ws1", "T", "c");
  ReportDelta d;
  d.edit.push_back({"b7", "x"});
  CHECK(code_of([&] { store.update_report("ws1", d, "c"); }) == ErrorCode::UnknownBlock);
  CHECK(store.latest_version("ws1") == 1);
}

TEST_CASE("a user-suggestion note on the method paragraph is accepted") {
  Workspace ws("p1");
  ws.append_file("bus/log.jsonl", "{}\n", "bus");
  ReportStore store(ws);
  store.create("ws1", "T", "c");
  store.update_report("ws1", append_one(BlockKind::Paragraph, "Method: enumerate small configurations."), "c");
  const auto id = store.annotate(
      "ws1",
      note_on("b1", ProvenanceKind::UserSuggestion, "bus/log.jsonl",
              "Pruning heuristic derived from user suggestion; baseline bound from the survey."),
      "c");
  const Report r = store.load("ws1");
  REQUIRE(r.annotations.size() == 1);
  CHECK(r.annotations[0].id == id);
  CHECK(r.annotations[0].provenance.version == 1);
  CHECK(r.annotations[0].anchor.end == normalize_text(r.blocks[0].text).size());
  CHECK(render(r, RenderFormat::Markdown).find("Pruning heuristic derived from user suggestion") != std::string::npos);
}

TEST_CASE("annotation anchors and locators are checked") {
  Workspace ws("p1");
  ReportStore store(ws);
  store.create("ws1", "T", "c");
  store.update_report("ws1", append_one(BlockKind::Paragraph, "short"), "c");
  CHECK(code_of([&] { store.annotate("ws1", note_on("b9", ProvenanceKind::Computation, "https://e.org/x"), "c"); }) ==
        ErrorCode::DanglingAnchor);
  auto wide = note_on("b1", ProvenanceKind::Computation, "https://e.org/x");
  wide.anchor.end = 99;
  CHECK(code_of([&] { store.annotate("ws1", wide, "c"); }) == ErrorCode::DanglingAnchor);
  CHECK(code_of([&] { store.annotate("ws1", note_on("b1", ProvenanceKind::InternalFile, "nope.txt"), "c"); }) ==
        ErrorCode::BadLocator);
  CHECK(code_of([&] { store.annotate("ws1", note_on("b1", ProvenanceKind::Computation, ""), "c"); }) ==
        ErrorCode::BadLocator);
  CHECK(code_of([&] {
          store.annotate("ws1", note_on("b1", ProvenanceKind::ExternalLiterature, "ws/ws1/report.json"), "c");
        }) == ErrorCode::BadLocator);

  ws.write_file("ws/ws1/code/run.txt", "out", "c");
  ws.write_file("ws/ws1/code/run.txt", "out2", "c");
  store.annotate("ws1", note_on("b1", ProvenanceKind::InternalFile, "ws/ws1/code/run.txt"), "c");
  const Report r = store.load("ws1");
  CHECK(r.annotations.back().provenance.version == 2);
}

TEST_CASE("validation severities") {
  Workspace ws("p1");
  Report empty;
  CHECK_FALSE(has_blocking(validate_report(empty, ws)));
  CHECK(has_code(validate_report(empty, ws, true), "missing_exposition", Severity::Blocking));

  Report r;
  r.blocks.push_back({"b1", BlockKind::Exposition, "process"});
  r.blocks.push_back({"b2", BlockKind::Proof, "   "});
  Reference missing;
  missing.kind = Reference::Kind::Internal;
  missing.path = "never/written.txt";
  missing.version = 1;
  r.references.push_back(missing);
  Reference unfetched;
  unfetched.uri = "https://example.org/survey";
  r.references.push_back(unfetched);
  const auto defects = validate_report(r, ws, true);
  CHECK(has_code(defects, "dangling_internal_reference", Severity::Blocking));
  CHECK(has_code(defects, "unverified_external_reference", Severity::Minor));
  CHECK(has_code(defects, "empty_proof", Severity::Minor));
  CHECK_FALSE(has_code(defects, "missing_exposition", Severity::Blocking));
}

TEST_CASE("finalize refuses reports with blocking defects") {
  Workspace ws("p1");
  ReportStore store(ws);
  store.create("ws1", "T", "c");
  store.update_report("ws1", append_one(BlockKind::Paragraph, "no exposition"), "c");
  CHECK(code_of([&] { store.finalize("ws1", "c"); }) == ErrorCode::GateViolation);
  store.update_report("ws1", append_one(BlockKind::Exposition, "how we got here"), "c");
  store.finalize("ws1", "c");
  CHECK(store.load("ws1").status == ReportStatus::Final);
}

TEST_CASE("external references are verified through the store's verifier") {
  Workspace ws("p1");
  ReportStore store(ws);
  store.set_uri_verifier([](const std::string& uri) { return uri == "https://example.org/ok"; });
  store.create("ws1", "T", "c");
  ReportDelta d;
  Reference ok, other;
  ok.uri = "https://example.org/ok";
  other.uri = "https://example.org/other";
  d.references = {ok, other};
  store.update_report("ws1", d, "c");
  const Report r = store.load("ws1");
  REQUIRE(r.references.size() == 2);
  CHECK(r.references[0].verified);
  CHECK_FALSE(r.references[1].verified);
}

TEST_CASE("supersede marks reviewer notes only") {
  Workspace ws("p1");
  ReportStore store(ws);
  store.create("ws1", "T", "c");
  store.update_report("ws1", append_one(BlockKind::Paragraph, "claim"), "c");
  store.annotate("ws1", note_on("b1", ProvenanceKind::Reviewer, "https://e.org/i"), "c");
  store.annotate("ws1", note_on("b1", ProvenanceKind::Computation, "https://e.org/c"), "c");
  const auto before = store.latest_version("ws1");
  CHECK(store.supersede_reviewer_notes("ws1", "c") == before + 1);
  const Report r = store.load("ws1");
  CHECK(r.annotations[0].superseded);
  CHECK_FALSE(r.annotations[1].superseded);
  CHECK(store.supersede_reviewer_notes("ws1", "c") == before + 1);
}

TEST_CASE("empty report renders as its title header") {
  Report r;
  r.title = "Unit distances";
  CHECK(render(r, RenderFormat::Markdown) == "# Unit distances\n");
  const std::string tex = render(r, RenderFormat::Latex);
  CHECK(tex.find("\\title{Unit distances}") != std::string::npos);
  CHECK(tex.find("\\marginpar") == std::string::npos);
}

TEST_CASE("human renders place notes in the margin and references as links") {
  Report r;
  r.title = "T";
  r.blocks.push_back({"b1", BlockKind::Paragraph, "50% of $x_1$ & more"});
  MarginNote n;
  n.id = "n1";
  n.anchor = {"b1", 0, 3};
  n.text = "from <search>";
  n.provenance = {ProvenanceKind::ExternalLiterature, "https://example.org/s", std::nullopt};
  r.annotations.push_back(n);
  Reference ref;
  ref.uri = "https://example.org/s";
  ref.title = "Survey";
  ref.verified = true;
  r.references.push_back(ref);
  const std::string md = render(r, RenderFormat::Markdown);
  CHECK(md.find("<aside class=\"margin-note\" data-note=\"n1\"") != std::string::npos);
  CHECK(md.find("from &lt;search&gt;") != std::string::npos);
  CHECK(md.find("- [Survey](https://example.org/s)") != std::string::npos);
  const std::string tex = render(r, RenderFormat::Latex);
  CHECK(tex.find("50\\% of \\$x\\_1\\$ \\& more") != std::string::npos);
  CHECK(tex.find("\\marginpar{") != std::string::npos);
  CHECK(tex.find("\\url{https://example.org/s}") != std::string::npos);
  CHECK(render(r, RenderFormat::Markdown) == md);
}

TEST_CASE("parse_delta rejects empty and malformed deltas") {
  CHECK(code_of([] { parse_delta(Json::object()); }) == ErrorCode::UnparseableAction);
  CHECK(code_of([] { parse_delta(Json{{"append", 3}}); }) == ErrorCode::UnparseableAction);
  CHECK(code_of([] { parse_delta(Json{{"append", Json::array({{{"kind", "sonnet"}, {"text", "x"}}})}}); }) ==
        ErrorCode::UnparseableAction);
  const auto d = parse_delta(Json{{"annotate", Json::array({{{"block", "b1"}, {"text", "t"},
                                                            {"provenance", {{"kind", "computation"},
                                                                            {"locator", "https://e.org"}}}}})}});
  REQUIRE(d.annotate.size() == 1);
  CHECK(d.annotate[0].anchor.end == std::string::npos);
}

TEST_CASE("normalize_text trims and collapses whitespace") {
  CHECK(normalize_text("  a \t\n b  ") == "a b");
  CHECK(normalize_text("") == "");
  CHECK(normalize_text(" \n ") == "");
}

TEST_CASE("structured render round-trips arbitrary reports") {
  qt::Gen g(20240601);
  for (int i = 0; i < 1000; ++i) {
    const Report r = qt::random_report(g);
    const std::string bytes = render(r, RenderFormat::Structured);
    const Report back = parse_structured(bytes);
    REQUIRE(back == r);
    CHECK(render(back, RenderFormat::Structured) == bytes);
  }
}

TEST_CASE("seeded defects are detected") {
  qt::Gen g(99);
  for (int i = 0; i < 50; ++i) {
    Workspace ws("p1");
    const Report clean = qt::clean_report(g, ws);
    REQUIRE(validate_report(clean, ws, true).empty());
    for (const auto d : qt::kSeededDefects) {
      Report r = clean;
      qt::seed_defect(r, d, g);
      const auto defects = validate_report(r, ws, true);
      const Severity expected =
          d == qt::SeededDefect::UnverifiedExternalRef ? Severity::Minor : Severity::Blocking;
      CHECK(has_code(defects, qt::defect_code(d), expected));
    }
  }
}
