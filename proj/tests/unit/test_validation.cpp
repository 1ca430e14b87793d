#include "catch_amalgamated.hpp"

#include "pipeline.hpp"
#include "wfrevive/errors.hpp"
#include "wfrevive/process.hpp"
#include "wfrevive/validation.hpp"

using namespace wfr;

namespace {

PivotScript pivot_for(const test::Prepared& p) {
  DeterministicProvider provider;
  return populate_bodies(build_skeleton(p.sub.ir, p.ctx), p.sub.ir, provider, p.ctx);
}

SandboxConfig sandbox(const test::TempDir& dir, std::optional<std::string> input = "7124\n") {
  SandboxConfig c;
  c.workdir = dir.path() / "run";
  c.fixtures_path = test::kegg_fixtures();
  c.input_text = std::move(input);
  c.time_budget_s = 30;
  return c;
}

// Digest computed by the interpreter's own hashlib.
std::string python_sha256(const std::filesystem::path& file) {
  ProcessSpec spec;
  spec.argv = {python_executable(), "-c",
               "import hashlib,sys;print(hashlib.sha256(open(sys.argv[1],'rb').read()).hexdigest())", file.string()};
  auto r = run_process(spec);
  return r.out.substr(0, 64);
}

void check_plain(const CuratorQuestion& q) {
  INFO(q.text);
  for (const char* bad : {"://", "{", "}", "Traceback", "def ", "_checkpoint", "Error:", "[wfr]"}) {
    CHECK(q.text.find(bad) == std::string::npos);
  }
  CHECK_FALSE(q.text.empty());
}

}  // namespace

TEST_CASE("execute: KEGG pivot in fixture mode") {
  auto p = test::prepare_kegg();
  test::TempDir dir;
  auto report = execute(pivot_for(p), sandbox(dir));
  INFO(report.stderr_text);
  REQUIRE(report.exit_status.kind == ExitStatus::Kind::Ok);
  CHECK(report.transport_mode == TransportMode::Fixture);
  CHECK(report.sockets_opened == 0);
  CHECK(report.output_preview.find("\"hsa05134\"") != std::string::npos);
  REQUIRE(report.outputs.count("results/output.json"));
  CHECK(report.outputs.at("results/output.json") == python_sha256(dir.path() / "run" / "results" / "output.json"));
  CHECK(report.input_present);
  CHECK(report.input_preview == "7124\n");
  CHECK(report_from_json(to_json(report)) == report);

  auto questions = diagnose(report, p.sub.ir);
  REQUIRE(questions.size() == 1);
  const auto& q = questions[0];
  CHECK(q.kind == QuestionKind::PlausibilityCheck);
  CHECK(q.text == "Does a mapping from gene 7124 to pathways hsa01523, hsa04010, hsa04060 and 35 more look right?");
  CHECK(q.options == std::vector<std::string>{"yes", "no"});
  CHECK(q.linked_step == "get_pathways_for_genes");
  CHECK_FALSE(q.degenerate);
  check_plain(q);
  CHECK(diagnose(report_from_json(to_json(report)), p.sub.ir) == questions);
}

TEST_CASE("execute: endpoint missing from the fixtures fails at the conversion step") {
  auto p = test::prepare_kegg();
  auto entries = FixtureTransport::load(test::kegg_fixtures()).entries();
  entries.erase("GET https://rest.kegg.jp/conv/genes/ncbi-geneid:7124");
  FixtureTransport fixtures(entries);
  test::TempDir dir;
  auto report = execute(pivot_for(p), sandbox(dir), &fixtures);
  CHECK(report.exit_status.kind == ExitStatus::Kind::RuntimeError);
  CHECK(report.exit_status.step_id == "convert_to_kegg_ids");
  CHECK(report.sockets_opened == 0);
  auto q = diagnose(report, p.sub.ir);
  REQUIRE(q.size() == 1);
  CHECK(q[0].kind == QuestionKind::EndpointBroken);
  CHECK(q[0].text.find("could not be reached") != std::string::npos);
  check_plain(q[0]);
}

TEST_CASE("diagnose: 404 on the wrong conversion route") {
  auto p = test::prepare(test::workflow_fixture("entrez_gene_to_kegg_pathway_v5.t2flow"), test::kb_with_wrong_conversion());
  REQUIRE(p.sub.ir.find("convert_to_kegg_ids")->endpoint->operation == "/convert_gene/genes/{source_id}");
  test::TempDir dir;
  auto report = execute(pivot_for(p), sandbox(dir));
  REQUIRE(report.exit_status.kind == ExitStatus::Kind::RuntimeError);
  CHECK(report.exit_status.step_id == "convert_to_kegg_ids");
  auto questions = diagnose(report, p.sub.ir);
  REQUIRE(questions.size() == 1);
  const auto& q = questions[0];
  CHECK(q.kind == QuestionKind::EndpointBroken);
  CHECK(q.linked_step == "convert_to_kegg_ids");
  CHECK(q.text ==
        "The step \"convert to kegg ids\" failed because its web service replied that the address does not exist. "
        "It fetches data from the KEGG web service. Which web address should it use instead?");
  CHECK(q.detail.find("404 https://rest.kegg.jp/convert_gene/genes/ncbi-geneid:7124") != std::string::npos);
  check_plain(q);

  // The curator's short answer becomes a full rule for the original endpoint.
  auto lowered = collapse_shims(detect_shims(lower(p.legacy))).ir;
  AnswerContext ctx;
  ctx.original_ir = &lowered;
  ctx.current_ir = &p.sub.ir;
  ctx.response_adapters = p.ctx.response_adapters;
  auto effect = interpret_answer(q, {q.id, "use https://rest.kegg.jp/conv"}, ctx);
  CHECK(effect.kind == SessionEffect::Kind::RuleAdded);
  CHECK(effect.step_id == "convert_to_kegg_ids");
  REQUIRE(effect.rule);
  CHECK(effect.rule->replacement->url_template() == "https://rest.kegg.jp/conv/genes/{source_id}");
  CHECK(effect.rule->provenance == RuleProvenance::CuratorProvided);
  CHECK(effect.rule->confidence == Confidence::Suggested);
  CHECK(effect.rule->response_adapter == ResponseAdapter::TabSeparatedPairs);
  CHECK(effect.rule->match.protocol == Protocol::Soap);
  CHECK(effect.rule->match.accepts(*lowered.find("convert_to_kegg_ids")->endpoint));
  CHECK_FALSE(effect.rule->match.accepts(*lowered.find("get_pathways_for_genes")->endpoint));
  CHECK(effect_from_json(to_json(effect)) == effect);

  CHECK_THROWS_MATCHES(interpret_answer(q, {q.id, "the conversion one"}, ctx), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) { return e.code() == Errc::AnswerShapeMismatch; }));
}

TEST_CASE("execute: budget enforcement gives Timeout") {
  auto p = test::prepare_kegg();
  auto pivot = pivot_for(p);
  pivot.functions[1].body = "while True:\n    pass";
  test::TempDir dir;
  auto cfg = sandbox(dir);
  cfg.time_budget_s = 1;
  auto report = execute(pivot, cfg);
  CHECK(report.exit_status.kind == ExitStatus::Kind::Timeout);
  CHECK(report.wall_time_ms >= 1000);
  CHECK(report.wall_time_ms < 10000);
  auto q = diagnose(report, p.sub.ir);
  REQUIRE(q.size() == 1);
  CHECK(q[0].kind == QuestionKind::OpaqueStep);
  CHECK(q[0].linked_step == "convert_to_kegg_ids");
  check_plain(q[0]);
}

TEST_CASE("execute: missing input file") {
  auto p = test::prepare_kegg();
  test::TempDir dir;
  auto report = execute(pivot_for(p), sandbox(dir, std::nullopt));
  CHECK(report.exit_status.kind == ExitStatus::Kind::RuntimeError);
  CHECK(report.exit_code == 2);
  CHECK_FALSE(report.input_present);
  auto q = diagnose(report, p.sub.ir);
  REQUIRE(q.size() == 1);
  CHECK(q[0].kind == QuestionKind::MissingInput);
  CHECK(q[0].text == "The workflow needs sample input to run. Please upload a file with example genes, one per line.");
  auto effect = interpret_answer(q[0], {q[0].id, "7124\n"}, {});
  CHECK(effect.kind == SessionEffect::Kind::InputRegistered);
  CHECK(effect.input_text == "7124\n");
  CHECK_THROWS_AS(interpret_answer(q[0], {q[0].id, "  "}, {}), Error);
}

TEST_CASE("execute: unreadable service reply") {
  auto p = test::prepare_kegg();
  auto entries = FixtureTransport::load(test::kegg_fixtures()).entries();
  entries["GET https://rest.kegg.jp/conv/genes/ncbi-geneid:7124"]["body"] = "<html>moved</html>\n";
  FixtureTransport fixtures(entries);
  test::TempDir dir;
  auto report = execute(pivot_for(p), sandbox(dir), &fixtures);
  CHECK(report.exit_code == 5);
  auto q = diagnose(report, p.sub.ir);
  REQUIRE(q.size() == 1);
  CHECK(q[0].kind == QuestionKind::DataFormatUnknown);
  CHECK(q[0].linked_step == "convert_to_kegg_ids");
  check_plain(q[0]);
}

TEST_CASE("execute: fixture mode blocks sockets and counts attempts") {
  auto p = test::prepare_kegg();
  auto pivot = pivot_for(p);
  pivot.functions[0].body =
      "import urllib.request\nurllib.request.urlopen('http' + ':' + '//127.0.0.1:9/', timeout=2)\n"
      "return {'gene_ids': []}";
  test::TempDir dir;
  auto report = execute(pivot, sandbox(dir));
  CHECK(report.exit_status.kind == ExitStatus::Kind::RuntimeError);
  CHECK(report.sockets_opened == 1);
  CHECK(report.stderr_text.find("network access is disabled") != std::string::npos);
  auto q = diagnose(report, p.sub.ir);
  REQUIRE(q.size() == 1);
  CHECK(q[0].kind == QuestionKind::DataFormatUnknown);
  CHECK(q[0].linked_step == "read_gene_ids");
}

TEST_CASE("execute: checkpoint marker becomes an OpaqueStep question") {
  auto ir = test::prepare(test::fixture("edge/opaque_activity.t2flow")).sub.ir;
  DeterministicProvider provider;
  auto pivot = populate_bodies(build_skeleton(ir), ir, provider);
  test::TempDir dir;
  auto cfg = sandbox(dir, std::string("x\n"));
  if (ir.inputs.size() > 1) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& i : ir.inputs) j[i.name] = "x";
    cfg.input_text = j.dump();
  }
  auto report = execute(pivot, cfg);
  REQUIRE(report.exit_status.kind == ExitStatus::Kind::RuntimeError);
  CHECK(report.exit_code == 4);
  auto q = diagnose(report, ir);
  REQUIRE(q.size() == 1);
  CHECK(q[0].kind == QuestionKind::OpaqueStep);
  REQUIRE(q[0].linked_step);
  CHECK(ir.find(*q[0].linked_step)->kind == StepKind::Opaque);
  check_plain(q[0]);

  auto note = interpret_answer(q[0], {q[0].id, "It reverses the text."}, {});
  CHECK(note.kind == SessionEffect::Kind::ResynthesisScheduled);
  CHECK(note.note == "It reverses the text.");
  CHECK_FALSE(note.body);
  auto code = interpret_answer(q[0], {q[0].id, "value = 1\nreturn {'out': value}"}, {});
  CHECK(code.body == "value = 1\nreturn {'out': value}");
}

TEST_CASE("execute: setup failures") {
  auto p = test::prepare_kegg();
  test::TempDir dir;
  auto cfg = sandbox(dir);
  write_file(cfg.workdir / "leftover.txt", "x");
  CHECK_THROWS_MATCHES(execute(pivot_for(p), cfg), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == Errc::SandboxSetupFailed;
                       }));
  auto skeleton = build_skeleton(p.sub.ir, p.ctx);
  test::TempDir other;
  CHECK_THROWS_AS(execute(skeleton, sandbox(other)), Error);
}

TEST_CASE("plausibility: degenerate outputs are flagged") {
  auto p = test::prepare_kegg();
  ExecutionReport r;
  r.number = 3;
  r.input_present = true;
  r.input_preview = "7124\n";
  r.output_preview = "{\"pathways\": []}";
  auto q = diagnose(r, p.sub.ir);
  REQUIRE(q.size() == 1);
  CHECK(q[0].id == "r3-q1");
  CHECK(q[0].degenerate);
  CHECK(q[0].text == "The workflow ran but produced no pathways for gene 7124. Is an empty result expected?");
  r.output_preview = "{\"pathways\": [\"hsa1\", \"hsa1\", \"hsa1\"]}";
  q = diagnose(r, p.sub.ir);
  CHECK(q[0].degenerate);
  CHECK(q[0].text == "The workflow produced the same pathway (hsa1) for every entry. Does that look right?");
  r.output_preview = "{\"pathways\": [\"hsa05134\"]}";
  q = diagnose(r, p.sub.ir);
  CHECK_FALSE(q[0].degenerate);
  CHECK(q[0].text == "Does a mapping from gene 7124 to pathway hsa05134 look right?");
}

TEST_CASE("plausibility answers") {
  CuratorQuestion q;
  q.id = "r1-q1";
  q.kind = QuestionKind::PlausibilityCheck;
  q.linked_step = "get_pathways_for_genes";
  CHECK(interpret_answer(q, {"r1-q1", "Yes"}, {}).kind == SessionEffect::Kind::StepApproved);
  CHECK(interpret_answer(q, {"r1-q1", "yes"}, {}).step_id == "get_pathways_for_genes");
  CHECK(interpret_answer(q, {"r1-q1", "no."}, {}).kind == SessionEffect::Kind::RevivalRejected);
  CHECK_THROWS_AS(interpret_answer(q, {"r1-q1", "maybe"}, {}), Error);
  try {
    interpret_answer(q, {"r9-q9", "yes"}, {});
    FAIL("expected UnknownQuestion");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::UnknownQuestion);
  }
}

TEST_CASE("complete_url_template") {
  const std::string failed = "https://rest.kegg.jp/convert_gene/genes/{source_id}";
  CHECK(complete_url_template("https://rest.kegg.jp/conv", failed) == "https://rest.kegg.jp/conv/genes/{source_id}");
  CHECK(complete_url_template("https://rest.kegg.jp/conv/genes", failed) == "https://rest.kegg.jp/conv/genes/{source_id}");
  CHECK(complete_url_template("https://rest.kegg.jp/conv/genes/x/y", failed) ==
        "https://rest.kegg.jp/conv/genes/x/y/{source_id}");
  CHECK(complete_url_template("https://other.org/api/{id}", failed) == "https://other.org/api/{id}");
  CHECK(complete_url_template("https://other.org/v2", "") == "https://other.org/v2");
  CHECK(find_url("use https://rest.kegg.jp/conv.") == "https://rest.kegg.jp/conv");
  CHECK_FALSE(find_url("use the conv service"));
}

TEST_CASE("successful_requests reads the run log") {
  ExecutionReport r;
  r.stderr_text = "[wfr] http-ok convert_to_kegg_ids 200 0 https://rest.kegg.jp/conv/genes/x\nnoise\n"
                  "[wfr] http-error get 404 https://a/b\n";
  CHECK(successful_requests(r) ==
        std::vector<std::pair<std::string, std::string>>{{"convert_to_kegg_ids", "https://rest.kegg.jp/conv/genes/x"}});
}

TEST_CASE("SandboxConfig JSON") {
  SandboxConfig c;
  c.workdir = "/tmp/w";
  c.time_budget_s = 42;
  c.transport = TransportMode::Live;
  c.fixtures_path = "fx";
  c.env_allowlist = {"PATH"};
  CHECK(sandbox_from_json(to_json(c)) == c);
  CHECK(sandbox_from_json({{"workdir", "w"}}).time_budget_s == 600);
  CHECK_THROWS_AS(sandbox_from_json({{"workdir", "w"}, {"transport", "carrier-pigeon"}}), Error);
}
