#include "catch_amalgamated.hpp"

#include "pipeline.hpp"
#include "wfrevive/errors.hpp"
#include "wfrevive/packaging.hpp"
#include "wfrevive/process.hpp"

using namespace wfr;
namespace fs = std::filesystem;

namespace {

struct KeggBuild {
  test::Prepared p;
  PivotScript pivot;
  TargetWorkflow target;
};

KeggBuild kegg_build() {
  KeggBuild b{test::prepare_kegg(), {}, {}};
  DeterministicProvider provider;
  b.pivot = populate_bodies(build_skeleton(b.p.sub.ir, b.p.ctx), b.p.sub.ir, provider, b.p.ctx);
  b.target = emit_snakemake(b.pivot, b.p.sub.ir);
  return b;
}

BundleSource source_for(const KeggBuild& b, const std::string& emitted_at = "2026-01-05T10:00:00Z") {
  BundleSource s;
  s.original_filename = "entrez_gene_to_kegg_pathway_v5.t2flow";
  s.original_bytes = test::workflow_fixture(s.original_filename);
  s.original_format = to_string(b.p.legacy.format);
  s.source_digest = b.p.legacy.source_digest;
  s.pivot = b.pivot;
  s.target = b.target;
  s.sample_input = "7124\n";
  s.substitutions = b.p.sub.applied;
  s.decisions = {{"PlausibilityCheck", "yes"}};
  s.ir = &b.p.sub.ir;
  s.emitted_at = emitted_at;
  return s;
}

std::vector<BundleFindingKind> kinds(const std::vector<BundleFinding>& fs) {
  std::vector<BundleFindingKind> out;
  for (const auto& f : fs) out.push_back(f.kind);
  return out;
}

}  // namespace

TEST_CASE("write_bundle: layout, manifest and a clean verification") {
  auto b = kegg_build();
  test::TempDir dir;
  auto bundle = write_bundle(source_for(b), dir.path() / "bundle");
  const auto& root = bundle.root;

  CHECK(bundle.contents == std::vector<std::string>{"data/input.txt",
                                                    "manifest.json",
                                                    "original/entrez_gene_to_kegg_pathway_v5.t2flow",
                                                    "pivot/workflow.py",
                                                    "run",
                                                    "workflow/Snakefile",
                                                    "workflow/config.yaml",
                                                    "workflow/scripts/convert_to_kegg_ids.py",
                                                    "workflow/scripts/get_pathways_for_genes.py",
                                                    "workflow/scripts/read_gene_ids.py"});
  CHECK(read_file(root / "run") == kRunScript);
  CHECK((fs::status(root / "run").permissions() & fs::perms::owner_exec) != fs::perms::none);
  CHECK(read_file(root / "original/entrez_gene_to_kegg_pathway_v5.t2flow") ==
        test::workflow_fixture("entrez_gene_to_kegg_pathway_v5.t2flow"));
  CHECK(read_file(root / "pivot/workflow.py") == render(b.pivot));

  auto m = manifest_from_json(nlohmann::json::parse(read_file(root / "manifest.json")));
  CHECK(m == bundle.manifest);
  CHECK(m.source_digest == sha256_hex(test::workflow_fixture("entrez_gene_to_kegg_pathway_v5.t2flow")));
  CHECK(m.pivot_digest == sha256_file(root / "pivot/workflow.py"));
  CHECK(m.target_digest == target_digest(b.target));
  CHECK(m.engine_version == WFREVIVE_VERSION);
  CHECK(m.files.size() == bundle.contents.size() - 1);
  CHECK_FALSE(m.files.count("manifest.json"));
  for (const auto& [rel, digest] : m.files) CHECK(digest == sha256_file(root / rel));
  CHECK(m.decisions == std::vector<ManifestDecision>{{"PlausibilityCheck", "yes"}});

  const ManifestSubstitution* conv = nullptr;
  for (const auto& s : m.substitutions) {
    if (s.step_id == "convert_to_kegg_ids") conv = &s;
  }
  REQUIRE(conv);
  CHECK(conv->from_endpoint.protocol == Protocol::Soap);
  CHECK(conv->to_endpoint.url_template() == "https://rest.kegg.jp/conv/genes/{source_id}");
  CHECK(conv->decided_by == "Builtin");
  CHECK(conv->rule_id == "builtin-kegg-conv");

  CHECK(verify_bundle(root).empty());
}

TEST_CASE("target_digest: independent recomputation") {
  auto b = kegg_build();
  std::vector<std::string> lines = {"Snakefile " + sha256_hex(b.target.snakefile),
                                    "config.yaml " + sha256_hex(b.target.config_yaml)};
  for (const auto& [p, t] : b.target.scripts) lines.push_back(p + " " + sha256_hex(t));
  std::sort(lines.begin(), lines.end());
  std::string joined;
  for (const auto& l : lines) joined += l + "\n";
  CHECK(target_digest(b.target) == sha256_hex(joined));
}

TEST_CASE("write_bundle: rebuilds are identical apart from the emission time") {
  auto b = kegg_build();
  test::TempDir dir;
  auto one = write_bundle(source_for(b, "2026-01-05T10:00:00Z"), dir.path() / "a");
  auto two = write_bundle(source_for(b, "2026-03-09T17:30:00Z"), dir.path() / "b");
  CHECK(one.contents == two.contents);
  for (const auto& rel : one.contents) {
    if (rel == "manifest.json") continue;
    CHECK(read_file(one.root / rel) == read_file(two.root / rel));
  }
  auto m2 = two.manifest;
  m2.emitted_at = one.manifest.emitted_at;
  CHECK(m2 == one.manifest);
}

TEST_CASE("write_bundle: refusals") {
  auto b = kegg_build();
  test::TempDir dir;

  SECTION("a ServiceCall step without a substitution record") {
    auto s = source_for(b);
    std::erase_if(s.substitutions, [](const AppliedSubstitution& a) { return a.step_id == "get_pathways_for_genes"; });
    try {
      write_bundle(s, dir.path() / "x");
      FAIL("expected IncompleteSession");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::IncompleteSession);
      CHECK(e.subjects() == std::vector<std::string>{"get_pathways_for_genes"});
    }
    CHECK_FALSE(fs::exists(dir.path() / "x"));
  }
  SECTION("original bytes that do not match the digest") {
    auto s = source_for(b);
    s.original_bytes += " ";
    CHECK_THROWS_MATCHES(write_bundle(s, dir.path() / "x"), Error,
                         Catch::Matchers::Predicate<Error>([](const Error& e) { return e.code() == Errc::IncompleteSession; }));
  }
  SECTION("a non-empty destination") {
    write_file(dir.path() / "x" / "keep.txt", "k");
    CHECK_THROWS_AS(write_bundle(source_for(b), dir.path() / "x"), Error);
    CHECK(read_file(dir.path() / "x" / "keep.txt") == "k");
  }
}

TEST_CASE("verify_bundle: detects tampering and damage") {
  auto b = kegg_build();
  test::TempDir dir;
  auto root = write_bundle(source_for(b), dir.path() / "bundle").root;

  SECTION("edited Snakefile") {
    write_file(root / "workflow/Snakefile", read_file(root / "workflow/Snakefile") + "\n# edited\n");
    auto f = verify_bundle(root);
    CHECK(kinds(f) == std::vector<BundleFindingKind>{BundleFindingKind::DigestMismatch, BundleFindingKind::DigestMismatch});
    CHECK(f[0].path == "workflow/Snakefile");
    CHECK(f[1].path == "workflow/");
  }
  SECTION("edited pivot") {
    write_file(root / "pivot/workflow.py", "print(1)\n");
    auto f = verify_bundle(root);
    REQUIRE(f.size() == 2);
    CHECK(f[0].path == "pivot/workflow.py");
    CHECK(f[1].detail == "pivot digest differs");
  }
  SECTION("missing data directory") {
    fs::remove_all(root / "data");
    auto f = verify_bundle(root);
    REQUIRE(f.size() == 2);
    CHECK(f[0] == BundleFinding{BundleFindingKind::Layout, "data/", "missing or empty"});
    CHECK(f[1].kind == BundleFindingKind::DigestMismatch);
    CHECK(f[1].path == "data/input.txt");
  }
  SECTION("run script lost its executable bit") {
    fs::permissions(root / "run", fs::perms::owner_read | fs::perms::owner_write);
    CHECK(verify_bundle(root) == std::vector<BundleFinding>{{BundleFindingKind::Layout, "run", "not executable"}});
  }
  SECTION("an unlisted file") {
    write_file(root / "workflow/scripts/extra.py", "x = 1\n");
    auto f = verify_bundle(root);
    REQUIRE(f.size() == 2);
    CHECK(f[0] == BundleFinding{BundleFindingKind::DigestMismatch, "workflow/scripts/extra.py", "not listed in the manifest"});
    CHECK(f[1].path == "workflow/");
  }
  SECTION("an absolute path in a script") {
    auto manifest = nlohmann::json::parse(read_file(root / "manifest.json"));
    write_file(root / "data/input.txt", "/home/curator/genes.txt\n");
    manifest["files"]["data/input.txt"] = sha256_file(root / "data/input.txt");
    write_file(root / "manifest.json", manifest.dump(2));
    CHECK(verify_bundle(root) ==
          std::vector<BundleFinding>{{BundleFindingKind::NotRelocatable, "data/input.txt", "absolute path /home/curator/genes.txt"}});
  }
  SECTION("the bundle's own location in a file") {
    auto manifest = nlohmann::json::parse(read_file(root / "manifest.json"));
    write_file(root / "data/input.txt", "x " + root.string() + "/data\n");
    manifest["files"]["data/input.txt"] = sha256_file(root / "data/input.txt");
    write_file(root / "manifest.json", manifest.dump(2));
    auto f = verify_bundle(root);
    REQUIRE(f.size() == 1);
    CHECK(f[0].kind == BundleFindingKind::NotRelocatable);
  }
  SECTION("unreadable manifest") {
    write_file(root / "manifest.json", "{\"schema\": 1}");
    auto f = verify_bundle(root);
    REQUIRE(f.size() == 1);
    CHECK(f[0].kind == BundleFindingKind::Manifest);
  }
  SECTION("no bundle at all") {
    CHECK(kinds(verify_bundle(dir.path() / "nothing")) == std::vector<BundleFindingKind>{BundleFindingKind::Layout});
  }
}

TEST_CASE("verify_bundle: URLs and the shebang are not absolute paths") {
  auto b = kegg_build();
  test::TempDir dir;
  auto root = write_bundle(source_for(b), dir.path() / "bundle").root;
  CHECK(read_file(root / "workflow/config.yaml").find("https://rest.kegg.jp") != std::string::npos);
  CHECK(read_file(root / "run").rfind("#!/bin/sh", 0) == 0);
  CHECK(verify_bundle(root).empty());
}

TEST_CASE("bundle: relocated copy still verifies and runs") {
  auto b = kegg_build();
  test::TempDir dir;
  write_bundle(source_for(b), dir.path() / "bundle");
  fs::rename(dir.path() / "bundle", dir.path() / "moved");
  CHECK(verify_bundle(dir.path() / "moved").empty());

  TargetRunOptions opts;
  opts.env = {{"WFR_FIXTURES", test::kegg_fixtures()}};
  auto r = run_target(dir.path() / "moved" / "workflow", opts);
  INFO((r.rules.empty() ? "" : r.rules.back().err));
  REQUIRE(r.ok);
  auto out = nlohmann::json::parse(read_file(dir.path() / "moved/workflow/results/output.json"));
  auto pathways = out.at("pathways").get<std::vector<std::string>>();
  CHECK(pathways.size() == 38);
  CHECK(std::find(pathways.begin(), pathways.end(), "hsa05134") != pathways.end());
}

TEST_CASE("tar_directory: readable by an independent tar reader, deterministic") {
  auto b = kegg_build();
  test::TempDir dir;
  auto bundle = write_bundle(source_for(b), dir.path() / "bundle");
  auto tar = tar_directory(bundle.root, "revival");
  CHECK(tar.size() % 512 == 0);
  CHECK(tar == tar_directory(bundle.root, "revival"));
  write_file(dir.path() / "b.tar", tar);

  ProcessSpec spec;
  spec.argv = {python_executable(), "-c",
               "import tarfile,sys,hashlib\n"
               "t=tarfile.open(sys.argv[1])\n"
               "for m in t.getmembers():\n"
               "  d=hashlib.sha256(t.extractfile(m).read()).hexdigest() if m.isfile() else '-'\n"
               "  print(m.name, oct(m.mode), m.mtime, m.uid, d)\n",
               (dir.path() / "b.tar").string()};
  auto r = run_process(spec);
  INFO(r.err);
  REQUIRE(r.exit_code == 0);

  std::string expected = "revival 0o755 0 0 -\n";
  std::set<std::string> dirs;
  for (const auto& rel : bundle.contents) {
    auto parent = fs::path(rel).parent_path();
    for (auto p = parent; !p.empty(); p = p.parent_path()) dirs.insert(p.generic_string());
  }
  std::set<std::string> all(dirs.begin(), dirs.end());
  all.insert(bundle.contents.begin(), bundle.contents.end());
  for (const auto& rel : all) {
    if (dirs.count(rel)) {
      expected += "revival/" + rel + " 0o755 0 0 -\n";
    } else {
      auto mode = rel == "run" ? "0o755" : "0o644";
      expected += "revival/" + rel + " " + mode + " 0 0 " + sha256_file(bundle.root / rel) + "\n";
    }
  }
  CHECK(r.out == expected);
}

TEST_CASE("tar_directory: long paths use the ustar prefix field") {
  test::TempDir dir;
  std::string deep;
  for (int i = 0; i < 6; ++i) deep += std::string(30, static_cast<char>('a' + i)) + "/";
  write_file(dir.path() / "root" / deep / "file.txt", "payload");
  write_file(dir.path() / "t.tar", tar_directory(dir.path() / "root", "p"));
  ProcessSpec spec;
  spec.argv = {python_executable(), "-c",
               "import tarfile,sys\nt=tarfile.open(sys.argv[1])\n"
               "m=[x for x in t.getmembers() if x.isfile()][0]\nprint(m.name)\nprint(t.extractfile(m).read().decode())\n",
               (dir.path() / "t.tar").string()};
  auto r = run_process(spec);
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  CHECK(r.out == "p/" + deep + "file.txt\npayload\n");
}

TEST_CASE("manifest JSON: round trip and rejection") {
  auto b = kegg_build();
  test::TempDir dir;
  auto m = write_bundle(source_for(b), dir.path() / "bundle").manifest;
  CHECK(manifest_from_json(to_json(m)) == m);
  auto j = to_json(m);
  j["revived"].erase("pivot_digest");
  CHECK_THROWS_MATCHES(manifest_from_json(j), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) { return e.code() == Errc::SchemaViolation; }));
}
