#include "catch_amalgamated.hpp"

#include <httplib.h>
#include <netinet/in.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <thread>

#include "pipeline.hpp"
#include "wfrevive/packaging.hpp"
#include "wfrevive/process.hpp"
#include "wfrevive/session.hpp"

extern char** environ;

using namespace wfr;
namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace std::chrono_literals;

namespace {

const std::string kKegg = test::data_path("fixtures/workflows/entrez_gene_to_kegg_pathway_v5.t2flow").string();
const std::string kHttp = test::data_path("fixtures/http").string();

ProcessResult cli(std::vector<std::string> args, const fs::path& cwd = {}) {
  ProcessSpec spec;
  spec.argv = {WFR_CLI};
  spec.argv.insert(spec.argv.end(), args.begin(), args.end());
  spec.cwd = cwd;
  spec.env = environment_subset({"PATH", "HOME", "TMPDIR", "WFR_PYTHON"});
  spec.timeout = 300s;
  return run_process(spec);
}

int free_port() {
  int fd = socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  socklen_t len = sizeof addr;
  getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  close(fd);
  return ntohs(addr.sin_port);
}

}  // namespace

TEST_CASE("cli: revive --yes packages a verified bundle") {
  test::TempDir dir;
  auto out = dir.path() / "bundle";
  auto r = cli({"revive", kKegg, "--target", "snakemake", "--offline", "--fixtures", kHttp, "--out", out.string(), "--yes"});
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  CHECK(verify_bundle(out).empty());
  CHECK(r.err.find("question r1-q1 (PlausibilityCheck): answered \"yes\"") != std::string::npos);
  CHECK(r.err.find("agrees with the pivot run") != std::string::npos);
  auto work = dir.path() / ".bundle.session";
  CHECK(fs::exists(work / kTranscriptFile));

  auto again = cli({"replay", work.string()});
  CHECK(again.exit_code == 0);
  CHECK(again.out.rfind("identical", 0) == 0);

  auto v = cli({"verify", out.string()});
  CHECK(v.exit_code == 0);
  write_file(out / "workflow" / "Snakefile", "rule all:\n");
  v = cli({"verify", out.string()});
  CHECK(v.exit_code == 2);
  CHECK(v.out.find("DigestMismatch") != std::string::npos);
}

TEST_CASE("cli: revive without answers rejects by default") {
  test::TempDir dir;
  auto r = cli({"revive", kKegg, "--target", "snakemake", "--offline", "--fixtures", kHttp, "--out", (dir.path() / "b").string()});
  CHECK(r.exit_code == 3);
  CHECK(r.err.find("RevivalRejected") != std::string::npos);
  CHECK_FALSE(fs::exists(dir.path() / "b"));
}

TEST_CASE("cli: revive with an answers file") {
  test::TempDir dir;
  auto kb = dir.path() / "kb";
  // A knowledge base whose conversion rule points at the retired route.
  save_knowledge_base(test::kb_with_wrong_conversion(), kb);
  auto answers = dir.path() / "answers.json";
  write_file(answers, R"([{"kind": "EndpointBroken", "step": "convert_to_kegg_ids", "answer": "use https://rest.kegg.jp/conv"},
                          {"kind": "PlausibilityCheck", "answer": "yes"}])");
  auto out = dir.path() / "b";
  auto r = cli({"revive", kKegg, "--offline", "--fixtures", kHttp, "--out", out.string(), "--answers", answers.string(),
                "--kb", kb.string()});
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  auto manifest = json::parse(read_file(out / "manifest.json"));
  bool curator = false;
  for (const auto& s : manifest["substitutions"]) curator = curator || s["decided_by"] == "Curator";
  CHECK(curator);
  // The learned rule is now in the knowledge base.
  auto learned = load_knowledge_base(kb);
  bool has_curator_rule = false;
  for (const auto& rule : learned.rules) has_curator_rule = has_curator_rule || rule.provenance == RuleProvenance::CuratorProvided;
  CHECK(has_curator_rule);
}

TEST_CASE("cli: open questions exit 2") {
  test::TempDir dir;
  auto kb = dir.path() / "kb";
  save_knowledge_base(test::kb_with_wrong_conversion(), kb);
  auto r = cli({"revive", kKegg, "--offline", "--fixtures", kHttp, "--out", (dir.path() / "b").string(), "--kb", kb.string()});
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("EndpointBroken (convert_to_kegg_ids)") != std::string::npos);
}

TEST_CASE("cli: usage errors") {
  test::TempDir dir;
  CHECK(cli({}).exit_code != 0);
  CHECK(cli({"revive", kKegg, "--target", "nextflow", "--out", (dir.path() / "b").string()}).exit_code == 1);
  write_file(dir.path() / "full" / "x", "x");
  CHECK(cli({"revive", kKegg, "--out", (dir.path() / "full").string()}).exit_code == 1);
  auto r = cli({"parse", test::data_path("fixtures/edge/cyclic.t2flow").string()});
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("CyclicWorkflow") != std::string::npos);
  CHECK(cli({"--version"}).out.find(WFREVIVE_VERSION) != std::string::npos);
}

TEST_CASE("cli: parse and probe") {
  auto r = cli({"parse", kKegg});
  REQUIRE(r.exit_code == 0);
  auto ir = ir_from_json(r.out);
  CHECK(ir.find("get_pathways_for_genes"));
  r = cli({"parse", kKegg, "--legacy"});
  CHECK(json::parse(r.out)["format"] == "T2Flow");
  r = cli({"probe", "https://rest.kegg.jp/conv/genes/ncbi-geneid:7124", "--fixtures", kHttp});
  CHECK(r.exit_code == 0);
  CHECK(json::parse(r.out)["status"] == "Ok");
  r = cli({"probe", "http://soap.genome.jp/KEGG.wsdl", "--fixtures", kHttp});
  CHECK(r.exit_code == 2);
}

TEST_CASE("cli: serve answers requests and drains on SIGTERM") {
  test::TempDir dir;
  int port = free_port();
  std::vector<std::string> args = {WFR_CLI, "serve", "--port", std::to_string(port), "--data-dir",
                                   (dir.path() / "data").string(), "--fixtures", kHttp};
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  pid_t pid = 0;
  REQUIRE(posix_spawn(&pid, WFR_CLI, nullptr, nullptr, argv.data(), environ) == 0);

  httplib::Client c("127.0.0.1", port);
  c.set_read_timeout(30s);
  httplib::Result health;
  for (int i = 0; i < 100 && !(health = c.Get("/healthz")); ++i) std::this_thread::sleep_for(50ms);
  REQUIRE(health);
  CHECK(json::parse(health->body)["data"]["status"] == "ok");

  httplib::MultipartFormDataItems items = {{"file", read_file(kKegg), "kegg.t2flow", ""}};
  auto created = c.Post("/sessions", items);
  REQUIRE(created);
  CHECK(created->status == 201);
  auto id = json::parse(created->body)["data"]["id"].get<std::string>();
  auto accepted = c.Post("/sessions/" + id + "/advance", "{}", "application/json");
  REQUIRE(accepted);
  CHECK(accepted->status == 202);

  kill(pid, SIGTERM);
  int status = 0;
  waitpid(pid, &status, 0);
  CHECK(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 0);
  // The queued run finished before exit.
  auto snap = json::parse(read_file(dir.path() / "data" / "sessions" / id / kSnapshotFile));
  CHECK(snap["state"] == "Synthesized");
  CHECK(snap["open_questions"].size() == 1);
}
