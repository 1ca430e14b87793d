#include "catch_amalgamated.hpp"

#include <fstream>
#include <thread>

#include "pipeline.hpp"
#include "wfrevive/engine.hpp"
#include "wfrevive/errors.hpp"

using namespace wfr;
namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace std::chrono_literals;

namespace {

EngineOptions options_in(const test::TempDir& dir) {
  EngineOptions o;
  o.data_dir = dir.path() / "data";
  o.fixtures = test::kegg_fixtures();
  return o;
}

std::string kegg() {
  return test::workflow_fixture("entrez_gene_to_kegg_pathway_v5.t2flow");
}

std::vector<json> transcript_file(const fs::path& dir) {
  std::vector<json> out;
  std::ifstream in(dir / kTranscriptFile);
  for (std::string line; std::getline(in, line);) out.push_back(json::parse(line));
  return out;
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return Errc::InvalidArgument;
}

TaskInfo finish(Engine& engine, const std::string& task) {
  auto t = engine.wait_task(task, 120s);
  REQUIRE(t);
  REQUIRE((t->status == TaskStatus::Done || t->status == TaskStatus::Failed));
  return *t;
}

}  // namespace

TEST_CASE("engine: create persists transcript and snapshot; duplicate uploads get distinct ids") {
  test::TempDir dir;
  Engine engine(options_in(dir));
  auto a = engine.create(kegg(), {});
  auto b = engine.create(kegg(), {});
  CHECK(a["state"] == "Uploaded");
  CHECK(a["id"] != b["id"]);
  auto id = a["id"].get<std::string>();
  auto sdir = engine.session_dir(id);
  CHECK(sdir == dir.path() / "data" / "sessions" / id);
  CHECK(transcript_file(sdir).size() == 1);
  CHECK(json::parse(read_file(sdir / kSnapshotFile)) == *engine.snapshot(id));
  CHECK(engine.session_ids().size() == 2);
}

TEST_CASE("engine: unknown sessions, providers and reports") {
  test::TempDir dir;
  Engine engine(options_in(dir));
  CHECK(code_of([&] { engine.snapshot("nope"); }) == Errc::NotFound);
  CHECK(code_of([&] { engine.snapshot("../kb"); }) == Errc::NotFound);
  CHECK(code_of([&] { engine.submit("nope", TaskKind::Advance); }) == Errc::NotFound);
  SessionConfig cfg;
  cfg.provider = "oracle";
  CHECK(code_of([&] { engine.create(kegg(), cfg); }) == Errc::InvalidArgument);
  cfg.provider = "remote";
  CHECK(code_of([&] { engine.create(kegg(), cfg); }) == Errc::InvalidArgument);
  auto id = engine.create(kegg(), {})["id"].get<std::string>();
  CHECK(code_of([&] { engine.report(id, 1); }) == Errc::NotFound);
  CHECK(code_of([&] { engine.bundle_tar(id); }) == Errc::IncompleteSession);
}

TEST_CASE("engine: tasks drive KEGG to Packaged and the knowledge base learns") {
  test::TempDir dir;
  Engine engine(options_in(dir));
  auto id = engine.create(kegg(), {})["id"].get<std::string>();
  CHECK(engine.knowledge_base().find("builtin-kegg-conv")->confidence == Confidence::Suggested);

  auto t = finish(engine, engine.submit(id, TaskKind::RunToCompletion));
  CHECK(t.status == TaskStatus::Done);
  CHECK(t.result["state"] == "Synthesized");
  REQUIRE(t.result["open_questions"].size() == 1);
  auto qid = t.result["open_questions"][0].get<std::string>();
  CHECK(engine.snapshot(id)->at("open_questions")[0]["kind"] == "PlausibilityCheck");

  auto effect = engine.answer(id, {qid, "yes"});
  CHECK(effect.kind == SessionEffect::Kind::StepApproved);
  t = finish(engine, engine.submit(id, TaskKind::RunToCompletion));
  CHECK(t.result["state"] == "Packaged");

  auto report = engine.report(id, 1);
  CHECK(report["exit_status"]["kind"] == "Ok");
  CHECK(report["sockets_opened"] == 0);
  auto tar = engine.bundle_tar(id);
  CHECK(tar.size() % 512 == 0);
  CHECK(tar.find("revival-" + id + "/workflow/Snakefile") != std::string::npos);

  CHECK(engine.knowledge_base().find("builtin-kegg-conv")->confidence == Confidence::Confirmed);
  CHECK(load_knowledge_base(dir.path() / "data" / "kb").find("builtin-kegg-conv")->confidence == Confidence::Confirmed);

  // Transcript on disk equals the in-memory log, in order.
  auto on_disk = transcript_file(engine.session_dir(id));
  CHECK(on_disk == engine.transcript(id));
  for (std::size_t i = 0; i < on_disk.size(); ++i) CHECK(on_disk[i]["seq"] == i + 1);
}

TEST_CASE("engine: sessions created after learning start from the learned knowledge base") {
  test::TempDir dir;
  Engine engine(options_in(dir));
  auto id = engine.create(kegg(), {})["id"].get<std::string>();
  engine.run_to_completion(id, approve_plausibility());
  REQUIRE(engine.snapshot(id)->at("state") == "Packaged");
  auto id2 = engine.create(kegg(), {})["id"].get<std::string>();
  auto kb = knowledge_base_from_json(engine.snapshot(id2)->at("kb"));
  CHECK(kb.find("builtin-kegg-conv")->confidence == Confidence::Confirmed);
}

TEST_CASE("engine: a restarted engine reloads sessions and continues them") {
  test::TempDir dir;
  std::string id;
  json before;
  {
    Engine engine(options_in(dir));
    id = engine.create(kegg(), {})["id"].get<std::string>();
    engine.run_to_completion(id, no_answers());
    before = *engine.snapshot(id);
  }
  Engine engine(options_in(dir));
  CHECK(*engine.snapshot(id) == before);
  CHECK(engine.transcript(id).size() == transcript_file(engine.session_dir(id)).size());
  auto qid = before["open_questions"][0]["id"].get<std::string>();
  engine.answer(id, {qid, "yes"});
  engine.run_to_completion(id, no_answers());
  CHECK(engine.snapshot(id)->at("state") == "Packaged");
  auto seqs = engine.transcript(id);
  for (std::size_t i = 0; i < seqs.size(); ++i) CHECK(seqs[i]["seq"] == i + 1);
}

TEST_CASE("engine: replaying the persisted transcript reproduces the snapshot") {
  test::TempDir dir;
  Engine engine(options_in(dir));
  auto id = engine.create(kegg(), {})["id"].get<std::string>();
  engine.run_to_completion(id, approve_plausibility());
  auto sdir = engine.session_dir(id);
  auto fixtures = FixtureTransport::load(sdir / kFixturesFile);
  test::TempDir other;
  auto replayed = replay_session(transcript_file(sdir), read_file(sdir / kUploadFile),
                                 knowledge_base_from_json(json::parse(read_file(sdir / kInitialKbFile))),
                                 other.path() / id, &fixtures);
  CHECK(without_timestamps(to_json(replayed)) == without_timestamps(*engine.snapshot(id)));
}

TEST_CASE("engine: events_after waits for new events and times out") {
  test::TempDir dir;
  Engine engine(options_in(dir));
  auto id = engine.create(kegg(), {})["id"].get<std::string>();
  CHECK(engine.events_after(id, 0, 0ms).size() == 1);
  auto start = std::chrono::steady_clock::now();
  CHECK(engine.events_after(id, 1, 100ms).empty());
  CHECK(std::chrono::steady_clock::now() - start >= 90ms);

  std::thread t([&] {
    std::this_thread::sleep_for(50ms);
    engine.advance(id);
  });
  auto events = engine.events_after(id, 1, 10s);
  t.join();
  REQUIRE_FALSE(events.empty());
  CHECK(events.front()["seq"] == 2);
  CHECK(events.front()["type"] == "advance");
}

TEST_CASE("engine: concurrent writers on one session are serialized") {
  test::TempDir dir;
  Engine engine(options_in(dir));
  auto id = engine.create(kegg(), {})["id"].get<std::string>();
  for (int i = 0; i < 4; ++i) engine.advance(id);
  REQUIRE(engine.snapshot(id)->at("state") == "Synthesized");

  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int i = 0; i < 3; ++i) {
    threads.emplace_back([&] {
      if (engine.execute(id).exit_status.kind == ExitStatus::Kind::Ok) ++ok;
    });
  }
  for (int i = 0; i < 20; ++i) threads.emplace_back([&] { (void)engine.snapshot(id); });
  for (auto& t : threads) t.join();
  CHECK(ok == 3);
  auto snap = engine.snapshot(id);
  CHECK(snap->at("reports").size() == 3);
  auto log = transcript_file(engine.session_dir(id));
  CHECK(log == engine.transcript(id));
  for (std::size_t i = 0; i < log.size(); ++i) CHECK(log[i]["seq"] == i + 1);
  // Only the newest run's question stays open.
  CHECK(snap->at("open_questions").size() == 1);
  CHECK(snap->at("open_questions")[0]["id"] == "r3-q1");
}

TEST_CASE("engine: distinct sessions progress in parallel") {
  test::TempDir dir;
  auto o = options_in(dir);
  o.workers = 3;
  Engine engine(o);
  std::vector<std::string> ids, tasks;
  for (int i = 0; i < 3; ++i) ids.push_back(engine.create(kegg(), {})["id"].get<std::string>());
  for (const auto& id : ids) tasks.push_back(engine.submit(id, TaskKind::RunToCompletion));
  for (const auto& t : tasks) CHECK(finish(engine, t).result["state"] == "Synthesized");
}

TEST_CASE("engine: shutdown drains queued work and refuses new tasks") {
  test::TempDir dir;
  auto o = options_in(dir);
  o.workers = 1;
  Engine engine(o);
  auto id = engine.create(kegg(), {})["id"].get<std::string>();
  std::vector<std::string> tasks;
  for (int i = 0; i < 5; ++i) tasks.push_back(engine.submit(id, TaskKind::Advance));
  engine.shutdown();
  for (const auto& t : tasks) CHECK(engine.task(t)->status == TaskStatus::Done);
  CHECK(engine.snapshot(id)->at("state") == "Synthesized");
  CHECK(code_of([&] { engine.submit(id, TaskKind::Advance); }) == Errc::Blocked);
  CHECK(engine.events_after(id, 1000, 5s).empty());
}

TEST_CASE("engine: task failures carry the error code") {
  test::TempDir dir;
  Engine engine(options_in(dir));
  auto id = engine.create("", {})["id"].get<std::string>();
  auto t = finish(engine, engine.submit(id, TaskKind::Advance));
  CHECK(t.status == TaskStatus::Failed);
  CHECK(t.error->first == "TerminalFailure");
  CHECK(engine.snapshot(id)->at("failure")["code"] == "MalformedXml");

  auto id2 = engine.create(kegg(), {})["id"].get<std::string>();
  t = finish(engine, engine.submit(id2, TaskKind::Execute));
  CHECK(t.status == TaskStatus::Failed);
  CHECK(t.error->first == "InvalidArgument");
  CHECK_FALSE(engine.task("t999"));
}

TEST_CASE("engine: registered providers are used by name") {
  struct Counting : DeterministicProvider {
    std::atomic<int>* calls;
    std::string name() const override { return "counting"; }
    std::string fill_body(const BodyRequest& r) override {
      ++*calls;
      return DeterministicProvider::fill_body(r);
    }
  };
  std::atomic<int> calls{0};
  test::TempDir dir;
  Engine engine(options_in(dir));
  engine.register_provider("counting", [&](const std::string&) {
    auto p = std::make_unique<Counting>();
    p->calls = &calls;
    return p;
  });
  SessionConfig cfg;
  cfg.provider = "counting";
  auto id = engine.create(kegg(), cfg)["id"].get<std::string>();
  engine.run_to_completion(id, approve_plausibility());
  CHECK(engine.snapshot(id)->at("state") == "Packaged");
  CHECK(calls == 3);
  CHECK(engine.snapshot(id)->at("provider")["name"] == "counting");
}
