// wfrevive: command-line front end.
//
//   wfrevive parse <file> [--legacy]
//   wfrevive probe <url> [--fixtures <path>]
//   wfrevive revive <file> --target snakemake [--offline --fixtures <path>] --out <dir>
//                   [--answers <file.json>] [--yes] [--provider <name>] [--input <file>]
//                   [--kb <dir>] [--work <dir>]
//   wfrevive verify <bundle-dir>
//   wfrevive replay <session-dir>
//   wfrevive serve --port <p> --data-dir <d> [--fixtures <path>] [--host <h>] [--static <dir>]
//
// revive exits 0 when packaged, 2 when questions remain open, 3 when the
// session failed, 1 on usage or I/O errors.

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>

#include "wfrevive/api.hpp"
#include "wfrevive/digest.hpp"
#include "wfrevive/engine.hpp"
#include "wfrevive/errors.hpp"
#include "wfrevive/ir.hpp"
#include "wfrevive/legacy.hpp"
#include "wfrevive/session.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace wfr;

namespace {

int cmd_parse(const std::string& file, bool legacy_only) {
  auto wf = parse_legacy(read_file(file));
  if (legacy_only) {
    std::cout << to_json(wf).dump(2) << "\n";
    return 0;
  }
  for (const auto& f : lint_legacy(wf)) std::cerr << "lint: " << f.message << "\n";
  auto collapsed = collapse_shims(detect_shims(lower(wf)));
  std::cout << ir_to_json(collapsed.ir) << "\n";
  return 0;
}

int cmd_probe(const std::string& url, const std::string& fixtures) {
  std::unique_ptr<HttpTransport> transport;
  if (fixtures.empty()) {
    transport = std::make_unique<LiveTransport>();
  } else {
    transport = std::make_unique<FixtureTransport>(FixtureTransport::load(fixtures));
  }
  auto r = probe(url, *transport);
  std::cout << json(r).dump(2) << "\n";
  return r.status.kind == ProbeStatus::Kind::Ok ? 0 : 2;
}

struct ReviveArgs {
  std::string file;
  std::string target = "snakemake";
  bool offline = false;
  std::string fixtures;
  std::string out;
  std::string answers;
  bool yes = false;
  std::string provider = "deterministic";
  std::string input;
  std::string kb_dir;
  std::string work;
};

void print_question(const CuratorQuestion& q) {
  std::cerr << "  [" << q.id << "] " << to_string(q.kind);
  if (q.linked_step) std::cerr << " (" << *q.linked_step << ")";
  std::cerr << "\n      " << q.text << "\n";
}

int cmd_revive(const ReviveArgs& a) {
  if (a.target != "snakemake") throw Error(Errc::InvalidArgument, "unsupported target '" + a.target + "'");
  if (fs::exists(a.out) && !fs::is_empty(a.out)) {
    throw Error(Errc::InvalidArgument, "output directory is not empty", {a.out});
  }

  SessionConfig config;
  config.transport = a.offline ? TransportMode::Fixture : TransportMode::Live;
  config.provider = a.provider;
  config.original_filename = fs::path(a.file).filename().string();
  if (!a.input.empty()) config.sample_input = read_file(a.input);

  std::optional<FixtureTransport> fixtures;
  if (a.offline) fixtures = a.fixtures.empty() ? FixtureTransport() : FixtureTransport::load(a.fixtures);

  std::unique_ptr<SynthesisProvider> provider;
  auto colon = a.provider.find(':');
  auto pname = a.provider.substr(0, colon);
  if (pname == "deterministic") {
    provider = std::make_unique<DeterministicProvider>();
  } else if (pname == "remote" && colon != std::string::npos) {
    provider = std::make_unique<RemoteProvider>(a.provider.substr(colon + 1));
  } else {
    throw Error(Errc::InvalidArgument, "unknown provider '" + a.provider + "'");
  }

  std::optional<KbStore> store;
  if (!a.kb_dir.empty()) store.emplace(a.kb_dir);
  auto kb = store ? store->snapshot() : builtin_knowledge_base();

  fs::path work = a.work.empty() ? fs::path(a.out).parent_path() / ("." + fs::path(a.out).filename().string() + ".session")
                                 : fs::path(a.work);
  work = fs::absolute(work);
  if (fs::exists(work)) fs::remove_all(work);

  AnswerPolicy fallback = a.yes ? approve_plausibility() : deny_plausibility();
  AnswerPolicy policy = a.answers.empty() ? fallback : answers_from_json(json::parse(read_file(a.answers)), fallback);

  SessionEnv env{work, provider.get(), fixtures ? &*fixtures : nullptr};
  auto s = create_session(fs::path(work).filename().string(), read_file(a.file), config, kb, *provider,
                          env.fixtures, work, env.now());
  std::size_t shown = s.transcript.size();
  auto logged_policy = [&](const CuratorQuestion& q) {
    auto answer = policy(q);
    std::cerr << "question " << q.id << " (" << to_string(q.kind) << "): "
              << (answer ? "answered \"" + *answer + "\"" : std::string("left open")) << "\n";
    return answer;
  };
  run_to_completion(s, env, logged_policy);
  for (; shown < s.transcript.size(); ++shown) {
    const auto& e = s.transcript[shown];
    if (e["type"] == "stage") std::cerr << "stage " << e["from"].get<std::string>() << " -> " << e["to"].get<std::string>() << "\n";
  }

  {
    std::ofstream t(work / kTranscriptFile);
    for (const auto& e : s.transcript) t << e.dump() << "\n";
    write_file(work / kSnapshotFile, to_json(s).dump(2) + "\n");
  }

  if (s.state == SessionState::Failed) {
    std::cerr << "failed: " << s.failure->code << ": " << s.failure->message << "\n";
    return 3;
  }
  if (s.state != SessionState::Packaged) {
    std::cerr << "blocked at " << to_string(s.state) << " with open questions:\n";
    for (const auto& q : s.open_questions) print_question(q);
    std::cerr << "session kept in " << work.string() << "\n";
    return 2;
  }

  fs::create_directories(a.out);
  fs::copy(work / "bundle", a.out, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  auto findings = verify_bundle(a.out);
  for (const auto& f : findings) std::cerr << "bundle: " << to_json(f).dump() << "\n";
  if (store) store->update([&](const KnowledgeBase& current) { return absorb(current, s.kb); });
  std::cout << a.out << "\n";
  if (s.target_run) {
    std::cerr << "target run: " << (s.target_run->ok ? "ok" : "failed")
              << (s.target_run->agrees_with_pivot ? ", agrees with the pivot run" : ", differs from the pivot run") << "\n";
  }
  return findings.empty() ? 0 : 3;
}

int cmd_verify(const std::string& dir) {
  auto findings = verify_bundle(dir);
  for (const auto& f : findings) std::cout << to_json(f).dump() << "\n";
  if (findings.empty()) std::cout << "ok\n";
  return findings.empty() ? 0 : 2;
}

int cmd_replay(const fs::path& dir) {
  std::vector<json> transcript;
  std::ifstream in(dir / kTranscriptFile);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) transcript.push_back(json::parse(line));
  }
  std::optional<FixtureTransport> fixtures;
  if (fs::exists(dir / kFixturesFile)) fixtures = FixtureTransport::load(dir / kFixturesFile);
  auto tmp = fs::temp_directory_path() / ("wfrevive-replay-" + new_session_id());
  auto r = replay_session(transcript, read_file(dir / kUploadFile),
                          knowledge_base_from_json(json::parse(read_file(dir / kInitialKbFile))), tmp,
                          fixtures ? &*fixtures : nullptr);
  fs::remove_all(tmp);
  auto recorded = without_timestamps(json::parse(read_file(dir / kSnapshotFile)));
  auto replayed = without_timestamps(to_json(r));
  if (recorded == replayed) {
    std::cout << "identical (" << transcript.size() << " events, state " << to_string(r.state) << ")\n";
    return 0;
  }
  std::cout << json::diff(recorded, replayed).dump(2) << "\n";
  return 2;
}

int cmd_serve(const std::string& host, int port, const std::string& data_dir, const std::string& fixtures,
              const std::string& static_dir) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  EngineOptions eo;
  eo.data_dir = data_dir;
  if (!fixtures.empty()) eo.fixtures = fs::path(fixtures);
  Engine engine(eo);
  ServerOptions so;
  so.host = host;
  so.port = port;
  if (!static_dir.empty()) so.static_dir = fs::path(static_dir);
  ApiServer server(engine, so);
  int bound = server.start();
  std::cerr << "listening on " << host << ":" << bound << " (data " << data_dir << ")\n";

  int sig = 0;
  sigwait(&set, &sig);
  std::cerr << "signal " << sig << ": draining\n";
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Revives Taverna workflows as Python and Snakemake"};
  app.set_version_flag("--version", std::string(WFREVIVE_VERSION));
  app.require_subcommand(1);

  std::string parse_file;
  bool legacy_only = false;
  auto* parse = app.add_subcommand("parse", "Parse a t2flow/SCUFL file and print its IR as JSON");
  parse->add_option("file", parse_file)->required()->check(CLI::ExistingFile);
  parse->add_flag("--legacy", legacy_only, "Print the parsed legacy model instead of the IR");

  std::string probe_url, probe_fixtures;
  auto* probe_cmd = app.add_subcommand("probe", "Probe one service URL");
  probe_cmd->add_option("url", probe_url)->required();
  probe_cmd->add_option("--fixtures", probe_fixtures, "Recorded responses instead of the network");

  ReviveArgs ra;
  auto* revive = app.add_subcommand("revive", "Revive a workflow into a bundle without interaction");
  revive->add_option("file", ra.file)->required()->check(CLI::ExistingFile);
  revive->add_option("--target", ra.target, "Target workflow system")->default_val("snakemake");
  revive->add_flag("--offline", ra.offline, "Use recorded responses; no network access");
  revive->add_option("--fixtures", ra.fixtures, "Recorded HTTP responses (file or directory)");
  revive->add_option("--out", ra.out, "Bundle directory")->required();
  revive->add_option("--answers", ra.answers, "JSON list of {id|kind|step, answer}")->check(CLI::ExistingFile);
  revive->add_flag("--yes", ra.yes, "Approve plausibility questions (default: reject)");
  revive->add_option("--provider", ra.provider, "deterministic | remote:<url>");
  revive->add_option("--input", ra.input, "Sample input file")->check(CLI::ExistingFile);
  revive->add_option("--kb", ra.kb_dir, "Knowledge base directory to read and extend");
  revive->add_option("--work", ra.work, "Session working directory");

  std::string verify_dir;
  auto* verify = app.add_subcommand("verify", "Check a bundle's digests, layout and relocatability");
  verify->add_option("bundle", verify_dir)->required()->check(CLI::ExistingDirectory);

  std::string replay_dir;
  auto* replay = app.add_subcommand("replay", "Replay a session directory's transcript and compare snapshots");
  replay->add_option("session", replay_dir)->required()->check(CLI::ExistingDirectory);

  std::string host = "127.0.0.1", data_dir, serve_fixtures, static_dir;
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  serve->add_option("--port", port)->default_val(8080);
  serve->add_option("--host", host)->default_val("127.0.0.1");
  serve->add_option("--data-dir", data_dir)->required();
  serve->add_option("--fixtures", serve_fixtures, "Default recorded responses for fixture sessions");
  serve->add_option("--static", static_dir, "UI assets to serve under /");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*parse) return cmd_parse(parse_file, legacy_only);
    if (*probe_cmd) return cmd_probe(probe_url, probe_fixtures);
    if (*revive) return cmd_revive(ra);
    if (*verify) return cmd_verify(verify_dir);
    if (*replay) return cmd_replay(replay_dir);
    if (*serve) return cmd_serve(host, port, data_dir, serve_fixtures, static_dir);
  } catch (const Error& e) {
    std::cerr << "error: " << errc_name(e.code()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
