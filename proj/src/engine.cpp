#include "wfrevive/engine.hpp"

#include <fstream>
#include <random>

#include "wfrevive/digest.hpp"
#include "wfrevive/errors.hpp"

namespace wfr {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::Advance: return "advance";
    case TaskKind::RunToCompletion: return "run_to_completion";
    case TaskKind::Execute: return "execute";
  }
  return "advance";
}

std::string to_string(TaskStatus s) {
  switch (s) {
    case TaskStatus::Queued: return "queued";
    case TaskStatus::Running: return "running";
    case TaskStatus::Done: return "done";
    case TaskStatus::Failed: return "failed";
  }
  return "queued";
}

json to_json(const TaskInfo& t) {
  json j = {{"id", t.id}, {"session_id", t.session_id}, {"kind", to_string(t.kind)}, {"status", to_string(t.status)}};
  if (t.status == TaskStatus::Done) j["result"] = t.result;
  if (t.error) j["error"] = {{"code", t.error->first}, {"message", t.error->second}};
  return j;
}

std::string new_session_id() {
  static std::mutex mu;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(mu);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
  return buf;
}

struct Engine::Entry {
  std::mutex writer;  // one mutating operation at a time
  RevivalSession session;
  std::unique_ptr<SynthesisProvider> provider;
  std::unique_ptr<FixtureTransport> fixtures;
  fs::path dir;
  std::size_t persisted = 0;  // transcript events already in transcript.jsonl
  bool absorbed = false;

  mutable std::mutex published;  // guards the fields below
  mutable std::condition_variable changed;
  std::shared_ptr<const json> snapshot;
  std::vector<json> events;
};

struct Engine::Task {
  TaskInfo info;
};

namespace {

void write_atomically(const fs::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  write_file(tmp, text);
  fs::rename(tmp, path);
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::vector<json> out;
  std::ifstream in(path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception&) {
      throw Error(Errc::SchemaViolation, "unreadable transcript line " + std::to_string(n), {path.string()});
    }
  }
  return out;
}

bool valid_session_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  return std::all_of(id.begin(), id.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_'; });
}

}  // namespace

Engine::Engine(EngineOptions options) : options_(std::move(options)), kb_(options_.data_dir / "kb") {
  if (options_.fixtures) default_fixtures_ = FixtureTransport::load(*options_.fixtures);
  providers_["deterministic"] = [](const std::string&) { return std::make_unique<DeterministicProvider>(); };
  providers_["remote"] = [](const std::string& url) -> std::unique_ptr<SynthesisProvider> {
    if (url.empty()) throw Error(Errc::InvalidArgument, "remote provider needs an endpoint URL (remote:<url>)", {"provider"});
    return std::make_unique<RemoteProvider>(url);
  };

  fs::create_directories(options_.data_dir / "sessions");
  for (const auto& d : fs::directory_iterator(options_.data_dir / "sessions")) {
    if (!d.is_directory() || !fs::exists(d.path() / kSnapshotFile)) continue;
    auto e = load_entry(d.path());
    sessions_[e->session.id] = e;
  }

  for (int i = 0; i < std::max(1, options_.workers); ++i) workers_.emplace_back([this] { worker_loop(); });
}

Engine::~Engine() {
  shutdown();
}

void Engine::register_provider(const std::string& name, ProviderFactory factory) {
  std::lock_guard lock(mutex_);
  providers_[name] = std::move(factory);
}

std::unique_ptr<SynthesisProvider> Engine::make_provider(const std::string& spec) const {
  auto colon = spec.find(':');
  auto name = spec.substr(0, colon);
  auto arg = colon == std::string::npos ? std::string() : spec.substr(colon + 1);
  ProviderFactory factory;
  {
    std::lock_guard lock(mutex_);
    auto it = providers_.find(name);
    if (it == providers_.end()) throw Error(Errc::InvalidArgument, "unknown provider '" + name + "'", {"provider"});
    factory = it->second;
  }
  return factory(arg);
}

std::shared_ptr<Engine::Entry> Engine::load_entry(const fs::path& dir) {
  auto e = std::make_shared<Entry>();
  e->dir = dir;
  e->session = session_from_json(json::parse(read_file(dir / kSnapshotFile)));
  e->session.transcript = read_jsonl(dir / kTranscriptFile);
  e->persisted = e->session.transcript.size();
  e->absorbed = e->session.state == SessionState::Packaged;
  if (fs::exists(dir / kFixturesFile)) e->fixtures = std::make_unique<FixtureTransport>(FixtureTransport::load(dir / kFixturesFile));
  try {
    e->provider = make_provider(e->session.config.provider);
  } catch (const Error&) {
    // Provider no longer available: the session stays readable, replays use the transcript.
    e->provider = std::make_unique<ReplayProvider>(e->session.transcript);
  }
  e->snapshot = std::make_shared<const json>(to_json(e->session));
  e->events = e->session.transcript;
  return e;
}

json Engine::create(const std::string& upload, SessionConfig config) {
  if (stopping()) throw Error(Errc::Blocked, "engine is shutting down");
  auto e = std::make_shared<Entry>();
  e->provider = make_provider(config.provider);
  if (config.transport == TransportMode::Fixture) {
    if (!config.fixtures_path.empty()) {
      e->fixtures = std::make_unique<FixtureTransport>(FixtureTransport::load(config.fixtures_path));
    } else {
      e->fixtures = std::make_unique<FixtureTransport>(default_fixtures_ ? *default_fixtures_ : FixtureTransport());
    }
  }
  std::string id;
  {
    std::lock_guard lock(mutex_);
    do {
      id = new_session_id();
    } while (sessions_.count(id) || fs::exists(options_.data_dir / "sessions" / id));
  }
  e->dir = options_.data_dir / "sessions" / id;
  e->session = create_session(id, upload, std::move(config), kb_.snapshot(), *e->provider, e->fixtures.get(), e->dir,
                              options_.now());
  {
    std::lock_guard w(e->writer);
    commit(*e);
  }
  {
    std::lock_guard lock(mutex_);
    sessions_[id] = e;
  }
  return {{"id", id}, {"state", to_string(e->session.state)}};
}

std::vector<std::string> Engine::session_ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : sessions_) out.push_back(id);
  return out;
}

std::shared_ptr<Engine::Entry> Engine::entry(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = valid_session_id(id) ? sessions_.find(id) : sessions_.end();
  if (it == sessions_.end()) throw Error(Errc::NotFound, "no session '" + id + "'", {id});
  return it->second;
}

std::shared_ptr<const json> Engine::snapshot(const std::string& id) const {
  auto e = entry(id);
  std::lock_guard lock(e->published);
  return e->snapshot;
}

std::vector<json> Engine::transcript(const std::string& id) const {
  auto e = entry(id);
  std::lock_guard lock(e->published);
  return e->events;
}

fs::path Engine::session_dir(const std::string& id) const {
  return entry(id)->dir;
}

std::vector<json> Engine::events_after(const std::string& id, std::uint64_t after_seq,
                                       std::chrono::milliseconds wait) const {
  auto e = entry(id);
  std::unique_lock lock(e->published);
  auto ready = [&] { return e->events.size() > after_seq || stopping(); };
  e->changed.wait_for(lock, wait, ready);
  if (e->events.size() <= after_seq) return {};
  return {e->events.begin() + static_cast<std::ptrdiff_t>(after_seq), e->events.end()};
}

void Engine::commit(Entry& e) {
  auto& s = e.session;
  if (s.transcript.size() > e.persisted) {
    std::ofstream out(e.dir / kTranscriptFile, std::ios::app | std::ios::binary);
    for (std::size_t i = e.persisted; i < s.transcript.size(); ++i) out << s.transcript[i].dump() << "\n";
    out.flush();
    if (!out) throw Error(Errc::InvalidArgument, "cannot append to the transcript", {(e.dir / kTranscriptFile).string()});
    e.persisted = s.transcript.size();
  }
  auto snap = std::make_shared<const json>(to_json(s));
  write_atomically(e.dir / kSnapshotFile, snap->dump(2) + "\n");
  if (s.state == SessionState::Packaged && !e.absorbed) {
    kb_.update([&](const KnowledgeBase& kb) { return absorb(kb, s.kb); });
    e.absorbed = true;
  }
  {
    std::lock_guard lock(e.published);
    e.snapshot = snap;
    e.events.insert(e.events.end(), s.transcript.begin() + static_cast<std::ptrdiff_t>(e.events.size()), s.transcript.end());
  }
  e.changed.notify_all();
}

template <typename F>
auto Engine::mutate(const std::string& id, F&& f) {
  auto e = entry(id);
  std::lock_guard lock(e->writer);
  SessionEnv env{e->dir, e->provider.get(), e->fixtures.get(), options_.now};
  struct Committer {
    Engine* engine;
    Entry* entry;
    ~Committer() noexcept(false) {
      if (std::uncaught_exceptions() == 0) {
        engine->commit(*entry);
        return;
      }
      try {
        engine->commit(*entry);
      } catch (...) {
        // The original error is more useful than a persistence error here.
      }
    }
  } committer{this, e.get()};
  return f(e->session, env);
}

void Engine::advance(const std::string& id) {
  mutate(id, [](RevivalSession& s, SessionEnv& env) { wfr::advance(s, env); });
}

void Engine::run_to_completion(const std::string& id, const AnswerPolicy& policy) {
  mutate(id, [&](RevivalSession& s, SessionEnv& env) { wfr::run_to_completion(s, env, policy); });
}

ExecutionReport Engine::execute(const std::string& id) {
  return mutate(id, [](RevivalSession& s, SessionEnv& env) { return execute_pivot(s, env); });
}

SessionEffect Engine::answer(const std::string& id, const CuratorAnswer& a) {
  return mutate(id, [&](RevivalSession& s, SessionEnv& env) { return apply_answer(s, a, env); });
}

std::string Engine::submit(const std::string& id, TaskKind kind) {
  entry(id);
  auto t = std::make_shared<Task>();
  t->info.session_id = id;
  t->info.kind = kind;
  {
    std::lock_guard lock(mutex_);
    if (stopping_) throw Error(Errc::Blocked, "engine is shutting down");
    t->info.id = "t" + std::to_string(++task_counter_);
    tasks_[t->info.id] = t;
    queue_.push_back(t);
  }
  task_cv_.notify_all();
  return t->info.id;
}

std::optional<TaskInfo> Engine::task(const std::string& task_id) const {
  std::lock_guard lock(mutex_);
  auto it = tasks_.find(task_id);
  if (it == tasks_.end()) return std::nullopt;
  return it->second->info;
}

std::optional<TaskInfo> Engine::wait_task(const std::string& task_id, std::chrono::milliseconds wait) const {
  std::unique_lock lock(mutex_);
  auto it = tasks_.find(task_id);
  if (it == tasks_.end()) return std::nullopt;
  auto t = it->second;
  task_cv_.wait_for(lock, wait, [&] {
    return t->info.status == TaskStatus::Done || t->info.status == TaskStatus::Failed;
  });
  return t->info;
}

void Engine::worker_loop() {
  for (;;) {
    std::shared_ptr<Task> t;
    {
      std::unique_lock lock(mutex_);
      task_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;  // stopping and drained
      t = queue_.front();
      queue_.pop_front();
      t->info.status = TaskStatus::Running;
    }
    run_task(*t);
    task_cv_.notify_all();
  }
}

void Engine::run_task(Task& t) {
  json result;
  std::optional<std::pair<std::string, std::string>> error;
  try {
    const auto& id = t.info.session_id;
    switch (t.info.kind) {
      case TaskKind::Advance:
        try {
          advance(id);
        } catch (const Error& e) {
          if (e.code() != Errc::Blocked) throw;
        }
        break;
      case TaskKind::RunToCompletion:
        run_to_completion(id, no_answers());
        break;
      case TaskKind::Execute:
        result["report"] = to_json(execute(id));
        break;
    }
    auto snap = snapshot(id);
    result["state"] = snap->at("state");
    json open = json::array();
    for (const auto& q : snap->at("open_questions")) open.push_back(q.at("id"));
    result["open_questions"] = open;
    result["failure"] = snap->at("failure");
  } catch (const Error& e) {
    error = {std::string(errc_name(e.code())), e.what()};
  } catch (const std::exception& e) {
    error = {"Internal", e.what()};
  }
  std::lock_guard lock(mutex_);
  if (error) {
    t.info.status = TaskStatus::Failed;
    t.info.error = error;
  } else {
    t.info.status = TaskStatus::Done;
    t.info.result = std::move(result);
  }
}

std::string Engine::bundle_tar(const std::string& id) const {
  auto e = entry(id);
  std::shared_ptr<const json> snap;
  {
    std::lock_guard lock(e->published);
    snap = e->snapshot;
  }
  if (snap->at("state") != to_string(SessionState::Packaged)) {
    throw Error(Errc::IncompleteSession, "the session is not packaged yet", {id});
  }
  return tar_directory(e->dir / "bundle", "revival-" + id);
}

json Engine::report(const std::string& id, int number) const {
  auto e = entry(id);
  auto path = e->dir / "reports" / (std::to_string(number) + ".json");
  if (number < 1 || !fs::exists(path)) throw Error(Errc::NotFound, "no report " + std::to_string(number), {id});
  return json::parse(read_file(path));
}

KnowledgeBase Engine::knowledge_base() const {
  return kb_.snapshot();
}

void Engine::shutdown() {
  std::vector<std::thread> workers;
  std::vector<std::shared_ptr<Entry>> entries;
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
    workers.swap(workers_);
    for (const auto& [_, e] : sessions_) entries.push_back(e);
  }
  task_cv_.notify_all();
  for (auto& e : entries) {
    { std::lock_guard lock(e->published); }
    e->changed.notify_all();
  }
  for (auto& w : workers) w.join();
}

bool Engine::stopping() const {
  std::lock_guard lock(mutex_);
  return stopping_;
}

}  // namespace wfr
