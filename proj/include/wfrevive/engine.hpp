#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "wfrevive/services.hpp"
#include "wfrevive/session.hpp"

namespace wfr {

// Builds a provider from the part of SessionConfig::provider after "name:".
using ProviderFactory = std::function<std::unique_ptr<SynthesisProvider>(const std::string& argument)>;

struct EngineOptions {
  std::filesystem::path data_dir;
  std::optional<std::filesystem::path> fixtures;  // default recorded responses for fixture sessions
  int workers = 2;
  std::function<std::string()> now = utc_now_iso;
};

enum class TaskKind { Advance, RunToCompletion, Execute };
enum class TaskStatus { Queued, Running, Done, Failed };

std::string to_string(TaskKind k);
std::string to_string(TaskStatus s);

struct TaskInfo {
  std::string id;
  std::string session_id;
  TaskKind kind = TaskKind::Advance;
  TaskStatus status = TaskStatus::Queued;
  nlohmann::json result;  // Done: operation outcome
  std::optional<std::pair<std::string, std::string>> error;  // Failed: code, message
};

nlohmann::json to_json(const TaskInfo& t);

/// Session store and task runner behind the HTTP API and the CLI.
///
/// Layout under data_dir: sessions/<id>/ (see session.hpp for the files) and
/// kb/ (the shared knowledge base). Every mutation appends its new transcript
/// events to transcript.jsonl and rewrites snapshot.json before the committed
/// snapshot is published, so readers never see uncommitted state.
class Engine {
 public:
  explicit Engine(EngineOptions options);
  ~Engine();

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  // "deterministic" and "remote" (argument: endpoint URL) are registered by default.
  void register_provider(const std::string& name, ProviderFactory factory);

  /// Throws Error(InvalidArgument) for an unknown provider name.
  nlohmann::json create(const std::string& upload, SessionConfig config);

  std::vector<std::string> session_ids() const;
  // Throw Error(NotFound) for an unknown session.
  std::shared_ptr<const nlohmann::json> snapshot(const std::string& id) const;
  std::vector<nlohmann::json> transcript(const std::string& id) const;
  std::filesystem::path session_dir(const std::string& id) const;

  /// Events with seq > after_seq; waits up to `wait` for one to appear.
  /// Returns empty after shutdown() or on timeout.
  std::vector<nlohmann::json> events_after(const std::string& id, std::uint64_t after_seq,
                                           std::chrono::milliseconds wait) const;

  // Synchronous operations, serialized per session.
  void advance(const std::string& id);
  void run_to_completion(const std::string& id, const AnswerPolicy& policy);
  ExecutionReport execute(const std::string& id);
  SessionEffect answer(const std::string& id, const CuratorAnswer& answer);

  /// Asynchronous variants: returns the task id at once. Throws Error(NotFound)
  /// for unknown sessions and Error(Blocked) once shutdown has begun.
  std::string submit(const std::string& id, TaskKind kind);
  std::optional<TaskInfo> task(const std::string& task_id) const;
  // Blocks until the task is Done or Failed, or `wait` passes.
  std::optional<TaskInfo> wait_task(const std::string& task_id, std::chrono::milliseconds wait) const;

  /// Deterministic tar of the packaged bundle. Throws Error(IncompleteSession)
  /// before Packaged.
  std::string bundle_tar(const std::string& id) const;
  /// Throws Error(NotFound) for an unknown report number.
  nlohmann::json report(const std::string& id, int number) const;

  KnowledgeBase knowledge_base() const;

  // Stops accepting tasks, lets queued and running ones finish, wakes event waiters.
  void shutdown();
  bool stopping() const;

 private:
  struct Entry;
  struct Task;

  std::shared_ptr<Entry> entry(const std::string& id) const;
  std::shared_ptr<Entry> load_entry(const std::filesystem::path& dir);
  std::unique_ptr<SynthesisProvider> make_provider(const std::string& spec) const;
  template <typename F>
  auto mutate(const std::string& id, F&& f);
  void commit(Entry& e);
  void worker_loop();
  void run_task(Task& t);

  EngineOptions options_;
  std::optional<FixtureTransport> default_fixtures_;
  KbStore kb_;

  mutable std::mutex mutex_;  // sessions_, providers_, tasks_, queue_, stopping_
  std::map<std::string, ProviderFactory> providers_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::map<std::string, std::shared_ptr<Task>> tasks_;
  std::deque<std::shared_ptr<Task>> queue_;
  mutable std::condition_variable task_cv_;
  bool stopping_ = false;
  std::uint64_t task_counter_ = 0;
  std::vector<std::thread> workers_;
};

// Fresh random session id (16 hex characters).
std::string new_session_id();

}  // namespace wfr
