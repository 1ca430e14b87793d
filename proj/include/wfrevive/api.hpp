#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "wfrevive/engine.hpp"
#include "wfrevive/errors.hpp"

namespace wfr {

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 0;  // 0 picks a free port
  std::optional<std::filesystem::path> static_dir;  // UI assets served under /
  std::chrono::milliseconds keepalive{15000};       // comment line on idle event streams
  std::chrono::milliseconds max_task_wait{1500};    // cap for GET /tasks/{id}?wait_ms=
};

// {"ok": true, "data": ...} or {"ok": false, "error": {"code", "message"}}.
nlohmann::json ok_envelope(nlohmann::json data);
nlohmann::json error_envelope(const std::string& code, const std::string& message);

int http_status(Errc code);

/// HTTP facade over an Engine. Handlers keep no state of their own.
class ApiServer {
 public:
  ApiServer(Engine& engine, ServerOptions options);
  ~ApiServer();

  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Binds and starts serving on a background thread; returns the port.
  /// Throws Error(BindFailure).
  int start();
  int port() const;
  // Blocks until stop() completes.
  void wait();
  /// Lets running and queued tasks finish, ends event streams, then stops
  /// listening. Idempotent.
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace wfr
