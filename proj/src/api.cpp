#include "wfrevive/api.hpp"

#include <httplib.h>

#include <thread>

namespace wfr {

using json = nlohmann::json;

json ok_envelope(json data) {
  return {{"ok", true}, {"data", std::move(data)}};
}

json error_envelope(const std::string& code, const std::string& message) {
  return {{"ok", false}, {"error", {{"code", code}, {"message", message}}}};
}

int http_status(Errc code) {
  switch (code) {
    case Errc::NotFound:
    case Errc::UnknownQuestion:
      return 404;
    case Errc::InvalidArgument:
    case Errc::SchemaViolation:
    case Errc::MalformedXml:
    case Errc::UnsupportedFormat:
      return 400;
    case Errc::AnswerShapeMismatch:
      return 422;
    case Errc::Blocked:
    case Errc::TerminalFailure:
    case Errc::IncompleteSession:
      return 409;
    case Errc::ProviderUnavailable:
      return 502;
    default:
      return 500;
  }
}

struct ApiServer::Impl {
  Engine& engine;
  ServerOptions options;
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::mutex stop_mutex;
  bool stopped = false;

  Impl(Engine& e, ServerOptions o) : engine(e), options(std::move(o)) {}

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  // Runs a handler, turning errors into envelopes.
  template <typename F>
  auto guarded(F f) {
    return [this, f](const httplib::Request& req, httplib::Response& res) {
      try {
        if (engine.stopping() && req.method == "POST") {
          reply(res, 503, error_envelope("ShuttingDown", "the server is shutting down"));
          return;
        }
        f(req, res);
      } catch (const Error& e) {
        reply(res, http_status(e.code()), error_envelope(std::string(errc_name(e.code())), e.what()));
      } catch (const json::exception& e) {
        reply(res, 400, error_envelope("InvalidArgument", std::string("malformed JSON: ") + e.what()));
      } catch (const std::exception& e) {
        reply(res, 500, error_envelope("Internal", e.what()));
      }
    };
  }

  static json body_json(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    auto j = json::parse(req.body);
    if (!j.is_object()) throw Error(Errc::InvalidArgument, "request body must be a JSON object");
    return j;
  }

  void routes();
  void session_events(const httplib::Request& req, httplib::Response& res);
};

void ApiServer::Impl::routes() {
  server.set_payload_max_length(64u << 20);
  // No SO_REUSEPORT: a second server on a taken port must fail to bind.
  server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof yes);
  });

  server.Get("/healthz", guarded([this](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, ok_envelope({{"status", engine.stopping() ? "stopping" : "ok"},
                                 {"version", WFREVIVE_VERSION},
                                 {"sessions", engine.session_ids().size()}}));
  }));

  server.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
    if (!req.is_multipart_form_data() || !req.has_file("file")) {
      throw Error(Errc::InvalidArgument, "expected a multipart upload with a 'file' part");
    }
    auto file = req.get_file_value("file");
    SessionConfig config;
    if (req.has_file("config")) config = session_config_from_json(json::parse(req.get_file_value("config").content));
    if (config.original_filename.empty()) config.original_filename = file.filename;
    reply(res, 201, ok_envelope(engine.create(file.content, config)));
  }));

  server.Get("/sessions", guarded([this](const httplib::Request&, httplib::Response& res) {
    json list = json::array();
    for (const auto& id : engine.session_ids()) {
      auto s = engine.snapshot(id);
      list.push_back({{"id", id}, {"state", s->at("state")}, {"title", s->at("ir").is_null() ? json("") : s->at("ir")["title"]}});
    }
    reply(res, 200, ok_envelope(list));
  }));

  server.Get(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    reply(res, 200, ok_envelope(*engine.snapshot(req.matches[1])));
  }));

  server.Get(R"(/sessions/([^/]+)/graph)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto s = engine.snapshot(req.matches[1]);
    const auto& ir = s->at("ir").is_null() ? s->at("lowered") : s->at("ir");
    if (ir.is_null()) throw Error(Errc::IncompleteSession, "no workflow graph before the Lowered stage");
    reply(res, 200, ok_envelope(ir));
  }));

  server.Get(R"(/sessions/([^/]+)/questions)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto s = engine.snapshot(req.matches[1]);
    reply(res, 200, ok_envelope({{"open", s->at("open_questions")}, {"closed", s->at("closed_questions")}}));
  }));

  server.Post(R"(/sessions/([^/]+)/answers)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto body = body_json(req);
    if (!body.contains("question_id") || !body.contains("answer") || !body["question_id"].is_string() ||
        !body["answer"].is_string()) {
      throw Error(Errc::InvalidArgument, "expected {\"question_id\": string, \"answer\": string}");
    }
    std::string id = req.matches[1];
    auto effect = engine.answer(id, {body["question_id"], body["answer"]});
    reply(res, 200, ok_envelope({{"effect", to_json(effect)}, {"state", engine.snapshot(id)->at("state")}}));
  }));

  server.Post(R"(/sessions/([^/]+)/advance)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto mode = body_json(req).value("mode", "complete");
    if (mode != "step" && mode != "complete") throw Error(Errc::InvalidArgument, "mode must be step or complete");
    auto task = engine.submit(req.matches[1], mode == "step" ? TaskKind::Advance : TaskKind::RunToCompletion);
    reply(res, 202, ok_envelope({{"task_id", task}, {"session_id", std::string(req.matches[1])}}));
  }));

  server.Post(R"(/sessions/([^/]+)/execute)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto task = engine.submit(req.matches[1], TaskKind::Execute);
    reply(res, 202, ok_envelope({{"task_id", task}, {"session_id", std::string(req.matches[1])}}));
  }));

  server.Get(R"(/tasks/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    std::optional<TaskInfo> t;
    if (req.has_param("wait_ms")) {
      auto ms = std::chrono::milliseconds(std::max(0, std::stoi(req.get_param_value("wait_ms"))));
      t = engine.wait_task(req.matches[1], std::min(ms, options.max_task_wait));
    } else {
      t = engine.task(req.matches[1]);
    }
    if (!t) throw Error(Errc::NotFound, "no task '" + std::string(req.matches[1]) + "'");
    reply(res, 200, ok_envelope(to_json(*t)));
  }));

  server.Get(R"(/sessions/([^/]+)/reports/(\d+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    reply(res, 200, ok_envelope(engine.report(req.matches[1], std::stoi(req.matches[2]))));
  }));

  server.Get(R"(/sessions/([^/]+)/bundle)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    std::string id = req.matches[1];
    auto tar = engine.bundle_tar(id);
    res.status = 200;
    res.set_header("Content-Disposition", "attachment; filename=\"revival-" + id + ".tar\"");
    res.set_content(std::move(tar), "application/x-tar");
  }));

  server.Get(R"(/sessions/([^/]+)/events)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    session_events(req, res);
  }));

  if (options.static_dir) server.set_mount_point("/", options.static_dir->string());

  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    auto code = res.status == 404 ? "NotFound" : "HttpError";
    reply(res, res.status, error_envelope(code, "HTTP " + std::to_string(res.status)));
  });
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
    reply(res, 500, error_envelope("Internal", "internal error"));
  });
}

// Server-sent events: one "event: <type>" per transcript entry, id = seq.
// Resumes after Last-Event-ID or ?after=; ?follow=0 sends the backlog and ends.
void ApiServer::Impl::session_events(const httplib::Request& req, httplib::Response& res) {
  std::string id = req.matches[1];
  engine.snapshot(id);
  std::uint64_t after = 0;
  if (req.has_header("Last-Event-ID")) {
    after = std::stoull(req.get_header_value("Last-Event-ID"));
  } else if (req.has_param("after")) {
    after = std::stoull(req.get_param_value("after"));
  }
  bool follow = req.get_param_value("follow") != "0";
  res.status = 200;
  res.set_header("Cache-Control", "no-cache");
  res.set_chunked_content_provider("text/event-stream", [this, id, after, follow](std::size_t, httplib::DataSink& sink) mutable {
    auto events = engine.events_after(id, after, follow ? options.keepalive : std::chrono::milliseconds(0));
    std::string out;
    for (const auto& e : events) {
      after = e.at("seq").get<std::uint64_t>();
      out += "id: " + std::to_string(after) + "\nevent: " + e.at("type").get<std::string>() + "\ndata: " + e.dump() + "\n\n";
    }
    if (out.empty() && follow && !engine.stopping()) out = ": keepalive\n\n";
    if (!out.empty() && !sink.write(out.data(), out.size())) return false;
    if (!follow || engine.stopping()) sink.done();
    return true;
  });
}

ApiServer::ApiServer(Engine& engine, ServerOptions options) : impl_(std::make_unique<Impl>(engine, std::move(options))) {
  impl_->routes();
}

ApiServer::~ApiServer() {
  stop();
}

int ApiServer::start() {
  auto& s = impl_->server;
  int port = impl_->options.port;
  bool bound = port == 0 ? (port = s.bind_to_any_port(impl_->options.host)) > 0 : s.bind_to_port(impl_->options.host, port);
  if (!bound) {
    throw Error(Errc::BindFailure, "cannot bind " + impl_->options.host + ":" + std::to_string(impl_->options.port),
                {impl_->options.host});
  }
  impl_->port = port;
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  s.wait_until_ready();
  return port;
}

int ApiServer::port() const {
  return impl_->port;
}

void ApiServer::wait() {
  if (impl_->thread.joinable()) impl_->thread.join();
}

void ApiServer::stop() {
  std::lock_guard lock(impl_->stop_mutex);
  if (impl_->stopped) return;
  impl_->stopped = true;
  impl_->engine.shutdown();
  impl_->server.stop();
  if (impl_->thread.joinable() && impl_->thread.get_id() != std::this_thread::get_id()) impl_->thread.join();
}

}  // namespace wfr
