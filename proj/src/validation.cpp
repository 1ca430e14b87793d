#include "wfrevive/validation.hpp"

#include <algorithm>
#include <regex>
#include <set>
#include <sstream>

#include "wfrevive/beanshell.hpp"
#include "wfrevive/digest.hpp"
#include "wfrevive/errors.hpp"
#include "wfrevive/process.hpp"

namespace wfr {

namespace {

namespace fs = std::filesystem;

constexpr std::size_t kInputPreview = 4096;
constexpr std::size_t kOutputPreview = 65536;

const char* kSiteCustomize = R"PY(import os
import socket

_LOG = os.environ.get('WFR_SOCKET_LOG')


def _refuse(*args, **kwargs):
    if _LOG:
        with open(_LOG, 'a', encoding='utf-8') as handle:
            handle.write('connect\n')
    raise OSError('network access is disabled during fixture runs')


class _GuardedSocket(socket.socket):
    def connect(self, *args, **kwargs):
        _refuse()

    def connect_ex(self, *args, **kwargs):
        _refuse()


socket.socket = _GuardedSocket
socket.create_connection = _refuse
)PY";

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

// One "[wfr] <event> <step> <detail>" line from the pivot runtime.
struct Marker {
  std::string event, step, detail;
};

const std::set<std::string> kFailureEvents = {"http-error", "unreachable", "parse-error", "checkpoint",
                                              "missing-input"};

std::optional<Marker> last_failure_marker(const std::string& stderr_text) {
  std::optional<Marker> found;
  for (const auto& line : lines_of(stderr_text)) {
    if (line.rfind("[wfr] ", 0) != 0) continue;
    std::istringstream in(line.substr(6));
    Marker m;
    in >> m.event >> m.step;
    std::getline(in, m.detail);
    m.detail = trim(m.detail);
    if (kFailureEvents.count(m.event)) found = m;
  }
  return found;
}

std::optional<std::string> last_started_step(const std::string& stdout_text) {
  static const std::regex started(R"(^ Step \d+: (\S+)$)");
  std::optional<std::string> step;
  for (const auto& line : lines_of(stdout_text)) {
    std::smatch m;
    if (std::regex_match(line, m, started)) step = m[1].str();
  }
  return step;
}

std::string last_nonempty_line(const std::string& text) {
  auto lines = lines_of(text);
  for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
    if (!trim(*it).empty()) return trim(*it);
  }
  return "";
}

std::string tail_lines(const std::string& text, std::size_t n) {
  auto lines = lines_of(text);
  std::size_t from = lines.size() > n ? lines.size() - n : 0;
  std::string out;
  for (std::size_t i = from; i < lines.size(); ++i) out += lines[i] + "\n";
  return out;
}

ExitStatus classify(const ProcessResult& p, bool output_ok) {
  ExitStatus s;
  if (p.timed_out) {
    s.kind = ExitStatus::Kind::Timeout;
    return s;
  }
  if (p.exit_code == 0 && output_ok) return s;
  s.kind = ExitStatus::Kind::RuntimeError;
  if (auto m = last_failure_marker(p.err)) {
    s.step_id = m->step == std::string(kSourceStepId) ? std::nullopt : std::optional<std::string>(m->step);
    s.message = m->event + (m->detail.empty() ? "" : " " + m->detail);
  } else if (p.exit_code == 0) {
    s.message = "the script finished without writing its output";
  } else {
    s.step_id = last_started_step(p.out);
    s.message = last_nonempty_line(p.err);
    if (s.message.empty()) s.message = "exit code " + std::to_string(p.exit_code);
  }
  return s;
}

// ---------------------------------------------------------------- wording

std::string plain_name(const std::string& id) {
  std::string s = id;
  std::replace(s.begin(), s.end(), '_', ' ');
  return s;
}

bool is_plain(const std::string& s) {
  return s.find("://") == std::string::npos && s.find('{') == std::string::npos && s.find('}') == std::string::npos;
}

std::string about_step(const Step* step) {
  if (!step || step->summary.empty() || !is_plain(step->summary)) return "";
  auto s = step->summary;
  s[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(s[0])));
  return " It " + s;
}

std::string singular_noun(const std::string& port) {
  auto s = lower(port);
  for (const char* suffix : {"_ids", "_id", "_list", "_values", "_names", "_set"}) {
    std::string x = suffix;
    if (s.size() > x.size() && s.ends_with(x)) {
      s = s.substr(0, s.size() - x.size());
      break;
    }
  }
  if (s.size() > 3 && s.ends_with("ies")) {
    s = s.substr(0, s.size() - 3) + "y";
  } else if (s.size() > 3 && s.back() == 's' && !s.ends_with("ss")) {
    s.pop_back();
  }
  std::replace(s.begin(), s.end(), '_', ' ');
  return s;
}

std::string plural_noun(const std::string& port) {
  auto s = singular_noun(port);
  if (s.ends_with("y") && s.size() > 1 && std::string("aeiou").find(s[s.size() - 2]) == std::string::npos) {
    return s.substr(0, s.size() - 1) + "ies";
  }
  if (s.ends_with("s") || s.ends_with("x") || s.ends_with("ch") || s.ends_with("sh")) return s + "es";
  return s + "s";
}

std::string show_value(const std::string& v) {
  if (!is_plain(v)) return "a web link";
  std::string s = v;
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\t', ' ');
  if (s.size() > 40) s = s.substr(0, 37) + "...";
  return s;
}

// "a, b, c and 4 more" / "a and b" / "a".
std::string list_values(const std::vector<std::string>& items, std::size_t shown = 3) {
  std::vector<std::string> head;
  for (std::size_t i = 0; i < items.size() && i < shown; ++i) head.push_back(show_value(items[i]));
  std::string out;
  if (items.size() > shown) {
    for (std::size_t i = 0; i < head.size(); ++i) out += (i ? ", " : "") + head[i];
    return out + " and " + std::to_string(items.size() - shown) + " more";
  }
  for (std::size_t i = 0; i < head.size(); ++i) {
    if (i) out += i + 1 == head.size() ? " and " : ", ";
    out += head[i];
  }
  return out;
}

void flatten(const nlohmann::json& v, std::vector<std::string>& out) {
  if (v.is_null()) return;
  if (v.is_array()) {
    for (const auto& x : v) flatten(x, out);
  } else if (v.is_object()) {
    for (const auto& [k, x] : v.items()) flatten(x, out);
  } else if (v.is_string()) {
    if (!v.get<std::string>().empty()) out.push_back(v.get<std::string>());
  } else {
    out.push_back(v.dump());
  }
}

std::vector<std::string> input_values(const ExecutionReport& r, const WorkflowIR& ir) {
  std::vector<std::string> out;
  if (ir.inputs.size() == 1) {
    for (const auto& line : lines_of(r.input_preview)) {
      if (!trim(line).empty()) out.push_back(trim(line));
    }
    return out;
  }
  try {
    auto j = nlohmann::json::parse(r.input_preview);
    if (!ir.inputs.empty() && j.is_object() && j.contains(ir.inputs[0].name)) flatten(j[ir.inputs[0].name], out);
  } catch (const nlohmann::json::exception&) {
  }
  return out;
}

CuratorQuestion plausibility(const std::string& id, const ExecutionReport& r, const WorkflowIR& ir) {
  CuratorQuestion q;
  q.id = id;
  q.kind = QuestionKind::PlausibilityCheck;
  q.options = {"yes", "no"};
  q.detail = r.output_preview;

  std::string out_port = ir.outputs.empty() ? "result" : ir.outputs[0];
  for (const auto* e : ir.edges_into(kSinkStepId)) {
    if (e->to_port == out_port && e->from_step != kSourceStepId) q.linked_step = e->from_step;
  }
  if (!q.linked_step) {
    const auto edges = ir.edges_into(kSinkStepId);
    for (const auto* e : edges) {
      if (e->from_step != kSourceStepId) {
        q.linked_step = e->from_step;
        break;
      }
    }
  }

  std::vector<std::string> outs;
  bool parsed = false;
  bool any_value = false;
  try {
    auto j = nlohmann::json::parse(r.output_preview);
    parsed = j.is_object();
    if (parsed) {
      for (const auto& [k, v] : j.items()) {
        std::vector<std::string> vals;
        flatten(v, vals);
        if (!vals.empty()) any_value = true;
      }
      if (j.contains(out_port)) flatten(j[out_port], outs);
    }
  } catch (const nlohmann::json::exception&) {
  }

  auto ins = input_values(r, ir);
  std::string in_noun = ir.inputs.empty() ? "input" : singular_noun(ir.inputs[0].name);
  std::string from;
  if (!ins.empty()) from = (ins.size() == 1 ? in_noun : plural_noun(ir.inputs.empty() ? "input" : ir.inputs[0].name)) +
                           " " + list_values(ins);

  if (!parsed || !any_value) {
    q.degenerate = true;
    q.text = "The workflow ran but produced no " + plural_noun(out_port) + (from.empty() ? "" : " for " + from) +
             ". Is an empty result expected?";
    return q;
  }
  if (outs.size() >= 2 && std::all_of(outs.begin(), outs.end(), [&](const std::string& v) { return v == outs[0]; })) {
    q.degenerate = true;
    q.text = "The workflow produced the same " + singular_noun(out_port) + " (" + show_value(outs[0]) +
             ") for every entry. Does that look right?";
    return q;
  }
  std::string to = outs.empty() ? "" : (outs.size() == 1 ? singular_noun(out_port) : plural_noun(out_port)) + " " +
                                           list_values(outs);
  if (from.empty()) {
    q.text = "The workflow produced " + (to.empty() ? std::string("its output") : to) + ". Does that look right?";
  } else {
    q.text = "Does a mapping from " + from + " to " + (to.empty() ? std::string("the produced values") : to) +
             " look right?";
  }
  return q;
}

std::string http_problem(const std::string& code) {
  if (code == "404" || code == "410") return "replied that the address does not exist";
  if (!code.empty() && code[0] == '5') return "reported an internal failure";
  return "refused the request";
}

// Adapter of a known rule for the same host and leading path segment.
std::optional<ResponseAdapter> adapter_from_kb(const ServiceEndpoint& target, const KnowledgeBase* kb) {
  if (!kb) return std::nullopt;
  auto first_segment = [](const std::string& op) {
    auto s = op.substr(op.find_first_not_of('/') == std::string::npos ? op.size() : op.find_first_not_of('/'));
    return s.substr(0, s.find('/'));
  };
  for (const auto& r : kb->rules) {
    if (!r.replacement || r.replacement->protocol != Protocol::Rest) continue;
    if (r.replacement->host() == target.host() &&
        first_segment(r.replacement->operation) == first_segment(target.operation)) {
      return r.response_adapter;
    }
  }
  return std::nullopt;
}

}  // namespace

// ---------------------------------------------------------------- execute

SandboxConfig sandbox_from_json(const nlohmann::json& j) {
  SandboxConfig c;
  c.workdir = j.at("workdir").get<std::string>();
  c.time_budget_s = j.value("time_budget_s", 600);
  auto t = j.value("transport", std::string("fixture"));
  if (t != "live" && t != "fixture") throw Error(Errc::SchemaViolation, "transport must be live or fixture", {"transport"});
  c.transport = t == "live" ? TransportMode::Live : TransportMode::Fixture;
  c.fixtures_path = j.value("fixtures_path", std::string());
  if (j.contains("env_allowlist")) c.env_allowlist = j.at("env_allowlist").get<std::vector<std::string>>();
  if (j.contains("input_text") && !j.at("input_text").is_null()) c.input_text = j.at("input_text").get<std::string>();
  if (c.time_budget_s <= 0) throw Error(Errc::SchemaViolation, "time_budget_s must be positive", {"time_budget_s"});
  return c;
}

nlohmann::json to_json(const SandboxConfig& c) {
  nlohmann::json j = {{"workdir", c.workdir.string()},
                      {"time_budget_s", c.time_budget_s},
                      {"transport", c.transport == TransportMode::Live ? "live" : "fixture"},
                      {"fixtures_path", c.fixtures_path.string()},
                      {"env_allowlist", c.env_allowlist}};
  if (c.input_text) j["input_text"] = *c.input_text;
  return j;
}

std::map<std::string, std::string> install_fixture_guard(const fs::path& meta_dir, const nlohmann::json& entries) {
  // Absolute: the child process runs with its own working directory.
  auto meta = fs::absolute(meta_dir);
  write_file(meta / "fixtures.json", entries.dump());
  write_file(meta / "site" / "sitecustomize.py", kSiteCustomize);
  write_file(meta / "sockets.log", "");
  return {{"WFR_FIXTURES", (meta / "fixtures.json").string()},
          {"WFR_SOCKET_LOG", (meta / "sockets.log").string()},
          {"PYTHONPATH", (meta / "site").string()}};
}

std::size_t sockets_logged(const fs::path& meta) {
  if (!fs::exists(meta / "sockets.log")) return 0;
  auto log = read_file(meta / "sockets.log");
  return static_cast<std::size_t>(std::count(log.begin(), log.end(), '\n'));
}

ExecutionReport execute(const PivotScript& script, const SandboxConfig& sandbox) {
  if (sandbox.transport == TransportMode::Live) return execute(script, sandbox, nullptr);
  FixtureTransport fixtures;
  if (!sandbox.fixtures_path.empty()) {
    try {
      fixtures = FixtureTransport::load(sandbox.fixtures_path);
    } catch (const std::exception& e) {
      throw Error(Errc::SandboxSetupFailed, std::string("cannot load fixtures: ") + e.what());
    }
  }
  return execute(script, sandbox, &fixtures);
}

ExecutionReport execute(const PivotScript& script, const SandboxConfig& sandbox, const FixtureTransport* fixtures) {
  for (const auto& f : script.functions) {
    if (!f.populated) throw Error(Errc::SandboxSetupFailed, "step " + f.step_id + " has no body yet", {f.step_id});
  }
  bool fixture_mode = sandbox.transport == TransportMode::Fixture;
  fs::path dir;
  std::map<std::string, std::string> env;
  auto source = render(script);
  try {
    dir = fs::absolute(sandbox.workdir);
    if (fs::exists(dir) && !fs::is_empty(dir)) {
      throw Error(Errc::SandboxSetupFailed, "working directory is not empty", {dir.string()});
    }
    fs::create_directories(dir);
    write_file(dir / "workflow.py", source);
    if (sandbox.input_text) write_file(dir / script.input_path, *sandbox.input_text);
    env = environment_subset(sandbox.env_allowlist);
    env["PYTHONDONTWRITEBYTECODE"] = "1";
    env["PYTHONIOENCODING"] = "utf-8";
    env["PYTHONUNBUFFERED"] = "1";
    if (fixture_mode) {
      for (auto& [k, v] : install_fixture_guard(dir / ".wfr", fixtures ? fixtures->entries() : nlohmann::json::object())) {
        env[k] = v;
      }
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(Errc::SandboxSetupFailed, e.what(), {sandbox.workdir.string()});
  }

  ProcessSpec spec;
  spec.argv = {python_executable(), "workflow.py"};
  spec.cwd = dir;
  spec.env = env;
  spec.timeout = std::chrono::milliseconds(static_cast<std::int64_t>(sandbox.time_budget_s) * 1000);
  auto p = run_process(spec);

  ExecutionReport r;
  r.exit_code = p.exit_code;
  // Paths relative to the run directory, so reports do not depend on where it lives.
  auto relative = [prefix = dir.string() + "/"](std::string text) {
    for (auto pos = text.find(prefix); pos != std::string::npos; pos = text.find(prefix, pos)) text.erase(pos, prefix.size());
    return text;
  };
  r.stdout_text = relative(p.out);
  r.stderr_text = relative(p.err);
  r.wall_time_ms = p.wall_ms;
  r.transport_mode = sandbox.transport;
  r.script_digest = sha256_hex(source);
  if (fs::exists(dir / script.input_path)) {
    r.input_present = true;
    r.input_preview = read_file(dir / script.input_path).substr(0, kInputPreview);
  }
  if (fs::exists(dir / "results")) {
    for (const auto& entry : fs::recursive_directory_iterator(dir / "results")) {
      if (entry.is_regular_file()) r.outputs[fs::relative(entry.path(), dir).generic_string()] = sha256_file(entry.path());
    }
  }
  bool output_ok = false;
  if (fs::exists(dir / script.output_path)) {
    auto text = read_file(dir / script.output_path);
    output_ok = !text.empty();
    r.output_preview = text.substr(0, kOutputPreview);
  }
  if (fixture_mode) {
    r.sockets_opened = sockets_logged(dir / ".wfr");
  } else {
    for (const auto& line : lines_of(p.err)) {
      if (line.rfind("[wfr] http-", 0) == 0 || line.rfind("[wfr] unreachable", 0) == 0) ++r.sockets_opened;
    }
  }
  r.exit_status = classify(p, output_ok);
  return r;
}

// ---------------------------------------------------------------- diagnose

std::vector<CuratorQuestion> diagnose(const ExecutionReport& report, const WorkflowIR& ir) {
  std::string id = "r" + std::to_string(report.number) + "-q1";
  CuratorQuestion q;
  q.id = id;
  switch (report.exit_status.kind) {
    case ExitStatus::Kind::Ok: return {plausibility(id, report, ir)};
    case ExitStatus::Kind::Timeout: {
      auto step = last_started_step(report.stdout_text);
      q.kind = QuestionKind::OpaqueStep;
      q.linked_step = step;
      q.text = step ? "The step \"" + plain_name(*step) +
                          "\" did not finish within the time allowed. Please describe in words what it should do "
                          "with its inputs."
                    : "The workflow did not finish within the time allowed. Please describe in words what it should "
                      "do.";
      q.detail = "no result after " + std::to_string(report.wall_time_ms) + " ms\n" + tail_lines(report.stderr_text, 20);
      return {q};
    }
    case ExitStatus::Kind::RuntimeError: break;
  }

  auto marker = last_failure_marker(report.stderr_text);
  q.detail = tail_lines(report.stderr_text, 20);
  if (marker && marker->event == "missing-input") return {missing_input_question(id, ir)};
  if (marker && (marker->event == "http-error" || marker->event == "unreachable")) {
    const Step* st = ir.find(marker->step);
    q.kind = QuestionKind::EndpointBroken;
    q.linked_step = marker->step;
    std::string problem = "could not be reached";
    if (marker->event == "http-error") problem = http_problem(marker->detail.substr(0, marker->detail.find(' ')));
    q.text = "The step \"" + plain_name(marker->step) + "\" failed because its web service " + problem + "." +
             about_step(st) + " Which web address should it use instead?";
    return {q};
  }
  if (marker && marker->event == "checkpoint") {
    const Step* st = ir.find(marker->step);
    q.kind = QuestionKind::OpaqueStep;
    q.linked_step = marker->step;
    q.text = "The step \"" + plain_name(marker->step) + "\" needs a decision the engine cannot make on its own." +
             about_step(st) + " Please describe in words what it should do with its inputs.";
    return {q};
  }
  q.kind = QuestionKind::DataFormatUnknown;
  std::optional<std::string> step;
  if (marker) {
    step = marker->step;
  } else {
    step = report.exit_status.step_id ? report.exit_status.step_id : last_started_step(report.stdout_text);
  }
  if (step && *step == kSourceStepId) {
    q.text = "The sample input could not be read. What does one input file look like, and which values does it hold?";
    return {q};
  }
  q.linked_step = step;
  if (step) {
    q.text = "The step \"" + plain_name(*step) + "\" received data in a form it could not read." +
             about_step(ir.find(*step)) + " What does this data look like, and which values should be taken from it?";
  } else {
    q.text = "The workflow stopped on data it could not read. What should the data look like?";
  }
  return {q};
}

CuratorQuestion unmatched_endpoint_question(const std::string& id, const Step& step) {
  CuratorQuestion q;
  q.id = id;
  q.kind = QuestionKind::EndpointBroken;
  q.linked_step = step.id;
  q.text = "The step \"" + plain_name(step.id) +
           "\" used a web service that is no longer available, and no replacement is known." + about_step(&step) +
           " Which web address should it use instead?";
  if (step.endpoint) q.detail = to_string(step.endpoint->protocol) + " " + step.endpoint->url_template();
  return q;
}

CuratorQuestion missing_input_question(const std::string& id, const WorkflowIR& ir) {
  CuratorQuestion q;
  q.id = id;
  q.kind = QuestionKind::MissingInput;
  if (ir.inputs.size() <= 1) {
    auto noun = ir.inputs.empty() ? std::string("input values") : plural_noun(ir.inputs[0].name);
    q.text = "The workflow needs sample input to run. Please upload a file with example " + noun + ", one per line.";
  } else {
    std::vector<std::string> names;
    for (const auto& i : ir.inputs) names.push_back(plain_name(i.name));
    q.text = "The workflow needs sample input to run. Please upload a JSON file with example values for " +
             list_values(names, names.size()) + ".";
  }
  return q;
}

CuratorQuestion exhausted_step_question(const std::string& id, const Step& step, int attempts) {
  CuratorQuestion q;
  q.id = id;
  q.kind = QuestionKind::OpaqueStep;
  q.linked_step = step.id;
  q.text = "The step \"" + plain_name(step.id) + "\" still fails after " + std::to_string(attempts) +
           " attempts to write it." + about_step(&step) + " Please describe in words what it should do with its inputs.";
  return q;
}

// ---------------------------------------------------------------- answers

std::optional<std::string> find_url(const std::string& text) {
  static const std::regex url(R"(https?://[^\s"'<>]+)");
  std::smatch m;
  if (!std::regex_search(text, m, url)) return std::nullopt;
  auto u = m.str();
  while (!u.empty() && std::string(".,;:!?)]").find(u.back()) != std::string::npos) u.pop_back();
  return u;
}

std::string complete_url_template(const std::string& answer_url, const std::string& failed_template) {
  if (answer_url.find('{') != std::string::npos || failed_template.empty() || !is_absolute_url(failed_template)) {
    return answer_url;
  }
  auto split = [](const std::string& path) {
    std::vector<std::string> segs;
    std::string cur;
    for (char c : path) {
      if (c == '/') {
        if (!cur.empty()) segs.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!cur.empty()) segs.push_back(cur);
    return segs;
  };
  auto answer = split(url_path(answer_url));
  auto failed = split(url_path(failed_template));
  std::size_t literal = 0;
  while (literal < failed.size() && failed[literal].find('{') == std::string::npos) ++literal;
  std::vector<std::string> out = answer;
  for (std::size_t i = std::min(answer.size(), literal); i < failed.size(); ++i) out.push_back(failed[i]);
  std::string path;
  for (const auto& s : out) path += "/" + s;
  return url_origin(answer_url) + path;
}

SessionEffect interpret_answer(const CuratorQuestion& q, const CuratorAnswer& a, const AnswerContext& ctx) {
  if (a.question_id != q.id) throw Error(Errc::UnknownQuestion, "answer is for another question", {a.question_id});
  SessionEffect e;
  e.question_id = q.id;
  e.step_id = q.linked_step;
  auto payload = trim(a.payload);
  switch (q.kind) {
    case QuestionKind::EndpointBroken: {
      auto url = find_url(payload);
      if (!url) throw Error(Errc::AnswerShapeMismatch, "expected a web address in the answer", {q.id});
      if (!q.linked_step) throw Error(Errc::AnswerShapeMismatch, "question names no step", {q.id});
      const Step* original = ctx.original_ir ? ctx.original_ir->find(*q.linked_step) : nullptr;
      const Step* current = ctx.current_ir ? ctx.current_ir->find(*q.linked_step) : nullptr;
      if (!original) original = current;
      if (!original || !original->endpoint) {
        throw Error(Errc::AnswerShapeMismatch, "the step has no service to replace", {q.id});
      }
      std::string failed;
      if (current && current->endpoint && current->endpoint->protocol == Protocol::Rest) {
        failed = current->endpoint->url_template();
      } else if (original->endpoint->protocol == Protocol::Rest) {
        failed = original->endpoint->url_template();
      }
      auto completed = complete_url_template(*url, failed);
      SubstitutionRule rule;
      const auto& from = *original->endpoint;
      rule.match = RuleMatch{from.protocol, from.host(), from.operation};
      rule.replacement = rest_endpoint_from_template(completed);
      if (auto it = ctx.response_adapters.find(*q.linked_step); it != ctx.response_adapters.end()) {
        rule.response_adapter = it->second;
      } else if (auto found = adapter_from_kb(*rule.replacement, ctx.kb)) {
        rule.response_adapter = *found;
      }
      rule.confidence = Confidence::Suggested;
      rule.provenance = RuleProvenance::CuratorProvided;
      rule.id = "curator-" + sha256_hex(to_string(from.protocol) + " " + from.host() + " " + from.operation + " -> " +
                                        completed)
                                 .substr(0, 12);
      e.kind = SessionEffect::Kind::RuleAdded;
      e.rule = rule;
      return e;
    }
    case QuestionKind::MissingInput:
      if (payload.empty()) throw Error(Errc::AnswerShapeMismatch, "expected the contents of a sample input file", {q.id});
      e.kind = SessionEffect::Kind::InputRegistered;
      e.input_text = a.payload;
      return e;
    case QuestionKind::PlausibilityCheck: {
      static const std::set<std::string> yes = {"yes", "y", "true", "approve", "approved", "correct", "ok"};
      static const std::set<std::string> no = {"no", "n", "false", "reject", "rejected", "wrong"};
      auto word = lower(payload);
      while (!word.empty() && std::string(".!").find(word.back()) != std::string::npos) word.pop_back();
      if (yes.count(word)) {
        e.kind = SessionEffect::Kind::StepApproved;
      } else if (no.count(word)) {
        e.kind = SessionEffect::Kind::RevivalRejected;
      } else {
        throw Error(Errc::AnswerShapeMismatch, "expected yes or no", {q.id});
      }
      return e;
    }
    case QuestionKind::OpaqueStep:
    case QuestionKind::DataFormatUnknown: {
      if (payload.empty()) throw Error(Errc::AnswerShapeMismatch, "expected a description", {q.id});
      e.kind = SessionEffect::Kind::ResynthesisScheduled;
      e.note = payload;
      // A body written by the curator is used as is.
      if (payload.find("return") != std::string::npos && payload.find("://") == std::string::npos &&
          !python_syntax_error("def _curator():\n" + indent(a.payload, 1) + "\n")) {
        e.body = a.payload;
      }
      return e;
    }
  }
  throw Error(Errc::AnswerShapeMismatch, "unknown question kind", {q.id});
}

std::vector<std::pair<std::string, std::string>> successful_requests(const ExecutionReport& report) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& line : lines_of(report.stderr_text)) {
    if (line.rfind("[wfr] http-ok ", 0) != 0) continue;
    std::istringstream in(line.substr(14));
    std::string step, status, latency, url;
    in >> step >> status >> latency >> url;
    if (!url.empty()) out.emplace_back(step, url);
  }
  return out;
}

// ---------------------------------------------------------------- JSON

std::string to_string(ExitStatus::Kind k) {
  switch (k) {
    case ExitStatus::Kind::Ok: return "Ok";
    case ExitStatus::Kind::RuntimeError: return "RuntimeError";
    case ExitStatus::Kind::Timeout: return "Timeout";
  }
  return "?";
}

std::string to_string(QuestionKind k) {
  switch (k) {
    case QuestionKind::EndpointBroken: return "EndpointBroken";
    case QuestionKind::DataFormatUnknown: return "DataFormatUnknown";
    case QuestionKind::PlausibilityCheck: return "PlausibilityCheck";
    case QuestionKind::MissingInput: return "MissingInput";
    case QuestionKind::OpaqueStep: return "OpaqueStep";
  }
  return "?";
}

QuestionKind question_kind_from_string(const std::string& s) {
  for (auto k : {QuestionKind::EndpointBroken, QuestionKind::DataFormatUnknown, QuestionKind::PlausibilityCheck,
                 QuestionKind::MissingInput, QuestionKind::OpaqueStep}) {
    if (to_string(k) == s) return k;
  }
  throw Error(Errc::SchemaViolation, "unknown question kind " + s, {s});
}

std::string to_string(SessionEffect::Kind k) {
  switch (k) {
    case SessionEffect::Kind::RuleAdded: return "RuleAdded";
    case SessionEffect::Kind::InputRegistered: return "InputRegistered";
    case SessionEffect::Kind::StepApproved: return "StepApproved";
    case SessionEffect::Kind::RevivalRejected: return "RevivalRejected";
    case SessionEffect::Kind::ResynthesisScheduled: return "ResynthesisScheduled";
  }
  return "?";
}

namespace {

template <typename T>
nlohmann::json opt(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<std::string> opt_string(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

}  // namespace

nlohmann::json to_json(const ExecutionReport& r) {
  return {{"number", r.number},
          {"exit_status",
           {{"kind", to_string(r.exit_status.kind)},
            {"step_id", opt(r.exit_status.step_id)},
            {"message", r.exit_status.message}}},
          {"exit_code", r.exit_code},
          {"stdout", r.stdout_text},
          {"stderr", r.stderr_text},
          {"outputs", r.outputs},
          {"wall_time_ms", r.wall_time_ms},
          {"transport_mode", r.transport_mode == TransportMode::Live ? "Live" : "Fixture"},
          {"sockets_opened", r.sockets_opened},
          {"script_digest", r.script_digest},
          {"input_present", r.input_present},
          {"input_preview", r.input_preview},
          {"output_preview", r.output_preview}};
}

ExecutionReport report_from_json(const nlohmann::json& j) {
  ExecutionReport r;
  r.number = j.at("number").get<int>();
  const auto& s = j.at("exit_status");
  auto kind = s.at("kind").get<std::string>();
  if (kind == "Ok") {
    r.exit_status.kind = ExitStatus::Kind::Ok;
  } else if (kind == "RuntimeError") {
    r.exit_status.kind = ExitStatus::Kind::RuntimeError;
  } else if (kind == "Timeout") {
    r.exit_status.kind = ExitStatus::Kind::Timeout;
  } else {
    throw Error(Errc::SchemaViolation, "unknown exit status " + kind, {"exit_status.kind"});
  }
  r.exit_status.step_id = opt_string(s, "step_id");
  r.exit_status.message = s.at("message").get<std::string>();
  r.exit_code = j.at("exit_code").get<int>();
  r.stdout_text = j.at("stdout").get<std::string>();
  r.stderr_text = j.at("stderr").get<std::string>();
  r.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
  r.wall_time_ms = j.at("wall_time_ms").get<std::int64_t>();
  r.transport_mode = j.at("transport_mode").get<std::string>() == "Live" ? TransportMode::Live : TransportMode::Fixture;
  r.sockets_opened = j.at("sockets_opened").get<std::size_t>();
  r.script_digest = j.at("script_digest").get<std::string>();
  r.input_present = j.at("input_present").get<bool>();
  r.input_preview = j.at("input_preview").get<std::string>();
  r.output_preview = j.at("output_preview").get<std::string>();
  return r;
}

nlohmann::json to_json(const CuratorQuestion& q) {
  return {{"id", q.id},
          {"kind", to_string(q.kind)},
          {"text", q.text},
          {"options", q.options},
          {"linked_step", opt(q.linked_step)},
          {"detail", q.detail},
          {"degenerate", q.degenerate}};
}

CuratorQuestion question_from_json(const nlohmann::json& j) {
  CuratorQuestion q;
  q.id = j.at("id").get<std::string>();
  q.kind = question_kind_from_string(j.at("kind").get<std::string>());
  q.text = j.at("text").get<std::string>();
  q.options = j.at("options").get<std::vector<std::string>>();
  q.linked_step = opt_string(j, "linked_step");
  q.detail = j.value("detail", std::string());
  q.degenerate = j.value("degenerate", false);
  return q;
}

nlohmann::json to_json(const CuratorAnswer& a) { return {{"question_id", a.question_id}, {"payload", a.payload}}; }

CuratorAnswer answer_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("question_id") || !j.at("question_id").is_string()) {
    throw Error(Errc::SchemaViolation, "answer needs a question_id", {"question_id"});
  }
  if (!j.contains("payload") || !j.at("payload").is_string()) {
    throw Error(Errc::SchemaViolation, "answer needs a text payload", {"payload"});
  }
  return {j.at("question_id").get<std::string>(), j.at("payload").get<std::string>()};
}

nlohmann::json to_json(const SessionEffect& e) {
  nlohmann::json j = {{"kind", to_string(e.kind)},
                      {"question_id", e.question_id},
                      {"step_id", opt(e.step_id)},
                      {"input_text", e.input_text},
                      {"note", e.note},
                      {"body", opt(e.body)},
                      {"rule", nullptr}};
  if (e.rule) j["rule"] = *e.rule;
  return j;
}

SessionEffect effect_from_json(const nlohmann::json& j) {
  SessionEffect e;
  auto kind = j.at("kind").get<std::string>();
  bool found = false;
  for (auto k : {SessionEffect::Kind::RuleAdded, SessionEffect::Kind::InputRegistered, SessionEffect::Kind::StepApproved,
                 SessionEffect::Kind::RevivalRejected, SessionEffect::Kind::ResynthesisScheduled}) {
    if (to_string(k) == kind) {
      e.kind = k;
      found = true;
    }
  }
  if (!found) throw Error(Errc::SchemaViolation, "unknown effect " + kind, {"kind"});
  e.question_id = j.at("question_id").get<std::string>();
  e.step_id = opt_string(j, "step_id");
  e.input_text = j.value("input_text", std::string());
  e.note = j.value("note", std::string());
  e.body = opt_string(j, "body");
  if (j.contains("rule") && !j.at("rule").is_null()) e.rule = j.at("rule").get<SubstitutionRule>();
  return e;
}

}  // namespace wfr
