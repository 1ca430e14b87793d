#include "wfrevive/session.hpp"

#include <algorithm>
#include <chrono>
#include <mutex>

#include "wfrevive/digest.hpp"
#include "wfrevive/errors.hpp"
#include "wfrevive/process.hpp"

namespace wfr {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

const std::vector<std::string> kStateNames = {"Uploaded",  "Parsed",    "Lowered", "Substituted", "Synthesized",
                                              "Validated", "Emitted",   "Packaged", "Failed"};

std::int64_t ms_since(Clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
}

template <typename T>
json opt_json(const std::optional<T>& v) {
  if (!v) return nullptr;
  return to_json(*v);
}

json opt_str(const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); }

std::optional<std::string> get_opt_str(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

json exit_status_json(const ExitStatus& e) {
  return {{"kind", to_string(e.kind)}, {"step_id", opt_str(e.step_id)}, {"message", e.message}};
}

ExitStatus exit_status_from(const json& j) {
  ExitStatus e;
  auto k = j.at("kind").get<std::string>();
  e.kind = k == "Ok" ? ExitStatus::Kind::Ok : k == "Timeout" ? ExitStatus::Kind::Timeout : ExitStatus::Kind::RuntimeError;
  e.step_id = get_opt_str(j, "step_id");
  e.message = j.at("message").get<std::string>();
  return e;
}

// ------------------------------------------------------------ transcript

json& record(RevivalSession& s, SessionEnv& env, const std::string& type, json payload = json::object()) {
  payload["seq"] = s.transcript.size() + 1;
  payload["type"] = type;
  payload["at"] = env.now();
  s.transcript.push_back(std::move(payload));
  return s.transcript.back();
}

void enter(RevivalSession& s, SessionEnv& env, SessionState to, std::int64_t latency_ms, json extra = json::object()) {
  extra["from"] = to_string(s.state);
  extra["to"] = to_string(to);
  extra["latency_ms"] = latency_ms;
  s.state = to;
  record(s, env, "stage", std::move(extra));
}

// Moves the session back to an earlier stage after an answer changed its input.
void reenter(RevivalSession& s, SessionEnv& env, SessionState to, const std::string& why) {
  if (s.state <= to) return;
  record(s, env, "reentry", {{"from", to_string(s.state)}, {"to", to_string(to)}, {"reason", why}});
  s.state = to;
  if (to < SessionState::Emitted) {
    s.target.reset();
    s.target_run.reset();
    s.manifest.reset();
  }
}

[[noreturn]] void fail(RevivalSession& s, SessionEnv& env, const std::string& code, const std::string& message,
                       std::vector<std::string> subjects = {}) {
  s.failure = SessionFailure{code, message, std::move(subjects), s.state};
  record(s, env, "failed",
         {{"code", code}, {"message", message}, {"subjects", s.failure->subjects}, {"at_state", to_string(s.state)}});
  s.state = SessionState::Failed;
  throw Error(Errc::TerminalFailure, code + ": " + message, {code});
}

[[noreturn]] void fail(RevivalSession& s, SessionEnv& env, const Error& e) {
  fail(s, env, std::string(errc_name(e.code())), e.what(), e.subjects());
}

[[noreturn]] void throw_failed(const RevivalSession& s) {
  auto code = s.failure ? s.failure->code : std::string("TerminalFailure");
  auto msg = s.failure ? s.failure->message : std::string("session failed");
  throw Error(Errc::TerminalFailure, code + ": " + msg, {code});
}

std::vector<std::string> open_ids(const RevivalSession& s) {
  std::vector<std::string> ids;
  for (const auto& q : s.open_questions) ids.push_back(q.id);
  return ids;
}

[[noreturn]] void blocked(RevivalSession& s, SessionEnv& env) {
  auto ids = open_ids(s);
  record(s, env, "blocked", {{"questions", ids}, {"state", to_string(s.state)}});
  throw Error(Errc::Blocked, "waiting for curator answers", ids);
}

std::string next_question_id(RevivalSession& s) { return "q" + std::to_string(++s.question_counter); }

void withdraw(RevivalSession& s, SessionEnv& env, const std::string& id, const std::string& why) {
  auto it = std::find_if(s.open_questions.begin(), s.open_questions.end(),
                         [&](const CuratorQuestion& q) { return q.id == id; });
  if (it == s.open_questions.end()) return;
  s.closed_questions.push_back({*it, std::nullopt, std::nullopt, why});
  record(s, env, "withdrawn", {{"question_id", id}, {"reason", why}});
  s.open_questions.erase(it);
}

// Questions raised from a report describe a script that is about to change.
void withdraw_report_questions(RevivalSession& s, SessionEnv& env, const std::string& why) {
  for (const auto& id : open_ids(s)) {
    if (!id.empty() && id[0] == 'r') withdraw(s, env, id, why);
  }
}

void raise(RevivalSession& s, SessionEnv& env, CuratorQuestion q) {
  for (const auto& id : open_ids(s)) {
    const auto* old = s.open_question(id);
    if (old->kind == q.kind && old->linked_step == q.linked_step) withdraw(s, env, id, "superseded by " + q.id);
  }
  record(s, env, "question", {{"question", to_json(q)}});
  s.open_questions.push_back(std::move(q));
}

// ------------------------------------------------------------ providers

// Passes requests through and keeps the raw bodies for the transcript.
class RecordingProvider : public SynthesisProvider {
 public:
  explicit RecordingProvider(SynthesisProvider& inner) : inner_(inner) {}
  std::string name() const override { return inner_.name(); }
  std::set<Capability> capabilities() const override { return inner_.capabilities(); }
  bool deterministic() const override { return inner_.deterministic(); }
  std::string fill_body(const BodyRequest& r) override {
    try {
      auto body = inner_.fill_body(r);
      std::lock_guard lock(mu_);
      fills_.push_back({{"step", r.step->id}, {"attempt", r.attempt}, {"body", body}});
      return body;
    } catch (const Error& e) {
      std::lock_guard lock(mu_);
      fills_.push_back({{"step", r.step->id}, {"attempt", r.attempt}, {"unavailable", e.what()}});
      throw;
    }
  }
  std::string summarize(const Step& step) override { return inner_.summarize(step); }

  json fills() const {
    auto out = fills_;
    std::sort(out.begin(), out.end(), [](const json& a, const json& b) { return a["step"] < b["step"]; });
    return out;
  }

 private:
  SynthesisProvider& inner_;
  std::mutex mu_;
  json fills_ = json::array();
};

SynthesisContext context_for(const RevivalSession& s) {
  SynthesisContext ctx;
  ctx.original_format = s.legacy ? to_string(s.legacy->format) : "Taverna";
  for (const auto& a : s.substitutions) {
    ctx.response_adapters[a.step_id] = a.adapter;
    if (const auto* r = s.kb.find(a.rule_id)) ctx.rules[a.step_id] = {*r};
  }
  ctx.curator_notes = s.curator_notes;
  ctx.curator_bodies = s.curator_bodies;
  return ctx;
}

// Fills every unpopulated function.
void fill(RevivalSession& s, SessionEnv& env) {
  PopulateOptions options;
  for (const auto& f : s.pivot->functions) {
    if (!f.populated) {
      options.only_steps.insert(f.step_id);
      options.attempts[f.step_id] = s.attempts[f.step_id] + 1;
    }
  }
  if (options.only_steps.empty()) return;
  RecordingProvider rec(*env.provider);
  auto ctx = context_for(s);
  try {
    s.pivot = populate_bodies(*s.pivot, *s.ir, rec, ctx, options);
  } catch (const Error& e) {
    record(s, env, "synthesis", {{"steps", options.only_steps}, {"fills", rec.fills()}});
    fail(s, env, e);
  }
  json origins = json::object();
  for (const auto& step : options.only_steps) {
    if (!s.curator_bodies.count(step)) s.attempts[step] += 1;
    origins[step] = s.pivot->function_for(step)->origin;
  }
  record(s, env, "synthesis",
         {{"steps", options.only_steps}, {"attempts", options.attempts}, {"origins", origins}, {"fills", rec.fills()}});
  s.pending_refill.clear();
}

void resubstitute(RevivalSession& s) {
  auto out = substitute(*s.lowered, s.kb, s.overrides);
  s.ir = out.ir;
  s.substitutions = out.applied;
  s.unmatched = out.unmatched;
}

json substitution_summary(const RevivalSession& s) {
  json applied = json::array();
  for (const auto& a : s.substitutions) {
    applied.push_back({{"step_id", a.step_id}, {"rule_id", a.rule_id}, {"to", a.to.url_template()}});
  }
  return {{"applied", applied}, {"unmatched", s.unmatched}};
}

bool needs_input(const RevivalSession& s) { return s.pivot && !s.pivot->workflow_inputs.empty(); }

std::string input_digest(const RevivalSession& s) { return sha256_hex(s.sample_input.value_or("")); }

// ------------------------------------------------------------ execution

ExecutionReport run_pivot(RevivalSession& s, SessionEnv& env) {
  int n = static_cast<int>(s.reports.size()) + 1;
  SandboxConfig cfg;
  cfg.workdir = env.dir / "runs" / std::to_string(n);
  cfg.time_budget_s = s.config.time_budget_s;
  cfg.transport = s.config.transport;
  if (needs_input(s) && s.sample_input) cfg.input_text = s.sample_input;
  std::error_code ec;
  fs::remove_all(cfg.workdir, ec);
  auto report = execute(*s.pivot, cfg, s.config.transport == TransportMode::Fixture ? env.fixtures : nullptr);
  report.number = n;
  write_file(env.dir / "reports" / (std::to_string(n) + ".json"), to_json(report).dump(2) + "\n");
  s.reports.push_back({n, report.exit_status, report.script_digest, input_digest(s)});
  record(s, env, "report",
         {{"number", n},
          {"exit_status", exit_status_json(report.exit_status)},
          {"script_digest", report.script_digest},
          {"sockets_opened", report.sockets_opened},
          {"wall_time_ms", report.wall_time_ms}});
  return report;
}

ExecutionReport load_report(const SessionEnv& env, int n) {
  return report_from_json(json::parse(read_file(env.dir / "reports" / (std::to_string(n) + ".json"))));
}

bool is_function_step(const RevivalSession& s, const std::optional<std::string>& step) {
  return step && s.pivot && s.pivot->function_for(*step);
}

void reset_function(RevivalSession& s, const std::string& step) {
  auto* f = s.pivot->function_for(step);
  f->populated = false;
  f->body.clear();
  f->origin.clear();
  s.pending_refill.insert(step);
}

// Confirms the rules behind every request the accepted run made successfully.
void confirm_rules(RevivalSession& s, SessionEnv& env, const ExecutionReport& report) {
  std::unique_ptr<HttpTransport> transport;
  if (s.config.transport == TransportMode::Fixture) {
    transport = std::make_unique<FixtureTransport>(env.fixtures ? *env.fixtures : FixtureTransport());
  } else {
    transport = std::make_unique<LiveTransport>();
  }
  for (const auto& [step, url] : successful_requests(report)) {
    auto it = std::find_if(s.substitutions.begin(), s.substitutions.end(),
                           [&](const AppliedSubstitution& a) { return a.step_id == step; });
    if (it == s.substitutions.end()) continue;
    const auto* rule = s.kb.find(it->rule_id);
    if (!rule || rule->confidence == Confidence::Confirmed) continue;
    auto result = probe(url, *transport);
    json ev = {{"rule_id", rule->id}, {"url", url}, {"status", to_string(result.status)}};
    if (result.status.ok()) s.kb = confirm(*rule, result, s.kb);
    ev["confirmed"] = result.status.ok();
    record(s, env, "probe", std::move(ev));
  }
}

// Opens the questions a failed run calls for, or schedules an automatic
// refill when the provider may answer differently next time.
void handle_failure(RevivalSession& s, SessionEnv& env, const std::vector<CuratorQuestion>& questions,
                    bool allow_retry) {
  for (const auto& q : questions) {
    bool body_problem = q.kind == QuestionKind::DataFormatUnknown || q.kind == QuestionKind::OpaqueStep;
    if (body_problem && is_function_step(s, q.linked_step)) {
      const auto& step = *q.linked_step;
      int done = s.attempts[step];
      if (s.curator_bodies.count(step)) {
        raise(s, env, q);
      } else if (done >= kMaxSynthesisAttempts) {
        auto ex = exhausted_step_question(q.id, *s.ir->find(step), done);
        ex.detail = q.detail;
        raise(s, env, ex);
      } else if (allow_retry && !s.provider_deterministic) {
        reset_function(s, step);
        record(s, env, "retry", {{"step_id", step}, {"attempt", done + 1}, {"cause", to_string(q.kind)}});
      } else {
        raise(s, env, q);
      }
    } else {
      raise(s, env, q);
    }
  }
}

// ------------------------------------------------------------ stages

void stage_parse(RevivalSession& s, SessionEnv& env) {
  auto start = Clock::now();
  auto upload = read_file(env.dir / kUploadFile);
  try {
    s.legacy = parse_legacy(upload);
  } catch (const Error& e) {
    fail(s, env, e);
  }
  enter(s, env, SessionState::Parsed, ms_since(start),
        {{"format", to_string(s.legacy->format)}, {"processors", s.legacy->processors.size()}});
}

void stage_lower(RevivalSession& s, SessionEnv& env) {
  auto start = Clock::now();
  try {
    auto collapsed = collapse_shims(detect_shims(lower(*s.legacy)));
    s.lowered = collapsed.ir;
    s.collapsed = collapsed.records;
  } catch (const Error& e) {
    fail(s, env, e);
  }
  s.sample_input = s.config.sample_input ? s.config.sample_input : declared_sample_input(*s.lowered);
  enter(s, env, SessionState::Lowered, ms_since(start),
        {{"steps", s.lowered->steps.size()}, {"shims_collapsed", s.collapsed.size()}});
}

void stage_substitute(RevivalSession& s, SessionEnv& env) {
  auto start = Clock::now();
  try {
    resubstitute(s);
  } catch (const Error& e) {
    fail(s, env, e);
  }
  enter(s, env, SessionState::Substituted, ms_since(start), substitution_summary(s));
}

void stage_synthesize(RevivalSession& s, SessionEnv& env) {
  auto start = Clock::now();
  if (!s.unmatched.empty()) {
    for (const auto& step : s.unmatched) {
      bool asked = std::any_of(s.open_questions.begin(), s.open_questions.end(),
                               [&](const CuratorQuestion& q) { return q.linked_step == step; });
      if (!asked) raise(s, env, unmatched_endpoint_question(next_question_id(s), *s.ir->find(step)));
    }
    blocked(s, env);
  }
  PivotScript skeleton;
  try {
    skeleton = build_skeleton(*s.ir, context_for(s));
  } catch (const Error& e) {
    fail(s, env, e);
  }
  if (s.pivot) {
    for (auto& f : skeleton.functions) {
      const auto* old = s.pivot->function_for(f.step_id);
      if (old && old->populated && !s.pending_refill.count(f.step_id) && old->name == f.name &&
          old->params == f.params && old->out_ports == f.out_ports && !needs_curator(*old)) {
        f.body = old->body;
        f.origin = old->origin;
        f.populated = true;
      }
    }
  }
  s.pivot = skeleton;
  fill(s, env);
  withdraw_report_questions(s, env, "script regenerated");
  enter(s, env, SessionState::Synthesized, ms_since(start), {{"domain", s.pivot->domain}});
}

void stage_validate(RevivalSession& s, SessionEnv& env) {
  auto start = Clock::now();
  bool unpopulated = std::any_of(s.pivot->functions.begin(), s.pivot->functions.end(),
                                 [](const PivotFunction& f) { return !f.populated; });
  if (unpopulated) {
    fill(s, env);
    enter(s, env, SessionState::Synthesized, ms_since(start), {{"refill", true}});
    return;
  }
  if (needs_input(s) && !s.sample_input) {
    raise(s, env, missing_input_question(next_question_id(s), *s.ir));
    blocked(s, env);
  }
  auto digest = sha256_hex(render(*s.pivot));
  if (!s.reports.empty()) {
    const auto& last = s.reports.back();
    if (last.script_digest == digest && last.input_digest == input_digest(s) &&
        last.exit_status.kind == ExitStatus::Kind::Ok && s.approved_reports.count(last.number)) {
      confirm_rules(s, env, load_report(env, last.number));
      enter(s, env, SessionState::Validated, ms_since(start), {{"report", last.number}});
      return;
    }
  }
  auto report = run_pivot(s, env);
  auto questions = diagnose(report, *s.ir);
  if (report.exit_status.kind == ExitStatus::Kind::Ok) {
    for (const auto& q : questions) raise(s, env, q);
    if (s.open_questions.empty()) {
      // Nothing to ask: the run stands on its own.
      s.approved_reports.insert(report.number);
      confirm_rules(s, env, report);
      enter(s, env, SessionState::Validated, ms_since(start), {{"report", report.number}});
      return;
    }
    blocked(s, env);
  }
  if (questions.empty()) fail(s, env, "TerminalFailure", "run " + std::to_string(report.number) + " failed without a diagnosis");
  handle_failure(s, env, questions, true);
  if (!s.open_questions.empty()) blocked(s, env);
  enter(s, env, SessionState::Synthesized, ms_since(start), {{"retry", s.pending_refill}});
}

void run_emitted(RevivalSession& s, SessionEnv& env, const TargetWorkflow& tw) {
  auto root = env.dir / "emitted";
  std::error_code ec;
  fs::remove_all(root, ec);
  write_target(tw, root / "workflow");
  write_file(root / "data" / "input.txt", s.sample_input.value_or(""));
  TargetRunOptions opts;
  opts.env = environment_subset(SandboxConfig{}.env_allowlist);
  opts.env["PYTHONDONTWRITEBYTECODE"] = "1";
  opts.env["PYTHONIOENCODING"] = "utf-8";
  if (s.config.transport == TransportMode::Fixture) {
    for (auto& [k, v] : install_fixture_guard(root / ".wfr", env.fixtures ? env.fixtures->entries() : json::object())) {
      opts.env[k] = v;
    }
  }
  opts.timeout = std::chrono::milliseconds(static_cast<std::int64_t>(s.config.target_budget_s) * 1000);
  auto r = run_target(root / "workflow", opts);

  TargetRunSummary sum;
  sum.ok = r.ok;
  sum.failed_rule = r.failed_rule;
  for (const auto& rr : r.rules) sum.rules.push_back(rr.rule);
  sum.wall_ms = r.wall_ms;
  sum.sockets_opened = sockets_logged(root / ".wfr");
  auto out = root / "workflow" / "results" / "output.json";
  if (fs::exists(out)) {
    auto text = read_file(out);
    sum.output_digest = sha256_hex(text);
    sum.output_preview = text.substr(0, 65536);
    int validated = s.reports.empty() ? 0 : s.reports.back().number;
    auto pivot_out = env.dir / "runs" / std::to_string(validated) / s.pivot->output_path;
    if (fs::exists(pivot_out)) {
      auto a = json::parse(text, nullptr, false);
      auto b = json::parse(read_file(pivot_out), nullptr, false);
      sum.agrees_with_pivot = !a.is_discarded() && a == b;
    }
  }
  s.target_run = sum;
  record(s, env, "target_run",
         {{"ok", sum.ok},
          {"failed_rule", sum.failed_rule},
          {"rules", sum.rules},
          {"agrees_with_pivot", sum.agrees_with_pivot},
          {"sockets_opened", sum.sockets_opened},
          {"wall_ms", sum.wall_ms}});
  if (!r.ok) {
    std::string err = r.rules.empty() ? std::string() : r.rules.back().err;
    if (err.size() > 2000) err = err.substr(err.size() - 2000);
    fail(s, env, "TargetRunFailed", "rule " + r.failed_rule + " failed: " + err, {r.failed_rule});
  }
}

void stage_emit(RevivalSession& s, SessionEnv& env) {
  auto start = Clock::now();
  TargetWorkflow tw;
  try {
    tw = emit_snakemake(*s.pivot, *s.ir);
  } catch (const Error& e) {
    fail(s, env, e);
  }
  auto findings = check_target(tw);
  if (!findings.empty()) {
    std::vector<std::string> details;
    for (const auto& f : findings) details.push_back(std::string(to_string(f.kind)) + " " + f.detail);
    fail(s, env, "EmissionImpossible", "emitted workflow has structural faults", details);
  }
  if (s.config.run_target) run_emitted(s, env, tw);
  s.target = tw;
  enter(s, env, SessionState::Emitted, ms_since(start), {{"rules", tw.rules.size()}, {"target_digest", target_digest(tw)}});
}

void stage_package(RevivalSession& s, SessionEnv& env) {
  auto start = Clock::now();
  auto root = env.dir / "bundle";
  std::error_code ec;
  fs::remove_all(root, ec);
  RevivalBundle b;
  try {
    b = build_bundle(s, env.dir, root, env.now());
  } catch (const Error& e) {
    fail(s, env, e);
  }
  s.manifest = b.manifest;
  enter(s, env, SessionState::Packaged, ms_since(start),
        {{"pivot_digest", b.manifest.pivot_digest}, {"target_digest", b.manifest.target_digest}, {"files", b.contents.size()}});
}

std::string answer_summary(const ClosedQuestion& c) {
  const auto& e = *c.effect;
  switch (e.kind) {
    case SessionEffect::Kind::RuleAdded:
      return "use " + (e.rule && e.rule->replacement ? e.rule->replacement->url_template() : std::string("the given service"));
    case SessionEffect::Kind::InputRegistered: {
      auto lines = std::count(e.input_text.begin(), e.input_text.end(), '\n');
      return "sample input provided (" + std::to_string(std::max<long>(lines, 1)) + " lines)";
    }
    case SessionEffect::Kind::StepApproved: return "approved";
    case SessionEffect::Kind::RevivalRejected: return "rejected";
    case SessionEffect::Kind::ResynthesisScheduled: {
      if (e.body) return "curator wrote the step body";
      auto note = e.note.substr(0, 200);
      std::replace(note.begin(), note.end(), '\n', ' ');
      return "described: " + note;
    }
  }
  return "";
}

std::string default_filename(const RevivalSession& s) {
  if (!s.config.original_filename.empty()) return s.config.original_filename;
  if (s.legacy && s.legacy->format == LegacyFormat::Scufl) return "workflow.scufl";
  return "workflow.t2flow";
}

}  // namespace

// ------------------------------------------------------------ public

std::string to_string(SessionState s) { return kStateNames.at(static_cast<std::size_t>(s)); }

SessionState session_state_from_string(const std::string& s) {
  auto it = std::find(kStateNames.begin(), kStateNames.end(), s);
  if (it == kStateNames.end()) throw Error(Errc::SchemaViolation, "unknown session state " + s, {"state"});
  return static_cast<SessionState>(it - kStateNames.begin());
}

const CuratorQuestion* RevivalSession::open_question(const std::string& qid) const {
  for (const auto& q : open_questions) {
    if (q.id == qid) return &q;
  }
  return nullptr;
}

std::optional<std::string> declared_sample_input(const WorkflowIR& ir) {
  if (ir.inputs.empty()) return std::string();
  for (const auto& in : ir.inputs) {
    if (!in.sample_value) return std::nullopt;
  }
  if (ir.inputs.size() == 1) {
    auto v = *ir.inputs[0].sample_value;
    if (v.empty() || v.back() != '\n') v += "\n";
    return v;
  }
  json obj = json::object();
  for (const auto& in : ir.inputs) obj[in.name] = *in.sample_value;
  return obj.dump(2) + "\n";
}

RevivalSession create_session(const std::string& id, const std::string& upload, SessionConfig config,
                              const KnowledgeBase& kb, const SynthesisProvider& provider,
                              const FixtureTransport* fixtures, const fs::path& dir, const std::string& now) {
  fs::create_directories(dir);
  write_file(dir / kUploadFile, upload);
  write_file(dir / kInitialKbFile, to_json(kb).dump(2) + "\n");
  if (config.transport == TransportMode::Fixture) {
    write_file(dir / kFixturesFile, (fixtures ? fixtures->entries() : json::object()).dump(2) + "\n");
  }
  RevivalSession s;
  s.id = id;
  s.config = std::move(config);
  s.upload_digest = sha256_hex(upload);
  s.provider_name = provider.name();
  s.provider_deterministic = provider.deterministic();
  s.kb = kb;
  s.transcript.push_back({{"seq", 1},
                          {"type", "created"},
                          {"at", now},
                          {"id", id},
                          {"upload_digest", s.upload_digest},
                          {"upload_size", upload.size()},
                          {"config", to_json(s.config)},
                          {"provider", {{"name", s.provider_name}, {"deterministic", s.provider_deterministic}}}});
  return s;
}

void advance(RevivalSession& s, SessionEnv& env) {
  record(s, env, "advance", {{"state", to_string(s.state)}});
  if (s.state == SessionState::Failed) throw_failed(s);
  if (s.state == SessionState::Packaged) {
    record(s, env, "note", {{"text", "already packaged; nothing to do"}});
    return;
  }
  if (!s.open_questions.empty()) blocked(s, env);
  switch (s.state) {
    case SessionState::Uploaded: stage_parse(s, env); break;
    case SessionState::Parsed: stage_lower(s, env); break;
    case SessionState::Lowered: stage_substitute(s, env); break;
    case SessionState::Substituted: stage_synthesize(s, env); break;
    case SessionState::Synthesized: stage_validate(s, env); break;
    case SessionState::Validated: stage_emit(s, env); break;
    case SessionState::Emitted: stage_package(s, env); break;
    default: break;
  }
}

ExecutionReport execute_pivot(RevivalSession& s, SessionEnv& env) {
  record(s, env, "execute", {{"state", to_string(s.state)}});
  if (s.state == SessionState::Failed) throw_failed(s);
  bool runnable = s.state >= SessionState::Synthesized && s.pivot &&
                  std::all_of(s.pivot->functions.begin(), s.pivot->functions.end(),
                              [](const PivotFunction& f) { return f.populated; });
  if (!runnable) throw Error(Errc::InvalidArgument, "the session has no runnable script yet", {to_string(s.state)});
  auto report = run_pivot(s, env);
  auto questions = diagnose(report, *s.ir);
  if (report.exit_status.kind == ExitStatus::Kind::Ok) {
    for (const auto& q : questions) raise(s, env, q);
  } else {
    handle_failure(s, env, questions, false);
    reenter(s, env, SessionState::Synthesized, "run " + std::to_string(report.number) + " failed");
  }
  return report;
}

SessionEffect apply_answer(RevivalSession& s, const CuratorAnswer& answer, SessionEnv& env) {
  record(s, env, "answer", {{"answer", to_json(answer)}});
  if (s.state == SessionState::Failed) throw_failed(s);
  const auto* open = s.open_question(answer.question_id);
  if (!open) {
    bool closed = std::any_of(s.closed_questions.begin(), s.closed_questions.end(),
                              [&](const ClosedQuestion& c) { return c.question.id == answer.question_id; });
    throw Error(Errc::UnknownQuestion,
                closed ? "question " + answer.question_id + " is already closed"
                       : "no open question " + answer.question_id,
                {answer.question_id});
  }
  auto q = *open;
  AnswerContext ctx;
  ctx.original_ir = s.lowered ? &*s.lowered : nullptr;
  ctx.current_ir = s.ir ? &*s.ir : nullptr;
  ctx.kb = &s.kb;
  for (const auto& a : s.substitutions) ctx.response_adapters[a.step_id] = a.adapter;
  auto effect = interpret_answer(q, answer, ctx);

  s.open_questions.erase(std::remove_if(s.open_questions.begin(), s.open_questions.end(),
                                        [&](const CuratorQuestion& x) { return x.id == q.id; }),
                         s.open_questions.end());
  s.closed_questions.push_back({q, answer, effect, ""});
  record(s, env, "closed", {{"question_id", q.id}, {"effect", to_json(effect)}});

  switch (effect.kind) {
    case SessionEffect::Kind::RuleAdded: {
      const auto& step = *effect.step_id;
      s.kb = add_rule(s.kb, *effect.rule);
      s.overrides[step] = effect.rule->id;
      resubstitute(s);
      record(s, env, "substitution", substitution_summary(s));
      if (s.pivot && s.pivot->function_for(step)) s.pending_refill.insert(step);
      withdraw_report_questions(s, env, "service replaced");
      reenter(s, env, SessionState::Substituted, "service for " + step + " replaced");
      break;
    }
    case SessionEffect::Kind::InputRegistered:
      s.sample_input = effect.input_text;
      for (const auto& id : open_ids(s)) {
        if (s.open_question(id)->kind == QuestionKind::MissingInput) withdraw(s, env, id, "input provided");
      }
      reenter(s, env, SessionState::Synthesized, "sample input changed");
      break;
    case SessionEffect::Kind::StepApproved:
      if (q.id.size() > 1 && q.id[0] == 'r') s.approved_reports.insert(std::stoi(q.id.substr(1)));
      break;
    case SessionEffect::Kind::RevivalRejected:
      s.failure = SessionFailure{"RevivalRejected", "the curator judged the output implausible", {q.id}, s.state};
      record(s, env, "failed", {{"code", "RevivalRejected"}, {"message", s.failure->message}, {"subjects", {q.id}}});
      s.state = SessionState::Failed;
      break;
    case SessionEffect::Kind::ResynthesisScheduled: {
      if (!effect.step_id) break;
      const auto& step = *effect.step_id;
      if (effect.body) s.curator_bodies[step] = *effect.body;
      if (!effect.note.empty()) s.curator_notes[step] = effect.note;
      if (s.pivot && s.pivot->function_for(step)) {
        reset_function(s, step);
        withdraw_report_questions(s, env, "step " + step + " rewritten");
        reenter(s, env, SessionState::Synthesized, "step " + step + " rewritten");
      }
      break;
    }
  }
  return effect;
}

RevivalBundle build_bundle(const RevivalSession& s, const fs::path& session_dir, const fs::path& root,
                           const std::string& emitted_at) {
  if (s.state != SessionState::Emitted && s.state != SessionState::Packaged) {
    throw Error(Errc::IncompleteSession, "the session is " + to_string(s.state) + ", not Emitted", {to_string(s.state)});
  }
  if (!s.open_questions.empty()) {
    throw Error(Errc::IncompleteSession, "the session has open questions", open_ids(s));
  }
  BundleSource src;
  src.original_filename = default_filename(s);
  src.original_bytes = read_file(session_dir / kUploadFile);
  src.original_format = to_string(s.legacy->format);
  src.source_digest = s.legacy->source_digest;
  src.pivot = *s.pivot;
  src.target = *s.target;
  src.sample_input = s.sample_input.value_or("");
  src.substitutions = s.substitutions;
  for (const auto& c : s.closed_questions) {
    if (c.answer && c.effect) src.decisions.push_back({to_string(c.question.kind), answer_summary(c)});
  }
  src.ir = &*s.ir;
  src.emitted_at = emitted_at;
  return write_bundle(src, root);
}

AnswerPolicy no_answers() {
  return [](const CuratorQuestion&) { return std::optional<std::string>(); };
}

AnswerPolicy approve_plausibility() {
  return [](const CuratorQuestion& q) {
    return q.kind == QuestionKind::PlausibilityCheck ? std::optional<std::string>("yes") : std::nullopt;
  };
}

AnswerPolicy deny_plausibility() {
  return [](const CuratorQuestion& q) {
    return q.kind == QuestionKind::PlausibilityCheck ? std::optional<std::string>("no") : std::nullopt;
  };
}

AnswerPolicy answers_from_json(const json& entries, AnswerPolicy fallback) {
  if (!entries.is_array()) throw Error(Errc::SchemaViolation, "answers must be a JSON list", {"answers"});
  for (const auto& e : entries) {
    if (!e.is_object() || !e.contains("answer") || !e["answer"].is_string()) {
      throw Error(Errc::SchemaViolation, "every answer entry needs a text \"answer\"", {"answers"});
    }
  }
  return [entries, fallback](const CuratorQuestion& q) -> std::optional<std::string> {
    for (const auto& e : entries) {
      if (e.contains("id") && e["id"] != q.id) continue;
      if (e.contains("kind") && e["kind"] != to_string(q.kind)) continue;
      if (e.contains("step") && (!q.linked_step || e["step"] != *q.linked_step)) continue;
      return e["answer"].get<std::string>();
    }
    return fallback ? fallback(q) : std::nullopt;
  };
}

void run_to_completion(RevivalSession& s, SessionEnv& env, const AnswerPolicy& policy) {
  // Each pass either moves the state, raises a question, or spends one of the
  // bounded refills; the cap only guards against a policy that never settles.
  for (int pass = 0; pass < 500; ++pass) {
    if (s.state == SessionState::Packaged || s.state == SessionState::Failed) return;
    try {
      advance(s, env);
    } catch (const Error& e) {
      if (e.code() == Errc::TerminalFailure) return;
      if (e.code() != Errc::Blocked) throw;
      bool answered = false;
      for (const auto& q : std::vector<CuratorQuestion>(s.open_questions)) {
        if (!s.open_question(q.id)) continue;
        auto text = policy ? policy(q) : std::nullopt;
        if (!text) continue;
        try {
          apply_answer(s, {q.id, *text}, env);
          answered = true;
        } catch (const Error& ae) {
          if (ae.code() == Errc::TerminalFailure) return;
          if (ae.code() != Errc::AnswerShapeMismatch && ae.code() != Errc::UnknownQuestion) throw;
        }
        if (s.state == SessionState::Failed) return;
      }
      if (!answered) return;
    }
  }
}

std::vector<json> transcript_commands(const std::vector<json>& transcript) {
  std::vector<json> out;
  for (const auto& e : transcript) {
    auto t = e.value("type", "");
    if (t == "advance" || t == "answer" || t == "execute") out.push_back(e);
  }
  return out;
}

ReplayProvider::ReplayProvider(const std::vector<json>& transcript) {
  for (const auto& e : transcript) {
    auto t = e.value("type", "");
    if (t == "created" && e.contains("provider")) {
      name_ = e["provider"].value("name", "replay");
      deterministic_ = e["provider"].value("deterministic", true);
    } else if (t == "synthesis" && e.contains("fills")) {
      for (const auto& f : e["fills"]) {
        if (f.contains("body")) bodies_[{f["step"].get<std::string>(), f["attempt"].get<int>()}] = f["body"];
      }
    }
  }
}

std::string ReplayProvider::fill_body(const BodyRequest& request) {
  auto it = bodies_.find({request.step->id, request.attempt});
  if (it == bodies_.end()) {
    throw Error(Errc::ProviderUnavailable,
                "no recorded body for " + request.step->id + " attempt " + std::to_string(request.attempt),
                {request.step->id});
  }
  return it->second;
}

RevivalSession replay_session(const std::vector<json>& transcript, const std::string& upload,
                              const KnowledgeBase& initial_kb, const fs::path& dir, const FixtureTransport* fixtures,
                              std::function<std::string()> now) {
  if (transcript.empty() || transcript.front().value("type", "") != "created") {
    throw Error(Errc::SchemaViolation, "transcript does not start with a created event", {"transcript"});
  }
  const auto& created = transcript.front();
  if (sha256_hex(upload) != created.at("upload_digest").get<std::string>()) {
    throw Error(Errc::SchemaViolation, "upload does not match the transcript", {"upload"});
  }
  ReplayProvider provider(transcript);
  SessionEnv env{dir, &provider, fixtures, std::move(now)};
  auto s = create_session(created.at("id").get<std::string>(), upload,
                          session_config_from_json(created.at("config")), initial_kb, provider, fixtures, dir,
                          env.now());
  for (const auto& cmd : transcript_commands(transcript)) {
    auto t = cmd.at("type").get<std::string>();
    try {
      if (t == "advance") {
        advance(s, env);
      } else if (t == "answer") {
        apply_answer(s, answer_from_json(cmd.at("answer")), env);
      } else {
        execute_pivot(s, env);
      }
    } catch (const Error&) {
      // The original command failed the same way.
    }
  }
  return s;
}

// ------------------------------------------------------------ JSON

nlohmann::json to_json(const SessionConfig& c) {
  return {{"transport", c.transport == TransportMode::Live ? "live" : "fixture"},
          {"fixtures_path", c.fixtures_path},
          {"provider", c.provider},
          {"time_budget_s", c.time_budget_s},
          {"target_budget_s", c.target_budget_s},
          {"run_target", c.run_target},
          {"sample_input", opt_str(c.sample_input)},
          {"original_filename", c.original_filename}};
}

SessionConfig session_config_from_json(const nlohmann::json& j) {
  try {
    SessionConfig c;
    auto t = j.value("transport", "fixture");
    if (t != "live" && t != "fixture") throw Error(Errc::SchemaViolation, "transport must be live or fixture", {"transport"});
    c.transport = t == "live" ? TransportMode::Live : TransportMode::Fixture;
    c.fixtures_path = j.value("fixtures_path", "");
    c.provider = j.value("provider", "deterministic");
    c.time_budget_s = j.value("time_budget_s", 600);
    c.target_budget_s = j.value("target_budget_s", 600);
    c.run_target = j.value("run_target", true);
    c.sample_input = get_opt_str(j, "sample_input");
    c.original_filename = j.value("original_filename", "");
    if (c.time_budget_s <= 0 || c.target_budget_s <= 0) {
      throw Error(Errc::SchemaViolation, "time budgets must be positive", {"time_budget_s"});
    }
    return c;
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaViolation, std::string("malformed session config: ") + e.what(), {"config"});
  }
}

nlohmann::json to_json(const RevivalSession& s) {
  json closed = json::array();
  for (const auto& c : s.closed_questions) {
    closed.push_back({{"question", to_json(c.question)},
                      {"answer", c.answer ? to_json(*c.answer) : json(nullptr)},
                      {"effect", c.effect ? to_json(*c.effect) : json(nullptr)},
                      {"withdrawn_because", c.withdrawn_because}});
  }
  json open = json::array();
  for (const auto& q : s.open_questions) open.push_back(to_json(q));
  json reports = json::array();
  for (const auto& r : s.reports) {
    reports.push_back({{"number", r.number},
                       {"exit_status", exit_status_json(r.exit_status)},
                       {"script_digest", r.script_digest},
                       {"input_digest", r.input_digest}});
  }
  json collapsed = json::array();
  for (const auto& c : s.collapsed) collapsed.push_back(to_json(c));
  json subs = json::array();
  for (const auto& a : s.substitutions) subs.push_back(to_json(a));
  json target_run = nullptr;
  if (s.target_run) {
    const auto& t = *s.target_run;
    target_run = {{"ok", t.ok},
                  {"failed_rule", t.failed_rule},
                  {"rules", t.rules},
                  {"output_digest", t.output_digest},
                  {"output_preview", t.output_preview},
                  {"agrees_with_pivot", t.agrees_with_pivot},
                  {"sockets_opened", t.sockets_opened},
                  {"wall_ms", t.wall_ms}};
  }
  json failure = nullptr;
  if (s.failure) {
    failure = {{"code", s.failure->code},
               {"message", s.failure->message},
               {"subjects", s.failure->subjects},
               {"at_state", to_string(s.failure->at)}};
  }
  return {{"id", s.id},
          {"state", to_string(s.state)},
          {"config", to_json(s.config)},
          {"upload_digest", s.upload_digest},
          {"provider", {{"name", s.provider_name}, {"deterministic", s.provider_deterministic}}},
          {"legacy", s.legacy ? to_json(*s.legacy) : json(nullptr)},
          {"lowered", s.lowered ? to_json(*s.lowered) : json(nullptr)},
          {"collapsed", collapsed},
          {"ir", s.ir ? to_json(*s.ir) : json(nullptr)},
          {"substitutions", subs},
          {"unmatched", s.unmatched},
          {"overrides", s.overrides},
          {"kb", to_json(s.kb)},
          {"pivot", s.pivot ? to_json(*s.pivot) : json(nullptr)},
          {"pending_refill", s.pending_refill},
          {"attempts", s.attempts},
          {"curator_notes", s.curator_notes},
          {"curator_bodies", s.curator_bodies},
          {"sample_input", opt_str(s.sample_input)},
          {"reports", reports},
          {"approved_reports", s.approved_reports},
          {"open_questions", open},
          {"closed_questions", closed},
          {"question_counter", s.question_counter},
          {"target", s.target ? to_json(*s.target) : json(nullptr)},
          {"target_run", target_run},
          {"manifest", s.manifest ? to_json(*s.manifest) : json(nullptr)},
          {"failure", failure}};
}

RevivalSession session_from_json(const nlohmann::json& j) {
  try {
    RevivalSession s;
    s.id = j.at("id").get<std::string>();
    s.state = session_state_from_string(j.at("state").get<std::string>());
    s.config = session_config_from_json(j.at("config"));
    s.upload_digest = j.at("upload_digest").get<std::string>();
    s.provider_name = j.at("provider").at("name").get<std::string>();
    s.provider_deterministic = j.at("provider").at("deterministic").get<bool>();
    if (!j.at("legacy").is_null()) s.legacy = legacy_from_json(j.at("legacy"));
    if (!j.at("lowered").is_null()) s.lowered = ir_from_json(j.at("lowered"));
    for (const auto& c : j.at("collapsed")) s.collapsed.push_back(collapse_record_from_json(c));
    if (!j.at("ir").is_null()) s.ir = ir_from_json(j.at("ir"));
    for (const auto& a : j.at("substitutions")) s.substitutions.push_back(applied_substitution_from_json(a));
    s.unmatched = j.at("unmatched").get<std::vector<std::string>>();
    s.overrides = j.at("overrides").get<std::map<std::string, std::string>>();
    s.kb = knowledge_base_from_json(j.at("kb"));
    if (!j.at("pivot").is_null()) s.pivot = pivot_from_json(j.at("pivot"));
    s.pending_refill = j.at("pending_refill").get<std::set<std::string>>();
    s.attempts = j.at("attempts").get<std::map<std::string, int>>();
    s.curator_notes = j.at("curator_notes").get<std::map<std::string, std::string>>();
    s.curator_bodies = j.at("curator_bodies").get<std::map<std::string, std::string>>();
    s.sample_input = get_opt_str(j, "sample_input");
    for (const auto& r : j.at("reports")) {
      s.reports.push_back({r.at("number").get<int>(), exit_status_from(r.at("exit_status")),
                           r.at("script_digest").get<std::string>(), r.at("input_digest").get<std::string>()});
    }
    s.approved_reports = j.at("approved_reports").get<std::set<int>>();
    for (const auto& q : j.at("open_questions")) s.open_questions.push_back(question_from_json(q));
    for (const auto& c : j.at("closed_questions")) {
      ClosedQuestion cq;
      cq.question = question_from_json(c.at("question"));
      if (!c.at("answer").is_null()) cq.answer = answer_from_json(c.at("answer"));
      if (!c.at("effect").is_null()) cq.effect = effect_from_json(c.at("effect"));
      cq.withdrawn_because = c.at("withdrawn_because").get<std::string>();
      s.closed_questions.push_back(cq);
    }
    s.question_counter = j.at("question_counter").get<int>();
    if (!j.at("target").is_null()) s.target = target_from_json(j.at("target"));
    if (!j.at("target_run").is_null()) {
      const auto& t = j.at("target_run");
      TargetRunSummary sum;
      sum.ok = t.at("ok").get<bool>();
      sum.failed_rule = t.at("failed_rule").get<std::string>();
      sum.rules = t.at("rules").get<std::vector<std::string>>();
      sum.output_digest = t.at("output_digest").get<std::string>();
      sum.output_preview = t.at("output_preview").get<std::string>();
      sum.agrees_with_pivot = t.at("agrees_with_pivot").get<bool>();
      sum.sockets_opened = t.at("sockets_opened").get<std::size_t>();
      sum.wall_ms = t.at("wall_ms").get<std::int64_t>();
      s.target_run = sum;
    }
    if (!j.at("manifest").is_null()) s.manifest = manifest_from_json(j.at("manifest"));
    if (!j.at("failure").is_null()) {
      const auto& f = j.at("failure");
      s.failure = SessionFailure{f.at("code").get<std::string>(), f.at("message").get<std::string>(),
                                 f.at("subjects").get<std::vector<std::string>>(),
                                 session_state_from_string(f.at("at_state").get<std::string>())};
    }
    return s;
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaViolation, std::string("malformed session snapshot: ") + e.what(), {"snapshot"});
  }
}

nlohmann::json without_timestamps(nlohmann::json j) {
  static const std::set<std::string> volatile_keys = {"at", "emitted_at", "wall_time_ms", "wall_ms", "latency_ms"};
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end();) {
      if (volatile_keys.count(it.key())) {
        it = j.erase(it);
      } else {
        *it = without_timestamps(*it);
        ++it;
      }
    }
  } else if (j.is_array()) {
    for (auto& v : j) v = without_timestamps(v);
  }
  return j;
}

}  // namespace wfr
