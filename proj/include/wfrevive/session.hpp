#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "wfrevive/ir.hpp"
#include "wfrevive/legacy.hpp"
#include "wfrevive/packaging.hpp"
#include "wfrevive/services.hpp"
#include "wfrevive/substitute.hpp"
#include "wfrevive/synthesis.hpp"
#include "wfrevive/target.hpp"
#include "wfrevive/validation.hpp"

namespace wfr {

enum class SessionState { Uploaded, Parsed, Lowered, Substituted, Synthesized, Validated, Emitted, Packaged, Failed };

std::string to_string(SessionState s);
SessionState session_state_from_string(const std::string& s);

// Provider fills allowed per step before the curator is asked to take over.
inline constexpr int kMaxSynthesisAttempts = 3;

struct SessionConfig {
  TransportMode transport = TransportMode::Fixture;
  std::string fixtures_path;               // file or directory, copied into the session on creation
  std::string provider = "deterministic";  // registry name, optionally "name:argument"
  int time_budget_s = 600;                 // one pivot execution
  int target_budget_s = 600;               // one run of the emitted workflow
  bool run_target = true;                  // execute the emitted workflow before packaging
  std::optional<std::string> sample_input;  // replaces the declared example values
  std::string original_filename;

  bool operator==(const SessionConfig&) const = default;
};

nlohmann::json to_json(const SessionConfig& c);
SessionConfig session_config_from_json(const nlohmann::json& j);

struct ClosedQuestion {
  CuratorQuestion question;
  std::optional<CuratorAnswer> answer;  // unset when the question was withdrawn
  std::optional<SessionEffect> effect;
  std::string withdrawn_because;

  bool operator==(const ClosedQuestion&) const = default;
};

struct ReportRecord {
  int number = 0;
  ExitStatus exit_status;
  std::string script_digest;
  std::string input_digest;

  bool operator==(const ReportRecord&) const = default;
};

struct TargetRunSummary {
  bool ok = false;
  std::string failed_rule;
  std::vector<std::string> rules;  // in execution order
  std::string output_digest;
  std::string output_preview;
  bool agrees_with_pivot = false;  // same JSON value as the validated pivot run
  std::size_t sockets_opened = 0;
  std::int64_t wall_ms = 0;

  bool operator==(const TargetRunSummary&) const = default;
};

struct SessionFailure {
  std::string code;  // an Errc name, or RevivalRejected / TargetRunFailed
  std::string message;
  std::vector<std::string> subjects;
  SessionState at = SessionState::Uploaded;

  bool operator==(const SessionFailure&) const = default;
};

struct RevivalSession {
  std::string id;
  SessionState state = SessionState::Uploaded;
  SessionConfig config;
  std::string upload_digest;
  std::string provider_name;
  bool provider_deterministic = true;

  std::optional<LegacyWorkflow> legacy;
  std::optional<WorkflowIR> lowered;  // shims collapsed, endpoints as published
  std::vector<CollapseRecord> collapsed;
  std::optional<WorkflowIR> ir;  // endpoints substituted
  std::vector<AppliedSubstitution> substitutions;
  std::vector<std::string> unmatched;
  std::map<std::string, std::string> overrides;  // step -> rule id chosen through an answer
  KnowledgeBase kb;

  std::optional<PivotScript> pivot;
  std::set<std::string> pending_refill;
  std::map<std::string, int> attempts;  // step -> provider fills so far
  std::map<std::string, std::string> curator_notes;
  std::map<std::string, std::string> curator_bodies;
  std::optional<std::string> sample_input;

  std::vector<ReportRecord> reports;
  std::set<int> approved_reports;
  std::vector<CuratorQuestion> open_questions;
  std::vector<ClosedQuestion> closed_questions;
  int question_counter = 0;

  std::optional<TargetWorkflow> target;
  std::optional<TargetRunSummary> target_run;
  std::optional<ProvenanceManifest> manifest;
  std::optional<SessionFailure> failure;

  std::vector<nlohmann::json> transcript;

  const CuratorQuestion* open_question(const std::string& id) const;
};

nlohmann::json to_json(const RevivalSession& s);  // snapshot, transcript excluded
RevivalSession session_from_json(const nlohmann::json& j);

// Snapshot with wall-clock fields removed, for replay comparisons.
nlohmann::json without_timestamps(nlohmann::json j);

// Side-effect context of one operation: the session directory, the provider
// and the recorded HTTP responses for fixture runs.
struct SessionEnv {
  std::filesystem::path dir;
  SynthesisProvider* provider = nullptr;
  const FixtureTransport* fixtures = nullptr;
  std::function<std::string()> now = utc_now_iso;
};

// Files kept per session directory.
inline constexpr std::string_view kUploadFile = "upload.bin";
inline constexpr std::string_view kInitialKbFile = "kb.json";
inline constexpr std::string_view kFixturesFile = "fixtures.json";
inline constexpr std::string_view kTranscriptFile = "transcript.jsonl";
inline constexpr std::string_view kSnapshotFile = "snapshot.json";

/// Stores the upload, the starting knowledge base and (fixture mode) the
/// fixture map under `dir`. Empty uploads are accepted; parsing fails
/// later.
RevivalSession create_session(const std::string& id, const std::string& upload, SessionConfig config,
                              const KnowledgeBase& kb, const SynthesisProvider& provider,
                              const FixtureTransport* fixtures, const std::filesystem::path& dir,
                              const std::string& now);

/// One stage transition. Throws Error(Blocked) with the open question ids as
/// subjects when the session waits for answers (questions raised by this call
/// included) and Error(TerminalFailure) when the session is or becomes Failed.
/// On Packaged it only records a note.
void advance(RevivalSession& s, SessionEnv& env);

/// Runs the current pivot script and diagnoses the report.
/// Throws Error(InvalidArgument) when no runnable script exists yet.
ExecutionReport execute_pivot(RevivalSession& s, SessionEnv& env);

/// Throws Error(UnknownQuestion), Error(AnswerShapeMismatch), or
/// Error(TerminalFailure) for a Failed session.
SessionEffect apply_answer(RevivalSession& s, const CuratorAnswer& answer, SessionEnv& env);

/// Throws Error(IncompleteSession) unless the session is Emitted or Packaged
/// with no open questions.
RevivalBundle build_bundle(const RevivalSession& s, const std::filesystem::path& session_dir,
                           const std::filesystem::path& root, const std::string& emitted_at);

// Supplies answers for run_to_completion; nullopt leaves a question open.
using AnswerPolicy = std::function<std::optional<std::string>(const CuratorQuestion&)>;

AnswerPolicy no_answers();
// "yes" to plausibility questions, nothing else.
AnswerPolicy approve_plausibility();
// "no" to plausibility questions, nothing else.
AnswerPolicy deny_plausibility();
// Answers from a JSON list of {"id"|"kind"|"step", "answer"}; the first entry
// whose given fields all match wins, otherwise `fallback` decides.
AnswerPolicy answers_from_json(const nlohmann::json& entries, AnswerPolicy fallback);

/// Advances until Packaged, Failed, or a question the policy leaves open.
/// Never throws Blocked or TerminalFailure: the returned state tells.
void run_to_completion(RevivalSession& s, SessionEnv& env, const AnswerPolicy& policy);

// Command events (advance, answer, execute) in transcript order.
std::vector<nlohmann::json> transcript_commands(const std::vector<nlohmann::json>& transcript);

// Serves the provider bodies recorded in a transcript, keyed by step and
// attempt, so a replay does not depend on the original provider.
class ReplayProvider : public SynthesisProvider {
 public:
  explicit ReplayProvider(const std::vector<nlohmann::json>& transcript);
  std::string name() const override { return name_; }
  std::set<Capability> capabilities() const override { return {Capability::BodyFill}; }
  bool deterministic() const override { return deterministic_; }
  std::string fill_body(const BodyRequest& request) override;
  std::string summarize(const Step& step) override { return default_summary(step); }

 private:
  std::string name_ = "replay";
  bool deterministic_ = true;
  std::map<std::pair<std::string, int>, std::string> bodies_;
};

/// Re-creates the session described by `transcript` in `dir` and re-applies
/// its commands with a ReplayProvider.
RevivalSession replay_session(const std::vector<nlohmann::json>& transcript, const std::string& upload,
                              const KnowledgeBase& initial_kb, const std::filesystem::path& dir,
                              const FixtureTransport* fixtures, std::function<std::string()> now = utc_now_iso);

// Sample input derived from the declared example values: the single value,
// or a JSON object when there are several inputs. Nullopt when any is missing.
std::optional<std::string> declared_sample_input(const WorkflowIR& ir);

}  // namespace wfr
