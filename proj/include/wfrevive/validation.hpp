#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wfrevive/ir.hpp"
#include "wfrevive/services.hpp"
#include "wfrevive/synthesis.hpp"

namespace wfr {

struct ExitStatus {
  enum class Kind { Ok, RuntimeError, Timeout };
  Kind kind = Kind::Ok;
  std::optional<std::string> step_id;  // RuntimeError only
  std::string message;                 // RuntimeError only

  bool operator==(const ExitStatus&) const = default;
};

struct ExecutionReport {
  int number = 0;  // position within its session, 0 outside one
  ExitStatus exit_status;
  int exit_code = 0;
  std::string stdout_text;
  std::string stderr_text;
  std::map<std::string, std::string> outputs;  // path under the workdir -> sha256
  std::int64_t wall_time_ms = 0;
  TransportMode transport_mode = TransportMode::Fixture;
  std::size_t sockets_opened = 0;  // connection attempts by the script
  std::string script_digest;
  bool input_present = false;
  std::string input_preview;   // first 4 KiB of the input file
  std::string output_preview;  // first 64 KiB of the output file

  bool operator==(const ExecutionReport&) const = default;
};

struct SandboxConfig {
  std::filesystem::path workdir;  // must not exist yet, or be empty
  int time_budget_s = 600;
  TransportMode transport = TransportMode::Fixture;
  std::filesystem::path fixtures_path;  // file or directory of fixture maps
  std::vector<std::string> env_allowlist = {"PATH", "HOME", "LANG", "LC_ALL", "TZ", "SSL_CERT_FILE", "SSL_CERT_DIR"};
  std::optional<std::string> input_text;  // becomes input/input.txt

  bool operator==(const SandboxConfig&) const = default;
};

SandboxConfig sandbox_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SandboxConfig& c);

/// Runs the rendered script in `sandbox.workdir`. In fixture mode the script
/// answers HTTP requests from `fixtures` and cannot open sockets.
/// Throws Error(SandboxSetupFailed); every run outcome is a report value.
ExecutionReport execute(const PivotScript& script, const SandboxConfig& sandbox, const FixtureTransport* fixtures);

// Loads fixtures from sandbox.fixtures_path when the transport is Fixture.
ExecutionReport execute(const PivotScript& script, const SandboxConfig& sandbox);

// Writes the fixture map and a socket guard under `meta` and returns the
// environment that makes a Python process use them.
std::map<std::string, std::string> install_fixture_guard(const std::filesystem::path& meta,
                                                         const nlohmann::json& entries);

// Connection attempts recorded by the guard installed under `meta`.
std::size_t sockets_logged(const std::filesystem::path& meta);

enum class QuestionKind { EndpointBroken, DataFormatUnknown, PlausibilityCheck, MissingInput, OpaqueStep };

struct CuratorQuestion {
  std::string id;
  QuestionKind kind = QuestionKind::PlausibilityCheck;
  std::string text;
  std::vector<std::string> options;
  std::optional<std::string> linked_step;
  std::string detail;  // raw evidence for the expandable view
  bool degenerate = false;

  bool operator==(const CuratorQuestion&) const = default;
};

struct CuratorAnswer {
  std::string question_id;
  std::string payload;  // free text, an option, or uploaded file contents

  bool operator==(const CuratorAnswer&) const = default;
};

// Pure: identical (report, ir) give identical questions. Question ids are
// "r<report number>-q<index>".
std::vector<CuratorQuestion> diagnose(const ExecutionReport& report, const WorkflowIR& ir);

// Question raised when no rule at all exists for a step's endpoint.
CuratorQuestion unmatched_endpoint_question(const std::string& id, const Step& step);

// Question raised when the workflow has no sample input.
CuratorQuestion missing_input_question(const std::string& id, const WorkflowIR& ir);

// Question raised when re-synthesis of a step keeps failing.
CuratorQuestion exhausted_step_question(const std::string& id, const Step& step, int attempts);

struct SessionEffect {
  enum class Kind { RuleAdded, InputRegistered, StepApproved, RevivalRejected, ResynthesisScheduled };
  Kind kind = Kind::StepApproved;
  std::string question_id;
  std::optional<std::string> step_id;
  std::optional<SubstitutionRule> rule;  // RuleAdded
  std::string input_text;                // InputRegistered
  std::string note;                      // ResynthesisScheduled: curator description
  std::optional<std::string> body;       // ResynthesisScheduled: curator-written function body

  bool operator==(const SessionEffect&) const = default;
};

// What an answer needs besides the question.
struct AnswerContext {
  const WorkflowIR* original_ir = nullptr;  // before substitution
  const WorkflowIR* current_ir = nullptr;   // after substitution
  const KnowledgeBase* kb = nullptr;
  std::map<std::string, ResponseAdapter> response_adapters;  // step -> adapter in use
};

/// Throws Error(AnswerShapeMismatch) when the payload does not fit the kind.
SessionEffect interpret_answer(const CuratorQuestion& q, const CuratorAnswer& a, const AnswerContext& ctx);

// Replaces the leading literal path segments of `failed_template` with the
// segments of `answer_url`. A URL that has placeholders is used as given.
std::string complete_url_template(const std::string& answer_url, const std::string& failed_template);

// First http(s) URL in free text, trailing punctuation removed.
std::optional<std::string> find_url(const std::string& text);

// URLs the run fetched successfully, from its "[wfr] http-ok" lines.
std::vector<std::pair<std::string, std::string>> successful_requests(const ExecutionReport& report);  // (step, url)

std::string to_string(ExitStatus::Kind k);
std::string to_string(QuestionKind k);
QuestionKind question_kind_from_string(const std::string& s);
std::string to_string(SessionEffect::Kind k);

nlohmann::json to_json(const ExecutionReport& r);
ExecutionReport report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CuratorQuestion& q);
CuratorQuestion question_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CuratorAnswer& a);
CuratorAnswer answer_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SessionEffect& e);
SessionEffect effect_from_json(const nlohmann::json& j);

}  // namespace wfr
