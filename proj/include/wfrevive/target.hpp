#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "wfrevive/ir.hpp"
#include "wfrevive/synthesis.hpp"

namespace wfr {

// Input and output entries are either quoted paths (stored unquoted) or
// config references stored as written, e.g. config["output"].
struct RuleSpec {
  std::string name;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string log;
  std::map<std::string, std::string> params;  // param name -> config key
  std::string script;

  bool operator==(const RuleSpec&) const = default;
};

struct TargetWorkflow {
  std::string snakefile;
  std::string config_yaml;
  std::map<std::string, std::string> scripts;  // "scripts/<rule>.py" -> text
  std::vector<std::string> layout;             // relative paths, sorted
  std::vector<RuleSpec> rules;                 // as emitted, `all` first

  bool operator==(const TargetWorkflow&) const = default;
};

inline constexpr std::string_view kGatherRule = "gather_outputs";

// Config reference helpers: config["key"].
bool is_config_ref(const std::string& entry);
std::string config_ref(const std::string& key);
std::string config_ref_key(const std::string& entry);

/// Throws Error(EmissionImpossible) naming the first step whose body or
/// incoming adapter still waits for a curator.
TargetWorkflow emit_snakemake(const PivotScript& script, const WorkflowIR& ir);

// Minimal Snakefile reader: rule names and their directives, nothing else.
// Throws Error(SchemaViolation) on lines it cannot place.
std::vector<RuleSpec> read_snakefile(const std::string& text);

enum class FindingKind { DanglingReference, Cycle, Unreachable, UndefinedConfigKey, MissingScript };

struct StructuralFinding {
  FindingKind kind;
  std::string rule;
  std::string detail;

  bool operator==(const StructuralFinding&) const = default;
};

std::string_view to_string(FindingKind k);

std::vector<StructuralFinding> check_target(const TargetWorkflow& tw);

// Writes Snakefile, config.yaml and scripts/ under `dir`.
void write_target(const TargetWorkflow& tw, const std::filesystem::path& dir);

// Built-in runner for emitted workflows: executes the rules needed by `all`
// in dependency order, each script with a `snakemake` object equivalent to
// the one Snakemake's script directive provides.
struct TargetRunOptions {
  std::map<std::string, std::string> env;
  std::chrono::milliseconds timeout{600000};  // whole run
};

struct TargetRuleRun {
  std::string rule;
  int exit_code = 0;
  bool timed_out = false;
  std::string err;
  std::int64_t wall_ms = 0;
};

struct TargetRunResult {
  bool ok = false;
  std::string failed_rule;
  std::vector<TargetRuleRun> rules;
  std::int64_t wall_ms = 0;
};

TargetRunResult run_target(const std::filesystem::path& workflow_dir, const TargetRunOptions& options = {});

nlohmann::json to_json(const TargetWorkflow& tw);
TargetWorkflow target_from_json(const nlohmann::json& j);
nlohmann::json to_json(const StructuralFinding& f);

}  // namespace wfr
