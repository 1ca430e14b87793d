#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "wfrevive/endpoint.hpp"
#include "wfrevive/legacy.hpp"

namespace wfr {

enum class StepKind { Source, Sink, ServiceCall, LocalCompute, Shim, Opaque };

inline constexpr std::string_view kSourceStepId = "source";
inline constexpr std::string_view kSinkStepId = "sink";

struct Step {
  std::string id;  // snake_case, unique
  StepKind kind = StepKind::LocalCompute;
  std::string summary;
  std::optional<ServiceEndpoint> endpoint;
  std::optional<std::string> script_text;
  std::vector<std::string> in_ports;
  std::vector<std::string> out_ports;

  bool is_functional() const { return kind != StepKind::Source && kind != StepKind::Sink; }

  bool operator==(const Step&) const = default;
};

struct Edge {
  std::string from_step;
  std::string from_port;
  std::string to_step;
  std::string to_port;
  // Set when one or more shim steps were folded into this edge. The text is a
  // sequence of stages, each introduced by a "# stage <step>: <in> -> <out>"
  // header line followed by the shim's original script.
  std::optional<std::string> adapter_script;

  bool operator==(const Edge&) const = default;
};

struct WorkflowInput {
  std::string name;
  std::optional<std::string> sample_value;

  bool operator==(const WorkflowInput&) const = default;
};

struct WorkflowIR {
  std::string title;
  std::vector<Step> steps;
  std::vector<Edge> edges;
  std::vector<WorkflowInput> inputs;
  std::vector<std::string> outputs;
  std::string origin_digest;

  const Step* find(std::string_view id) const;
  Step* find(std::string_view id);

  std::vector<const Edge*> edges_into(std::string_view step) const;
  std::vector<const Edge*> edges_out_of(std::string_view step) const;

  bool operator==(const WorkflowIR&) const = default;
};

// Keeps a folded shim so the UI can show what an adapter edge stands for.
struct CollapseRecord {
  Step shim;
  std::string upstream_step;
  std::string upstream_port;
  std::string downstream_step;
  std::string downstream_port;
  std::size_t position = 0;  // index of the shim within its chain

  bool operator==(const CollapseRecord&) const = default;
};

struct AdapterStage {
  std::string step_id;
  std::string in_port;
  std::string out_port;
  std::string script;

  bool operator==(const AdapterStage&) const = default;
};

std::string to_string(StepKind k);
StepKind step_kind_from_string(const std::string& s);

// Lowercase snake_case form of an arbitrary processor name.
std::string snake_case(std::string_view name);

// Kind-and-endpoint based one-sentence description of a step.
std::string default_summary(const Step& step);

/// Throws Error(CyclicWorkflow) with the cycle's step ids as subjects.
WorkflowIR lower(const LegacyWorkflow& wf);

// True when `script` consists only of string split/join/concat/prefix
// operations and mentions no network vocabulary.
bool looks_like_shim_script(std::string_view script);

WorkflowIR detect_shims(WorkflowIR ir);

struct CollapseResult {
  WorkflowIR ir;
  std::vector<CollapseRecord> records;
};

CollapseResult collapse_shims(const WorkflowIR& ir);

std::string format_adapter_stages(const std::vector<AdapterStage>& stages);
std::vector<AdapterStage> parse_adapter_stages(std::string_view adapter_script);

/// Deterministic topological order, ties broken by lexicographic step id.
/// Throws Error(CyclicWorkflow).
std::vector<std::string> topo_order(const WorkflowIR& ir);

// Checks the structural invariants; throws SchemaViolation or CyclicWorkflow.
void validate_ir(const WorkflowIR& ir);

nlohmann::json to_json(const WorkflowIR& ir);
std::string ir_to_json(const WorkflowIR& ir);

/// Throws Error(SchemaViolation) whose first subject is the JSON path of the
/// offending field (e.g. "$.steps").
WorkflowIR ir_from_json(std::string_view text);
inline WorkflowIR ir_from_json(const std::string& text) { return ir_from_json(std::string_view(text)); }
inline WorkflowIR ir_from_json(const char* text) { return ir_from_json(std::string_view(text)); }
WorkflowIR ir_from_json(const nlohmann::json& j);

nlohmann::json to_json(const CollapseRecord& r);
CollapseRecord collapse_record_from_json(const nlohmann::json& j);

}  // namespace wfr
