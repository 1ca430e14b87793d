#pragma once

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "wfrevive/endpoint.hpp"

namespace wfr {

enum class LegacyFormat { T2Flow, Scufl, Unknown };

enum class ActivityKind { SoapCall, RestCall, LocalScript, StringConstant, Opaque };

struct Port {
  std::string name;
  int depth = 0;  // Taverna list depth; recorded only

  bool operator==(const Port&) const = default;
};

struct Processor {
  std::string name;
  ActivityKind activity_kind = ActivityKind::Opaque;
  std::optional<ServiceEndpoint> endpoint;  // SoapCall / RestCall
  std::optional<std::string> script_text;   // LocalScript; constant value for StringConstant
  std::vector<Port> input_ports;
  std::vector<Port> output_ports;

  bool operator==(const Processor&) const = default;
};

struct EndpointRef {
  enum class Kind { WorkflowInput, WorkflowOutput, ProcessorPort };
  Kind kind = Kind::ProcessorPort;
  std::string processor;  // empty unless ProcessorPort
  std::string port;

  static EndpointRef input(std::string name) { return {Kind::WorkflowInput, "", std::move(name)}; }
  static EndpointRef output(std::string name) { return {Kind::WorkflowOutput, "", std::move(name)}; }
  static EndpointRef at(std::string processor, std::string port) {
    return {Kind::ProcessorPort, std::move(processor), std::move(port)};
  }

  bool operator==(const EndpointRef&) const = default;
};

struct DataLink {
  EndpointRef source;  // never a WorkflowOutput
  EndpointRef sink;    // never a WorkflowInput

  bool operator==(const DataLink&) const = default;
};

// Faithful in-memory model of a t2flow or SCUFL document.
//
// raw_annotations keys used by the parser:
//   "input.<port>.example"      example value declared on a workflow input
//   "input.<port>.description"  free-text description of a workflow input
//   "opaque.<processor>"        raw XML of an unrecognized activity
//   "processor.<name>.iteration" raw iteration-strategy XML (not interpreted)
//   "dataflow.annotations"      raw XML of the top-level annotation block
struct LegacyWorkflow {
  LegacyFormat format = LegacyFormat::Unknown;
  std::string title;
  std::string source_digest;  // lowercase hex SHA-256 of the raw bytes
  std::vector<Processor> processors;
  std::vector<DataLink> datalinks;
  std::vector<std::string> workflow_inputs;
  std::vector<std::string> workflow_outputs;
  std::map<std::string, std::string> raw_annotations;

  const Processor* find_processor(std::string_view name) const;

  bool operator==(const LegacyWorkflow&) const = default;
};

struct LintFinding {
  enum class Severity { Info, Warning, Error };
  Severity severity = Severity::Warning;
  std::string message;
  std::string location;

  bool operator==(const LintFinding&) const = default;
};

LegacyFormat detect_format(std::string_view bytes);

/// Throws Error with MalformedXml, UnsupportedFormat or DanglingLink.
LegacyWorkflow parse_legacy(std::string_view bytes);

std::vector<LintFinding> lint_legacy(const LegacyWorkflow& wf);

std::string to_string(LegacyFormat f);
std::string to_string(ActivityKind k);
LegacyFormat legacy_format_from_string(const std::string& s);
ActivityKind activity_kind_from_string(const std::string& s);

nlohmann::json to_json(const LegacyWorkflow& wf);
LegacyWorkflow legacy_from_json(const nlohmann::json& j);

// Canonical JSON text: sorted keys, two-space indentation.
std::string legacy_to_canonical_json(const LegacyWorkflow& wf);

}  // namespace wfr
