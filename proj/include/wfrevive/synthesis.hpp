#pragma once

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "wfrevive/ir.hpp"
#include "wfrevive/services.hpp"

namespace wfr {

struct PivotFunction {
  std::string step_id;
  int number = 0;    // 1-based position in topological order
  std::string name;  // step_<number>_<step_id>
  std::vector<std::string> in_ports;
  std::vector<std::string> params;  // Python names of in_ports, same order
  std::vector<std::string> out_ports;
  std::string doc;
  std::string body;  // statements, no base indentation
  bool populated = false;
  std::string origin;  // provider name, "fallback", or "" while unpopulated

  std::string signature() const;

  bool operator==(const PivotFunction&) const = default;
};

// A folded shim chain, applied to values travelling along one edge.
struct PivotAdapter {
  std::string name;  // adapter_<n>
  std::string from_step, from_port, to_step, to_port;
  std::string doc;
  std::string body;

  bool operator==(const PivotAdapter&) const = default;
};

struct PivotScript {
  std::string title;
  std::string original_format;
  std::string domain;
  std::string input_path = "input/input.txt";
  std::string output_path = "results/output.json";
  std::vector<std::pair<std::string, std::string>> apis;  // key -> base URL, insertion ordered
  std::map<std::string, std::string> api_of_step;         // step id -> apis key
  std::vector<std::string> workflow_inputs;
  std::vector<std::string> workflow_outputs;
  std::vector<PivotFunction> functions;
  std::vector<PivotAdapter> adapters;
  std::string main_body;  // body of main(), no base indentation

  const PivotFunction* function_for(const std::string& step_id) const;
  PivotFunction* function_for(const std::string& step_id);
  const PivotAdapter* adapter_for(const Edge& e) const;
  std::string api_url(const std::string& key) const;

  bool operator==(const PivotScript&) const = default;
};

// Marker put in bodies that stop for a curator decision.
inline constexpr std::string_view kCheckpointMarker = "needs-curator";

bool needs_curator(const PivotFunction& f);
bool needs_curator(const PivotAdapter& a);

// Per-run knowledge the skeleton and bodies depend on besides the IR.
struct SynthesisContext {
  std::string original_format = "Taverna";
  std::map<std::string, ResponseAdapter> response_adapters;  // ServiceCall step -> adapter
  std::map<std::string, std::string> curator_notes;          // step -> free-text description
  std::map<std::string, std::string> curator_bodies;         // step -> body written by the curator
  std::map<std::string, std::vector<SubstitutionRule>> rules;  // step -> rules shown in its prompt
};

/// Throws Error(UnsubstitutedEndpoint) naming the first ServiceCall step that
/// still points at a SOAP endpoint.
PivotScript build_skeleton(const WorkflowIR& ir, const SynthesisContext& ctx = {});

std::string render(const PivotScript& script);

// Pieces of the rendered script, shared with the target emitter.
std::string render_imports();
std::string render_runtime();
std::string render_function(const PivotFunction& f);
std::string render_adapter(const PivotAdapter& a);
std::string indent(const std::string& text, int levels);

// ---------------------------------------------------------------- prompts

struct PromptRequest {
  std::string role_preamble;
  std::string ir_excerpt;
  std::vector<std::string> rules;
  std::string expected_shape;

  std::string text() const;

  bool operator==(const PromptRequest&) const = default;
};

extern const char* const kRolePreamble;

PromptRequest render_prompt(const WorkflowIR& ir, const Step& step, const std::vector<SubstitutionRule>& rules,
                            const SynthesisContext& ctx = {});

// ---------------------------------------------------------------- providers

enum class Capability { BodyFill, SubstitutionSuggest, Summarize };

struct BodyRequest {
  PromptRequest prompt;
  const WorkflowIR* ir = nullptr;
  const Step* step = nullptr;
  const PivotFunction* function = nullptr;
  const PivotScript* skeleton = nullptr;
  const SynthesisContext* context = nullptr;
  int attempt = 1;
};

class SynthesisProvider {
 public:
  virtual ~SynthesisProvider() = default;
  virtual std::string name() const = 0;
  virtual std::set<Capability> capabilities() const = 0;
  // True when the same request always yields the same body, so re-asking
  // after a failed run cannot help.
  virtual bool deterministic() const = 0;
  // Returns the function body (statements without base indentation).
  // Throws Error(ProviderUnavailable) on transport failure.
  virtual std::string fill_body(const BodyRequest& request) = 0;
  virtual std::string summarize(const Step& step) = 0;
};

class DeterministicProvider : public SynthesisProvider {
 public:
  std::string name() const override { return "deterministic"; }
  std::set<Capability> capabilities() const override { return {Capability::BodyFill, Capability::Summarize}; }
  bool deterministic() const override { return true; }
  std::string fill_body(const BodyRequest& request) override;
  std::string summarize(const Step& step) override;
};

// Speaks the JSON protocol {prompt, max_tokens} -> {text} to one HTTP(S)
// endpoint. Transport failures are retried twice.
class RemoteProvider : public SynthesisProvider {
 public:
  explicit RemoteProvider(std::string endpoint_url, int max_tokens = 2048,
                          std::chrono::milliseconds timeout = std::chrono::milliseconds(60000));
  std::string name() const override { return "remote"; }
  std::set<Capability> capabilities() const override {
    return {Capability::BodyFill, Capability::SubstitutionSuggest, Capability::Summarize};
  }
  bool deterministic() const override { return false; }
  std::string fill_body(const BodyRequest& request) override;
  std::string summarize(const Step& step) override;

  std::size_t requests_sent() const { return requests_; }

 private:
  std::string complete(const std::string& prompt);

  std::string url_;
  int max_tokens_;
  std::chrono::milliseconds timeout_;
  std::atomic<std::size_t> requests_{0};
};

// Outcome of checking one provider body before it is accepted.
std::optional<std::string> body_rejection(const PivotFunction& f, const std::string& body);

struct PopulateOptions {
  // Steps to (re)fill; empty means every unpopulated function.
  std::set<std::string> only_steps;
  std::map<std::string, int> attempts;  // step -> attempt number passed to the provider
};

/// Fills function bodies. Provider bodies that fail the checks are replaced by
/// a checkpoint body naming the rejection (BodyRejected surfaces that way).
/// Throws Error(ProviderUnavailable) when the provider cannot be reached.
PivotScript populate_bodies(PivotScript skeleton, const WorkflowIR& ir, SynthesisProvider& provider,
                            const SynthesisContext& ctx = {}, const PopulateOptions& options = {});

std::string summarize_step(const Step& step, SynthesisProvider& provider);

// Body helpers usable by any provider.
std::string checkpoint_body(const PivotFunction& f, const std::string& reason);
std::string deterministic_body(const WorkflowIR& ir, const Step& step, const PivotFunction& f,
                               const PivotScript& skeleton, const SynthesisContext& ctx);

// Coarse subject area from title, step ids and service hosts.
std::string domain_tag(const WorkflowIR& ir);

nlohmann::json to_json(const PivotScript& s);
PivotScript pivot_from_json(const nlohmann::json& j);

}  // namespace wfr
