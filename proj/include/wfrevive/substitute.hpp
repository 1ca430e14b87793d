#pragma once

#include <map>
#include <string>
#include <vector>

#include "wfrevive/ir.hpp"
#include "wfrevive/services.hpp"

namespace wfr {

struct AppliedSubstitution {
  std::string step_id;
  ServiceEndpoint from;
  ServiceEndpoint to;
  std::string rule_id;
  RuleProvenance provenance = RuleProvenance::Builtin;  // as of the decision
  ResponseAdapter adapter = ResponseAdapter::None;

  bool operator==(const AppliedSubstitution&) const = default;
};

struct SubstitutionOutcome {
  WorkflowIR ir;  // ServiceCall endpoints replaced, summaries refreshed
  std::vector<AppliedSubstitution> applied;
  std::vector<std::string> unmatched;  // ServiceCall steps without any candidate
};

/// Rewrites every ServiceCall endpoint with the best rule from `kb`, or with
/// the rule named in `overrides[step_id]` when present.
SubstitutionOutcome substitute(const WorkflowIR& ir, const KnowledgeBase& kb,
                               const std::map<std::string, std::string>& overrides = {});

nlohmann::json to_json(const AppliedSubstitution& a);
AppliedSubstitution applied_substitution_from_json(const nlohmann::json& j);

}  // namespace wfr
