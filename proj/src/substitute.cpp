#include "wfrevive/substitute.hpp"

#include "wfrevive/errors.hpp"

namespace wfr {

SubstitutionOutcome substitute(const WorkflowIR& ir, const KnowledgeBase& kb,
                               const std::map<std::string, std::string>& overrides) {
  SubstitutionOutcome out;
  out.ir = ir;
  for (auto& step : out.ir.steps) {
    if (step.kind != StepKind::ServiceCall || !step.endpoint) continue;
    const SubstitutionRule* chosen = nullptr;
    std::vector<SubstitutionRule> candidates;
    if (auto it = overrides.find(step.id); it != overrides.end()) {
      chosen = kb.find(it->second);
      if (!chosen) throw Error(Errc::NotFound, "unknown substitution rule " + it->second, {it->second});
    } else {
      candidates = lookup(*step.endpoint, kb);
      if (!candidates.empty()) chosen = &candidates.front();
    }
    if (!chosen) {
      out.unmatched.push_back(step.id);
      continue;
    }
    AppliedSubstitution a;
    a.step_id = step.id;
    a.from = *step.endpoint;
    a.to = chosen->apply(*step.endpoint);
    a.rule_id = chosen->id;
    a.provenance = chosen->provenance;
    a.adapter = chosen->response_adapter;
    step.endpoint = a.to;
    step.summary = default_summary(step);
    out.applied.push_back(std::move(a));
  }
  return out;
}

nlohmann::json to_json(const AppliedSubstitution& a) {
  return {{"step_id", a.step_id},     {"from", a.from},
          {"to", a.to},               {"rule_id", a.rule_id},
          {"provenance", to_string(a.provenance)}, {"adapter", to_string(a.adapter)}};
}

AppliedSubstitution applied_substitution_from_json(const nlohmann::json& j) {
  AppliedSubstitution a;
  a.step_id = j.at("step_id").get<std::string>();
  a.from = j.at("from").get<ServiceEndpoint>();
  a.to = j.at("to").get<ServiceEndpoint>();
  a.rule_id = j.at("rule_id").get<std::string>();
  a.provenance = rule_provenance_from_string(j.at("provenance").get<std::string>());
  a.adapter = response_adapter_from_string(j.at("adapter").get<std::string>());
  return a;
}

}  // namespace wfr
