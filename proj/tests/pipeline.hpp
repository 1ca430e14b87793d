#pragma once

#include <string>

#include "support.hpp"
#include "wfrevive/ir.hpp"
#include "wfrevive/legacy.hpp"
#include "wfrevive/substitute.hpp"
#include "wfrevive/synthesis.hpp"

namespace wfr::test {

struct Prepared {
  LegacyWorkflow legacy;
  SubstitutionOutcome sub;
  SynthesisContext ctx;
};

// parse -> lower -> shims -> substitution with the given knowledge base.
inline Prepared prepare(const std::string& bytes, const KnowledgeBase& kb = builtin_knowledge_base()) {
  Prepared p;
  p.legacy = parse_legacy(bytes);
  auto ir = collapse_shims(detect_shims(lower(p.legacy))).ir;
  p.sub = substitute(ir, kb);
  p.ctx.original_format = to_string(p.legacy.format);
  for (const auto& a : p.sub.applied) p.ctx.response_adapters[a.step_id] = a.adapter;
  return p;
}

// Builtin rules plus a newer learned rule that points the KEGG conversion at
// the plausible but wrong /convert_gene route.
inline KnowledgeBase kb_with_wrong_conversion() {
  SubstitutionRule wrong;
  wrong.id = "learned-kegg-convert-gene";
  wrong.match = RuleMatch{Protocol::Soap, "*.genome.jp", "*conv*"};
  wrong.replacement = rest_endpoint_from_template("https://rest.kegg.jp/convert_gene/genes/{source_id}");
  wrong.response_adapter = ResponseAdapter::TabSeparatedPairs;
  wrong.provenance = RuleProvenance::Learned;
  return add_rule(builtin_knowledge_base(), wrong);
}

inline std::string kegg_fixtures() { return data_path("fixtures/http/kegg.json").string(); }

inline Prepared prepare_kegg() { return prepare(workflow_fixture("entrez_gene_to_kegg_pathway_v5.t2flow")); }

}  // namespace wfr::test
