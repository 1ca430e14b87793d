#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "support.hpp"
#include "wfrevive/packaging.hpp"
#include "wfrevive/session.hpp"

namespace wfr::test {

struct CorpusEntry {
  std::string file;   // under fixtures/workflows
  std::string title;  // the workflow's descriptive title
};

// Synthetic revivals of well-known Taverna workflows, one per title.
inline const std::vector<CorpusEntry>& corpus() {
  static const std::vector<CorpusEntry> entries = {
      {"fetch_use_from_mets_v1.t2flow", "Fetch USE from mets"},
      {"entrez_gene_to_kegg_pathway_v5.t2flow", "Entrez Gene to KEGG Pathway"},
      {"generate_combiugi_library_v1.t2flow", "Generate CombiUgi library-v1"},
      {"download_cas_numbers_and_save_as_sd_file_v1.t2flow", "Download CAS numbers and save as SD file-v1"},
      {"fetch_pdb_flatfile_from_rcsb_server_v1.t2flow", "Fetch PDB flatfile from RCSB server-v1"},
      {"example_of_interoperability_validation_on_real_time_with_pdl_services_v2.t2flow",
       "Example of interoperability validation on real time with PDL services-v2"},
      {"use_of_rest_services_described_with_pdl_v1.t2flow", "Use of rest services described with PDL-v1"},
      {"analysing_workflows_v3.t2flow", "Analysing workflows-v3"},
      {"dna_sequence_analysis_pilot_blat_v2.t2flow", "DNA sequence analysis pilot -- Blat -v2"},
      {"xpath_from_votable_v1.t2flow", "XPath From VOTable-v1"},
      {"bioaid_diseasediscovery_rathumanmouseuniprotfilter.t2flow",
       "BioAID DiseaseDiscovery RatHumanMouseUniprotFilter"},
      {"bioaid_proteindiscovery_filteronhumanuniprot_perdoc_html.t2flow",
       "BioAID ProteinDiscovery filterOnHumanUniprot perDoc html"},
      {"biomartandembossanalysis_v4.t2flow", "BiomartAndEMBOSSAnalysis-v4"},
      {"ebi_interproscan_v3.t2flow", "EBI InterProScan-v3"},
      {"nucleotide_interproscan_v4.t2flow", "Nucleotide InterProScan-v4"},
      {"workflow_for_protein_sequence_analysis.t2flow", "Workflow for Protein Sequence Analysis"},
  };
  return entries;
}

// Every recorded response the corpus relies on, merged.
inline const FixtureTransport& corpus_fixtures() {
  static const FixtureTransport fixtures = FixtureTransport::load(data_path("fixtures/http"));
  return fixtures;
}

// One session over a corpus workflow, living in its own temp directory.
struct CorpusRun {
  TempDir root{"wfr-corpus"};
  DeterministicProvider deterministic;
  SynthesisProvider* provider = &deterministic;
  SessionEnv env;
  RevivalSession s;

  std::filesystem::path dir() const { return env.dir; }
};

// Creates the session without advancing it.
inline std::unique_ptr<CorpusRun> start_corpus(const std::string& file, const KnowledgeBase& kb = builtin_knowledge_base(),
                                                SynthesisProvider* provider = nullptr) {
  auto run = std::make_unique<CorpusRun>();
  if (provider) run->provider = provider;
  run->env = SessionEnv{run->root.path() / "session", run->provider, &corpus_fixtures()};
  SessionConfig config;
  config.original_filename = file;
  run->s = create_session("corpus", workflow_fixture(file), config, kb, *run->provider, &corpus_fixtures(),
                          run->env.dir, run->env.now());
  return run;
}

inline std::unique_ptr<CorpusRun> revive_corpus(const std::string& file, const AnswerPolicy& policy,
                                                 SynthesisProvider* provider = nullptr) {
  auto run = start_corpus(file, builtin_knowledge_base(), provider);
  run_to_completion(run->s, run->env, policy);
  return run;
}

inline std::map<std::string, std::string> file_tree(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  if (!std::filesystem::exists(root)) return out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[std::filesystem::relative(e.path(), root).generic_string()] = read_file(e.path());
  }
  return out;
}

// Differences between a session and its transcript replay, timestamps aside.
// Empty when the replay reproduces the snapshot, every event and the bundle.
inline std::vector<std::string> replay_differences(const CorpusRun& run) {
  std::vector<std::string> diffs;
  TempDir other{"wfr-corpus-replay"};
  auto upload = read_file(run.env.dir / kUploadFile);
  auto kb = knowledge_base_from_json(nlohmann::json::parse(read_file(run.env.dir / kInitialKbFile)));
  auto fixtures = FixtureTransport(nlohmann::json::parse(read_file(run.env.dir / kFixturesFile)));
  auto replayed = replay_session(run.s.transcript, upload, kb, other.path() / "session", &fixtures);
  if (without_timestamps(to_json(replayed)) != without_timestamps(to_json(run.s))) diffs.push_back("snapshot");
  if (replayed.transcript.size() != run.s.transcript.size()) {
    diffs.push_back("transcript length");
  } else {
    for (std::size_t i = 0; i < replayed.transcript.size(); ++i) {
      if (without_timestamps(replayed.transcript[i]) != without_timestamps(run.s.transcript[i])) {
        diffs.push_back("event " + std::to_string(i));
      }
    }
  }
  auto a = file_tree(run.env.dir / "bundle");
  auto b = file_tree(other.path() / "session" / "bundle");
  if (a.size() != b.size()) diffs.push_back("bundle file count");
  for (const auto& [path, text] : a) {
    auto it = b.find(path);
    if (it == b.end()) {
      diffs.push_back("bundle lacks " + path);
    } else if (path == "manifest.json") {
      if (without_timestamps(nlohmann::json::parse(text)) != without_timestamps(nlohmann::json::parse(it->second))) {
        diffs.push_back(path);
      }
    } else if (text != it->second) {
      diffs.push_back(path);
    }
  }
  return diffs;
}

// ServiceCall steps of the revived IR without a manifest substitution entry.
inline std::vector<std::string> uncovered_service_calls(const WorkflowIR& ir, const ProvenanceManifest& m) {
  std::vector<std::string> missing;
  for (const auto& step : ir.steps) {
    if (step.kind != StepKind::ServiceCall) continue;
    bool covered = false;
    for (const auto& sub : m.substitutions) covered = covered || sub.step_id == step.id;
    if (!covered) missing.push_back(step.id);
  }
  return missing;
}

}  // namespace wfr::test
