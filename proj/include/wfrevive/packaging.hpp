#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include "wfrevive/ir.hpp"
#include "wfrevive/substitute.hpp"
#include "wfrevive/synthesis.hpp"
#include "wfrevive/target.hpp"

namespace wfr {

struct ManifestSubstitution {
  std::string step_id;
  ServiceEndpoint from_endpoint;
  ServiceEndpoint to_endpoint;
  std::string decided_by;  // Builtin, Learned or Curator
  std::string rule_id;

  bool operator==(const ManifestSubstitution&) const = default;
};

struct ManifestDecision {
  std::string question_kind;
  std::string answer_summary;

  bool operator==(const ManifestDecision&) const = default;
};

struct ProvenanceManifest {
  std::string original_filename;
  std::string original_format;
  std::string source_digest;
  std::string title;
  std::string pivot_digest;
  std::string target_digest;
  std::string emitted_at;
  std::vector<ManifestSubstitution> substitutions;
  std::vector<ManifestDecision> decisions;
  std::string engine_version;
  std::map<std::string, std::string> files;  // bundle-relative path -> sha256, manifest excluded

  bool operator==(const ProvenanceManifest&) const = default;
};

nlohmann::json to_json(const ProvenanceManifest& m);
ProvenanceManifest manifest_from_json(const nlohmann::json& j);

// Everything a bundle is made of, gathered by the session.
struct BundleSource {
  std::string original_filename;
  std::string original_bytes;
  std::string original_format;
  std::string source_digest;
  PivotScript pivot;
  TargetWorkflow target;
  std::string sample_input;
  std::vector<AppliedSubstitution> substitutions;
  std::vector<ManifestDecision> decisions;
  const WorkflowIR* ir = nullptr;
  std::string emitted_at;
};

struct RevivalBundle {
  std::filesystem::path root;
  ProvenanceManifest manifest;
  std::vector<std::string> contents;  // relative paths of regular files, sorted
};

inline constexpr std::string_view kRunScript = "#!/bin/sh\ncd \"$(dirname \"$0\")/workflow\" && exec snakemake --cores 1 \"$@\"\n";

/// Writes the bundle tree under `root`, which must not exist or be empty.
/// Throws Error(IncompleteSession) when a ServiceCall step has no
/// substitution record or the source digest does not match the bytes.
RevivalBundle write_bundle(const BundleSource& source, const std::filesystem::path& root);

enum class BundleFindingKind { Layout, DigestMismatch, NotRelocatable, Manifest };

struct BundleFinding {
  BundleFindingKind kind;
  std::string path;
  std::string detail;

  bool operator==(const BundleFinding&) const = default;
};

std::string_view to_string(BundleFindingKind k);
nlohmann::json to_json(const BundleFinding& f);

std::vector<BundleFinding> verify_bundle(const std::filesystem::path& root);

// Digest over the target tree: sha256 of "<path> <sha256>\n" lines, sorted.
std::string target_digest(const TargetWorkflow& tw);

// Deterministic ustar archive of a directory (sorted entries, zero mtimes,
// owner 0, modes 0755 for directories and executables, 0644 otherwise).
std::string tar_directory(const std::filesystem::path& root, const std::string& prefix);

}  // namespace wfr
