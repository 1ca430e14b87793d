#include "wfrevive/packaging.hpp"

#include <algorithm>
#include <cstring>
#include <regex>
#include <set>
#include <sstream>

#include "wfrevive/digest.hpp"
#include "wfrevive/errors.hpp"

namespace wfr {

namespace {

namespace fs = std::filesystem;

std::string decided_by(RuleProvenance p) {
  switch (p) {
    case RuleProvenance::Builtin: return "Builtin";
    case RuleProvenance::Learned: return "Learned";
    case RuleProvenance::CuratorProvided: return "Curator";
  }
  return "Builtin";
}

std::string safe_filename(const std::string& name) {
  auto base = fs::path(name).filename().string();
  std::string out;
  for (char c : base) {
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_') ? c : '_';
  }
  if (out.empty() || out == "." || out == "..") out = "workflow";
  return out;
}

std::vector<std::string> regular_files(const fs::path& root) {
  std::vector<std::string> out;
  if (!fs::exists(root)) return out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root).generic_string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool is_executable(const fs::path& p) {
  return (fs::status(p).permissions() & fs::perms::owner_exec) != fs::perms::none;
}

// Absolute locations that would tie the bundle to one machine.
std::optional<std::string> absolute_path_in(const std::string& text, const std::string& root) {
  static const std::regex posix(R"((^|[\s"'=(:,\[])(/(home|root|tmp|Users|var|usr|opt|etc|mnt|srv|private)/[^\s"']*))");
  static const std::regex windows(R"((^|[\s"'=(])([A-Za-z]:\\[^\s"']*))");
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first && line.rfind("#!", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    if (!root.empty() && line.find(root) != std::string::npos) return root;
    std::smatch m;
    if (std::regex_search(line, m, posix)) return m[2].str();
    if (std::regex_search(line, m, windows)) return m[2].str();
  }
  return std::nullopt;
}

nlohmann::json endpoint_json(const ServiceEndpoint& e) {
  nlohmann::json j;
  to_json(j, e);
  return j;
}

}  // namespace

std::string target_digest(const TargetWorkflow& tw) {
  std::map<std::string, std::string> files = {{"Snakefile", sha256_hex(tw.snakefile)},
                                              {"config.yaml", sha256_hex(tw.config_yaml)}};
  for (const auto& [path, text] : tw.scripts) files[path] = sha256_hex(text);
  std::string lines;
  for (const auto& [path, digest] : files) lines += path + " " + digest + "\n";
  return sha256_hex(lines);
}

nlohmann::json to_json(const ProvenanceManifest& m) {
  nlohmann::json subs = nlohmann::json::array();
  for (const auto& s : m.substitutions) {
    subs.push_back({{"step_id", s.step_id},
                    {"from_endpoint", endpoint_json(s.from_endpoint)},
                    {"to_endpoint", endpoint_json(s.to_endpoint)},
                    {"decided_by", s.decided_by},
                    {"rule_id", s.rule_id}});
  }
  nlohmann::json decisions = nlohmann::json::array();
  for (const auto& d : m.decisions) {
    decisions.push_back({{"question_kind", d.question_kind}, {"answer_summary", d.answer_summary}});
  }
  return {{"schema", "wfrevive-bundle/1"},
          {"engine_version", m.engine_version},
          {"original",
           {{"filename", m.original_filename}, {"format", m.original_format}, {"source_digest", m.source_digest}}},
          {"revived",
           {{"title", m.title},
            {"pivot_digest", m.pivot_digest},
            {"target_digest", m.target_digest},
            {"emitted_at", m.emitted_at}}},
          {"substitutions", subs},
          {"decisions", decisions},
          {"files", m.files}};
}

ProvenanceManifest manifest_from_json(const nlohmann::json& j) {
  try {
    ProvenanceManifest m;
    m.engine_version = j.at("engine_version").get<std::string>();
    const auto& o = j.at("original");
    m.original_filename = o.at("filename").get<std::string>();
    m.original_format = o.at("format").get<std::string>();
    m.source_digest = o.at("source_digest").get<std::string>();
    const auto& r = j.at("revived");
    m.title = r.at("title").get<std::string>();
    m.pivot_digest = r.at("pivot_digest").get<std::string>();
    m.target_digest = r.at("target_digest").get<std::string>();
    m.emitted_at = r.at("emitted_at").get<std::string>();
    for (const auto& s : j.at("substitutions")) {
      m.substitutions.push_back({s.at("step_id").get<std::string>(), s.at("from_endpoint").get<ServiceEndpoint>(),
                                 s.at("to_endpoint").get<ServiceEndpoint>(), s.at("decided_by").get<std::string>(),
                                 s.at("rule_id").get<std::string>()});
    }
    for (const auto& d : j.at("decisions")) {
      m.decisions.push_back({d.at("question_kind").get<std::string>(), d.at("answer_summary").get<std::string>()});
    }
    m.files = j.at("files").get<std::map<std::string, std::string>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::SchemaViolation, std::string("malformed manifest: ") + e.what());
  }
}

RevivalBundle write_bundle(const BundleSource& src, const fs::path& root_in) {
  if (sha256_hex(src.original_bytes) != src.source_digest) {
    throw Error(Errc::IncompleteSession, "original bytes do not match the recorded digest");
  }
  if (src.ir) {
    std::set<std::string> covered;
    for (const auto& s : src.substitutions) covered.insert(s.step_id);
    for (const auto& st : src.ir->steps) {
      if (st.kind == StepKind::ServiceCall && !covered.count(st.id)) {
        throw Error(Errc::IncompleteSession, "no substitution record for step " + st.id, {st.id});
      }
    }
  }
  auto root = fs::absolute(root_in);
  if (fs::exists(root) && !fs::is_empty(root)) {
    throw Error(Errc::InvalidArgument, "bundle directory is not empty", {root.string()});
  }
  fs::create_directories(root);

  auto original_name = safe_filename(src.original_filename);
  auto pivot_text = render(src.pivot);
  write_file(root / "original" / original_name, src.original_bytes);
  write_file(root / "pivot" / "workflow.py", pivot_text);
  write_target(src.target, root / "workflow");
  write_file(root / "data" / "input.txt", src.sample_input);
  write_file(root / "run", kRunScript);
  fs::permissions(root / "run", fs::perms::owner_all | fs::perms::group_read | fs::perms::group_exec |
                                    fs::perms::others_read | fs::perms::others_exec);

  ProvenanceManifest m;
  m.original_filename = original_name;
  m.original_format = src.original_format;
  m.source_digest = src.source_digest;
  m.title = src.pivot.title;
  m.pivot_digest = sha256_hex(pivot_text);
  m.target_digest = target_digest(src.target);
  m.emitted_at = src.emitted_at;
  for (const auto& s : src.substitutions) {
    m.substitutions.push_back({s.step_id, s.from, s.to, decided_by(s.provenance), s.rule_id});
  }
  m.decisions = src.decisions;
  m.engine_version = WFREVIVE_VERSION;
  for (const auto& rel : regular_files(root)) m.files[rel] = sha256_file(root / rel);
  write_file(root / "manifest.json", to_json(m).dump(2) + "\n");

  RevivalBundle b;
  b.root = root;
  b.manifest = m;
  b.contents = regular_files(root);
  return b;
}

std::string_view to_string(BundleFindingKind k) {
  switch (k) {
    case BundleFindingKind::Layout: return "Layout";
    case BundleFindingKind::DigestMismatch: return "DigestMismatch";
    case BundleFindingKind::NotRelocatable: return "NotRelocatable";
    case BundleFindingKind::Manifest: return "Manifest";
  }
  return "?";
}

nlohmann::json to_json(const BundleFinding& f) {
  return {{"kind", to_string(f.kind)}, {"path", f.path}, {"detail", f.detail}};
}

std::vector<BundleFinding> verify_bundle(const fs::path& root_in) {
  std::vector<BundleFinding> out;
  auto root = fs::absolute(root_in);
  if (!fs::is_directory(root)) return {{BundleFindingKind::Layout, "", "bundle directory does not exist"}};

  auto need_file = [&](const std::string& rel) {
    if (!fs::is_regular_file(root / rel)) out.push_back({BundleFindingKind::Layout, rel, "missing"});
  };
  auto need_nonempty_dir = [&](const std::string& rel) {
    if (!fs::is_directory(root / rel) || regular_files(root / rel).empty()) {
      out.push_back({BundleFindingKind::Layout, rel + "/", "missing or empty"});
    }
  };
  need_file("manifest.json");
  need_nonempty_dir("original");
  need_file("pivot/workflow.py");
  need_file("workflow/Snakefile");
  need_file("workflow/config.yaml");
  need_nonempty_dir("workflow/scripts");
  need_nonempty_dir("data");
  need_file("run");
  if (fs::is_regular_file(root / "run") && !is_executable(root / "run")) {
    out.push_back({BundleFindingKind::Layout, "run", "not executable"});
  }

  std::optional<ProvenanceManifest> m;
  if (fs::is_regular_file(root / "manifest.json")) {
    try {
      m = manifest_from_json(nlohmann::json::parse(read_file(root / "manifest.json")));
    } catch (const std::exception& e) {
      out.push_back({BundleFindingKind::Manifest, "manifest.json", e.what()});
    }
  }
  auto files = regular_files(root);
  if (m) {
    for (const auto& [rel, digest] : m->files) {
      if (!fs::is_regular_file(root / rel)) {
        out.push_back({BundleFindingKind::DigestMismatch, rel, "listed in the manifest but absent"});
      } else if (sha256_file(root / rel) != digest) {
        out.push_back({BundleFindingKind::DigestMismatch, rel, "content differs from the manifest digest"});
      }
    }
    for (const auto& rel : files) {
      if (rel != "manifest.json" && !m->files.count(rel)) {
        out.push_back({BundleFindingKind::DigestMismatch, rel, "not listed in the manifest"});
      }
    }
    if (fs::is_regular_file(root / "pivot/workflow.py") && sha256_file(root / "pivot/workflow.py") != m->pivot_digest) {
      out.push_back({BundleFindingKind::DigestMismatch, "pivot/workflow.py", "pivot digest differs"});
    }
    auto original = root / "original" / m->original_filename;
    if (!fs::is_regular_file(original)) {
      out.push_back({BundleFindingKind::Layout, "original/" + m->original_filename, "missing"});
    } else if (sha256_file(original) != m->source_digest) {
      out.push_back({BundleFindingKind::DigestMismatch, "original/" + m->original_filename, "source digest differs"});
    }
    TargetWorkflow tw;
    if (fs::is_regular_file(root / "workflow/Snakefile") && fs::is_regular_file(root / "workflow/config.yaml")) {
      tw.snakefile = read_file(root / "workflow/Snakefile");
      tw.config_yaml = read_file(root / "workflow/config.yaml");
      for (const auto& rel : regular_files(root / "workflow" / "scripts")) {
        tw.scripts["scripts/" + rel] = read_file(root / "workflow" / "scripts" / rel);
      }
      if (target_digest(tw) != m->target_digest) {
        out.push_back({BundleFindingKind::DigestMismatch, "workflow/", "target digest differs"});
      }
    }
  }
  for (const auto& rel : files) {
    if (rel.rfind("original/", 0) == 0) continue;
    if (auto hit = absolute_path_in(read_file(root / rel), root.string())) {
      out.push_back({BundleFindingKind::NotRelocatable, rel, "absolute path " + *hit});
    }
  }
  return out;
}

// ---------------------------------------------------------------- tar

namespace {

void put_octal(char* field, std::size_t width, std::uint64_t value) {
  std::string digits;
  do {
    digits.insert(digits.begin(), static_cast<char>('0' + (value & 7)));
    value >>= 3;
  } while (value);
  while (digits.size() < width - 1) digits.insert(digits.begin(), '0');
  std::memcpy(field, digits.data(), width - 1);
  field[width - 1] = '\0';
}

std::string tar_header(const std::string& name, std::uint64_t size, unsigned mode, char type) {
  char h[512];
  std::memset(h, 0, sizeof h);
  std::string n = name, prefix;
  if (n.size() > 100) {
    auto cut = n.rfind('/', 155);
    while (cut != std::string::npos && n.size() - cut - 1 > 100) cut = cut ? n.rfind('/', cut - 1) : std::string::npos;
    if (cut == std::string::npos) throw Error(Errc::InvalidArgument, "path too long for an archive entry", {name});
    prefix = n.substr(0, cut);
    n = n.substr(cut + 1);
  }
  std::memcpy(h, n.data(), n.size());
  put_octal(h + 100, 8, mode);
  put_octal(h + 108, 8, 0);
  put_octal(h + 116, 8, 0);
  put_octal(h + 124, 12, size);
  put_octal(h + 136, 12, 0);
  std::memset(h + 148, ' ', 8);
  h[156] = type;
  std::memcpy(h + 257, "ustar", 6);
  std::memcpy(h + 263, "00", 2);
  std::memcpy(h + 265, "root", 4);
  std::memcpy(h + 297, "root", 4);
  std::memcpy(h + 345, prefix.data(), prefix.size());
  unsigned sum = 0;
  for (unsigned char c : h) sum += c;
  char chk[8];
  put_octal(chk, 7, sum);
  std::memcpy(h + 148, chk, 7);
  h[155] = ' ';
  return std::string(h, sizeof h);
}

}  // namespace

std::string tar_directory(const fs::path& root, const std::string& prefix) {
  std::vector<fs::path> entries;
  for (const auto& e : fs::recursive_directory_iterator(root)) entries.push_back(e.path());
  std::sort(entries.begin(), entries.end(), [&](const fs::path& a, const fs::path& b) {
    return fs::relative(a, root).generic_string() < fs::relative(b, root).generic_string();
  });
  std::string out;
  auto base = prefix.empty() ? std::string() : prefix + "/";
  if (!prefix.empty()) out += tar_header(base, 0, 0755, '5');
  for (const auto& p : entries) {
    auto rel = base + fs::relative(p, root).generic_string();
    if (fs::is_directory(p)) {
      out += tar_header(rel + "/", 0, 0755, '5');
    } else if (fs::is_regular_file(p)) {
      auto data = read_file(p);
      out += tar_header(rel, data.size(), is_executable(p) ? 0755 : 0644, '0');
      out += data;
      out.append((512 - data.size() % 512) % 512, '\0');
    }
  }
  out.append(1024, '\0');
  return out;
}

}  // namespace wfr
