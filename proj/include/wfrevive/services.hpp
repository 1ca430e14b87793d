#pragma once

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "wfrevive/endpoint.hpp"

namespace wfr {

enum class ResponseAdapter { None, TabSeparatedPairs, LineList };
enum class Confidence { Confirmed, Suggested };
enum class RuleProvenance { Builtin, Learned, CuratorProvided };
enum class TransportMode { Live, Fixture };

struct ProbeStatus {
  enum class Kind { Ok, HttpError, Timeout, Unreachable };
  Kind kind = Kind::Unreachable;
  int http_code = 0;  // set for Ok and HttpError

  bool ok() const { return kind == Kind::Ok; }
  bool operator==(const ProbeStatus&) const = default;
};

struct ProbeResult {
  std::string url;
  ProbeStatus status;
  std::int64_t latency_ms = 0;
  std::string body_prefix;  // first 256 bytes
  std::string probed_at;    // ISO-8601 UTC

  bool operator==(const ProbeResult&) const = default;
};

// Glob patterns ('*' matches any run of characters) over the endpoint host and
// operation. An empty protocol matches both.
struct RuleMatch {
  std::optional<Protocol> protocol;
  std::string host_pattern;
  std::string operation_pattern;

  bool accepts(const ServiceEndpoint& e) const;
  bool operator==(const RuleMatch&) const = default;
};

struct SubstitutionRule {
  std::string id;
  RuleMatch match;
  // Unset for identity rules, which keep the matched endpoint as it is.
  std::optional<ServiceEndpoint> replacement;
  ResponseAdapter response_adapter = ResponseAdapter::None;
  Confidence confidence = Confidence::Suggested;
  RuleProvenance provenance = RuleProvenance::Builtin;
  std::vector<ProbeResult> evidence;
  std::uint64_t seq = 0;  // insertion order in the knowledge base

  ServiceEndpoint apply(const ServiceEndpoint& original) const;
  std::optional<std::string> last_ok_probe() const;

  bool operator==(const SubstitutionRule&) const = default;
};

// Rules plus their mutation history. Values are immutable in practice:
// operations return a new KnowledgeBase.
struct KnowledgeBase {
  std::vector<SubstitutionRule> rules;
  std::vector<nlohmann::json> history;  // one event per mutation, in order
  std::uint64_t next_seq = 1;

  const SubstitutionRule* find(const std::string& id) const;

  bool operator==(const KnowledgeBase&) const = default;
};

KnowledgeBase builtin_knowledge_base();

/// Adds `rule` (assigning seq, and an id when empty). Records an "add" event.
KnowledgeBase add_rule(KnowledgeBase kb, SubstitutionRule rule);

/// Confirmed rules first, then by most recent successful probe, then newest.
std::vector<SubstitutionRule> lookup(const ServiceEndpoint& endpoint, const KnowledgeBase& kb);

/// Throws Error(UnconfirmableProbe) unless result.status is Ok. Idempotent.
KnowledgeBase confirm(const SubstitutionRule& rule, const ProbeResult& result, KnowledgeBase kb);

// Folds rules and confirmations learned elsewhere (a finished session) into kb.
KnowledgeBase absorb(KnowledgeBase kb, const KnowledgeBase& learned);

/// Maps source ids (namespace prefix stripped) to target ids.
/// Throws Error(MalformedRecord) with the 1-based line number as subject.
std::map<std::string, std::string> parse_conv_response(std::string_view body);

// ------------------------------------------------------------ transport

struct HttpOutcome {
  enum class Kind { Response, Timeout, Unreachable };
  Kind kind = Kind::Unreachable;
  int status = 0;
  std::string body;
  std::int64_t latency_ms = 0;
  std::string at;  // ISO-8601 UTC
};

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpOutcome get(const std::string& url, std::chrono::milliseconds timeout) = 0;
  virtual TransportMode mode() const = 0;
  virtual std::size_t sockets_opened() const = 0;
};

// Replays recorded responses from JSON maps of the form
// {"GET <url>": {"status": 200, "body": "..."}}. Optional per-entry keys:
// "latency_ms", "timeout": true. A top-level "_recorded_at" sets probed_at.
class FixtureTransport : public HttpTransport {
 public:
  FixtureTransport() = default;
  explicit FixtureTransport(nlohmann::json entries);

  // A single .json file, or a directory whose *.json files are merged in
  // filename order.
  static FixtureTransport load(const std::filesystem::path& path);

  HttpOutcome get(const std::string& url, std::chrono::milliseconds timeout) override;
  TransportMode mode() const override { return TransportMode::Fixture; }
  std::size_t sockets_opened() const override { return 0; }

  const nlohmann::json& entries() const { return entries_; }
  void write(const std::filesystem::path& file) const;

 private:
  nlohmann::json entries_ = nlohmann::json::object();
};

class LiveTransport : public HttpTransport {
 public:
  HttpOutcome get(const std::string& url, std::chrono::milliseconds timeout) override;
  TransportMode mode() const override { return TransportMode::Live; }
  std::size_t sockets_opened() const override { return sockets_; }

 private:
  std::atomic<std::size_t> sockets_{0};
};

inline constexpr std::chrono::milliseconds kDefaultProbeTimeout{10000};

ProbeResult probe(const std::string& url, HttpTransport& transport,
                  std::chrono::milliseconds timeout = kDefaultProbeTimeout);

// ------------------------------------------------------------ persistence

// Writes kb/snapshot.json and kb/rules.jsonl under `dir`.
void save_knowledge_base(const KnowledgeBase& kb, const std::filesystem::path& dir);

/// Throws Error(SchemaViolation) on corrupt files. A missing directory yields
/// the builtin knowledge base.
KnowledgeBase load_knowledge_base(const std::filesystem::path& dir);

// Single-writer store over a kb directory. Readers get consistent copies.
class KbStore {
 public:
  explicit KbStore(std::filesystem::path dir);

  KnowledgeBase snapshot() const;

  // Applies `change` under the writer lock, appends its new history events to
  // rules.jsonl and rewrites snapshot.json.
  template <typename F>
  KnowledgeBase update(F&& change) {
    std::lock_guard lock(mutex_);
    KnowledgeBase next = change(kb_);
    persist(next);
    kb_ = next;
    return next;
  }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  void persist(const KnowledgeBase& next);

  std::filesystem::path dir_;
  mutable std::mutex mutex_;
  KnowledgeBase kb_;
};

// ------------------------------------------------------------ JSON

std::string to_string(ResponseAdapter a);
ResponseAdapter response_adapter_from_string(const std::string& s);
RuleProvenance rule_provenance_from_string(const std::string& s);
std::string to_string(Confidence c);
std::string to_string(RuleProvenance p);
std::string to_string(const ProbeStatus& s);

void to_json(nlohmann::json& j, const ProbeResult& r);
void from_json(const nlohmann::json& j, ProbeResult& r);
void to_json(nlohmann::json& j, const SubstitutionRule& r);
void from_json(const nlohmann::json& j, SubstitutionRule& r);
nlohmann::json to_json(const KnowledgeBase& kb);
KnowledgeBase knowledge_base_from_json(const nlohmann::json& j);

std::string utc_now_iso();

}  // namespace wfr
