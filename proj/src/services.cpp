#include "wfrevive/services.hpp"

#include <httplib.h>

#include <algorithm>
#include <ctime>
#include <fstream>
#include <sstream>

#include "wfrevive/digest.hpp"
#include "wfrevive/errors.hpp"

namespace wfr {

namespace {

bool glob_match(std::string_view pattern, std::string_view text) {
  std::size_t p = 0, t = 0, star = std::string_view::npos, mark = 0;
  while (t < text.size()) {
    if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (p < pattern.size() && pattern[p] == text[t]) {
      ++p;
      ++t;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

SubstitutionRule builtin(std::string id, RuleMatch match, std::optional<ServiceEndpoint> replacement,
                         ResponseAdapter adapter) {
  SubstitutionRule r;
  r.id = std::move(id);
  r.match = std::move(match);
  r.replacement = std::move(replacement);
  r.response_adapter = adapter;
  r.confidence = Confidence::Suggested;
  r.provenance = RuleProvenance::Builtin;
  return r;
}

std::string content_id(const SubstitutionRule& r) {
  nlohmann::json key{{"match", {{"protocol", r.match.protocol ? to_string(*r.match.protocol) : ""},
                                {"host", r.match.host_pattern},
                                {"operation", r.match.operation_pattern}}},
                     {"replacement", r.replacement ? nlohmann::json(*r.replacement) : nlohmann::json()},
                     {"adapter", to_string(r.response_adapter)}};
  std::string prefix = r.provenance == RuleProvenance::CuratorProvided ? "curator-"
                       : r.provenance == RuleProvenance::Learned        ? "learned-"
                                                                        : "builtin-";
  return prefix + sha256_hex(key.dump()).substr(0, 12);
}

SubstitutionRule* find_mut(KnowledgeBase& kb, const std::string& id) {
  for (auto& r : kb.rules) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

}  // namespace

bool RuleMatch::accepts(const ServiceEndpoint& e) const {
  if (protocol && *protocol != e.protocol) return false;
  return glob_match(host_pattern, e.host()) && glob_match(operation_pattern, e.operation);
}

ServiceEndpoint SubstitutionRule::apply(const ServiceEndpoint& original) const {
  return replacement ? *replacement : original;
}

std::optional<std::string> SubstitutionRule::last_ok_probe() const {
  std::optional<std::string> best;
  for (const auto& p : evidence) {
    if (p.status.ok() && (!best || p.probed_at > *best)) best = p.probed_at;
  }
  return best;
}

const SubstitutionRule* KnowledgeBase::find(const std::string& id) const {
  for (const auto& r : rules) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

KnowledgeBase builtin_knowledge_base() {
  KnowledgeBase kb;
  kb = add_rule(kb, builtin("builtin-kegg-conv", {Protocol::Soap, "*.genome.jp", "*conv*"},
                            rest_endpoint_from_template("https://rest.kegg.jp/conv/genes/{source_id}"),
                            ResponseAdapter::TabSeparatedPairs));
  kb = add_rule(kb, builtin("builtin-kegg-pathway", {Protocol::Soap, "*.genome.jp", "*pathway*"},
                            rest_endpoint_from_template("https://rest.kegg.jp/link/pathway/{gene}"),
                            ResponseAdapter::LineList));
  kb = add_rule(kb, builtin("builtin-rest-identity", {Protocol::Rest, "*", "*"}, std::nullopt, ResponseAdapter::None));
  return kb;
}

KnowledgeBase add_rule(KnowledgeBase kb, SubstitutionRule rule) {
  if (rule.id.empty()) rule.id = content_id(rule);
  if (kb.find(rule.id)) return kb;
  if (rule.confidence == Confidence::Confirmed &&
      std::none_of(rule.evidence.begin(), rule.evidence.end(), [](const ProbeResult& p) { return p.status.ok(); })) {
    throw Error(Errc::UnconfirmableProbe, "rule " + rule.id + " claims Confirmed without a successful probe",
                {rule.id});
  }
  rule.seq = kb.next_seq++;
  kb.history.push_back({{"seq", rule.seq}, {"op", "add"}, {"rule", rule}});
  kb.rules.push_back(std::move(rule));
  return kb;
}

std::vector<SubstitutionRule> lookup(const ServiceEndpoint& endpoint, const KnowledgeBase& kb) {
  std::vector<SubstitutionRule> out;
  for (const auto& r : kb.rules) {
    if (r.match.accepts(endpoint)) {
      out.push_back(r);
      out.back().replacement = r.apply(endpoint);
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const SubstitutionRule& a, const SubstitutionRule& b) {
    if (a.confidence != b.confidence) return a.confidence == Confidence::Confirmed;
    auto pa = a.last_ok_probe(), pb = b.last_ok_probe();
    if (pa != pb) return pa > pb;  // nullopt sorts last
    return a.seq > b.seq;
  });
  return out;
}

KnowledgeBase confirm(const SubstitutionRule& rule, const ProbeResult& result, KnowledgeBase kb) {
  if (!result.status.ok()) {
    throw Error(Errc::UnconfirmableProbe,
                "cannot confirm rule " + rule.id + " with a " + to_string(result.status) + " probe", {rule.id});
  }
  std::string id = rule.id.empty() ? content_id(rule) : rule.id;
  if (!kb.find(id)) {
    SubstitutionRule fresh = rule;
    fresh.id = id;
    fresh.confidence = Confidence::Suggested;
    fresh.evidence.clear();
    kb = add_rule(std::move(kb), std::move(fresh));
  }
  SubstitutionRule* target = find_mut(kb, id);
  bool known = std::find(target->evidence.begin(), target->evidence.end(), result) != target->evidence.end();
  if (known && target->confidence == Confidence::Confirmed) return kb;
  if (!known) target->evidence.push_back(result);
  target->confidence = Confidence::Confirmed;
  if (target->provenance == RuleProvenance::Builtin) target->provenance = RuleProvenance::Learned;
  kb.history.push_back({{"seq", kb.next_seq++}, {"op", "confirm"}, {"rule_id", id}, {"probe", result}});
  return kb;
}

KnowledgeBase absorb(KnowledgeBase kb, const KnowledgeBase& learned) {
  for (const auto& r : learned.rules) {
    const SubstitutionRule* local = kb.find(r.id);
    if (!local) {
      if (r.provenance == RuleProvenance::Builtin && r.confidence != Confidence::Confirmed) continue;
      SubstitutionRule fresh = r;
      fresh.confidence = Confidence::Suggested;
      fresh.evidence.clear();
      kb = add_rule(std::move(kb), std::move(fresh));
    }
    for (const auto& p : r.evidence) {
      if (!p.status.ok()) continue;
      SubstitutionRule current = *kb.find(r.id);
      kb = confirm(current, p, std::move(kb));
    }
  }
  return kb;
}

std::map<std::string, std::string> parse_conv_response(std::string_view body) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= body.size()) {
    auto nl = body.find('\n', pos);
    if (nl == std::string_view::npos) nl = body.size();
    auto line = body.substr(pos, nl - pos);
    ++line_no;
    pos = nl + 1;
    if (trim(line).empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string_view::npos) {
      throw Error(Errc::MalformedRecord, "line " + std::to_string(line_no) + " has no tab separator",
                  {std::to_string(line_no)});
    }
    auto source = trim(line.substr(0, tab));
    auto target = trim(line.substr(tab + 1));
    if (auto colon = source.find(':'); colon != std::string::npos) source = source.substr(colon + 1);
    out[source] = target;
  }
  return out;
}

// ------------------------------------------------------------ transport

std::string utc_now_iso() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

FixtureTransport::FixtureTransport(nlohmann::json entries) : entries_(std::move(entries)) {
  if (!entries_.is_object()) throw Error(Errc::SchemaViolation, "fixture map must be a JSON object", {"$"});
}

FixtureTransport FixtureTransport::load(const std::filesystem::path& path) {
  auto parse = [](const std::filesystem::path& file) {
    try {
      return nlohmann::json::parse(read_file(file));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(Errc::SchemaViolation, "fixture file " + file.filename().string() + " is not JSON: " + e.what(),
                  {file.filename().string()});
    }
  };
  if (!std::filesystem::is_directory(path)) return FixtureTransport(parse(path));
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(path)) {
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  nlohmann::json merged = nlohmann::json::object();
  for (const auto& f : files) merged.update(parse(f));
  return FixtureTransport(std::move(merged));
}

HttpOutcome FixtureTransport::get(const std::string& url, std::chrono::milliseconds) {
  HttpOutcome out;
  out.at = entries_.value("_recorded_at", std::string("2025-01-01T00:00:00Z"));
  auto it = entries_.find("GET " + url);
  if (it == entries_.end() || !it->is_object()) return out;
  out.latency_ms = it->value("latency_ms", 0);
  if (it->value("timeout", false)) {
    out.kind = HttpOutcome::Kind::Timeout;
    return out;
  }
  out.kind = HttpOutcome::Kind::Response;
  out.status = it->value("status", 0);
  out.body = it->value("body", std::string());
  return out;
}

void FixtureTransport::write(const std::filesystem::path& file) const { write_file(file, entries_.dump(2)); }

HttpOutcome LiveTransport::get(const std::string& url, std::chrono::milliseconds timeout) {
  HttpOutcome out;
  out.at = utc_now_iso();
  if (!is_absolute_url(url)) return out;
  auto start = std::chrono::steady_clock::now();
  httplib::Client client(url_origin(url));
  client.set_follow_location(true);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_socket_options([this](socket_t) { ++sockets_; });
  auto path = url_path(url);
  auto res = client.Get(path.empty() ? "/" : path);
  out.latency_ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
  if (!res) {
    auto err = res.error();
    out.kind = (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read) ? HttpOutcome::Kind::Timeout
                                                                                        : HttpOutcome::Kind::Unreachable;
    return out;
  }
  out.kind = HttpOutcome::Kind::Response;
  out.status = res->status;
  out.body = res->body;
  return out;
}

ProbeResult probe(const std::string& url, HttpTransport& transport, std::chrono::milliseconds timeout) {
  ProbeResult r;
  r.url = url;
  if (!is_absolute_url(url)) {
    r.probed_at = utc_now_iso();
    return r;
  }
  auto outcome = transport.get(url, timeout);
  r.latency_ms = outcome.latency_ms;
  r.probed_at = outcome.at;
  switch (outcome.kind) {
    case HttpOutcome::Kind::Timeout: r.status.kind = ProbeStatus::Kind::Timeout; break;
    case HttpOutcome::Kind::Unreachable: r.status.kind = ProbeStatus::Kind::Unreachable; break;
    case HttpOutcome::Kind::Response:
      r.status.http_code = outcome.status;
      r.status.kind = outcome.status >= 200 && outcome.status <= 299 ? ProbeStatus::Kind::Ok : ProbeStatus::Kind::HttpError;
      r.body_prefix = outcome.body.substr(0, 256);
      break;
  }
  return r;
}

// ------------------------------------------------------------ persistence

void save_knowledge_base(const KnowledgeBase& kb, const std::filesystem::path& dir) {
  std::string ledger;
  for (const auto& e : kb.history) ledger += e.dump() + "\n";
  write_file(dir / "kb" / "rules.jsonl", ledger);
  write_file(dir / "kb" / "snapshot.json", to_json(kb).dump(2));
}

KnowledgeBase load_knowledge_base(const std::filesystem::path& dir) {
  auto snapshot = dir / "kb" / "snapshot.json";
  if (!std::filesystem::exists(snapshot)) return builtin_knowledge_base();
  KnowledgeBase kb;
  try {
    kb = knowledge_base_from_json(nlohmann::json::parse(read_file(snapshot)));
    std::istringstream ledger(read_file(dir / "kb" / "rules.jsonl"));
    std::string line;
    while (std::getline(ledger, line)) {
      if (!line.empty()) kb.history.push_back(nlohmann::json::parse(line));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::SchemaViolation, std::string("corrupt knowledge base: ") + e.what(), {"kb"});
  }
  return kb;
}

KbStore::KbStore(std::filesystem::path dir) : dir_(std::move(dir)) {
  kb_ = load_knowledge_base(dir_);
  if (!std::filesystem::exists(dir_ / "kb" / "snapshot.json")) save_knowledge_base(kb_, dir_);
}

KnowledgeBase KbStore::snapshot() const {
  std::lock_guard lock(mutex_);
  return kb_;
}

void KbStore::persist(const KnowledgeBase& next) {
  std::filesystem::create_directories(dir_ / "kb");
  {
    std::ofstream ledger(dir_ / "kb" / "rules.jsonl", std::ios::app | std::ios::binary);
    for (std::size_t i = kb_.history.size(); i < next.history.size(); ++i) ledger << next.history[i].dump() << "\n";
    if (!ledger) throw Error(Errc::InvalidArgument, "cannot append to knowledge base ledger", {dir_.string()});
  }
  auto tmp = dir_ / "kb" / "snapshot.json.tmp";
  write_file(tmp, to_json(next).dump(2));
  std::filesystem::rename(tmp, dir_ / "kb" / "snapshot.json");
}

// ------------------------------------------------------------ JSON

std::string to_string(ResponseAdapter a) {
  switch (a) {
    case ResponseAdapter::None: return "None";
    case ResponseAdapter::TabSeparatedPairs: return "TabSeparatedPairs";
    case ResponseAdapter::LineList: return "LineList";
  }
  return "None";
}

std::string to_string(Confidence c) { return c == Confidence::Confirmed ? "Confirmed" : "Suggested"; }

std::string to_string(RuleProvenance p) {
  switch (p) {
    case RuleProvenance::Builtin: return "Builtin";
    case RuleProvenance::Learned: return "Learned";
    case RuleProvenance::CuratorProvided: return "CuratorProvided";
  }
  return "Builtin";
}

std::string to_string(const ProbeStatus& s) {
  switch (s.kind) {
    case ProbeStatus::Kind::Ok: return "Ok";
    case ProbeStatus::Kind::HttpError: return "HttpError(" + std::to_string(s.http_code) + ")";
    case ProbeStatus::Kind::Timeout: return "Timeout";
    case ProbeStatus::Kind::Unreachable: return "Unreachable";
  }
  return "Unreachable";
}

namespace {

template <typename E>
E enum_from(const std::string& s, std::initializer_list<E> values) {
  for (E v : values) {
    if (to_string(v) == s) return v;
  }
  throw Error(Errc::SchemaViolation, "unknown enum value " + s, {s});
}

ProbeStatus status_from(const std::string& s) {
  ProbeStatus st;
  if (s == "Ok") {
    st.kind = ProbeStatus::Kind::Ok;
  } else if (s == "Timeout") {
    st.kind = ProbeStatus::Kind::Timeout;
  } else if (s == "Unreachable") {
    st.kind = ProbeStatus::Kind::Unreachable;
  } else if (s.rfind("HttpError(", 0) == 0 && s.back() == ')') {
    st.kind = ProbeStatus::Kind::HttpError;
    st.http_code = std::stoi(s.substr(10, s.size() - 11));
  } else {
    throw Error(Errc::SchemaViolation, "unknown probe status " + s, {s});
  }
  return st;
}

}  // namespace

void to_json(nlohmann::json& j, const ProbeResult& r) {
  j = {{"url", r.url},
       {"status", to_string(r.status)},
       {"http_code", r.status.http_code},
       {"latency_ms", r.latency_ms},
       {"body_prefix", r.body_prefix},
       {"probed_at", r.probed_at}};
}

void from_json(const nlohmann::json& j, ProbeResult& r) {
  r.url = j.at("url").get<std::string>();
  r.status = status_from(j.at("status").get<std::string>());
  r.status.http_code = j.value("http_code", 0);
  r.latency_ms = j.at("latency_ms").get<std::int64_t>();
  r.body_prefix = j.at("body_prefix").get<std::string>();
  r.probed_at = j.at("probed_at").get<std::string>();
}

ResponseAdapter response_adapter_from_string(const std::string& s) {
  return enum_from(s, {ResponseAdapter::None, ResponseAdapter::TabSeparatedPairs, ResponseAdapter::LineList});
}

RuleProvenance rule_provenance_from_string(const std::string& s) {
  return enum_from(s, {RuleProvenance::Builtin, RuleProvenance::Learned, RuleProvenance::CuratorProvided});
}

void to_json(nlohmann::json& j, const SubstitutionRule& r) {
  j = {{"id", r.id},
       {"match",
        {{"protocol", r.match.protocol ? nlohmann::json(to_string(*r.match.protocol)) : nlohmann::json()},
         {"host_pattern", r.match.host_pattern},
         {"operation_pattern", r.match.operation_pattern}}},
       {"replacement", r.replacement ? nlohmann::json(*r.replacement) : nlohmann::json()},
       {"response_adapter", to_string(r.response_adapter)},
       {"confidence", to_string(r.confidence)},
       {"provenance", to_string(r.provenance)},
       {"evidence", r.evidence},
       {"seq", r.seq}};
}

void from_json(const nlohmann::json& j, SubstitutionRule& r) {
  r.id = j.at("id").get<std::string>();
  const auto& m = j.at("match");
  r.match.protocol = m.at("protocol").is_null() ? std::nullopt
                                                : std::optional(protocol_from_string(m.at("protocol").get<std::string>()));
  r.match.host_pattern = m.at("host_pattern").get<std::string>();
  r.match.operation_pattern = m.at("operation_pattern").get<std::string>();
  r.replacement = j.at("replacement").is_null() ? std::nullopt : std::optional(j.at("replacement").get<ServiceEndpoint>());
  r.response_adapter = enum_from(j.at("response_adapter").get<std::string>(),
                                 {ResponseAdapter::None, ResponseAdapter::TabSeparatedPairs, ResponseAdapter::LineList});
  r.confidence = enum_from(j.at("confidence").get<std::string>(), {Confidence::Confirmed, Confidence::Suggested});
  r.provenance = enum_from(j.at("provenance").get<std::string>(),
                           {RuleProvenance::Builtin, RuleProvenance::Learned, RuleProvenance::CuratorProvided});
  r.evidence = j.at("evidence").get<std::vector<ProbeResult>>();
  r.seq = j.at("seq").get<std::uint64_t>();
}

nlohmann::json to_json(const KnowledgeBase& kb) { return {{"next_seq", kb.next_seq}, {"rules", kb.rules}}; }

KnowledgeBase knowledge_base_from_json(const nlohmann::json& j) {
  KnowledgeBase kb;
  kb.next_seq = j.at("next_seq").get<std::uint64_t>();
  kb.rules = j.at("rules").get<std::vector<SubstitutionRule>>();
  return kb;
}

}  // namespace wfr
