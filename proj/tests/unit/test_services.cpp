#include "catch_amalgamated.hpp"

#include <random>
#include <sstream>
#include <thread>

#include "support.hpp"
#include "wfrevive/errors.hpp"
#include "wfrevive/services.hpp"

using namespace wfr;

namespace {

ServiceEndpoint soap(const std::string& wsdl, const std::string& op) { return {Protocol::Soap, wsdl, op, {"in"}}; }

ProbeResult ok_probe(const std::string& url, const std::string& at = "2025-06-02T09:14:00Z") {
  ProbeResult p;
  p.url = url;
  p.status = {ProbeStatus::Kind::Ok, 200};
  p.probed_at = at;
  return p;
}

FixtureTransport kegg_transport() { return FixtureTransport::load(test::data_path("fixtures/http/kegg.json")); }

}  // namespace

TEST_CASE("lookup: KEGG SOAP convert maps to the REST conversion endpoint") {
  auto kb = builtin_knowledge_base();
  auto rules = lookup(soap("http://soap.genome.jp/KEGG.wsdl", "convert"), kb);
  REQUIRE(!rules.empty());
  REQUIRE(rules[0].replacement);
  CHECK(rules[0].replacement->base_url == "https://rest.kegg.jp");
  CHECK(rules[0].replacement->operation == "/conv/genes/{source_id}");
  CHECK(rules[0].replacement->params == std::vector<std::string>{"source_id"});
  CHECK(rules[0].response_adapter == ResponseAdapter::TabSeparatedPairs);

  auto pathway = lookup(soap("http://soap.genome.jp/KEGG.wsdl", "get_pathways_by_genes"), kb);
  REQUIRE(pathway.size() == 1);
  CHECK(pathway[0].replacement->operation == "/link/pathway/{gene}");
  CHECK(pathway[0].response_adapter == ResponseAdapter::LineList);
}

TEST_CASE("lookup: no candidate for an unknown SOAP host") {
  CHECK(lookup(soap("http://example.invalid/service.wsdl", "convert"), builtin_knowledge_base()).empty());
}

TEST_CASE("lookup: identity rule for REST endpoints") {
  auto e = rest_endpoint_from_template("https://files.rcsb.org/view/{pdb_id}.pdb");
  auto rules = lookup(e, builtin_knowledge_base());
  REQUIRE(rules.size() == 1);
  CHECK(rules[0].replacement == e);
}

TEST_CASE("lookup: Confirmed before Suggested, then recent probe, then newest") {
  auto kb = builtin_knowledge_base();
  SubstitutionRule wrong;
  wrong.match = {Protocol::Soap, "*.genome.jp", "*conv*"};
  wrong.replacement = rest_endpoint_from_template("https://rest.kegg.jp/convert_gene/genes/{source_id}");
  wrong.provenance = RuleProvenance::Learned;
  kb = add_rule(kb, wrong);
  auto ep = soap("http://soap.genome.jp/KEGG.wsdl", "bconv");
  auto rules = lookup(ep, kb);
  REQUIRE(rules.size() == 2);
  CHECK(rules[0].replacement->operation == "/convert_gene/genes/{source_id}");  // newer Suggested

  kb = confirm(*kb.find("builtin-kegg-conv"), ok_probe("https://rest.kegg.jp/conv/genes/ncbi-geneid:7124"), kb);
  rules = lookup(ep, kb);
  CHECK(rules[0].id == "builtin-kegg-conv");
  CHECK(rules[0].confidence == Confidence::Confirmed);
  CHECK(lookup(ep, kb) == rules);  // deterministic
}

TEST_CASE("probe against fixtures") {
  auto t = kegg_transport();
  auto ok = probe("https://rest.kegg.jp/conv/genes/ncbi-geneid:7124", t);
  CHECK(ok.status.kind == ProbeStatus::Kind::Ok);
  CHECK(ok.status.http_code == 200);
  CHECK(ok.body_prefix == "ncbi-geneid:7124\thsa:7124\n");
  CHECK(ok.probed_at == "2025-06-02T09:14:00Z");
  CHECK(ok.latency_ms == 212);

  auto broken = probe("https://rest.kegg.jp/convert_gene/genes/ncbi-geneid:7124", t);
  CHECK(broken.status == ProbeStatus{ProbeStatus::Kind::HttpError, 404});
  CHECK(to_string(broken.status) == "HttpError(404)");

  CHECK(probe("https://rest.kegg.jp/nothing", t).status.kind == ProbeStatus::Kind::Unreachable);
  CHECK(probe("not a url", t).status.kind == ProbeStatus::Kind::Unreachable);
  CHECK(t.sockets_opened() == 0);
  CHECK(probe("https://rest.kegg.jp/conv/genes/ncbi-geneid:7124", t) == ok);
}

TEST_CASE("probe: body prefix is capped at 256 bytes and timeouts are reported") {
  FixtureTransport t(nlohmann::json{{"GET https://a.example/x", {{"status", 200}, {"body", std::string(1000, 'x')}}},
                                    {"GET https://a.example/slow", {{"timeout", true}}}});
  CHECK(probe("https://a.example/x", t).body_prefix.size() == 256);
  CHECK(probe("https://a.example/slow", t).status.kind == ProbeStatus::Kind::Timeout);
}

TEST_CASE("confirm") {
  auto kb = builtin_knowledge_base();
  const auto& conv = *kb.find("builtin-kegg-conv");
  auto t = kegg_transport();
  auto result = probe("https://rest.kegg.jp/conv/genes/ncbi-geneid:7124", t);

  auto once = confirm(conv, result, kb);
  const auto* upgraded = once.find("builtin-kegg-conv");
  CHECK(upgraded->confidence == Confidence::Confirmed);
  CHECK(upgraded->provenance == RuleProvenance::Learned);
  CHECK(upgraded->evidence.size() == 1);

  auto twice = confirm(*upgraded, result, once);
  CHECK(twice == once);

  auto failed = probe("https://rest.kegg.jp/convert_gene/genes/ncbi-geneid:7124", t);
  try {
    confirm(conv, failed, kb);
    FAIL("expected UnconfirmableProbe");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::UnconfirmableProbe);
  }

  SubstitutionRule curator;
  curator.match = {Protocol::Soap, "soap.genome.jp", "bconv"};
  curator.replacement = rest_endpoint_from_template("https://rest.kegg.jp/conv/genes/{source_id}");
  curator.provenance = RuleProvenance::CuratorProvided;
  auto with_curator = confirm(curator, result, kb);
  REQUIRE(with_curator.rules.size() == kb.rules.size() + 1);
  CHECK(with_curator.rules.back().provenance == RuleProvenance::CuratorProvided);
  CHECK(with_curator.rules.back().confidence == Confidence::Confirmed);
}

TEST_CASE("add_rule refuses Confirmed without evidence") {
  SubstitutionRule r;
  r.match = {std::nullopt, "*", "*"};
  r.confidence = Confidence::Confirmed;
  CHECK_THROWS_AS(add_rule(builtin_knowledge_base(), r), Error);
}

TEST_CASE("parse_conv_response") {
  CHECK(parse_conv_response("ncbi-geneid:7124\thsa:7124\n") == std::map<std::string, std::string>{{"7124", "hsa:7124"}});
  CHECK(parse_conv_response("").empty());
  CHECK(parse_conv_response("\n\n  \n").empty());
  CHECK(parse_conv_response("a:1\tb:1\r\n\na:2\tb:2").size() == 2);
  try {
    parse_conv_response("garbage-no-tab");
    FAIL("expected MalformedRecord");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::MalformedRecord);
    CHECK(e.subjects() == std::vector<std::string>{"1"});
  }
  try {
    parse_conv_response("a:1\tb\n\nbroken");
    FAIL("expected MalformedRecord");
  } catch (const Error& e) {
    CHECK(e.subjects() == std::vector<std::string>{"3"});
  }
}

TEST_CASE("parse_conv_response is total over arbitrary text") {
  std::mt19937 rng(11);
  const std::string alphabet = "ab:\t\n \r\x01\xff";
  for (int i = 0; i < 2000; ++i) {
    std::string s;
    for (int n = rng() % 40; n > 0; --n) s.push_back(alphabet[rng() % alphabet.size()]);
    try {
      parse_conv_response(s);
    } catch (const Error& e) {
      CHECK(e.code() == Errc::MalformedRecord);
    }
  }
}

TEST_CASE("knowledge base round-trips through disk") {
  test::TempDir dir;
  auto kb = builtin_knowledge_base();
  kb = confirm(*kb.find("builtin-kegg-pathway"), ok_probe("https://rest.kegg.jp/link/pathway/hsa:7124"), kb);
  SubstitutionRule curator;
  curator.match = {std::nullopt, "old.example.org", "/api/*"};
  curator.replacement = rest_endpoint_from_template("https://new.example.org/v2/{id}");
  curator.provenance = RuleProvenance::CuratorProvided;
  kb = add_rule(kb, curator);
  save_knowledge_base(kb, dir.path());
  CHECK(load_knowledge_base(dir.path()) == kb);
  CHECK(load_knowledge_base(dir.path() / "absent") == builtin_knowledge_base());
}

TEST_CASE("KbStore: single writer, append-only ledger, audit of confirmations") {
  test::TempDir dir;
  KbStore store(dir.path());
  std::vector<std::thread> writers;
  for (int w = 0; w < 4; ++w) {
    writers.emplace_back([&store, w] {
      std::mt19937 rng(w);
      for (int i = 0; i < 25; ++i) {
        store.update([&](const KnowledgeBase& kb) {
          const auto& rule = kb.rules[rng() % kb.rules.size()];
          ProbeResult p = ok_probe("https://x.example/" + std::to_string(w) + "/" + std::to_string(i));
          if (rng() % 3 == 0) p.status = {ProbeStatus::Kind::HttpError, 500};
          try {
            return confirm(rule, p, kb);
          } catch (const Error&) {
            return kb;
          }
        });
      }
    });
  }
  for (auto& t : writers) t.join();

  auto snap = store.snapshot();
  CHECK(load_knowledge_base(dir.path()) == snap);

  // Audit: every confirm event in the ledger carries an Ok probe, and every
  // Confirmed rule has at least one such event.
  std::istringstream ledger(read_file(dir.path() / "kb" / "rules.jsonl"));
  std::set<std::string> confirmed_by_ledger;
  std::string line;
  std::uint64_t last_seq = 0;
  while (std::getline(ledger, line)) {
    auto ev = nlohmann::json::parse(line);
    CHECK(ev["seq"].get<std::uint64_t>() > last_seq);
    last_seq = ev["seq"].get<std::uint64_t>();
    if (ev["op"] == "confirm") {
      CHECK(ev["probe"]["status"] == "Ok");
      confirmed_by_ledger.insert(ev["rule_id"].get<std::string>());
    }
    if (ev["op"] == "add") CHECK(ev["rule"]["confidence"] == "Suggested");
  }
  for (const auto& r : snap.rules) {
    if (r.confidence == Confidence::Confirmed) CHECK(confirmed_by_ledger.count(r.id) == 1);
  }
}

TEST_CASE("absorb folds session learning into a store") {
  auto global = builtin_knowledge_base();
  auto session = global;
  SubstitutionRule curator;
  curator.match = {Protocol::Soap, "soap.genome.jp", "bconv"};
  curator.replacement = rest_endpoint_from_template("https://rest.kegg.jp/conv/genes/{source_id}");
  curator.provenance = RuleProvenance::CuratorProvided;
  session = confirm(curator, ok_probe("https://rest.kegg.jp/conv/genes/ncbi-geneid:7124"), session);
  auto merged = absorb(global, session);
  CHECK(merged.rules.size() == global.rules.size() + 1);
  CHECK(merged.rules.back().confidence == Confidence::Confirmed);
  CHECK(absorb(merged, session) == merged);
}
