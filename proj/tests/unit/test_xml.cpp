#include "catch_amalgamated.hpp"

#include "wfrevive/errors.hpp"
#include "wfrevive/xml.hpp"

using namespace wfr;

TEST_CASE("xml: elements, attributes and text") {
  auto doc = xml::parse("<?xml version=\"1.0\"?>\n<a x=\"1\" p:y='two'><b>hi</b><b/><c>x &amp; y &#65;&#x42;</c></a>");
  REQUIRE(doc.root.name == "a");
  CHECK(doc.root.attr("x") == "1");
  CHECK(doc.root.attr("y") == "two");
  CHECK(doc.root.children_named("b").size() == 2);
  CHECK(doc.root.child_text("b") == "hi");
  CHECK(doc.root.child_text("c") == "x & y AB");
  CHECK(doc.root.child_text("missing").empty());
}

TEST_CASE("xml: namespace prefixes are ignored by lookups") {
  auto doc = xml::parse("<s:scufl xmlns:s=\"urn:x\"><s:processor name=\"p\"/></s:scufl>");
  CHECK(doc.root.local_name() == "scufl");
  REQUIRE(doc.root.child("processor") != nullptr);
  CHECK(doc.root.child("processor")->name == "s:processor");
}

TEST_CASE("xml: raw() returns the exact source bytes of an element") {
  std::string src = "<r>\n  <keep  a='1'><![CDATA[<not markup>]]></keep>\n</r>";
  auto doc = xml::parse(src);
  const auto* keep = doc.root.child("keep");
  REQUIRE(keep);
  CHECK(doc.raw(*keep) == "<keep  a='1'><![CDATA[<not markup>]]></keep>");
  CHECK(keep->text == "<not markup>");
  CHECK(keep->line == 2);
}

TEST_CASE("xml: comments, doctype and BOM are skipped") {
  auto doc = xml::parse("\xEF\xBB\xBF<!DOCTYPE r><!-- c --><r><!-- inner --><x/></r><!-- tail -->");
  CHECK(doc.root.name == "r");
  CHECK(doc.root.children.size() == 1);
}

TEST_CASE("xml: malformed input raises MalformedXml with a line number") {
  for (const char* bad : {"", "<a>", "<a></b>", "<a x=1/>", "<a/><b/>", "text only", "<a>&bogus;</a>",
                          "<a><!-- open</a>"}) {
    INFO(bad);
    try {
      xml::parse(bad);
      FAIL("expected MalformedXml");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::MalformedXml);
      REQUIRE(e.subjects().size() == 1);
    }
  }
}

TEST_CASE("xml: mismatched tag reports the line where it occurs") {
  try {
    xml::parse("<a>\n<b>\n</c>\n</a>");
    FAIL("expected MalformedXml");
  } catch (const Error& e) {
    CHECK(e.subjects().front() == "3");
  }
}

TEST_CASE("xml: excessive nesting is rejected rather than overflowing") {
  std::string deep;
  for (int i = 0; i < 5000; ++i) deep += "<a>";
  CHECK_THROWS_AS(xml::parse(deep), Error);
}
