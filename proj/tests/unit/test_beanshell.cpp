#include "catch_amalgamated.hpp"

#include "wfrevive/beanshell.hpp"
#include "wfrevive/process.hpp"

using namespace wfr;

namespace {

// Runs the translation with the given Python bindings and prints the named
// outputs, one per line, through _jstr.
std::string run(const std::string& script, const std::vector<std::pair<std::string, std::string>>& bindings,
                const std::vector<std::string>& outputs) {
  std::vector<std::string> inputs;
  for (const auto& [name, _] : bindings) inputs.push_back(name);
  auto t = transliterate_beanshell(script, inputs);
  INFO(t.reason);
  REQUIRE(t.ok);
  std::string py = "import math, re\n" + beanshell_runtime() + "\n\ndef body(";
  for (std::size_t i = 0; i < inputs.size(); ++i) py += (i ? ", " : "") + py_ident(inputs[i]);
  py += "):\n";
  for (const auto& l : t.lines) py += "    " + l + "\n";
  py += "    return [";
  for (const auto& o : outputs) py += t.output_expr.at(o) + ", ";
  py += "]\n\nfor v in body(";
  for (const auto& [_, value] : bindings) py += value + ", ";
  py += "):\n    print(_jstr(v))\n";
  INFO(py);
  REQUIRE_FALSE(python_syntax_error(py));
  ProcessSpec spec;
  spec.argv = {python_executable(), "-c", py};
  auto r = run_process(spec);
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  return r.out;
}

}  // namespace

TEST_CASE("gene id splitter") {
  const std::string script =
      "List gene_ids = new ArrayList();\n"
      "String[] lines = text.split(\"\\n\");\n"
      "for (String line : lines) {\n"
      "  String id = line.trim();\n"
      "  if (id.length() > 0) {\n"
      "    gene_ids.add(id);\n"
      "  }\n"
      "}";
  CHECK(run(script, {{"text", "'7124\\n\\n  5468 \\n'"}}, {"gene_ids"}) == "[7124, 5468]\n");
}

TEST_CASE("string concatenation with a prefix") {
  CHECK(run("String prefixed_ids = \"ncbi-geneid:\" + gene_id;", {{"gene_id", "'7124'"}}, {"prefixed_ids"}) ==
        "ncbi-geneid:7124\n");
}

TEST_CASE("numbers, counted loops and integer division") {
  const std::string script =
      "int total = 0;\n"
      "for (int i = 0; i < n; i++) { total += i; }\n"
      "int half = total / 4;\n"
      "int neg = -7 / 2;\n"
      "int rem = -7 % 3;\n"
      "double avg = total / 2.0;\n"
      "String label = \"sum=\" + total + \";\" + avg;";
  CHECK(run(script, {{"n", "5"}}, {"total", "half", "neg", "rem", "label"}) ==
        "10\n2\n-3\n-1\nsum=10;5.0\n");
}

TEST_CASE("loop variable modified in the body falls back to while") {
  const std::string script =
      "List out = new ArrayList();\n"
      "for (int i = 0; i < 10; i++) { out.add(String.valueOf(i)); i = i + 2; }";
  CHECK(run(script, {}, {"out"}) == "[0, 3, 6, 9]\n");
}

TEST_CASE("maps, builders, ternaries and else-if chains") {
  const std::string script =
      "Map counts = new HashMap();\n"
      "StringBuilder sb = new StringBuilder();\n"
      "String[] words = text.split(\"\\\\s+\");\n"
      "for (String w : words) {\n"
      "  if (counts.containsKey(w)) { counts.put(w, (Integer) counts.get(w) + 1); }\n"
      "  else if (w.startsWith(\"x\")) { continue; }\n"
      "  else { counts.put(w, 1); }\n"
      "}\n"
      "sb.append(\"n=\").append(counts.size());\n"
      "String summary = sb.toString();\n"
      "String kind = counts.size() > 2 ? \"many\" : \"few\";\n"
      "String upper = text.toUpperCase().replaceAll(\"([AB])\", \"<$1>\");";
  CHECK(run(script, {{"text", "'a b a xy c'"}}, {"summary", "kind", "upper", "sb"}) ==
        "n=3\nmany\n<A> <B> <A> XY C\nn=3\n");
}

TEST_CASE("java split drops trailing empty strings") {
  CHECK(run("String[] parts = s.split(\",\"); int n = parts.length;", {{"s", "'a,,b,,'"}}, {"n"}) == "3\n");
}

TEST_CASE("null checks and booleans") {
  const std::string script =
      "String r = null;\n"
      "boolean empty = s.isEmpty();\n"
      "if (r == null && !empty) { r = s.substring(1, 3); }";
  CHECK(run(script, {{"s", "'hello'"}}, {"r", "empty"}) == "el\nfalse\n");
}

TEST_CASE("refusals carry a reason") {
  auto check_refused = [](const std::string& script, const std::string& fragment) {
    auto t = transliterate_beanshell(script, {"x"});
    CHECK_FALSE(t.ok);
    INFO(t.reason);
    CHECK(t.reason.find(fragment) != std::string::npos);
  };
  check_refused("try { x = 1; } catch (Exception e) {}", "try");
  check_refused("String y = undefinedName + x;", "undefinedName");
  check_refused("for (String a : x) { if (a != null) { while (true) { break; } } }", "nested");
  check_refused("URL u = new URL(x);", "construct");
  check_refused("String s = x.intern();", "intern");
  check_refused("String s = \"unterminated;", "unterminated");
  check_refused("int y = x++ + 1;", "increment");
}

TEST_CASE("nesting limit is configurable") {
  const std::string script = "for (String a : x) { if (a != null) { while (true) { break; } } }";
  CHECK(transliterate_beanshell(script, {"x"}, 3).ok);
}

TEST_CASE("imports and comments are ignored") {
  CHECK(run("import java.util.*;\n// note\n/* block */ String y = x.trim();", {{"x", "' a '"}}, {"y"}) == "a\n");
}

TEST_CASE("py_ident") {
  CHECK(py_ident("gene_ids") == "gene_ids");
  CHECK(py_ident("class") == "class_");
  CHECK(py_ident("str") == "str_");
  CHECK(py_ident("1st-value") == "v_1st_value");
  CHECK(py_ident("_hidden") == "v_hidden");
}

TEST_CASE("py_str escapes") {
  CHECK(py_str("a'b\\c\n") == "'a\\'b\\\\c\\n'");
  CHECK(py_str(std::string("\x01", 1)) == "'\\x01'");
}
