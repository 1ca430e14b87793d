#pragma once

#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace wfr {

// Result of translating a Beanshell (Java subset) script into Python
// statements. Only straight-line code, simple loops and shallow conditionals
// over strings, numbers, lists, sets, maps and string builders are handled.
struct Transliteration {
  bool ok = false;
  std::string reason;               // set when !ok
  std::vector<std::string> lines;   // Python statements, four-space indented blocks, no base indent
  std::set<std::string> assigned;   // Java names declared or assigned by the script
  std::map<std::string, std::string> output_expr;  // Java name -> Python expression for its final value
  bool branches = false;            // contains an if statement or a conditional expression
};

/// `inputs` are the names bound before the script runs. Control structures
/// nested deeper than `max_nesting` are refused.
Transliteration transliterate_beanshell(std::string_view script, const std::vector<std::string>& inputs,
                                        int max_nesting = 2);

// Python-safe spelling of a Java or port identifier.
std::string py_ident(std::string_view name);

// Single-quoted Python string literal.
std::string py_str(std::string_view text);

// Support functions the translated code relies on (Python source text).
const std::string& beanshell_runtime();

}  // namespace wfr
