#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace wfr::xml {

// A parsed element. Only elements are kept as children; character data and
// CDATA directly inside the element are concatenated into `text`.
struct Node {
  std::string name;  // qualified name as written, e.g. "s:processor"
  std::vector<std::pair<std::string, std::string>> attributes;
  std::vector<Node> children;
  std::string text;
  std::size_t begin = 0;  // byte offset of '<'
  std::size_t end = 0;    // one past the closing '>'
  std::size_t line = 1;

  std::string_view local_name() const;

  const Node* child(std::string_view local) const;
  std::vector<const Node*> children_named(std::string_view local) const;

  // Attribute lookup by local name (prefixes ignored).
  std::optional<std::string> attr(std::string_view local) const;

  // Text of the first child with this local name, or "" when absent.
  std::string child_text(std::string_view local) const;
};

struct Document {
  std::string source;
  Node root;

  // Raw bytes of an element exactly as they appear in the source.
  std::string_view raw(const Node& node) const {
    return std::string_view(source).substr(node.begin, node.end - node.begin);
  }
};

/// Parses a complete XML document. Throws wfr::Error(MalformedXml) with the
/// line number as subject on any well-formedness violation.
Document parse(std::string_view bytes);

}  // namespace wfr::xml
