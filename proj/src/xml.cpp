#include "wfrevive/xml.hpp"

#include <cctype>
#include <cstdint>

#include "wfrevive/errors.hpp"

namespace wfr::xml {

namespace {

std::string_view strip_prefix(std::string_view name) {
  auto colon = name.find(':');
  return colon == std::string_view::npos ? name : name.substr(colon + 1);
}

bool is_name_start(char c) {
  auto u = static_cast<unsigned char>(c);
  return std::isalpha(u) || c == '_' || c == ':' || u >= 0x80;
}

bool is_name_char(char c) {
  auto u = static_cast<unsigned char>(c);
  return is_name_start(c) || std::isdigit(u) || c == '-' || c == '.';
}

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

class Parser {
 public:
  explicit Parser(std::string_view src) : src_(src) {}

  Node parse_document() {
    if (src_.substr(0, 3) == "\xEF\xBB\xBF") pos_ = 3;
    skip_misc();
    if (at_end() || peek() != '<') fail("document has no root element");
    Node root = parse_element(0);
    skip_misc();
    if (!at_end()) fail("content after the root element");
    return root;
  }

 private:
  static constexpr int kMaxDepth = 512;

  bool at_end() const { return pos_ >= src_.size(); }
  char peek(std::size_t ahead = 0) const {
    return pos_ + ahead < src_.size() ? src_[pos_ + ahead] : '\0';
  }
  bool starts_with(std::string_view s) const { return src_.substr(pos_, s.size()) == s; }

  void advance(std::size_t n = 1) {
    for (std::size_t i = 0; i < n && pos_ < src_.size(); ++i) {
      if (src_[pos_] == '\n') ++line_;
      ++pos_;
    }
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(Errc::MalformedXml, "malformed XML at line " + std::to_string(line_) + ": " + what,
                {std::to_string(line_)});
  }

  void skip_ws() {
    while (!at_end() && std::isspace(static_cast<unsigned char>(peek()))) advance();
  }

  void skip_until(std::string_view terminator, const char* what) {
    auto found = src_.find(terminator, pos_);
    if (found == std::string_view::npos) fail(std::string("unterminated ") + what);
    advance(found + terminator.size() - pos_);
  }

  // Comments, processing instructions, DOCTYPE and whitespace outside the root.
  void skip_misc() {
    for (;;) {
      skip_ws();
      if (starts_with("<?")) {
        skip_until("?>", "processing instruction");
      } else if (starts_with("<!--")) {
        skip_until("-->", "comment");
      } else if (starts_with("<!DOCTYPE")) {
        skip_doctype();
      } else {
        return;
      }
    }
  }

  void skip_doctype() {
    int bracket = 0;
    while (!at_end()) {
      char c = peek();
      advance();
      if (c == '[') ++bracket;
      if (c == ']') --bracket;
      if (c == '>' && bracket <= 0) return;
    }
    fail("unterminated DOCTYPE");
  }

  std::string parse_name() {
    if (at_end() || !is_name_start(peek())) fail("expected a name");
    auto start = pos_;
    while (!at_end() && is_name_char(peek())) advance();
    return std::string(src_.substr(start, pos_ - start));
  }

  void decode_entity(std::string& out) {
    auto semi = src_.find(';', pos_);
    if (semi == std::string_view::npos || semi - pos_ > 12) fail("bad entity reference");
    auto ent = src_.substr(pos_ + 1, semi - pos_ - 1);
    if (ent == "lt") out.push_back('<');
    else if (ent == "gt") out.push_back('>');
    else if (ent == "amp") out.push_back('&');
    else if (ent == "quot") out.push_back('"');
    else if (ent == "apos") out.push_back('\'');
    else if (!ent.empty() && ent[0] == '#') {
      std::uint32_t cp = 0;
      bool hex = ent.size() > 1 && (ent[1] == 'x' || ent[1] == 'X');
      auto digits = ent.substr(hex ? 2 : 1);
      if (digits.empty()) fail("empty character reference");
      for (char c : digits) {
        int v;
        if (c >= '0' && c <= '9') v = c - '0';
        else if (hex && c >= 'a' && c <= 'f') v = c - 'a' + 10;
        else if (hex && c >= 'A' && c <= 'F') v = c - 'A' + 10;
        else fail("bad character reference");
        cp = cp * (hex ? 16 : 10) + static_cast<std::uint32_t>(v);
        if (cp > 0x10FFFF) fail("character reference out of range");
      }
      append_utf8(out, cp);
    } else {
      fail("unknown entity &" + std::string(ent) + ";");
    }
    advance(semi + 1 - pos_);
  }

  std::string parse_attr_value() {
    char quote = peek();
    if (quote != '"' && quote != '\'') fail("attribute value must be quoted");
    advance();
    std::string value;
    while (!at_end() && peek() != quote) {
      if (peek() == '<') fail("'<' in attribute value");
      if (peek() == '&') decode_entity(value);
      else {
        value.push_back(peek());
        advance();
      }
    }
    if (at_end()) fail("unterminated attribute value");
    advance();
    return value;
  }

  Node parse_element(int depth) {
    if (depth > kMaxDepth) fail("element nesting too deep");
    Node node;
    node.begin = pos_;
    node.line = line_;
    advance();  // '<'
    node.name = parse_name();
    for (;;) {
      bool had_ws = !at_end() && std::isspace(static_cast<unsigned char>(peek()));
      skip_ws();
      if (at_end()) fail("unterminated start tag <" + node.name + ">");
      if (starts_with("/>")) {
        advance(2);
        node.end = pos_;
        return node;
      }
      if (peek() == '>') {
        advance();
        break;
      }
      if (!had_ws) fail("expected whitespace between attributes");
      auto attr_name = parse_name();
      skip_ws();
      if (peek() != '=') fail("expected '=' after attribute " + attr_name);
      advance();
      skip_ws();
      for (const auto& [existing, _] : node.attributes) {
        if (existing == attr_name) fail("duplicate attribute " + attr_name);
      }
      node.attributes.emplace_back(std::move(attr_name), parse_attr_value());
    }
    // content
    for (;;) {
      if (at_end()) fail("unterminated element <" + node.name + ">");
      if (starts_with("</")) {
        advance(2);
        auto closing = parse_name();
        if (closing != node.name) fail("mismatched closing tag </" + closing + "> for <" + node.name + ">");
        skip_ws();
        if (peek() != '>') fail("expected '>' in closing tag");
        advance();
        node.end = pos_;
        return node;
      }
      if (starts_with("<!--")) {
        skip_until("-->", "comment");
      } else if (starts_with("<![CDATA[")) {
        advance(9);
        auto close = src_.find("]]>", pos_);
        if (close == std::string_view::npos) fail("unterminated CDATA section");
        node.text.append(src_.substr(pos_, close - pos_));
        advance(close + 3 - pos_);
      } else if (starts_with("<?")) {
        skip_until("?>", "processing instruction");
      } else if (peek() == '<') {
        node.children.push_back(parse_element(depth + 1));
      } else if (peek() == '&') {
        decode_entity(node.text);
      } else {
        node.text.push_back(peek());
        advance();
      }
    }
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
};

}  // namespace

std::string_view Node::local_name() const { return strip_prefix(name); }

const Node* Node::child(std::string_view local) const {
  for (const auto& c : children) {
    if (c.local_name() == local) return &c;
  }
  return nullptr;
}

std::vector<const Node*> Node::children_named(std::string_view local) const {
  std::vector<const Node*> out;
  for (const auto& c : children) {
    if (c.local_name() == local) out.push_back(&c);
  }
  return out;
}

std::optional<std::string> Node::attr(std::string_view local) const {
  for (const auto& [k, v] : attributes) {
    if (strip_prefix(k) == local) return v;
  }
  return std::nullopt;
}

std::string Node::child_text(std::string_view local) const {
  const Node* c = child(local);
  return c ? c->text : std::string();
}

Document parse(std::string_view bytes) {
  Document doc;
  doc.source = std::string(bytes);
  Parser parser(doc.source);
  doc.root = parser.parse_document();
  return doc;
}

}  // namespace wfr::xml
