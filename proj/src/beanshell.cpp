#include "wfrevive/beanshell.hpp"

#include <algorithm>
#include <cctype>
#include <optional>
#include <stdexcept>

namespace wfr {

namespace {

enum class JType { Unknown, Str, Char, Int, Double, Bool, List, Set, Map, Builder, Array, Null };

struct Token {
  enum Kind { Ident, Number, String, Char, Op, End } kind = End;
  std::string text;  // decoded value for String/Char
  bool is_float = false;
};

struct Unsupported : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void append_utf8(std::string& out, unsigned cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::vector<Token> tokenize(std::string_view s) {
  static const char* kOps[] = {"==", "!=", "<=", ">=", "&&", "||", "++", "--", "+=", "-=", "*=", "/=", "%="};
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (s.substr(i, 2) == "//") {
      while (i < s.size() && s[i] != '\n') ++i;
    } else if (s.substr(i, 2) == "/*") {
      auto end = s.find("*/", i + 2);
      if (end == std::string_view::npos) throw Unsupported("unterminated comment");
      i = end + 2;
    } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '$') {
      auto b = i;
      while (i < s.size() && (std::isalnum(static_cast<unsigned char>(s[i])) || s[i] == '_' || s[i] == '$')) ++i;
      out.push_back({Token::Ident, std::string(s.substr(b, i - b))});
    } else if (std::isdigit(static_cast<unsigned char>(c)) ||
               (c == '.' && i + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[i + 1])))) {
      auto b = i;
      bool is_float = false;
      while (i < s.size() && (std::isalnum(static_cast<unsigned char>(s[i])) || s[i] == '.')) {
        if (s[i] == '.' || s[i] == 'e' || s[i] == 'E') is_float = true;
        ++i;
      }
      std::string num(s.substr(b, i - b));
      if (num.rfind("0x", 0) == 0 || num.rfind("0X", 0) == 0) is_float = false;
      char suffix = static_cast<char>(std::tolower(static_cast<unsigned char>(num.back())));
      if (suffix == 'l') num.pop_back();
      if ((suffix == 'f' || suffix == 'd') && num.rfind("0x", 0) != 0) {
        num.pop_back();
        is_float = true;
      }
      out.push_back({Token::Number, num, is_float});
    } else if (c == '"' || c == '\'') {
      std::string val;
      ++i;
      while (true) {
        if (i >= s.size() || s[i] == '\n') throw Unsupported("unterminated literal");
        char d = s[i++];
        if (d == c) break;
        if (d != '\\') {
          val.push_back(d);
          continue;
        }
        if (i >= s.size()) throw Unsupported("unterminated literal");
        char e = s[i++];
        switch (e) {
          case 'n': val.push_back('\n'); break;
          case 't': val.push_back('\t'); break;
          case 'r': val.push_back('\r'); break;
          case 'b': val.push_back('\b'); break;
          case 'f': val.push_back('\f'); break;
          case '0': val.push_back('\0'); break;
          case 'u': {
            if (i + 4 > s.size()) throw Unsupported("bad unicode escape");
            append_utf8(val, static_cast<unsigned>(std::stoul(std::string(s.substr(i, 4)), nullptr, 16)));
            i += 4;
            break;
          }
          default: val.push_back(e);
        }
      }
      out.push_back({c == '"' ? Token::String : Token::Char, val});
    } else {
      bool matched = false;
      for (const char* op : kOps) {
        if (s.substr(i, 2) == op) {
          out.push_back({Token::Op, op});
          i += 2;
          matched = true;
          break;
        }
      }
      if (matched) continue;
      if (std::string_view("+-*/%<>=!(){}[];,.?:&|").find(c) == std::string_view::npos) {
        throw Unsupported(std::string("unexpected character '") + c + "'");
      }
      out.push_back({Token::Op, std::string(1, c)});
      ++i;
    }
  }
  out.push_back({Token::End, ""});
  return out;
}

std::optional<JType> type_from_name(const std::string& name) {
  static const std::map<std::string, JType> kTypes = {
      {"String", JType::Str},         {"CharSequence", JType::Str},   {"char", JType::Char},
      {"Character", JType::Char},     {"int", JType::Int},            {"long", JType::Int},
      {"short", JType::Int},          {"byte", JType::Int},           {"Integer", JType::Int},
      {"Long", JType::Int},           {"double", JType::Double},      {"float", JType::Double},
      {"Double", JType::Double},      {"Float", JType::Double},       {"boolean", JType::Bool},
      {"Boolean", JType::Bool},       {"List", JType::List},          {"ArrayList", JType::List},
      {"LinkedList", JType::List},    {"Vector", JType::List},        {"Collection", JType::List},
      {"Iterable", JType::List},      {"Set", JType::Set},            {"HashSet", JType::Set},
      {"TreeSet", JType::Set},        {"LinkedHashSet", JType::Set},  {"Map", JType::Map},
      {"HashMap", JType::Map},        {"TreeMap", JType::Map},        {"LinkedHashMap", JType::Map},
      {"Hashtable", JType::Map},      {"StringBuffer", JType::Builder}, {"StringBuilder", JType::Builder},
      {"Object", JType::Unknown},     {"var", JType::Unknown}};
  auto it = kTypes.find(name);
  if (it == kTypes.end()) return std::nullopt;
  return it->second;
}

bool is_numeric(JType t) { return t == JType::Int || t == JType::Double; }

struct Expr {
  std::string py;
  JType type = JType::Unknown;
  bool atomic = true;  // safe to embed without parentheses
};

std::string wrap(const Expr& e) { return e.atomic ? e.py : "(" + e.py + ")"; }

std::string as_str(const Expr& e) {
  if (e.type == JType::Str || e.type == JType::Char) return wrap(e);
  return "_jstr(" + e.py + ")";
}

class Translator {
 public:
  Translator(std::vector<Token> toks, const std::vector<std::string>& inputs, int max_nesting)
      : toks_(std::move(toks)), max_nesting_(max_nesting) {
    for (const auto& in : inputs) types_[in] = JType::Unknown;
    inputs_.insert(inputs.begin(), inputs.end());
  }

  Transliteration run() {
    Transliteration t;
    while (peek().kind != Token::End) statement();
    t.ok = true;
    t.lines = std::move(lines_);
    t.assigned = assigned_;
    for (const auto& name : assigned_) {
      auto ty = types_[name];
      t.output_expr[name] = ty == JType::Builder ? "''.join(" + py_ident(name) + ")" : py_ident(name);
    }
    t.branches = branches_;
    return t;
  }

 private:
  // ---------------------------------------------------------------- tokens
  const Token& peek(std::size_t ahead = 0) const {
    return toks_[std::min(pos_ + ahead, toks_.size() - 1)];
  }
  bool is_op(const char* op, std::size_t ahead = 0) const {
    return peek(ahead).kind == Token::Op && peek(ahead).text == op;
  }
  bool is_ident(const char* word, std::size_t ahead = 0) const {
    return peek(ahead).kind == Token::Ident && peek(ahead).text == word;
  }
  Token next() { return toks_[pos_ < toks_.size() - 1 ? pos_++ : pos_]; }
  void expect(const char* op) {
    if (!is_op(op)) throw Unsupported(std::string("expected '") + op + "' near '" + peek().text + "'");
    ++pos_;
  }
  std::string ident() {
    if (peek().kind != Token::Ident) throw Unsupported("expected a name near '" + peek().text + "'");
    return next().text;
  }

  void emit(const std::string& line) { lines_.push_back(std::string(indent_ * 4, ' ') + line); }

  // ---------------------------------------------------------------- types

  // Parses a type at the cursor. Returns nullopt (cursor unchanged) if the
  // tokens do not look like a type.
  std::optional<std::pair<JType, bool>> try_type() {
    auto save = pos_;
    if (peek().kind != Token::Ident) return std::nullopt;
    std::string name = next().text;
    while (is_op(".") && peek(1).kind == Token::Ident) {
      pos_++;
      name = next().text;  // java.util.List -> List
    }
    if (is_op("<")) {
      int depth = 0;
      do {
        if (is_op("<")) ++depth;
        if (is_op(">")) --depth;
        if (peek().kind == Token::End || is_op(";") || is_op("(")) {
          pos_ = save;
          return std::nullopt;
        }
        ++pos_;
      } while (depth > 0);
    }
    bool array = false;
    while (is_op("[") && is_op("]", 1)) {
      pos_ += 2;
      array = true;
    }
    auto t = type_from_name(name);
    if (!t) {
      if (!std::isupper(static_cast<unsigned char>(name[0]))) {
        pos_ = save;
        return std::nullopt;
      }
      t = JType::Unknown;
    }
    return std::pair{array ? JType::Array : *t, true};
  }

  bool looks_like_declaration() {
    auto save = pos_;
    auto t = try_type();
    bool decl = t && peek().kind == Token::Ident && (is_op("=", 1) || is_op(";", 1) || is_op(",", 1));
    pos_ = save;
    return decl;
  }

  // ---------------------------------------------------------------- statements

  void statement() {
    if (is_op(";")) {
      ++pos_;
      return;
    }
    if (is_op("{")) {
      ++pos_;
      while (!is_op("}")) {
        if (peek().kind == Token::End) throw Unsupported("unbalanced braces");
        statement();
      }
      ++pos_;
      return;
    }
    if (peek().kind == Token::Ident) {
      const auto& w = peek().text;
      if (w == "import") {
        while (!is_op(";") && peek().kind != Token::End) ++pos_;
        expect(";");
        return;
      }
      if (w == "if") return if_statement(false);
      if (w == "for") return for_statement();
      if (w == "while") return while_statement();
      if (w == "break" || w == "continue") {
        if (loop_depth_ == 0) throw Unsupported(w + " outside a loop");
        if (w == "continue" && in_counted_while_) throw Unsupported("continue inside a counted loop");
        emit(next().text);
        expect(";");
        return;
      }
      static const std::set<std::string> kRefused = {"do",     "switch", "try",    "throw", "return", "class",
                                                     "synchronized", "goto", "assert", "catch", "finally"};
      if (kRefused.count(w)) throw Unsupported("'" + w + "' statements are not translated");
    }
    if (looks_like_declaration()) return declaration();
    simple_statement();
    expect(";");
  }

  void declaration() {
    auto [type, _] = *try_type();
    do {
      auto name = ident();
      types_[name] = type;
      assigned_.insert(name);
      if (is_op("=")) {
        ++pos_;
        auto e = expression();
        if (type == JType::Unknown) types_[name] = e.type;
        emit(py_ident(name) + " = " + e.py);
      } else {
        emit(py_ident(name) + " = " + default_value(type));
      }
      if (!is_op(",")) break;
      ++pos_;
    } while (true);
    expect(";");
  }

  static std::string default_value(JType t) {
    switch (t) {
      case JType::Int: return "0";
      case JType::Double: return "0.0";
      case JType::Bool: return "False";
      default: return "None";
    }
  }

  // Assignment, increment, or call, without the trailing ';'.
  void simple_statement() {
    if ((is_op("++") || is_op("--")) && peek(1).kind == Token::Ident) {
      auto op = next().text;
      auto name = ident();
      require_known(name);
      emit(py_ident(name) + (op == "++" ? " += 1" : " -= 1"));
      return;
    }
    if (peek().kind == Token::Ident && (is_op("=", 1) || is_op("+=", 1) || is_op("-=", 1) || is_op("*=", 1) ||
                                        is_op("/=", 1) || is_op("%=", 1) || is_op("++", 1) || is_op("--", 1))) {
      auto name = ident();
      auto op = next().text;
      if (op == "++" || op == "--") {
        require_known(name);
        emit(py_ident(name) + (op == "++" ? " += 1" : " -= 1"));
        return;
      }
      auto rhs = expression();
      if (op == "=") {
        if (!types_.count(name)) types_[name] = rhs.type;
        assigned_.insert(name);
        emit(py_ident(name) + " = " + rhs.py);
        return;
      }
      require_known(name);
      assigned_.insert(name);
      Expr lhs{py_ident(name), types_[name], true};
      auto combined = binary(lhs, op.substr(0, 1), rhs);
      emit(py_ident(name) + " = " + combined.py);
      return;
    }
    // Call or indexed assignment.
    auto target = postfix();
    if (is_op("=")) {
      ++pos_;
      auto rhs = expression();
      if (target.py.back() != ']') throw Unsupported("unsupported assignment target");
      emit(target.py + " = " + rhs.py);
      return;
    }
    if (!last_was_call_) throw Unsupported("expression statement has no effect");
    emit(statement_form(target.py));
  }

  // map.put as a statement reads better as an item assignment.
  static std::string statement_form(const std::string& py) {
    if (py.rfind("_jput(", 0) == 0) return py;
    return py;
  }

  void enter_block(const std::string& header) {
    emit(header);
    ++indent_;
    auto before = lines_.size();
    body();
    if (lines_.size() == before) emit("pass");
    --indent_;
  }

  void body() {
    if (++nesting_ > max_nesting_) {
      throw Unsupported("control flow nested deeper than " + std::to_string(max_nesting_) + " levels");
    }
    statement();
    --nesting_;
  }

  void if_statement(bool is_elif) {
    ++pos_;
    branches_ = true;
    expect("(");
    auto cond = expression();
    expect(")");
    enter_block(std::string(is_elif ? "elif " : "if ") + truthy(cond) + ":");
    if (is_ident("else")) {
      ++pos_;
      if (is_ident("if")) return if_statement(true);
      enter_block("else:");
    }
  }

  void while_statement() {
    ++pos_;
    expect("(");
    auto cond = expression();
    expect(")");
    ++loop_depth_;
    enter_block("while " + truthy(cond) + ":");
    --loop_depth_;
  }

  void for_statement() {
    ++pos_;
    expect("(");
    auto save = pos_;
    if (auto t = try_type(); t && peek().kind == Token::Ident && is_op(":", 1)) {
      auto var = ident();
      ++pos_;
      auto iterable = expression();
      expect(")");
      types_[var] = t->first == JType::Unknown ? element_type(iterable.type) : t->first;
      assigned_.insert(var);
      std::string it = iterable.type == JType::Str ? iterable.py : iterable.py;
      ++loop_depth_;
      enter_block("for " + py_ident(var) + " in " + it + ":");
      --loop_depth_;
      return;
    }
    pos_ = save;
    // for (init; cond; update)
    std::vector<std::string> init_lines;
    std::string var;
    std::optional<Expr> start;
    if (!is_op(";")) {
      auto mark = lines_.size();
      if (looks_like_declaration()) {
        auto type_save = pos_;
        try_type();
        var = peek().text;
        pos_ = type_save;
        declaration();  // consumes ';'
      } else {
        if (peek().kind == Token::Ident && is_op("=", 1)) var = peek().text;
        simple_statement();
        expect(";");
      }
      init_lines.assign(lines_.begin() + static_cast<long>(mark), lines_.end());
      lines_.resize(mark);
    } else {
      ++pos_;
    }
    std::optional<Expr> cond;
    std::string cond_op;
    std::optional<Expr> bound;
    if (!is_op(";")) {
      auto cond_start = pos_;
      if (!var.empty() && is_ident(var.c_str()) && (is_op("<", 1) || is_op("<=", 1))) {
        pos_ += 1;
        cond_op = next().text;
        bound = additive();
        if (!is_op(";")) {
          bound.reset();
          cond_op.clear();
        }
      }
      pos_ = cond_start;
      cond = expression();
    }
    expect(";");
    auto update_start = pos_;
    bool simple_step = false;
    if (!var.empty() && ((is_ident(var.c_str()) && is_op("++", 1)) || (is_op("++") && is_ident(var.c_str(), 1)))) {
      pos_ += 2;
      simple_step = is_op(")");
    }
    if (!simple_step) pos_ = update_start;

    bool counted = simple_step && bound && init_lines.size() == 1 &&
                   init_lines[0].rfind(std::string(indent_ * 4, ' ') + py_ident(var) + " = ", 0) == 0;
    if (counted && !modifies_in_body(var)) {
      expect(")");
      auto init_value = init_lines[0].substr(indent_ * 4 + py_ident(var).size() + 3);
      auto stop = cond_op == "<=" ? wrap(*bound) + " + 1" : bound->py;
      ++loop_depth_;
      enter_block("for " + py_ident(var) + " in range(" + init_value + ", " + stop + "):");
      --loop_depth_;
      return;
    }
    // General form: init; while cond: body; update
    for (auto& l : init_lines) lines_.push_back(l);
    std::vector<std::string> update_lines;
    if (simple_step) {
      update_lines.push_back(std::string((indent_ + 1) * 4, ' ') + py_ident(var) + " += 1");
    } else if (!is_op(")")) {
      auto mark = lines_.size();
      ++indent_;
      simple_statement();
      --indent_;
      update_lines.assign(lines_.begin() + static_cast<long>(mark), lines_.end());
      lines_.resize(mark);
    }
    expect(")");
    emit("while " + (cond ? truthy(*cond) : std::string("True")) + ":");
    ++indent_;
    ++loop_depth_;
    bool outer = in_counted_while_;
    in_counted_while_ = true;
    body();
    in_counted_while_ = outer;
    --loop_depth_;
    for (auto& l : update_lines) lines_.push_back(l);
    --indent_;
  }

  // Conservative scan: does the loop body (up to its matching brace) assign
  // the loop variable?
  bool modifies_in_body(const std::string& var) const {
    std::size_t p = pos_ + 1;  // after ')'
    int depth = 0;
    for (; p < toks_.size(); ++p) {
      const auto& t = toks_[p];
      if (t.kind == Token::Op && t.text == "{") ++depth;
      if (t.kind == Token::Op && t.text == "}") {
        if (--depth <= 0) break;
      }
      if (t.kind == Token::Op && t.text == ";" && depth == 0) break;
      if (t.kind == Token::Ident && t.text == var && p + 1 < toks_.size()) {
        const auto& n = toks_[p + 1];
        if (n.kind == Token::Op && (n.text == "=" || n.text == "++" || n.text == "--" || n.text == "+=" ||
                                    n.text == "-=" || n.text == "*=" || n.text == "/=")) {
          return true;
        }
      }
      if (t.kind == Token::Op && (t.text == "++" || t.text == "--") && p + 1 < toks_.size() &&
          toks_[p + 1].kind == Token::Ident && toks_[p + 1].text == var) {
        return true;
      }
    }
    return false;
  }

  static JType element_type(JType container) {
    if (container == JType::Str) return JType::Char;
    return JType::Unknown;
  }

  static std::string truthy(const Expr& e) { return e.py; }

  void require_known(const std::string& name) {
    if (!types_.count(name)) throw Unsupported("refers to an undefined name '" + name + "'");
  }

  // ---------------------------------------------------------------- expressions

  Expr expression() { return ternary(); }

  Expr ternary() {
    auto cond = logical_or();
    if (!is_op("?")) return cond;
    ++pos_;
    branches_ = true;
    auto a = expression();
    expect(":");
    auto b = expression();
    JType t = a.type == b.type ? a.type : JType::Unknown;
    return {wrap(a) + " if " + wrap(cond) + " else " + wrap(b), t, false};
  }

  Expr logical_or() {
    auto l = logical_and();
    while (is_op("||")) {
      ++pos_;
      auto r = logical_and();
      l = {wrap(l) + " or " + wrap(r), JType::Bool, false};
    }
    return l;
  }

  Expr logical_and() {
    auto l = equality();
    while (is_op("&&")) {
      ++pos_;
      auto r = equality();
      l = {wrap(l) + " and " + wrap(r), JType::Bool, false};
    }
    return l;
  }

  Expr equality() {
    auto l = relational();
    while (is_op("==") || is_op("!=")) {
      bool eq = next().text == "==";
      auto r = relational();
      if (r.type == JType::Null || l.type == JType::Null) {
        const Expr& other = r.type == JType::Null ? l : r;
        l = {wrap(other) + (eq ? " is None" : " is not None"), JType::Bool, false};
      } else {
        l = {wrap(l) + (eq ? " == " : " != ") + wrap(r), JType::Bool, false};
      }
    }
    return l;
  }

  Expr relational() {
    auto l = additive();
    while (is_op("<") || is_op(">") || is_op("<=") || is_op(">=")) {
      auto op = next().text;
      auto r = additive();
      l = {wrap(l) + " " + op + " " + wrap(r), JType::Bool, false};
    }
    if (is_ident("instanceof")) throw Unsupported("instanceof is not translated");
    return l;
  }

  Expr binary(const Expr& l, const std::string& op, const Expr& r) {
    if (op == "+") {
      bool ls = l.type == JType::Str, rs = r.type == JType::Str;
      if (ls || rs || (l.type == JType::Char && r.type == JType::Char)) {
        return {as_str(l) + " + " + as_str(r), JType::Str, false};
      }
      if (is_numeric(l.type) && is_numeric(r.type)) {
        return {wrap(l) + " + " + wrap(r), l.type == JType::Double || r.type == JType::Double ? JType::Double : JType::Int,
                false};
      }
      return {"_jplus(" + l.py + ", " + r.py + ")", JType::Unknown, true};
    }
    JType num = (l.type == JType::Double || r.type == JType::Double) ? JType::Double
                : (l.type == JType::Int && r.type == JType::Int)     ? JType::Int
                                                                     : JType::Unknown;
    if (op == "/") {
      if (num == JType::Int) return {"_jidiv(" + l.py + ", " + r.py + ")", JType::Int, true};
      return {wrap(l) + " / " + wrap(r), JType::Double, false};
    }
    if (op == "%") return {"_jmod(" + l.py + ", " + r.py + ")", num, true};
    return {wrap(l) + " " + op + " " + wrap(r), num, false};
  }

  Expr additive() {
    auto l = multiplicative();
    while (is_op("+") || is_op("-")) {
      auto op = next().text;
      auto r = multiplicative();
      l = binary(l, op, r);
    }
    return l;
  }

  Expr multiplicative() {
    auto l = unary();
    while (is_op("*") || is_op("/") || is_op("%")) {
      auto op = next().text;
      auto r = unary();
      l = binary(l, op, r);
    }
    return l;
  }

  Expr unary() {
    if (is_op("!")) {
      ++pos_;
      auto e = unary();
      return {"not " + wrap(e), JType::Bool, false};
    }
    if (is_op("-")) {
      ++pos_;
      auto e = unary();
      return {"-" + wrap(e), e.type, false};
    }
    if (is_op("+")) {
      ++pos_;
      return unary();
    }
    if (is_op("++") || is_op("--")) throw Unsupported("increment inside an expression");
    // Cast: '(' Type ')' operand
    if (is_op("(") && peek(1).kind == Token::Ident) {
      auto save = pos_;
      ++pos_;
      auto t = try_type();
      if (t && is_op(")") && (peek(1).kind == Token::Ident || peek(1).kind == Token::Number ||
                              peek(1).kind == Token::String || is_op("(", 1))) {
        auto name_ok = type_from_name(toks_[save + 1].text).has_value() ||
                       std::isupper(static_cast<unsigned char>(toks_[save + 1].text[0]));
        if (name_ok) {
          ++pos_;
          auto e = unary();
          switch (t->first) {
            case JType::Int: return {"int(" + e.py + ")", JType::Int, true};
            case JType::Double: return {"float(" + e.py + ")", JType::Double, true};
            case JType::Str: return {e.py, JType::Str, e.atomic};
            default: return {e.py, t->first, e.atomic};
          }
        }
      }
      pos_ = save;
    }
    return postfix();
  }

  Expr postfix() {
    last_was_call_ = false;
    auto e = primary();
    while (true) {
      if (is_op(".")) {
        ++pos_;
        auto name = ident();
        if (is_op("(")) {
          auto args = arguments();
          e = method(e, name, args);
          last_was_call_ = true;
        } else if (name == "length") {
          e = {"len(" + e.py + ")", JType::Int, true};
          last_was_call_ = false;
        } else {
          throw Unsupported("field access '" + name + "' is not translated");
        }
      } else if (is_op("[")) {
        ++pos_;
        auto idx = expression();
        expect("]");
        e = {wrap(e) + "[" + idx.py + "]", e.type == JType::Array ? JType::Unknown : JType::Unknown, true};
        last_was_call_ = false;
      } else if (is_op("++") || is_op("--")) {
        throw Unsupported("increment inside an expression");
      } else {
        return e;
      }
    }
  }

  std::vector<Expr> arguments() {
    expect("(");
    std::vector<Expr> args;
    if (!is_op(")")) {
      do {
        args.push_back(expression());
        if (!is_op(",")) break;
        ++pos_;
      } while (true);
    }
    expect(")");
    return args;
  }

  static std::string join_args(const std::vector<Expr>& args) {
    std::string out;
    for (const auto& a : args) out += (out.empty() ? "" : ", ") + a.py;
    return out;
  }

  Expr primary() {
    const Token& t = peek();
    switch (t.kind) {
      case Token::Number: {
        ++pos_;
        return {t.text, t.is_float ? JType::Double : JType::Int, true};
      }
      case Token::String: ++pos_; return {py_str(t.text), JType::Str, true};
      case Token::Char: ++pos_; return {py_str(t.text), JType::Char, true};
      case Token::End: throw Unsupported("unexpected end of script");
      case Token::Op:
        if (t.text == "(") {
          ++pos_;
          auto e = expression();
          expect(")");
          return {"(" + e.py + ")", e.type, true};
        }
        throw Unsupported("unexpected '" + t.text + "'");
      case Token::Ident: break;
    }
    auto name = next().text;
    if (name == "true" || name == "false") return {name == "true" ? "True" : "False", JType::Bool, true};
    if (name == "null") return {"None", JType::Null, true};
    if (name == "new") return construct();
    if (is_op("(")) throw Unsupported("call to undefined function '" + name + "'");
    static const std::set<std::string> kStatics = {"Integer", "Long", "Double", "Float", "String", "Math",
                                                   "System", "Arrays", "Collections", "Boolean", "Character"};
    if (kStatics.count(name) && is_op(".")) return static_call(name);
    require_known(name);
    return {py_ident(name), types_[name], true};
  }

  Expr construct() {
    auto t = try_type();
    if (!t) throw Unsupported("unsupported 'new' expression");
    if (is_op("[")) {
      ++pos_;
      auto n = expression();
      expect("]");
      return {"[None] * " + wrap(n), JType::Array, false};
    }
    if (t->first == JType::Array && is_op("{")) {
      ++pos_;
      std::vector<Expr> items;
      while (!is_op("}")) {
        items.push_back(expression());
        if (is_op(",")) ++pos_;
      }
      ++pos_;
      return {"[" + join_args(items) + "]", JType::Array, true};
    }
    auto args = arguments();
    switch (t->first) {
      case JType::List: return {args.empty() ? "[]" : "list(" + args[0].py + ")", JType::List, true};
      case JType::Set: return {args.empty() ? "set()" : "set(" + args[0].py + ")", JType::Set, true};
      case JType::Map: return {args.empty() ? "{}" : "dict(" + args[0].py + ")", JType::Map, true};
      case JType::Builder:
        if (args.empty() || is_numeric(args[0].type)) return {"[]", JType::Builder, true};
        return {"[" + as_str(args[0]) + "]", JType::Builder, true};
      case JType::Str: return {args.empty() ? "''" : as_str(args[0]), JType::Str, true};
      case JType::Int: return {"int(" + join_args(args) + ")", JType::Int, true};
      case JType::Double: return {"float(" + join_args(args) + ")", JType::Double, true};
      default: throw Unsupported("cannot construct this class");
    }
  }

  Expr static_call(const std::string& cls) {
    expect(".");
    auto name = ident();
    if (cls == "System" && name == "out") {
      expect(".");
      auto fn = ident();
      auto args = arguments();
      last_was_call_ = true;
      std::string arg = args.empty() ? "''" : as_str(args[0]);
      if (fn == "println") return {"print(" + arg + ")", JType::Unknown, true};
      if (fn == "print") return {"print(" + arg + ", end='')", JType::Unknown, true};
      throw Unsupported("System.out." + fn + " is not translated");
    }
    if (!is_op("(")) throw Unsupported(cls + "." + name + " is not translated");
    auto args = arguments();
    auto need = [&](std::size_t n) {
      if (args.size() != n) throw Unsupported(cls + "." + name + " with " + std::to_string(args.size()) + " arguments");
    };
    if ((cls == "Integer" || cls == "Long") && (name == "parseInt" || name == "parseLong" || name == "valueOf")) {
      need(1);
      return {"int(" + args[0].py + ")", JType::Int, true};
    }
    if ((cls == "Double" || cls == "Float") && (name == "parseDouble" || name == "parseFloat" || name == "valueOf")) {
      need(1);
      return {"float(" + args[0].py + ")", JType::Double, true};
    }
    if (cls == "Boolean" && name == "parseBoolean") {
      need(1);
      return {"(" + as_str(args[0]) + ".lower() == 'true')", JType::Bool, true};
    }
    if ((cls == "String" || cls == "Integer" || cls == "Double") && (name == "valueOf" || name == "toString")) {
      need(1);
      return {as_str(args[0]), JType::Str, true};
    }
    if (cls == "String" && name == "join") {
      need(2);
      return {as_str(args[0]) + ".join(_jstr(x) for x in " + args[1].py + ")", JType::Str, true};
    }
    if (cls == "Math" && (name == "max" || name == "min" || name == "abs")) {
      JType t = args.empty() ? JType::Unknown : args[0].type;
      return {name + "(" + join_args(args) + ")", t, true};
    }
    if (cls == "Arrays" && name == "asList") {
      if (args.size() == 1 && args[0].type == JType::Array) return {"list(" + args[0].py + ")", JType::List, true};
      return {"[" + join_args(args) + "]", JType::List, true};
    }
    if (cls == "Collections" && name == "sort") {
      need(1);
      return {args[0].py + ".sort()", JType::Unknown, true};
    }
    if (cls == "Character" && (name == "isDigit" || name == "isLetter" || name == "isWhitespace")) {
      need(1);
      std::string m = name == "isDigit" ? "isdigit" : name == "isLetter" ? "isalpha" : "isspace";
      return {args[0].py + "." + m + "()", JType::Bool, true};
    }
    throw Unsupported(cls + "." + name + " is not translated");
  }

  Expr method(const Expr& r, const std::string& name, const std::vector<Expr>& args) {
    auto need = [&](std::size_t n) {
      if (args.size() != n) {
        throw Unsupported("method " + name + " with " + std::to_string(args.size()) + " arguments");
      }
    };
    const std::string recv = wrap(r);
    const JType t = r.type;
    if (name == "length") {
      need(0);
      if (t == JType::Builder) return {"len(''.join(" + r.py + "))", JType::Int, true};
      return {"len(" + r.py + ")", JType::Int, true};
    }
    if (name == "size") {
      need(0);
      return {"len(" + r.py + ")", JType::Int, true};
    }
    if (name == "isEmpty") {
      need(0);
      return {"len(" + r.py + ") == 0", JType::Bool, false};
    }
    if (name == "trim") return {recv + ".strip()", JType::Str, true};
    if (name == "toUpperCase") return {recv + ".upper()", JType::Str, true};
    if (name == "toLowerCase") return {recv + ".lower()", JType::Str, true};
    if (name == "charAt") {
      need(1);
      return {recv + "[" + args[0].py + "]", JType::Char, true};
    }
    if (name == "substring") {
      if (args.size() == 1) return {recv + "[" + args[0].py + ":]", JType::Str, true};
      need(2);
      return {recv + "[" + args[0].py + ":" + args[1].py + "]", JType::Str, true};
    }
    if (name == "indexOf" || name == "lastIndexOf") {
      need(1);
      if (t == JType::List || t == JType::Array) return {"_jindex(" + r.py + ", " + args[0].py + ")", JType::Int, true};
      return {recv + (name == "indexOf" ? ".find(" : ".rfind(") + args[0].py + ")", JType::Int, true};
    }
    if (name == "contains" || name == "containsKey") {
      need(1);
      return {wrap(args[0]) + " in " + recv, JType::Bool, false};
    }
    if (name == "containsValue") {
      need(1);
      return {wrap(args[0]) + " in " + recv + ".values()", JType::Bool, false};
    }
    if (name == "startsWith" || name == "endsWith") {
      need(1);
      return {recv + (name == "startsWith" ? ".startswith(" : ".endswith(") + args[0].py + ")", JType::Bool, true};
    }
    if (name == "equals") {
      need(1);
      return {recv + " == " + wrap(args[0]), JType::Bool, false};
    }
    if (name == "equalsIgnoreCase") {
      need(1);
      return {recv + ".lower() == " + as_str(args[0]) + ".lower()", JType::Bool, false};
    }
    if (name == "split") {
      need(1);
      return {"_jsplit(" + r.py + ", " + args[0].py + ")", JType::Array, true};
    }
    if (name == "replace") {
      need(2);
      return {recv + ".replace(" + as_str(args[0]) + ", " + as_str(args[1]) + ")", JType::Str, true};
    }
    if (name == "replaceAll" || name == "replaceFirst") {
      need(2);
      return {"_jreplace(" + r.py + ", " + args[0].py + ", " + args[1].py + (name == "replaceFirst" ? ", 1" : ", 0") +
                  ")",
              JType::Str, true};
    }
    if (name == "matches") {
      need(1);
      return {"_jmatches(" + r.py + ", " + args[0].py + ")", JType::Bool, true};
    }
    if (name == "concat") {
      need(1);
      return {as_str(r) + " + " + as_str(args[0]), JType::Str, false};
    }
    if (name == "toString") {
      need(0);
      if (t == JType::Builder) return {"''.join(" + r.py + ")", JType::Str, true};
      return {as_str(r), JType::Str, true};
    }
    if (name == "append") {
      need(1);
      return {"_jappend(" + r.py + ", " + args[0].py + ")", JType::Builder, true};
    }
    if (name == "add") {
      if (args.size() == 2) return {"_jinsert(" + r.py + ", " + args[0].py + ", " + args[1].py + ")", JType::Bool, true};
      need(1);
      return {"_jadd(" + r.py + ", " + args[0].py + ")", JType::Bool, true};
    }
    if (name == "addAll") {
      need(1);
      return {"_jaddall(" + r.py + ", " + args[0].py + ")", JType::Bool, true};
    }
    if (name == "get") {
      need(1);
      if (t == JType::Map) return {recv + ".get(" + args[0].py + ")", JType::Unknown, true};
      if (t == JType::List || t == JType::Array) return {recv + "[" + args[0].py + "]", JType::Unknown, true};
      return {"_jget(" + r.py + ", " + args[0].py + ")", JType::Unknown, true};
    }
    if (name == "put") {
      need(2);
      return {"_jput(" + r.py + ", " + args[0].py + ", " + args[1].py + ")", JType::Unknown, true};
    }
    if (name == "keySet") return {"list(" + recv + ".keys())", JType::List, true};
    if (name == "values") return {"list(" + recv + ".values())", JType::List, true};
    throw Unsupported("method " + name + "() is not translated");
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  int max_nesting_;
  int nesting_ = 0;
  int indent_ = 0;
  int loop_depth_ = 0;
  bool in_counted_while_ = false;
  bool branches_ = false;
  bool last_was_call_ = false;
  std::map<std::string, JType> types_;
  std::set<std::string> inputs_;
  std::set<std::string> assigned_;
  std::vector<std::string> lines_;
};

}  // namespace

std::string py_ident(std::string_view name) {
  static const std::set<std::string> kReserved = {
      "False", "None",   "True",  "and",  "as",     "assert", "async", "await", "break", "class",  "continue",
      "def",   "del",    "elif",  "else", "except", "finally", "for",  "from",  "global", "if",    "import",
      "in",    "is",     "lambda", "nonlocal", "not", "or",   "pass",  "raise", "return", "try",   "while",
      "with",  "yield",  "print", "len",  "str",    "int",    "float", "list",  "dict",  "set",    "range",
      "max",   "min",    "abs",   "json", "os",     "sys",    "re",    "main",  "CONFIG"};
  std::string out;
  for (char c : name) out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '_' ? c : '_');
  if (out.empty() || std::isdigit(static_cast<unsigned char>(out[0]))) out = "v_" + out;
  if (out[0] == '_') out = "v" + out;  // keep clear of runtime helpers
  if (kReserved.count(out)) out += "_";
  return out;
}

std::string py_str(std::string_view text) {
  std::string out = "'";
  for (unsigned char c : text) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\'': out += "\\'"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (c < 0x20 || c == 0x7f) {
          static const char* hex = "0123456789abcdef";
          out += "\\x";
          out.push_back(hex[c >> 4]);
          out.push_back(hex[c & 15]);
        } else {
          out.push_back(static_cast<char>(c));
        }
    }
  }
  return out + "'";
}

Transliteration transliterate_beanshell(std::string_view script, const std::vector<std::string>& inputs,
                                        int max_nesting) {
  try {
    Translator t(tokenize(script), inputs, max_nesting);
    return t.run();
  } catch (const Unsupported& e) {
    Transliteration fail;
    fail.reason = e.what();
    return fail;
  } catch (const std::exception& e) {
    Transliteration fail;
    fail.reason = std::string("could not read the script: ") + e.what();
    return fail;
  }
}

const std::string& beanshell_runtime() {
  static const std::string kRuntime = R"PY(def _jstr(x):
    if x is None:
        return 'null'
    if x is True:
        return 'true'
    if x is False:
        return 'false'
    if isinstance(x, (list, tuple)):
        return '[' + ', '.join(_jstr(v) for v in x) + ']'
    if isinstance(x, dict):
        return '{' + ', '.join(_jstr(k) + '=' + _jstr(v) for k, v in x.items()) + '}'
    return str(x)


def _jplus(a, b):
    if isinstance(a, str) or isinstance(b, str):
        return _jstr(a) + _jstr(b)
    return a + b


def _jidiv(a, b):
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def _jmod(a, b):
    return a - b * _jidiv(a, b) if isinstance(a, int) and isinstance(b, int) else math.fmod(a, b)


def _jsplit(s, pattern):
    if s is None:
        return []
    parts = re.split(pattern, s)
    while parts and parts[-1] == '':
        parts.pop()
    return parts


def _jreplace(s, pattern, repl, count):
    return re.sub(pattern, re.sub(r'\$(\d)', r'\\\1', repl), s, count=count)


def _jmatches(s, pattern):
    return re.fullmatch(pattern, s) is not None


def _jindex(seq, item):
    return seq.index(item) if item in seq else -1


def _jadd(coll, item):
    if isinstance(coll, set):
        if item in coll:
            return False
        coll.add(item)
    else:
        coll.append(item)
    return True


def _jinsert(coll, index, item):
    coll.insert(index, item)
    return True


def _jaddall(coll, items):
    for item in items:
        _jadd(coll, item)
    return True


def _jappend(builder, item):
    builder.append(_jstr(item))
    return builder


def _jget(coll, key):
    return coll.get(key) if isinstance(coll, dict) else coll[key]


def _jput(mapping, key, value):
    previous = mapping.get(key)
    mapping[key] = value
    return previous
)PY";
  return kRuntime;
}

}  // namespace wfr
