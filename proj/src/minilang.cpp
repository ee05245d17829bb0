#include "astmask/minilang.hpp"

#include <cctype>
#include <optional>

#include "astmask/error.hpp"

namespace astmask::minilang {

namespace {

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::vector<Token> lex(std::string_view src) {
  std::vector<Token> out;
  std::size_t line = 1, col = 1, i = 0;
  auto advance = [&](std::size_t n) {
    for (std::size_t k = 0; k < n; ++k, ++i) {
      if (src[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
  };
  while (i < src.size()) {
    const char c = src[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      advance(1);
      continue;
    }
    const std::size_t tl = line, tc = col, start = i;
    if (ident_start(c)) {
      std::size_t j = i;
      while (j < src.size() && ident_char(src[j])) ++j;
      std::string text(src.substr(i, j - i));
      auto kind = text == "return" ? TokenKind::keyword : TokenKind::identifier;
      out.push_back({kind, std::move(text), tl, tc});
      advance(j - i);
    } else if (digit(c)) {
      std::size_t j = i;
      while (j < src.size() && digit(src[j])) ++j;
      auto kind = TokenKind::integer;
      if (j + 1 < src.size() && src[j] == '.' && digit(src[j + 1])) {
        ++j;
        while (j < src.size() && digit(src[j])) ++j;
        kind = TokenKind::floating;
      }
      if (j < src.size() && ident_start(src[j]))
        throw SyntaxError("malformed number literal", tl, tc);
      out.push_back({kind, std::string(src.substr(i, j - i)), tl, tc});
      advance(j - i);
    } else if (c == '"') {
      std::size_t j = i + 1;
      while (j < src.size() && src[j] != '"' && src[j] != '\n') {
        if (src[j] == '\\' && j + 1 < src.size()) ++j;
        ++j;
      }
      if (j >= src.size() || src[j] != '"') throw SyntaxError("unterminated string literal", tl, tc);
      out.push_back({TokenKind::string, std::string(src.substr(start, j + 1 - start)), tl, tc});
      advance(j + 1 - i);
    } else if (c == '+' || c == '-' || c == '*' || c == '/') {
      out.push_back({TokenKind::op, std::string(1, c), tl, tc});
      advance(1);
    } else if (c == ';' || c == '=' || c == '(' || c == ')' || c == '{' || c == '}' || c == ',' ||
               c == '.') {
      out.push_back({TokenKind::punct, std::string(1, c), tl, tc});
      advance(1);
    } else {
      throw SyntaxError(std::string("unexpected character '") + c + "'", tl, tc);
    }
  }
  return out;
}

bool is_semantic(const Token& tok) noexcept {
  return tok.kind != TokenKind::punct && tok.kind != TokenKind::keyword;
}

std::vector<std::string> semantic_tokens(std::string_view source) {
  std::vector<std::string> out;
  for (auto& t : lex(source))
    if (is_semantic(t)) out.push_back(std::move(t.text));
  return out;
}

std::vector<std::string> token_texts(std::string_view source) {
  std::vector<std::string> out;
  for (auto& t : lex(source)) out.push_back(std::move(t.text));
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  int indent = 0;
  bool line_start = true;
  std::string prev;
  for (const auto& t : tokens) {
    if (t == "}") --indent;
    if (line_start) {
      if (!out.empty()) out += '\n';
      out.append(static_cast<std::size_t>(indent > 0 ? indent : 0) * 2, ' ');
    } else {
      const bool tight_before = t == ";" || t == "," || t == ")" || t == "." ||
                                (t == "(" && !prev.empty() && ident_start(prev[0]) && prev != "return");
      const bool tight_after = prev == "(" || prev == ".";
      if (!tight_before && !tight_after) out += ' ';
    }
    out += t;
    line_start = t == ";" || t == "{" || t == "}";
    if (t == "{") ++indent;
    prev = t;
  }
  return out;
}

bool is_primitive_type(std::string_view name) noexcept {
  return name == "int" || name == "long" || name == "double" || name == "float" ||
         name == "boolean" || name == "char" || name == "byte" || name == "short";
}

const std::vector<std::string>& node_types() {
  static const std::vector<std::string> types = {
      "CompilationUnit", "VariableDeclarator", "ExpressionStmt", "AssignExpr",
      "ReturnStmt",      "MethodDeclaration",  "Parameter",      "BlockStmt",
      "BinaryExpr",      "BinaryOperator",     "MethodCallExpr", "NameExpr",
      "SimpleName",      "IntegerLiteralExpr", "DoubleLiteralExpr", "StringLiteralExpr",
      "ClassOrInterfaceType", "PrimitiveType", "VoidType"};
  return types;
}

namespace {

class Parser {
 public:
  explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

  AstNode program() {
    std::vector<AstNode> stmts;
    while (!at_end()) stmts.push_back(statement());
    return AstNode::interior("CompilationUnit", std::move(stmts));
  }

 private:
  const Token* peek(std::size_t ahead = 0) const {
    return pos_ + ahead < toks_.size() ? &toks_[pos_ + ahead] : nullptr;
  }
  bool at_end() const { return pos_ >= toks_.size(); }

  bool peek_is(std::size_t ahead, TokenKind kind, std::string_view text = {}) const {
    const Token* t = peek(ahead);
    return t && t->kind == kind && (text.empty() || t->text == text);
  }

  [[noreturn]] void fail(const std::string& what) const {
    if (at_end()) {
      const Token& last = toks_.back();
      throw SyntaxError(what + " at end of input", last.line, last.column + last.text.size());
    }
    const Token& t = toks_[pos_];
    throw SyntaxError(what + ", found '" + t.text + "'", t.line, t.column);
  }

  const Token& expect(TokenKind kind, std::string_view text, const char* what) {
    if (!peek_is(0, kind, text)) fail(std::string("expected ") + what);
    return toks_[pos_++];
  }

  const Token& expect_ident(const char* what) { return expect(TokenKind::identifier, {}, what); }

  static AstNode type_leaf(const std::string& name, std::string role = "type") {
    const char* kind = name == "void"                ? "VoidType"
                       : is_primitive_type(name)     ? "PrimitiveType"
                                                     : "ClassOrInterfaceType";
    return AstNode::leaf(kind, name, std::move(role));
  }

  AstNode statement() {
    if (peek_is(0, TokenKind::keyword, "return")) {
      ++pos_;
      AstNode e = expression("expression");
      expect(TokenKind::punct, ";", "';'");
      std::vector<AstNode> kids;
      kids.push_back(std::move(e));
      return AstNode::interior("ReturnStmt", std::move(kids));
    }
    if (peek_is(0, TokenKind::identifier) && peek_is(1, TokenKind::identifier)) {
      if (peek_is(2, TokenKind::punct, "(")) return method_declaration();
      if (peek_is(2, TokenKind::punct, "=")) return declaration();
      pos_ += 2;
      fail("expected '=' or '(' after declared name");
    }
    if (peek_is(0, TokenKind::identifier) && peek_is(1, TokenKind::punct, "=")) {
      const Token& target = toks_[pos_];
      pos_ += 2;
      std::vector<AstNode> kids;
      kids.push_back(AstNode::leaf("NameExpr", target.text, "target"));
      kids.push_back(expression("value"));
      expect(TokenKind::punct, ";", "';'");
      std::vector<AstNode> stmt;
      stmt.push_back(AstNode::interior("AssignExpr", std::move(kids), "expression"));
      return AstNode::interior("ExpressionStmt", std::move(stmt));
    }
    if (at_end()) fail("expected statement");
    AstNode e = expression("expression");
    expect(TokenKind::punct, ";", "';'");
    std::vector<AstNode> stmt;
    stmt.push_back(std::move(e));
    return AstNode::interior("ExpressionStmt", std::move(stmt));
  }

  AstNode declaration() {
    const Token& type = expect_ident("type name");
    const Token& name = expect_ident("variable name");
    expect(TokenKind::punct, "=", "'='");
    std::vector<AstNode> kids;
    kids.push_back(type_leaf(type.text));
    kids.push_back(AstNode::leaf("SimpleName", name.text, "name"));
    kids.push_back(expression("initializer"));
    expect(TokenKind::punct, ";", "';'");
    return AstNode::interior("VariableDeclarator", std::move(kids));
  }

  AstNode method_declaration() {
    const Token& type = expect_ident("return type");
    const Token& name = expect_ident("method name");
    std::vector<AstNode> kids;
    kids.push_back(type_leaf(type.text));
    kids.push_back(AstNode::leaf("SimpleName", name.text, "name"));
    expect(TokenKind::punct, "(", "'('");
    if (!peek_is(0, TokenKind::punct, ")")) {
      while (true) {
        const Token& ptype = expect_ident("parameter type");
        const Token& pname = expect_ident("parameter name");
        std::vector<AstNode> p;
        p.push_back(type_leaf(ptype.text));
        p.push_back(AstNode::leaf("SimpleName", pname.text, "name"));
        kids.push_back(AstNode::interior("Parameter", std::move(p), "parameter"));
        if (!peek_is(0, TokenKind::punct, ",")) break;
        ++pos_;
      }
    }
    expect(TokenKind::punct, ")", "')'");
    expect(TokenKind::punct, "{", "'{'");
    std::vector<AstNode> body;
    while (!peek_is(0, TokenKind::punct, "}")) {
      if (at_end()) fail("expected '}'");
      body.push_back(statement());
    }
    ++pos_;
    // An empty body has no leaves and would be an empty interior node.
    if (!body.empty()) kids.push_back(AstNode::interior("BlockStmt", std::move(body), "body"));
    return AstNode::interior("MethodDeclaration", std::move(kids));
  }

  static int precedence(const Token* t) {
    if (!t || t->kind != TokenKind::op) return -1;
    return (t->text == "*" || t->text == "/") ? 2 : 1;
  }

  AstNode expression(std::string role, int min_prec = 1) {
    AstNode lhs = primary();
    while (precedence(peek()) >= min_prec) {
      const Token& op = toks_[pos_++];
      const int prec = precedence(&op);
      AstNode rhs = expression("right", prec + 1);
      lhs.role = "left";
      std::vector<AstNode> kids;
      kids.push_back(std::move(lhs));
      kids.push_back(AstNode::leaf("BinaryOperator", op.text, "operator"));
      kids.push_back(std::move(rhs));
      lhs = AstNode::interior("BinaryExpr", std::move(kids));
    }
    lhs.role = std::move(role);
    return lhs;
  }

  AstNode call_args(std::vector<AstNode> kids) {
    expect(TokenKind::punct, "(", "'('");
    if (!peek_is(0, TokenKind::punct, ")")) {
      while (true) {
        kids.push_back(expression("argument"));
        if (!peek_is(0, TokenKind::punct, ",")) break;
        ++pos_;
      }
    }
    expect(TokenKind::punct, ")", "')'");
    return AstNode::interior("MethodCallExpr", std::move(kids));
  }

  AstNode primary() {
    const Token* t = peek();
    if (!t) fail("expected expression");
    switch (t->kind) {
      case TokenKind::integer: ++pos_; return AstNode::leaf("IntegerLiteralExpr", t->text);
      case TokenKind::floating: ++pos_; return AstNode::leaf("DoubleLiteralExpr", t->text);
      case TokenKind::string: ++pos_; return AstNode::leaf("StringLiteralExpr", t->text);
      case TokenKind::identifier: break;
      default: fail("expected expression");
    }
    if (peek_is(1, TokenKind::punct, ".")) {
      const Token& scope = toks_[pos_];
      pos_ += 2;
      const Token& method = expect_ident("method name");
      std::vector<AstNode> kids;
      kids.push_back(AstNode::leaf("NameExpr", scope.text, "scope"));
      kids.push_back(AstNode::leaf("SimpleName", method.text, "name"));
      return call_args(std::move(kids));
    }
    if (peek_is(1, TokenKind::punct, "(")) {
      const Token& method = toks_[pos_++];
      std::vector<AstNode> kids;
      kids.push_back(AstNode::leaf("SimpleName", method.text, "name"));
      return call_args(std::move(kids));
    }
    ++pos_;
    return AstNode::leaf("NameExpr", t->text);
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

}  // namespace

AstTree parse(std::string_view source) {
  auto toks = lex(source);
  if (toks.empty()) throw ValidationError("empty input");
  Parser p(std::move(toks));
  return make_tree(p.program(), SourceLanguage::minilang);
}

}  // namespace astmask::minilang
