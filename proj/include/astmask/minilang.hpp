#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "astmask/ast.hpp"

// A small Java-flavoured statement language:
//
//   program    := stmt+
//   stmt       := decl | assign | exprstmt | return | methoddecl
//   decl       := TYPE IDENT "=" expr ";"
//   assign     := IDENT "=" expr ";"
//   exprstmt   := expr ";"
//   return     := "return" expr ";"
//   methoddecl := TYPE IDENT "(" params? ")" "{" stmt* "}"
//   params     := TYPE IDENT ("," TYPE IDENT)*
//   expr       := expr ("+"|"-"|"*"|"/") expr
//              |  (IDENT ".")? IDENT "(" args? ")"
//              |  IDENT | INT | FLOAT | STRING
//   args       := expr ("," expr)*
//
// "*" and "/" bind tighter than "+" and "-"; all four are left associative.
// Node types follow javaparser naming.
namespace astmask::minilang {

enum class TokenKind { identifier, keyword, integer, floating, string, op, punct };

struct Token {
  TokenKind kind;
  std::string text;
  std::size_t line;
  std::size_t column;
};

/// Throws SyntaxError on characters outside the language.
std::vector<Token> lex(std::string_view source);

/// True for tokens that become AST leaves (identifiers, literals, operators).
bool is_semantic(const Token& tok) noexcept;

/// Texts of the semantic tokens of `source`, in order.
std::vector<std::string> semantic_tokens(std::string_view source);

/// Texts of every lexer token of `source`, punctuation included.
std::vector<std::string> token_texts(std::string_view source);

/// Renders a token stream as canonical single-line-per-statement source.
std::string join_tokens(std::span<const std::string> tokens);

/// Parses a program into an unpruned tree rooted at CompilationUnit.
/// Throws SyntaxError (with line/column) or ValidationError on empty input.
AstTree parse(std::string_view source);

/// Every node type the parser can produce.
const std::vector<std::string>& node_types();

bool is_primitive_type(std::string_view name) noexcept;

}  // namespace astmask::minilang
