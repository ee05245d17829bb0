#pragma once

#include <string>
#include <string_view>

#include "astmask/ast.hpp"

// AST-JSON: {"type": string, "role": string?, "token": string?, "children": [...]}
namespace astmask {

/// Parses an AST-JSON document. Node ids are reassigned in pre-order and
/// unknown node types are kept verbatim. Throws ValidationError on schema
/// violations, duplicate keys, or malformed JSON.
AstTree ingest_ast_json(std::string_view document,
                        SourceLanguage lang = SourceLanguage::other);

/// Writes keys in the order type, role, token, children with two-space indent.
std::string emit_ast_json(const AstTree& tree);

}  // namespace astmask
