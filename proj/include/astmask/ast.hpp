#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace astmask {

enum class SourceLanguage { minilang, java, python, other };

std::string_view to_string(SourceLanguage lang);
SourceLanguage source_language_from_string(std::string_view name);

/// One node of a syntax tree. Leaves carry a source token, interior nodes
/// carry structure. `role` is the field name under which the parent holds
/// this node ("name", "type", "argument", ...).
struct AstNode {
  std::string node_type;
  std::optional<std::string> token_text;
  std::optional<std::string> role;
  std::vector<AstNode> children;
  int node_id = -1;

  static AstNode leaf(std::string type, std::string token, std::optional<std::string> role = {});
  static AstNode interior(std::string type, std::vector<AstNode> children,
                          std::optional<std::string> role = {});

  bool is_leaf() const noexcept { return children.empty(); }
  bool has_token() const noexcept { return token_text.has_value(); }
};

struct AstTree {
  AstNode root;
  SourceLanguage language = SourceLanguage::other;
  bool pruned = false;
};

/// Which nodes `prune` removes. A denied node disappears with its subtree.
struct PrunePolicy {
  std::set<std::string> deny_node_types;
  std::set<std::string> deny_roles;
  bool drop_empty_interior = true;

  /// Location and context attributes emitted by Python's `ast` module.
  static PrunePolicy python_default();
  /// Mini-language trees carry no location noise; nothing is denied.
  static PrunePolicy minilang_default();
  static PrunePolicy for_language(SourceLanguage lang);

  void validate() const;
};

/// Reassigns node ids 0..n-1 in depth-first pre-order.
void assign_preorder_ids(AstNode& root);

/// Wraps a root node into a tree with fresh pre-order ids.
AstTree make_tree(AstNode root, SourceLanguage lang, bool pruned = false);

/// Checks the structural invariants: non-empty node types, no node with both
/// a token and children, unique pre-order ids. Throws ValidationError.
void validate_tree(const AstTree& tree);

AstTree prune(const AstTree& tree, const PrunePolicy& policy);

std::size_t count_nodes(const AstNode& root);

/// Token texts of all token-carrying nodes in pre-order.
std::vector<std::string> preorder_tokens(const AstNode& root);

/// node_type of every node in pre-order.
std::vector<std::string> preorder_types(const AstNode& root);

/// Pre-order visit; the callback receives the node and its depth (root = 0).
void visit_preorder(const AstNode& root,
                    const std::function<void(const AstNode&, std::size_t)>& fn);

/// Equality of node_type, role, token_text and child order. Ignores ids.
bool structurally_equal(const AstNode& a, const AstNode& b);

/// Indented one-node-per-line rendering, for the CLI and debugging.
std::string dump_tree(const AstTree& tree);

}  // namespace astmask
