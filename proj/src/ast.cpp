#include "astmask/ast.hpp"

#include <sstream>
#include <unordered_set>

#include "astmask/error.hpp"

namespace astmask {

std::string_view to_string(SourceLanguage lang) {
  switch (lang) {
    case SourceLanguage::minilang: return "minilang";
    case SourceLanguage::java: return "java";
    case SourceLanguage::python: return "python";
    case SourceLanguage::other: return "other";
  }
  return "other";
}

SourceLanguage source_language_from_string(std::string_view name) {
  if (name == "minilang") return SourceLanguage::minilang;
  if (name == "java") return SourceLanguage::java;
  if (name == "python") return SourceLanguage::python;
  if (name == "other") return SourceLanguage::other;
  throw ValidationError("unknown source language: " + std::string(name));
}

AstNode AstNode::leaf(std::string type, std::string token, std::optional<std::string> role) {
  AstNode n;
  n.node_type = std::move(type);
  n.token_text = std::move(token);
  n.role = std::move(role);
  return n;
}

AstNode AstNode::interior(std::string type, std::vector<AstNode> children,
                          std::optional<std::string> role) {
  AstNode n;
  n.node_type = std::move(type);
  n.children = std::move(children);
  n.role = std::move(role);
  return n;
}

PrunePolicy PrunePolicy::python_default() {
  PrunePolicy p;
  p.deny_roles = {"lineno", "col_offset", "end_lineno", "end_col_offset", "ctx", "type_comment"};
  return p;
}

PrunePolicy PrunePolicy::minilang_default() { return PrunePolicy{}; }

PrunePolicy PrunePolicy::for_language(SourceLanguage lang) {
  return lang == SourceLanguage::python ? python_default() : minilang_default();
}

void PrunePolicy::validate() const {
  for (const auto& s : deny_node_types)
    if (s.empty()) throw ValidationError("prune policy: empty node type in deny list");
  for (const auto& s : deny_roles)
    if (s.empty()) throw ValidationError("prune policy: empty role in deny list");
}

namespace {

void assign_ids(AstNode& node, int& next) {
  node.node_id = next++;
  for (auto& c : node.children) assign_ids(c, next);
}

bool denied(const AstNode& node, const PrunePolicy& policy) {
  if (policy.deny_node_types.count(node.node_type)) return true;
  return node.role && policy.deny_roles.count(*node.role);
}

// Returns nullopt when the node (and its subtree) is removed.
std::optional<AstNode> prune_node(const AstNode& node, const PrunePolicy& policy) {
  if (denied(node, policy)) return std::nullopt;
  AstNode out;
  out.node_type = node.node_type;
  out.token_text = node.token_text;
  out.role = node.role;
  out.children.reserve(node.children.size());
  for (const auto& c : node.children) {
    if (auto kept = prune_node(c, policy)) out.children.push_back(std::move(*kept));
  }
  if (policy.drop_empty_interior && !out.token_text && out.children.empty()) return std::nullopt;
  return out;
}

}  // namespace

void assign_preorder_ids(AstNode& root) {
  int next = 0;
  assign_ids(root, next);
}

AstTree make_tree(AstNode root, SourceLanguage lang, bool pruned) {
  AstTree t{std::move(root), lang, pruned};
  assign_preorder_ids(t.root);
  return t;
}

void validate_tree(const AstTree& tree) {
  int expected = 0;
  std::function<void(const AstNode&)> check = [&](const AstNode& n) {
    if (n.node_type.empty()) throw ValidationError("node with empty node_type");
    if (n.token_text && !n.children.empty())
      throw ValidationError("node '" + n.node_type + "' has both a token and children");
    if (n.node_id != expected)
      throw ValidationError("node ids are not in pre-order at node '" + n.node_type + "'");
    ++expected;
    for (const auto& c : n.children) check(c);
  };
  check(tree.root);
}

AstTree prune(const AstTree& tree, const PrunePolicy& policy) {
  policy.validate();
  if (denied(tree.root, policy))
    throw ValidationError("prune: root node '" + tree.root.node_type + "' is denied");
  auto root = prune_node(tree.root, policy);
  if (!root) throw ValidationError("prune: every node was removed");
  return make_tree(std::move(*root), tree.language, true);
}

std::size_t count_nodes(const AstNode& root) {
  std::size_t n = 1;
  for (const auto& c : root.children) n += count_nodes(c);
  return n;
}

void visit_preorder(const AstNode& root,
                    const std::function<void(const AstNode&, std::size_t)>& fn) {
  std::function<void(const AstNode&, std::size_t)> rec = [&](const AstNode& n, std::size_t d) {
    fn(n, d);
    for (const auto& c : n.children) rec(c, d + 1);
  };
  rec(root, 0);
}

std::vector<std::string> preorder_tokens(const AstNode& root) {
  std::vector<std::string> out;
  visit_preorder(root, [&](const AstNode& n, std::size_t) {
    if (n.token_text) out.push_back(*n.token_text);
  });
  return out;
}

std::vector<std::string> preorder_types(const AstNode& root) {
  std::vector<std::string> out;
  visit_preorder(root, [&](const AstNode& n, std::size_t) { out.push_back(n.node_type); });
  return out;
}

bool structurally_equal(const AstNode& a, const AstNode& b) {
  if (a.node_type != b.node_type || a.role != b.role || a.token_text != b.token_text ||
      a.children.size() != b.children.size())
    return false;
  for (std::size_t i = 0; i < a.children.size(); ++i)
    if (!structurally_equal(a.children[i], b.children[i])) return false;
  return true;
}

std::string dump_tree(const AstTree& tree) {
  std::ostringstream os;
  visit_preorder(tree.root, [&](const AstNode& n, std::size_t depth) {
    os << std::string(depth * 2, ' ') << '#' << n.node_id << ' ';
    if (n.role) os << *n.role;
    os << '(' << n.node_type << ')';
    if (n.token_text) os << " \"" << *n.token_text << '"';
    os << '\n';
  });
  return os.str();
}

}  // namespace astmask
