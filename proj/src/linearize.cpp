#include "astmask/linearize.hpp"

#include <algorithm>
#include <functional>
#include <set>
#include <sstream>

#include "astmask/error.hpp"
#include "json.hpp"

namespace astmask {

std::string_view to_string(TokenKind kind) {
  switch (kind) {
    case TokenKind::code: return "code";
    case TokenKind::tag: return "tag";
    case TokenKind::special: return "special";
  }
  return "code";
}

std::string_view to_string(Segment seg) { return seg == Segment::A ? "A" : "B"; }

std::size_t LinearSequence::tag_count() const noexcept {
  return static_cast<std::size_t>(std::count_if(
      tokens.begin(), tokens.end(), [](const LinearToken& t) { return t.kind == TokenKind::tag; }));
}

std::size_t LinearSequence::code_count() const noexcept {
  return static_cast<std::size_t>(std::count_if(
      tokens.begin(), tokens.end(), [](const LinearToken& t) { return t.kind == TokenKind::code; }));
}

bool is_taggable(const AstNode& node) noexcept { return node.has_token() || node.role.has_value(); }

std::string tag_text(const AstNode& node) {
  return node.role.value_or(std::string{}) + "(" + node.node_type + ")";
}

void renumber_positions(std::vector<LinearToken>& tokens) {
  std::size_t tags = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    tokens[i].hard_pos = i;
    tokens[i].ast_pos = tags;
    if (tokens[i].kind == TokenKind::tag) ++tags;
  }
}

LinearSequence linearize(const AstTree& tree, bool include_tags) {
  return linearize(tree, LinearizeOptions{include_tags, std::nullopt});
}

LinearSequence linearize(const AstTree& tree, const LinearizeOptions& options) {
  if (!tree.pruned) throw ValidationError("linearize: tree has not been pruned");

  LinearSequence seq;
  seq.source_tree = std::make_shared<const AstTree>(tree);
  seq.tokens.push_back({std::string(kCls), TokenKind::special, 0, 0, std::nullopt, Segment::A});

  std::vector<const AstNode*> path;
  std::set<int> emitted;
  std::function<void(const AstNode&)> walk = [&](const AstNode& node) {
    path.push_back(&node);
    std::vector<int> ancestors;
    ancestors.reserve(path.size());
    for (const AstNode* a : path) ancestors.push_back(a->node_id);
    std::sort(ancestors.begin(), ancestors.end());
    seq.ancestor_sets.emplace(node.node_id, std::move(ancestors));

    if (node.has_token()) {
      if (options.include_tags) {
        std::vector<const AstNode*> taggable;
        for (const AstNode* a : path)
          if (is_taggable(*a)) taggable.push_back(a);
        std::size_t first = 0;
        if (options.max_tag_depth && taggable.size() > *options.max_tag_depth)
          first = taggable.size() - *options.max_tag_depth;
        for (std::size_t k = first; k < taggable.size(); ++k) {
          const AstNode* a = taggable[k];
          if (!emitted.insert(a->node_id).second) continue;
          seq.tokens.push_back({tag_text(*a), TokenKind::tag, 0, 0, a->node_id, Segment::A});
        }
      }
      seq.tokens.push_back({*node.token_text, TokenKind::code, 0, 0, node.node_id, Segment::A});
    }
    for (const auto& c : node.children) walk(c);
    path.pop_back();
  };
  walk(seq.source_tree->root);

  if (seq.code_count() == 0) throw ValidationError("linearize: tree has no code tokens");
  seq.tokens.push_back({std::string(kSep), TokenKind::special, 0, 0, std::nullopt, Segment::A});
  renumber_positions(seq.tokens);
  return seq;
}

bool VisibilityMatrix::all_ones() const noexcept {
  return std::all_of(bits_.begin(), bits_.end(), [](std::uint8_t b) { return b != 0; });
}

bool VisibilityMatrix::symmetric() const noexcept {
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = i + 1; j < n_; ++j)
      if ((*this)(i, j) != (*this)(j, i)) return false;
  return true;
}

std::vector<std::string> VisibilityMatrix::to_rows() const {
  std::vector<std::string> rows(n_, std::string(n_, '0'));
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = 0; j < n_; ++j)
      if ((*this)(i, j)) rows[i][j] = '1';
  return rows;
}

VisibilityMatrix VisibilityMatrix::from_rows(const std::vector<std::string>& rows) {
  VisibilityMatrix m(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.size()) throw ValidationError("visibility row has wrong length");
    for (std::size_t j = 0; j < rows.size(); ++j) {
      if (rows[i][j] != '0' && rows[i][j] != '1')
        throw ValidationError("visibility row contains a non-bit character");
      m.set(i, j, rows[i][j] == '1');
    }
  }
  return m;
}

namespace {

bool contains(const std::vector<int>& sorted, int id) {
  return std::binary_search(sorted.begin(), sorted.end(), id);
}

}  // namespace

VisibilityMatrix build_visibility(const LinearSequence& seq) {
  const std::size_t n = seq.size();
  static const std::vector<int> kNone;
  // Ancestor set of each token's branch node; empty for specials and for
  // code tokens that hang off no tree (natural-language query words).
  std::vector<const std::vector<int>*> anc(n, &kNone);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = seq.tokens[i];
    if (!t.branch_node_id) continue;
    auto it = seq.ancestor_sets.find(*t.branch_node_id);
    if (it == seq.ancestor_sets.end())
      throw ValidationError("token '" + t.text + "' references an unknown AST node");
    anc[i] = &it->second;
  }

  VisibilityMatrix m(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ti = seq.tokens[i];
    m.set(i, i, true);
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& tj = seq.tokens[j];
      bool v;
      if (ti.kind != TokenKind::tag && tj.kind != TokenKind::tag) {
        v = true;
      } else if (ti.kind == TokenKind::tag && tj.kind == TokenKind::tag) {
        v = contains(*anc[i], *tj.branch_node_id) || contains(*anc[j], *ti.branch_node_id);
      } else {
        const std::size_t tag = ti.kind == TokenKind::tag ? i : j;
        const std::size_t other = tag == i ? j : i;
        v = seq.tokens[other].kind == TokenKind::code &&
            contains(*anc[other], *seq.tokens[tag].branch_node_id);
      }
      m.set(i, j, v);
      m.set(j, i, v);
    }
  }
  return m;
}

std::string to_jsonl(const LinearSequence& seq) {
  std::ostringstream os;
  for (const auto& t : seq.tokens) {
    nlohmann::ordered_json j;
    j["t"] = t.text;
    j["k"] = to_string(t.kind);
    j["h"] = t.hard_pos;
    j["a"] = t.ast_pos;
    if (t.branch_node_id) j["b"] = *t.branch_node_id;
    j["s"] = to_string(t.segment);
    os << j.dump() << '\n';
  }
  return os.str();
}

std::vector<LinearToken> tokens_from_jsonl(std::string_view text) {
  std::vector<LinearToken> out;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      LinearToken t;
      t.text = j.at("t").get<std::string>();
      const auto k = j.at("k").get<std::string>();
      if (k == "code") t.kind = TokenKind::code;
      else if (k == "tag") t.kind = TokenKind::tag;
      else if (k == "special") t.kind = TokenKind::special;
      else throw ValidationError("unknown kind " + k);
      t.hard_pos = j.at("h").get<std::size_t>();
      t.ast_pos = j.at("a").get<std::size_t>();
      if (j.contains("b")) t.branch_node_id = j.at("b").get<int>();
      t.segment = j.at("s").get<std::string>() == "B" ? Segment::B : Segment::A;
      out.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace astmask
