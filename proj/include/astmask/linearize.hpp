#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "astmask/ast.hpp"

namespace astmask {

enum class TokenKind { code, tag, special };
enum class Segment { A, B };

std::string_view to_string(TokenKind kind);
std::string_view to_string(Segment seg);

inline constexpr std::string_view kCls = "[CLS]";
inline constexpr std::string_view kSep = "[SEP]";
inline constexpr std::string_view kPad = "[PAD]";
inline constexpr std::string_view kMask = "[MASK]";
inline constexpr std::string_view kUnk = "[UNK]";

/// One element of the interleaved tag/code stream.
///
/// `hard_pos` is the index in the sequence; `ast_pos` counts the tag tokens
/// strictly before this one. For a tag, `branch_node_id` is the node it names;
/// for a code token it is the id of the leaf that carries the token.
struct LinearToken {
  std::string text;
  TokenKind kind = TokenKind::code;
  std::size_t hard_pos = 0;
  std::size_t ast_pos = 0;
  std::optional<int> branch_node_id;
  Segment segment = Segment::A;

  bool operator==(const LinearToken&) const = default;
};

struct LinearSequence {
  std::vector<LinearToken> tokens;
  std::shared_ptr<const AstTree> source_tree;
  /// node id -> ids of its ancestors including itself, sorted ascending.
  std::map<int, std::vector<int>> ancestor_sets;

  std::size_t size() const noexcept { return tokens.size(); }
  std::size_t tag_count() const noexcept;
  std::size_t code_count() const noexcept;
};

struct LinearizeOptions {
  bool include_tags = true;
  /// Emit at most this many tags (the nearest ancestors) per code token.
  std::optional<std::size_t> max_tag_depth;
};

/// A node gets a tag when it carries a token or holds a role in its parent.
/// Role-less interior nodes (the CompilationUnit root, list-element
/// statements) describe no particular token and are skipped.
bool is_taggable(const AstNode& node) noexcept;

std::string tag_text(const AstNode& node);

/// [CLS], then every code leaf in pre-order, each preceded by the tags of its
/// not-yet-emitted taggable ancestors (root to leaf), then [SEP].
/// Throws ValidationError on an unpruned tree or a tree without code leaves.
LinearSequence linearize(const AstTree& tree, bool include_tags = true);
LinearSequence linearize(const AstTree& tree, const LinearizeOptions& options);

/// Rewrites hard_pos and ast_pos from the current token order.
void renumber_positions(std::vector<LinearToken>& tokens);

/// Square 0/1 matrix; bit(i, j) = 1 lets token i attend to token j.
class VisibilityMatrix {
 public:
  VisibilityMatrix() = default;
  explicit VisibilityMatrix(std::size_t n, bool value = false)
      : n_(n), bits_(n * n, value ? 1 : 0) {}

  std::size_t size() const noexcept { return n_; }
  bool operator()(std::size_t i, std::size_t j) const { return bits_[i * n_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v) { bits_[i * n_ + j] = v ? 1 : 0; }
  bool all_ones() const noexcept;
  bool symmetric() const noexcept;

  /// One string of '0'/'1' characters per row, row-major.
  std::vector<std::string> to_rows() const;
  static VisibilityMatrix from_rows(const std::vector<std::string>& rows);

  bool operator==(const VisibilityMatrix&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Code and special tokens see each other; a tag sees exactly the tokens on
/// its own root path (code leaves below it, tags above or below it) and
/// never [CLS]/[SEP].
VisibilityMatrix build_visibility(const LinearSequence& seq);

/// {"t","k","h","a","b"?,"s"} per line.
std::string to_jsonl(const LinearSequence& seq);
std::vector<LinearToken> tokens_from_jsonl(std::string_view text);

}  // namespace astmask
