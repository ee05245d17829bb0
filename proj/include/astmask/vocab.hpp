#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "astmask/linearize.hpp"

namespace astmask {

/// Splits an identifier on camelCase boundaries, underscores, other
/// non-alphanumeric characters and digit runs, then lowercases.
/// "getValueAsDouble" -> get value as double. Tokens with no letters or
/// digits ("+", "") are returned whole.
std::vector<std::string> split_identifier(std::string_view name);

class Vocabulary {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kUnkId = 1;
  static constexpr int kClsId = 2;
  static constexpr int kSepId = 3;
  static constexpr int kMaskId = 4;
  static constexpr int kNumSpecials = 5;

  Vocabulary();

  /// Adds a token if absent and returns its id.
  int add(const std::string& token);

  /// Id of `token`, or kUnkId.
  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  static bool is_special(int id) noexcept { return id >= 0 && id < kNumSpecials; }

  /// One token per line; line k (0-based) holds id k.
  void save(std::ostream& os) const;
  static Vocabulary load(std::istream& is);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// Counts tokens for a vocabulary. Tag texts count whole, code tokens count
/// as subtokens. Whole-token entries (decoder targets) count verbatim.
class VocabBuilder {
 public:
  void add(const LinearSequence& seq);
  void add_text(std::string_view text);
  void add_whole(const std::string& token);

  /// Frequency-ranked, ties broken lexicographically. Tokens below
  /// `min_freq` are dropped; total size including specials <= `max_size`.
  Vocabulary build(std::size_t min_freq, std::size_t max_size) const;

  bool empty() const noexcept { return counts_.empty() && sequences_ == 0; }

 private:
  std::map<std::string, std::size_t> counts_;
  std::size_t sequences_ = 0;
};

/// Throws ValidationError on an empty corpus.
Vocabulary build_vocab(std::span<const LinearSequence> corpus, std::size_t min_freq,
                       std::size_t max_size);

/// Natural-language text as a tag-free sequence: [CLS] words... [SEP], every
/// word split with split_identifier and marked as code with no AST node.
LinearSequence query_sequence(std::string_view text);

/// A padded, id-encoded model input.
struct EncodedExample {
  std::vector<std::int32_t> ids;
  std::vector<std::int32_t> hard_pos;
  std::vector<std::int32_t> ast_pos;
  std::vector<std::int32_t> segment;      // 0 = A, 1 = B
  std::vector<std::int32_t> ast_segment;  // 0 = code/special, 1 = tag
  VisibilityMatrix visibility;
  std::vector<std::uint8_t> attention_pad_mask;  // 1 = real token
  std::optional<int> label;
  std::optional<std::vector<std::int32_t>> target_ids;

  std::size_t max_len() const noexcept { return ids.size(); }
  /// Real tokens always form a prefix; this is its length.
  std::size_t length() const noexcept;

  bool operator==(const EncodedExample&) const = default;
};

/// Layout [CLS] first [SEP] (second [SEP])?. Code tokens are expanded into
/// subtokens. When too long, tokens are removed from the tail of the longer
/// span (the second on ties) together with any tag left without its code
/// token; positions and visibility are then recomputed and the arrays padded
/// to `max_len`. Throws ValidationError if a span would become empty or
/// max_len < 8.
EncodedExample encode(const LinearSequence& first, const Vocabulary& vocab, std::size_t max_len);
EncodedExample encode(const LinearSequence& first, const LinearSequence& second,
                      const Vocabulary& vocab, std::size_t max_len);
EncodedExample encode(const LinearSequence& first, const LinearSequence* second,
                      const Vocabulary& vocab, std::size_t max_len);

/// Binary batch file: text manifest (array name, shape, byte offset per
/// line) followed by little-endian int32 payloads.
void write_batch(std::ostream& os, std::span<const EncodedExample> batch);
std::vector<EncodedExample> read_batch(std::istream& is);

}  // namespace astmask
