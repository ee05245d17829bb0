#include "astmask/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <iterator>
#include <ostream>
#include <sstream>

#include "astmask/error.hpp"

namespace astmask {

std::vector<std::string> split_identifier(std::string_view name) {
  auto alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
  auto upper = [](char c) { return std::isupper(static_cast<unsigned char>(c)) != 0; };
  auto lower = [](char c) { return std::islower(static_cast<unsigned char>(c)) != 0; };
  auto dig = [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; };

  if (std::none_of(name.begin(), name.end(), alnum)) return {std::string(name)};

  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < name.size(); ++i) {
    const char c = name[i];
    if (!alnum(c)) {
      flush();
      continue;
    }
    if (!cur.empty()) {
      const char p = name[i - 1];
      const bool next_lower = i + 1 < name.size() && lower(name[i + 1]);
      if ((lower(p) && upper(c)) || (dig(p) != dig(c)) || (upper(p) && upper(c) && next_lower))
        flush();
    }
    cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  flush();
  return out;
}

Vocabulary::Vocabulary() {
  for (auto s : {kPad, kUnk, kCls, kSep, kMask}) add(std::string(s));
}

int Vocabulary::add(const std::string& token) {
  auto [it, inserted] = ids_.emplace(token, static_cast<int>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return ids_.count(std::string(token)) != 0;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw ValidationError("vocabulary id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(std::ostream& os) const {
  for (const auto& t : tokens_) os << t << '\n';
}

Vocabulary Vocabulary::load(std::istream& is) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  const std::vector<std::string> specials = {std::string(kPad), std::string(kUnk),
                                             std::string(kCls), std::string(kSep),
                                             std::string(kMask)};
  if (lines.size() < specials.size() ||
      !std::equal(specials.begin(), specials.end(), lines.begin()))
    throw ValidationError("vocabulary file must start with the five special tokens");
  Vocabulary v;
  for (std::size_t i = specials.size(); i < lines.size(); ++i) {
    if (v.add(lines[i]) != static_cast<int>(i))
      throw ValidationError("duplicate vocabulary entry on line " + std::to_string(i + 1));
  }
  return v;
}

void VocabBuilder::add(const LinearSequence& seq) {
  ++sequences_;
  for (const auto& t : seq.tokens) {
    if (t.kind == TokenKind::tag) {
      ++counts_[t.text];
    } else if (t.kind == TokenKind::code) {
      for (auto& s : split_identifier(t.text)) ++counts_[s];
    }
  }
}

void VocabBuilder::add_text(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string word;
  while (is >> word)
    for (auto& s : split_identifier(word)) ++counts_[s];
}

void VocabBuilder::add_whole(const std::string& token) { ++counts_[token]; }

Vocabulary VocabBuilder::build(std::size_t min_freq, std::size_t max_size) const {
  std::vector<std::pair<std::string, std::size_t>> ranked;
  Vocabulary probe;
  for (const auto& [tok, n] : counts_)
    if (n >= min_freq && !probe.contains(tok)) ranked.emplace_back(tok, n);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary v;
  for (const auto& [tok, _] : ranked) {
    if (v.size() >= max_size) break;
    v.add(tok);
  }
  return v;
}

Vocabulary build_vocab(std::span<const LinearSequence> corpus, std::size_t min_freq,
                       std::size_t max_size) {
  if (corpus.empty()) throw ValidationError("build_vocab: empty corpus");
  VocabBuilder b;
  for (const auto& s : corpus) b.add(s);
  return b.build(min_freq, max_size);
}

LinearSequence query_sequence(std::string_view text) {
  LinearSequence seq;
  seq.tokens.push_back({std::string(kCls), TokenKind::special, 0, 0, std::nullopt, Segment::A});
  std::istringstream is{std::string(text)};
  std::string word;
  while (is >> word)
    seq.tokens.push_back({word, TokenKind::code, 0, 0, std::nullopt, Segment::A});
  seq.tokens.push_back({std::string(kSep), TokenKind::special, 0, 0, std::nullopt, Segment::A});
  renumber_positions(seq.tokens);
  return seq;
}

std::size_t EncodedExample::length() const noexcept {
  return static_cast<std::size_t>(
      std::count(attention_pad_mask.begin(), attention_pad_mask.end(), std::uint8_t{1}));
}

namespace {

struct Unit {
  std::string text;
  TokenKind kind;
  std::optional<int> node;
};

// Body of a linearized span without its [CLS]/[SEP], code tokens expanded.
std::vector<Unit> expand(const LinearSequence& seq, int node_offset) {
  std::vector<Unit> out;
  for (const auto& t : seq.tokens) {
    if (t.kind == TokenKind::special) continue;
    std::optional<int> node;
    if (t.branch_node_id) node = *t.branch_node_id + node_offset;
    if (t.kind == TokenKind::tag) {
      out.push_back({t.text, TokenKind::tag, node});
    } else {
      for (auto& s : split_identifier(t.text)) out.push_back({std::move(s), TokenKind::code, node});
    }
  }
  return out;
}

bool has_code(const std::vector<Unit>& units) {
  return std::any_of(units.begin(), units.end(),
                     [](const Unit& u) { return u.kind == TokenKind::code; });
}

void pop_tail(std::vector<Unit>& units) {
  units.pop_back();
  while (!units.empty() && units.back().kind == TokenKind::tag) units.pop_back();
}

int max_node_id(const LinearSequence& seq) {
  int m = -1;
  for (const auto& [id, _] : seq.ancestor_sets) m = std::max(m, id);
  for (const auto& t : seq.tokens)
    if (t.branch_node_id) m = std::max(m, *t.branch_node_id);
  return m;
}

}  // namespace

EncodedExample encode(const LinearSequence& first, const Vocabulary& vocab, std::size_t max_len) {
  return encode(first, nullptr, vocab, max_len);
}

EncodedExample encode(const LinearSequence& first, const LinearSequence& second,
                      const Vocabulary& vocab, std::size_t max_len) {
  return encode(first, &second, vocab, max_len);
}

EncodedExample encode(const LinearSequence& first, const LinearSequence* second,
                      const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 8) throw ValidationError("encode: max_len must be at least 8");
  const int offset = max_node_id(first) + 1;
  std::vector<Unit> a = expand(first, 0);
  std::vector<Unit> b = second ? expand(*second, offset) : std::vector<Unit>{};
  if (!has_code(a) || (second && !has_code(b)))
    throw ValidationError("encode: input span has no code tokens");

  const std::size_t overhead = second ? 3 : 2;
  while (overhead + a.size() + b.size() > max_len) {
    std::vector<Unit>& victim = (second && b.size() >= a.size()) ? b : a;
    pop_tail(victim);
    if (!has_code(victim)) throw ValidationError("encode: truncation would leave a span empty");
  }

  LinearSequence joined;
  joined.ancestor_sets = first.ancestor_sets;
  if (second)
    for (const auto& [id, anc] : second->ancestor_sets) {
      std::vector<int> shifted(anc);
      for (auto& x : shifted) x += offset;
      joined.ancestor_sets.emplace(id + offset, std::move(shifted));
    }
  auto push = [&](const std::string& text, TokenKind kind, std::optional<int> node, Segment s) {
    joined.tokens.push_back({text, kind, 0, 0, node, s});
  };
  push(std::string(kCls), TokenKind::special, std::nullopt, Segment::A);
  for (const auto& u : a) push(u.text, u.kind, u.node, Segment::A);
  push(std::string(kSep), TokenKind::special, std::nullopt, Segment::A);
  if (second) {
    for (const auto& u : b) push(u.text, u.kind, u.node, Segment::B);
    push(std::string(kSep), TokenKind::special, std::nullopt, Segment::B);
  }
  renumber_positions(joined.tokens);
  const VisibilityMatrix vis = build_visibility(joined);

  const std::size_t n = joined.size();
  EncodedExample ex;
  ex.ids.assign(max_len, Vocabulary::kPadId);
  ex.hard_pos.resize(max_len);
  ex.ast_pos.assign(max_len, 0);
  ex.segment.assign(max_len, 0);
  ex.ast_segment.assign(max_len, 0);
  ex.attention_pad_mask.assign(max_len, 0);
  ex.visibility = VisibilityMatrix(max_len);
  for (std::size_t i = 0; i < max_len; ++i) {
    ex.hard_pos[i] = static_cast<std::int32_t>(i);
    ex.visibility.set(i, i, true);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = joined.tokens[i];
    ex.ids[i] = vocab.id(t.text);
    ex.ast_pos[i] = static_cast<std::int32_t>(t.ast_pos);
    ex.segment[i] = t.segment == Segment::B ? 1 : 0;
    ex.ast_segment[i] = t.kind == TokenKind::tag ? 1 : 0;
    ex.attention_pad_mask[i] = 1;
    for (std::size_t j = 0; j < n; ++j) ex.visibility.set(i, j, vis(i, j));
  }
  return ex;
}

namespace {

constexpr std::string_view kBatchMagic = "astmask-batch v1";

void put_i32(std::ostream& os, std::int32_t v) {
  const auto u = static_cast<std::uint32_t>(v);
  const char bytes[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                         static_cast<char>((u >> 16) & 0xff), static_cast<char>((u >> 24) & 0xff)};
  os.write(bytes, 4);
}

std::int32_t get_i32(const std::string& buf, std::size_t off) {
  if (off + 4 > buf.size()) throw ValidationError("batch file: payload truncated");
  std::uint32_t u = 0;
  for (int k = 3; k >= 0; --k) u = (u << 8) | static_cast<unsigned char>(buf[off + static_cast<std::size_t>(k)]);
  return static_cast<std::int32_t>(u);
}

struct ArrayDesc {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t count() const {
    std::size_t c = 1;
    for (auto d : shape) c *= d;
    return c;
  }
};

}  // namespace

void write_batch(std::ostream& os, std::span<const EncodedExample> batch) {
  const std::size_t n = batch.size();
  const std::size_t len = n ? batch[0].max_len() : 0;
  std::size_t tmax = 0;
  for (const auto& ex : batch) {
    if (ex.max_len() != len) throw ValidationError("write_batch: examples differ in max_len");
    if (ex.target_ids) tmax = std::max(tmax, ex.target_ids->size());
  }

  std::vector<ArrayDesc> arrays = {
      {"ids", {n, len}},         {"hard_pos", {n, len}},    {"ast_pos", {n, len}},
      {"segment", {n, len}},     {"ast_segment", {n, len}}, {"attention_pad_mask", {n, len}},
      {"visibility", {n, len, len}}, {"label", {n}},        {"target_len", {n}},
      {"target_ids", {n, tmax}}};
  std::size_t off = 0;
  for (auto& a : arrays) {
    a.offset = off;
    off += a.count() * 4;
  }
  os << kBatchMagic << '\n';
  for (const auto& a : arrays) {
    os << a.name << ' ' << a.shape.size();
    for (auto d : a.shape) os << ' ' << d;
    os << ' ' << a.offset << '\n';
  }
  os << "end\n";

  auto rows = [&](auto member) {
    for (const auto& ex : batch)
      for (auto v : ex.*member) put_i32(os, static_cast<std::int32_t>(v));
  };
  rows(&EncodedExample::ids);
  rows(&EncodedExample::hard_pos);
  rows(&EncodedExample::ast_pos);
  rows(&EncodedExample::segment);
  rows(&EncodedExample::ast_segment);
  rows(&EncodedExample::attention_pad_mask);
  for (const auto& ex : batch)
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = 0; j < len; ++j) put_i32(os, ex.visibility(i, j) ? 1 : 0);
  for (const auto& ex : batch) put_i32(os, ex.label ? *ex.label : -1);
  for (const auto& ex : batch)
    put_i32(os, ex.target_ids ? static_cast<std::int32_t>(ex.target_ids->size()) : -1);
  for (const auto& ex : batch)
    for (std::size_t k = 0; k < tmax; ++k)
      put_i32(os, ex.target_ids && k < ex.target_ids->size() ? (*ex.target_ids)[k]
                                                             : Vocabulary::kPadId);
}

std::vector<EncodedExample> read_batch(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kBatchMagic)
    throw ValidationError("batch file: bad magic line");
  std::map<std::string, ArrayDesc> arrays;
  while (std::getline(is, line) && line != "end") {
    std::istringstream ls(line);
    ArrayDesc a;
    std::size_t rank = 0;
    if (!(ls >> a.name >> rank)) throw ValidationError("batch file: bad manifest line: " + line);
    a.shape.resize(rank);
    for (auto& d : a.shape) ls >> d;
    if (!(ls >> a.offset)) throw ValidationError("batch file: bad manifest line: " + line);
    arrays[a.name] = a;
  }
  if (line != "end") throw ValidationError("batch file: manifest not terminated");
  std::string payload((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

  auto need = [&](const std::string& name) -> const ArrayDesc& {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw ValidationError("batch file: missing array " + name);
    return it->second;
  };
  const auto& ids = need("ids");
  if (ids.shape.size() != 2) throw ValidationError("batch file: ids must be rank 2");
  const std::size_t n = ids.shape[0], len = ids.shape[1];
  const auto& tgt = need("target_ids");
  const std::size_t tmax = tgt.shape.size() == 2 ? tgt.shape[1] : 0;

  std::vector<EncodedExample> out(n);
  auto fill = [&](const std::string& name, auto member) {
    const auto& a = need(name);
    for (std::size_t e = 0; e < n; ++e) {
      auto& dst = out[e].*member;
      dst.resize(len);
      for (std::size_t i = 0; i < len; ++i)
        dst[i] = static_cast<std::remove_reference_t<decltype(dst[i])>>(
            get_i32(payload, a.offset + (e * len + i) * 4));
    }
  };
  fill("ids", &EncodedExample::ids);
  fill("hard_pos", &EncodedExample::hard_pos);
  fill("ast_pos", &EncodedExample::ast_pos);
  fill("segment", &EncodedExample::segment);
  fill("ast_segment", &EncodedExample::ast_segment);
  fill("attention_pad_mask", &EncodedExample::attention_pad_mask);
  const auto& vis = need("visibility");
  const auto& lab = need("label");
  const auto& tlen = need("target_len");
  for (std::size_t e = 0; e < n; ++e) {
    auto& ex = out[e];
    ex.visibility = VisibilityMatrix(len);
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = 0; j < len; ++j)
        ex.visibility.set(i, j, get_i32(payload, vis.offset + ((e * len + i) * len + j) * 4) != 0);
    const auto label = get_i32(payload, lab.offset + e * 4);
    if (label >= 0) ex.label = label;
    const auto tl = get_i32(payload, tlen.offset + e * 4);
    if (tl >= 0) {
      std::vector<std::int32_t> t(static_cast<std::size_t>(tl));
      for (std::size_t k = 0; k < t.size(); ++k)
        t[k] = get_i32(payload, tgt.offset + (e * tmax + k) * 4);
      ex.target_ids = std::move(t);
    }
  }
  return out;
}

}  // namespace astmask
