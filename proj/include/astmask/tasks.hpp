#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "astmask/ast.hpp"

namespace astmask {

enum class TaskKind { qa, clone, refine };

std::string_view to_string(TaskKind kind);
TaskKind task_kind_from_string(std::string_view name);

/// One labelled task instance. Code fields hold MiniLang source or an
/// AST-JSON document (anything starting with '{').
///   qa:     first = code,   second = query
///   clone:  first = code1,  second = code2
///   refine: first = buggy,  second = fixed
struct TaskExample {
  TaskKind kind = TaskKind::qa;
  std::string first;
  std::string second;
  std::optional<int> label;

  void validate() const;
  bool operator==(const TaskExample&) const = default;
};

/// Parses a code field: AST-JSON when it starts with '{', MiniLang otherwise,
/// then prunes with the default policy for the detected language.
AstTree code_to_tree(std::string_view code);

// --- synthetic generators (pure functions of seed and n) --------------------

/// n random MiniLang functions.
std::vector<std::string> gen_corpus(std::uint64_t seed, std::size_t n);

struct ClonePairInfo {
  TaskExample example;
  /// Identifier substitution applied to build a positive pair.
  std::vector<std::pair<std::string, std::string>> renaming;
};

/// floor(n/2) positives (function + renamed copy) and ceil(n/2) negatives
/// (two independent functions), shuffled.
std::vector<ClonePairInfo> gen_clone_pairs_detailed(std::uint64_t seed, std::size_t n);
std::vector<TaskExample> gen_clone_pairs(std::uint64_t seed, std::size_t n);

/// Applies a consistent identifier substitution to MiniLang source.
std::string rename_identifiers(std::string_view source,
                               std::span<const std::pair<std::string, std::string>> renaming);

/// Templated queries "function that returns <type>" and
/// "code that calls <method>"; label 1 iff the property holds.
std::vector<TaskExample> gen_qa_pairs(std::uint64_t seed, std::size_t n);

enum class Mutation { operator_swap, off_by_one_literal, method_name };

std::string_view to_string(Mutation m);

struct BugfixPair {
  std::string buggy;
  std::string fixed;
  Mutation mutation;
  /// Index of the mutated token in the lexer token stream.
  std::size_t site;
  std::string original_token;
  std::string mutated_token;

  TaskExample as_example() const;
};

/// fixed = generated function, buggy = fixed with exactly one token
/// mutation. Fixed programs follow naming conventions (operator implied by
/// the assigned variable, literals multiples of ten, accessor implied by the
/// declared variable or enclosing method) so every bug is detectable.
std::vector<BugfixPair> gen_bugfix_pairs(std::uint64_t seed, std::size_t n);

// --- JSONL datasets ---------------------------------------------------------

struct LoadReport {
  std::vector<TaskExample> examples;
  /// "line N: reason" for every skipped line (lenient mode).
  std::vector<std::string> skipped;
};

/// qa: {"query","code","label"}; clone: {"code1","code2","label"};
/// refine: {"buggy","fixed"}. Code fields may be strings or AST-JSON objects.
/// Strict mode throws ValidationError naming the first bad line.
LoadReport load_jsonl(const std::filesystem::path& path, TaskKind kind, bool strict = true);
LoadReport parse_jsonl(std::string_view text, TaskKind kind, bool strict = true);

std::string to_jsonl(std::span<const TaskExample> examples);
void write_jsonl(const std::filesystem::path& path, std::span<const TaskExample> examples);

}  // namespace astmask
