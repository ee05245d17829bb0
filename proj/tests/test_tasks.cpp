#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>

#include "astmask/error.hpp"
#include "astmask/minilang.hpp"
#include "astmask/tasks.hpp"

using namespace astmask;

namespace {

std::size_t count_positive(const std::vector<TaskExample>& v) {
  std::size_t n = 0;
  for (const auto& e : v) n += *e.label == 1;
  return n;
}

// Direct predicates over the parsed tree.
bool calls_method(const AstNode& root, const std::string& method) {
  bool found = false;
  visit_preorder(root, [&](const AstNode& n, std::size_t) {
    if (n.node_type != "MethodCallExpr") return;
    for (const auto& c : n.children)
      if (c.role == "name" && c.token_text == method) found = true;
  });
  return found;
}

bool returns_type(const AstNode& root, const std::string& type) {
  bool found = false;
  visit_preorder(root, [&](const AstNode& n, std::size_t depth) {
    if (n.node_type != "MethodDeclaration" || depth != 1) return;
    for (const auto& c : n.children)
      if (c.role == "type" && c.token_text == type) found = true;
  });
  return found;
}

}  // namespace

TEST(Corpus, DeterministicAndParsable) {
  EXPECT_EQ(gen_corpus(7, 1), gen_corpus(7, 1));
  EXPECT_NE(gen_corpus(7, 3), gen_corpus(8, 3));
  const auto start = std::chrono::steady_clock::now();
  const auto corpus = gen_corpus(0, 2000);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(secs, 10.0);
  ASSERT_EQ(corpus.size(), 2000u);
  for (const auto& src : corpus) {
    const AstTree t = code_to_tree(src);
    EXPECT_FALSE(preorder_tokens(t.root).empty()) << src;
  }
}

TEST(Clone, BalancedParsableAndIsomorphicPositives) {
  for (const std::size_t n : {1u, 7u, 400u}) {
    const auto pairs = gen_clone_pairs_detailed(11, n);
    ASSERT_EQ(pairs.size(), n);
    std::size_t pos = 0;
    for (const auto& p : pairs) {
      const AstTree a = code_to_tree(p.example.first);
      const AstTree b = code_to_tree(p.example.second);
      if (*p.example.label == 1) {
        ++pos;
        EXPECT_EQ(preorder_types(a.root), preorder_types(b.root));
        EXPECT_FALSE(p.renaming.empty());
      }
    }
    EXPECT_EQ(pos, n / 2);
  }
  EXPECT_EQ(gen_clone_pairs(5, 20), gen_clone_pairs(5, 20));
}

TEST(Clone, RenameIsConsistent) {
  const std::vector<std::pair<std::string, std::string>> r{{"var", "tmp"}};
  EXPECT_EQ(rename_identifiers("int var = var + 1;", r), "int tmp = tmp + 1;");
  EXPECT_EQ(preorder_types(code_to_tree("int var = var + 1;").root),
            preorder_types(code_to_tree(rename_identifiers("int var = var + 1;", r)).root));
}

TEST(Qa, LabelsAgreeWithAstPredicate) {
  const auto pairs = gen_qa_pairs(3, 600);
  EXPECT_EQ(count_positive(pairs), 300u);
  const std::string calls = "code that calls ";
  const std::string returns = "function that returns ";
  for (const auto& p : pairs) {
    const AstTree t = code_to_tree(p.first);
    bool holds = false;
    if (p.second.rfind(calls, 0) == 0) holds = calls_method(t.root, p.second.substr(calls.size()));
    else if (p.second.rfind(returns, 0) == 0)
      holds = returns_type(t.root, p.second.substr(returns.size()));
    else
      ADD_FAILURE() << "unexpected query: " << p.second;
    EXPECT_EQ(holds, *p.label == 1) << p.second << "\n" << p.first;
  }
}

TEST(Qa, DeclarationSnippetPredicate) {
  const AstTree t = code_to_tree("Double var = TEST_var.getValueAsDouble();");
  EXPECT_TRUE(calls_method(t.root, "getValueAsDouble"));
  EXPECT_FALSE(calls_method(code_to_tree("x = 1;").root, "getValueAsDouble"));
}

TEST(Bugfix, ExactlyOneLeafDiffers) {
  const auto pairs = gen_bugfix_pairs(9, 500);
  std::size_t kinds[3] = {0, 0, 0};
  for (const auto& p : pairs) {
    const auto fixed = preorder_tokens(code_to_tree(p.fixed).root);
    const auto buggy = preorder_tokens(code_to_tree(p.buggy).root);
    ASSERT_EQ(fixed.size(), buggy.size()) << p.buggy;
    std::size_t diff = 0;
    for (std::size_t i = 0; i < fixed.size(); ++i) diff += fixed[i] != buggy[i];
    EXPECT_EQ(diff, 1u) << p.fixed << "\n" << p.buggy;
    const auto toks = minilang::token_texts(p.buggy);
    ASSERT_LT(p.site, toks.size());
    EXPECT_EQ(toks[p.site], p.mutated_token);
    EXPECT_EQ(minilang::token_texts(p.fixed)[p.site], p.original_token);
    ++kinds[static_cast<int>(p.mutation)];
  }
  for (const auto k : kinds) EXPECT_GT(k, 0u);
  EXPECT_EQ(pairs[0].as_example().kind, TaskKind::refine);
  EXPECT_FALSE(pairs[0].as_example().label.has_value());
}

TEST(Jsonl, ParsesQaLine) {
  const auto r = parse_jsonl(R"({"query":"q","code":"x = 1;","label":1})", TaskKind::qa);
  ASSERT_EQ(r.examples.size(), 1u);
  EXPECT_EQ(r.examples[0].first, "x = 1;");
  EXPECT_EQ(r.examples[0].second, "q");
  EXPECT_EQ(r.examples[0].label, 1);
}

TEST(Jsonl, StrictModeNamesTheLine) {
  const std::string text =
      "{\"code1\":\"x = 1;\",\"code2\":\"y = 2;\",\"label\":0}\n"
      "{\"code1\":\"x = 1;\",\"code2\":\"y = 2;\",\"label\":2}\n";
  try {
    parse_jsonl(text, TaskKind::clone, true);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  const auto lenient = parse_jsonl(text, TaskKind::clone, false);
  EXPECT_EQ(lenient.examples.size(), 1u);
  ASSERT_EQ(lenient.skipped.size(), 1u);
  EXPECT_EQ(lenient.skipped[0].rfind("line 2", 0), 0u);
}

TEST(Jsonl, RoundTripEveryKind) {
  const auto dir = std::filesystem::temp_directory_path() / "astmask_test_jsonl";
  std::filesystem::create_directories(dir);
  std::vector<TaskExample> refine;
  for (const auto& p : gen_bugfix_pairs(2, 5)) refine.push_back(p.as_example());
  const std::vector<std::pair<TaskKind, std::vector<TaskExample>>> sets{
      {TaskKind::qa, gen_qa_pairs(2, 5)},
      {TaskKind::clone, gen_clone_pairs(2, 5)},
      {TaskKind::refine, refine}};
  for (const auto& [kind, data] : sets) {
    const auto path = dir / (std::string(to_string(kind)) + ".jsonl");
    write_jsonl(path, data);
    EXPECT_EQ(load_jsonl(path, kind).examples, data);
  }
  EXPECT_THROW(load_jsonl(dir / "missing.jsonl", TaskKind::qa), ValidationError);
  std::filesystem::remove_all(dir);
}

TEST(Jsonl, AstJsonCodeField) {
  const std::string line =
      R"({"code":{"type":"Module","children":[{"type":"Name","role":"body","children":[{"type":"identifier","role":"id","token":"x","children":[]}]}]},"query":"q","label":0})";
  const auto r = parse_jsonl(line, TaskKind::qa);
  ASSERT_EQ(r.examples.size(), 1u);
  EXPECT_EQ(r.examples[0].first.front(), '{');
  EXPECT_NO_THROW(code_to_tree(r.examples[0].first));
}
