#include <gtest/gtest.h>

#include "astmask/error.hpp"
#include "astmask/linearize.hpp"
#include "astmask/minilang.hpp"
#include "astmask/tasks.hpp"
#include "support/oracles.hpp"

using namespace astmask;

namespace {

LinearSequence declaration() {
  return linearize(code_to_tree("Double var = TEST_var.getValueAsDouble();"));
}

std::size_t index_of(const LinearSequence& s, const std::string& text) {
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s.tokens[i].text == text) return i;
  ADD_FAILURE() << "missing token " << text;
  return 0;
}

}  // namespace

TEST(Linearize, DeclarationPrefixPositions) {
  const LinearSequence s = declaration();
  ASSERT_GE(s.size(), 5u);
  const std::vector<std::tuple<std::string, std::size_t, std::size_t>> want = {
      {"[CLS]", 0, 0}, {"type(ClassOrInterfaceType)", 1, 0}, {"Double", 2, 1},
      {"name(SimpleName)", 3, 1}, {"var", 4, 2}};
  for (std::size_t i = 0; i < want.size(); ++i) {
    EXPECT_EQ(s.tokens[i].text, std::get<0>(want[i]));
    EXPECT_EQ(s.tokens[i].hard_pos, std::get<1>(want[i]));
    EXPECT_EQ(s.tokens[i].ast_pos, std::get<2>(want[i]));
  }
  EXPECT_EQ(s.tokens[1].kind, TokenKind::tag);
  EXPECT_EQ(s.tokens[2].kind, TokenKind::code);
  EXPECT_EQ(s.tokens.back().text, "[SEP]");
}

TEST(Linearize, SingleLeaf) {
  const AstTree t = prune(make_tree(AstNode::leaf("NameExpr", "x"), SourceLanguage::other), PrunePolicy{});
  const LinearSequence s = linearize(t);
  ASSERT_EQ(s.size(), 4u);
  const std::vector<std::string> texts = {"[CLS]", "(NameExpr)", "x", "[SEP]"};
  const std::vector<std::pair<std::size_t, std::size_t>> pos = {{0, 0}, {1, 0}, {2, 1}, {3, 1}};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(s.tokens[i].text, texts[i]);
    EXPECT_EQ(s.tokens[i].hard_pos, pos[i].first);
    EXPECT_EQ(s.tokens[i].ast_pos, pos[i].second);
  }
  EXPECT_FALSE(s.tokens[0].branch_node_id.has_value());
}

TEST(Linearize, Errors) {
  const AstTree unpruned = minilang::parse("x = 1;");
  EXPECT_THROW(linearize(unpruned), ValidationError);
  const AstTree empty = prune(make_tree(AstNode::interior("A", {AstNode::interior("B", {}, "r")}),
                                        SourceLanguage::other),
                              PrunePolicy{{}, {}, false});
  EXPECT_THROW(linearize(empty), ValidationError);
}

TEST(Linearize, InvariantsOnRandomPrograms) {
  for (const auto& src : gen_corpus(21, 200)) {
    const AstTree tree = code_to_tree(src);
    const LinearSequence s = linearize(tree);
    std::size_t tags = 0;
    std::set<int> tagged;
    std::vector<std::string> code;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto& t = s.tokens[i];
      EXPECT_EQ(t.hard_pos, i);
      EXPECT_EQ(t.ast_pos, tags);
      if (t.kind == TokenKind::tag) {
        ++tags;
        EXPECT_TRUE(tagged.insert(*t.branch_node_id).second) << "tag emitted twice";
      }
      if (t.kind == TokenKind::code) code.push_back(t.text);
      if (t.kind == TokenKind::special) EXPECT_FALSE(t.branch_node_id);
    }
    // Direct traversal: a node is tagged iff it carries a token or a role.
    std::size_t expected_tags = 0;
    visit_preorder(tree.root, [&](const AstNode& n, std::size_t) {
      if (n.token_text || n.role) ++expected_tags;
    });
    EXPECT_EQ(tags, expected_tags);
    EXPECT_EQ(code, preorder_tokens(tree.root));
  }
}

TEST(Linearize, TagsOff) {
  const LinearSequence s = linearize(code_to_tree("x = a + 1;"), false);
  for (const auto& t : s.tokens) EXPECT_NE(t.kind, TokenKind::tag);
  EXPECT_TRUE(build_visibility(s).all_ones());
}

TEST(Linearize, MaxTagDepthKeepsNearestAncestors) {
  LinearizeOptions o;
  o.max_tag_depth = 1;
  const LinearSequence s = linearize(code_to_tree("x = a + 1;"), o);
  std::size_t run = 0;
  for (const auto& t : s.tokens) {
    if (t.kind == TokenKind::tag) ++run;
    else run = 0;
    EXPECT_LE(run, 1u);
  }
}

TEST(Visibility, DeclarationExamples) {
  const LinearSequence s = declaration();
  const VisibilityMatrix m = build_visibility(s);
  const std::size_t type_tag = index_of(s, "type(ClassOrInterfaceType)");
  EXPECT_TRUE(m(type_tag, index_of(s, "Double")));
  EXPECT_FALSE(m(type_tag, index_of(s, "var")));
  EXPECT_FALSE(m(type_tag, 0));  // [CLS]
  EXPECT_FALSE(m(type_tag, s.size() - 1));  // [SEP]
  EXPECT_TRUE(m.symmetric());
  EXPECT_EQ(m, oracle::brute_force_visibility(s));
}

TEST(Visibility, MatchesOracleOnRandomPrograms) {
  for (const auto& src : gen_corpus(0, 300)) {
    const LinearSequence s = linearize(code_to_tree(src));
    const VisibilityMatrix m = build_visibility(s);
    ASSERT_EQ(m, oracle::brute_force_visibility(s)) << src;
    EXPECT_TRUE(m.symmetric());
    for (std::size_t i = 0; i < m.size(); ++i) {
      EXPECT_TRUE(m(i, i));
      for (std::size_t j = 0; j < m.size(); ++j)
        if (s.tokens[i].kind == TokenKind::code && s.tokens[j].kind == TokenKind::code)
          EXPECT_TRUE(m(i, j));
    }
  }
}

TEST(Visibility, StrippingTagsGivesAllOnes) {
  LinearSequence s = declaration();
  std::erase_if(s.tokens, [](const LinearToken& t) { return t.kind == TokenKind::tag; });
  renumber_positions(s.tokens);
  EXPECT_TRUE(build_visibility(s).all_ones());
  EXPECT_TRUE(oracle::brute_force_visibility(s).all_ones());
}

TEST(Visibility, RowsRoundTrip) {
  const VisibilityMatrix m = build_visibility(declaration());
  EXPECT_EQ(VisibilityMatrix::from_rows(m.to_rows()), m);
  EXPECT_THROW(VisibilityMatrix::from_rows({"01", "1"}), ValidationError);
}

TEST(Serialization, JsonLinesRoundTrip) {
  const LinearSequence s = declaration();
  const std::string text = to_jsonl(s);
  EXPECT_NE(text.find(R"x({"t":"name(SimpleName)","k":"tag","h":3,"a":1,)x"), std::string::npos);
  EXPECT_EQ(tokens_from_jsonl(text), s.tokens);
}
