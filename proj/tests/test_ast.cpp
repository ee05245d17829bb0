#include <gtest/gtest.h>

#include <random>

#include "astmask/ast.hpp"
#include "astmask/ast_json.hpp"
#include "astmask/error.hpp"
#include "astmask/minilang.hpp"
#include "astmask/tasks.hpp"
#include "support/oracles.hpp"

using namespace astmask;

namespace {

const AstNode* find(const AstNode& n, const std::string& type) {
  if (n.node_type == type) return &n;
  for (const auto& c : n.children)
    if (const AstNode* f = find(c, type)) return f;
  return nullptr;
}

bool has_role(const AstNode& n, const std::string& role) {
  if (n.role == role) return true;
  for (const auto& c : n.children)
    if (has_role(c, role)) return true;
  return false;
}

}  // namespace

TEST(Parse, DeclarationWithMethodCall) {
  const AstTree t = minilang::parse("Double var = TEST_var.getValueAsDouble();");
  const AstNode* type = find(t.root, "ClassOrInterfaceType");
  ASSERT_NE(type, nullptr);
  EXPECT_EQ(type->token_text, "Double");
  const AstNode* name = find(t.root, "SimpleName");
  ASSERT_NE(name, nullptr);
  EXPECT_EQ(name->role, "name");
  EXPECT_EQ(name->token_text, "var");
  const AstNode* call = find(t.root, "MethodCallExpr");
  ASSERT_NE(call, nullptr);
  bool saw_name = false, saw_scope = false;
  for (const auto& c : call->children) {
    if (c.role == "name" && c.token_text == "getValueAsDouble") saw_name = true;
    if (c.role == "scope" && c.token_text == "TEST_var") saw_scope = true;
  }
  EXPECT_TRUE(saw_name);
  EXPECT_TRUE(saw_scope);
}

TEST(Parse, MinimalAssignment) {
  const AstTree t = minilang::parse("x = 1;");
  ASSERT_EQ(t.root.children.size(), 1u);
  const AstNode& stmt = t.root.children[0];
  EXPECT_EQ(stmt.node_type, "ExpressionStmt");
  const AstNode& assign = stmt.children.at(0);
  EXPECT_EQ(assign.node_type, "AssignExpr");
  ASSERT_EQ(assign.children.size(), 2u);
  EXPECT_EQ(assign.children[0].node_type, "NameExpr");
  EXPECT_EQ(assign.children[0].token_text, "x");
  EXPECT_EQ(assign.children[1].node_type, "IntegerLiteralExpr");
  EXPECT_EQ(assign.children[1].token_text, "1");
}

TEST(Parse, BinaryAssignment) {
  const AstTree t = minilang::parse("result = test1 + 1;");
  const AstNode* bin = find(t.root, "BinaryExpr");
  ASSERT_NE(bin, nullptr);
  ASSERT_EQ(bin->children.size(), 3u);
  EXPECT_EQ(bin->children[0].token_text, "test1");
  EXPECT_EQ(bin->children[1].role, "operator");
  EXPECT_EQ(bin->children[1].token_text, "+");
  EXPECT_EQ(bin->children[2].node_type, "IntegerLiteralExpr");
}

TEST(Parse, PrecedenceAndAssociativity) {
  const AstTree t = minilang::parse("x = a - b - c * d;");
  const AstNode* top = find(t.root, "BinaryExpr");
  ASSERT_NE(top, nullptr);
  EXPECT_EQ(top->children[1].token_text, "-");
  EXPECT_EQ(top->children[0].node_type, "BinaryExpr");  // (a - b) - (c * d)
  EXPECT_EQ(top->children[2].children[1].token_text, "*");
}

TEST(Parse, ErrorsCarryPosition) {
  try {
    minilang::parse("x = 1;\ny = ;");
    FAIL() << "expected a syntax error";
  } catch (const SyntaxError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_EQ(e.column(), 5u);
  }
  EXPECT_THROW(minilang::parse("   "), ValidationError);
  EXPECT_THROW(minilang::parse("x = 1"), SyntaxError);
  EXPECT_THROW(minilang::parse("x = #;"), SyntaxError);
}

TEST(Parse, LeafTokensFollowLexerOnRandomPrograms) {
  for (const auto& src : gen_corpus(3, 200)) {
    const AstTree t = minilang::parse(src);
    validate_tree(t);
    EXPECT_EQ(preorder_tokens(t.root), minilang::semantic_tokens(src)) << src;
  }
}

TEST(Parse, Deterministic) {
  const std::string src = gen_corpus(9, 1)[0];
  EXPECT_EQ(emit_ast_json(minilang::parse(src)), emit_ast_json(minilang::parse(src)));
}

TEST(AstJson, SingleLeaf) {
  const AstTree t = ingest_ast_json(R"({"type":"NameExpr","children":[],"token":"x"})");
  EXPECT_EQ(t.root.node_type, "NameExpr");
  EXPECT_EQ(t.root.token_text, "x");
  EXPECT_EQ(t.root.node_id, 0);
  EXPECT_EQ(count_nodes(t.root), 1u);
}

TEST(AstJson, SchemaViolations) {
  EXPECT_THROW(ingest_ast_json(R"({"children":[]})"), ValidationError);
  EXPECT_THROW(ingest_ast_json(R"({"type":"A","children":[1]})"), ValidationError);
  EXPECT_THROW(ingest_ast_json(R"({"type":"A","type":"B","children":[]})"), ValidationError);
  EXPECT_THROW(ingest_ast_json(R"({"type":"A","children":[],"extra":1})"), ValidationError);
  EXPECT_THROW(ingest_ast_json(R"({"type":"A","token":"x","children":[{"type":"B","children":[]}]})"),
               ValidationError);
  EXPECT_THROW(ingest_ast_json("{not json"), ValidationError);
}

TEST(AstJson, UnknownTypesKeptVerbatim) {
  const AstTree t = ingest_ast_json(R"({"type":"Weird::Node","children":[{"type":"x y","token":"1","children":[]}]})");
  EXPECT_EQ(t.root.node_type, "Weird::Node");
  EXPECT_EQ(t.root.children[0].node_type, "x y");
}

TEST(AstJson, PythonShapedDocumentKeepsAttributes) {
  const AstTree t = ingest_ast_json(oracle::python_assign_json(), SourceLanguage::python);
  EXPECT_TRUE(has_role(t.root, "lineno"));
  EXPECT_TRUE(has_role(t.root, "ctx"));
  EXPECT_FALSE(t.pruned);
}

TEST(AstJson, RoundTripOnRandomTrees) {
  for (const auto& src : gen_corpus(5, 100)) {
    const AstTree t = minilang::parse(src);
    const AstTree back = ingest_ast_json(emit_ast_json(t));
    EXPECT_TRUE(structurally_equal(t.root, back.root)) << src;
  }
}

TEST(AstJson, EmitterKeyOrderAndIndent) {
  const std::string s = emit_ast_json(make_tree(
      AstNode::interior("A", {AstNode::leaf("B", "b", "name")}), SourceLanguage::other));
  EXPECT_EQ(s,
            "{\n  \"type\": \"A\",\n  \"children\": [\n    {\n      \"type\": \"B\",\n"
            "      \"role\": \"name\",\n      \"token\": \"b\",\n      \"children\": []\n    }\n  ]\n}");
}

TEST(Prune, PythonAssignKeepsOnlyStructure) {
  const AstTree t = ingest_ast_json(oracle::python_assign_json(), SourceLanguage::python);
  const AstTree p = prune(t, PrunePolicy::python_default());
  EXPECT_TRUE(p.pruned);
  EXPECT_LT(count_nodes(p.root), count_nodes(t.root));
  for (const char* role : {"lineno", "col_offset", "end_lineno", "end_col_offset", "ctx"})
    EXPECT_FALSE(has_role(p.root, role)) << role;
  std::set<std::string> types;
  visit_preorder(p.root, [&](const AstNode& n, std::size_t) { types.insert(n.node_type); });
  EXPECT_EQ(types, (std::set<std::string>{"Module", "Assign", "Name", "identifier", "BinOp",
                                          "Constant", "constant"}));
  EXPECT_EQ(preorder_tokens(p.root), (std::vector<std::string>{"result", "test1", "1"}));
}

TEST(Prune, IdempotentOnRandomTrees) {
  std::mt19937_64 rng(1);
  const auto policy = PrunePolicy::python_default();
  for (int i = 0; i < 300; ++i) {
    const AstTree t = oracle::random_python_tree(rng);
    const AstTree once = prune(t, policy);
    const AstTree twice = prune(once, policy);
    EXPECT_TRUE(structurally_equal(once.root, twice.root));
    EXPECT_LE(preorder_tokens(once.root).size(), preorder_tokens(t.root).size());
    validate_tree(once);
  }
}

TEST(Prune, NoDeniedNodesIsNoOp) {
  const AstTree t = minilang::parse("Double var = TEST_var.getValueAsDouble();");
  const AstTree p = prune(t, PrunePolicy::python_default());
  EXPECT_TRUE(structurally_equal(t.root, p.root));
  EXPECT_TRUE(p.pruned);
}

TEST(Prune, DeniedRootIsAnError) {
  PrunePolicy policy;
  policy.deny_node_types = {"Module"};
  std::mt19937_64 rng(2);
  EXPECT_THROW(prune(oracle::random_python_tree(rng), policy), ValidationError);
  PrunePolicy bad;
  bad.deny_roles = {""};
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Prune, DeniedTypeRemovesSubtree) {
  PrunePolicy policy;
  policy.deny_node_types = {"BinaryExpr"};
  const AstTree p = prune(minilang::parse("x = a + b;\ny = 2;"), policy);
  EXPECT_EQ(preorder_tokens(p.root), (std::vector<std::string>{"x", "y", "2"}));
}
