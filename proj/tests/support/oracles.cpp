#include "oracles.hpp"

#include <cmath>
#include <map>
#include <limits>
#include <set>

namespace astmask::oracle {

namespace {

void collect_paths(const AstNode& n, std::vector<int>& stack, std::map<int, std::set<int>>& out) {
  stack.push_back(n.node_id);
  out[n.node_id] = std::set<int>(stack.begin(), stack.end());
  for (const auto& c : n.children) collect_paths(c, stack, out);
  stack.pop_back();
}

}  // namespace

VisibilityMatrix brute_force_visibility(const LinearSequence& seq) {
  std::map<int, std::set<int>> path;
  if (seq.source_tree) {
    std::vector<int> stack;
    collect_paths(seq.source_tree->root, stack, path);
  }
  const std::size_t n = seq.size();
  VisibilityMatrix m(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto& a = seq.tokens[i];
      const auto& b = seq.tokens[j];
      bool v = false;
      if (i == j) {
        v = true;
      } else if (a.kind != TokenKind::tag && b.kind != TokenKind::tag) {
        v = true;
      } else if (a.kind == TokenKind::tag && b.kind == TokenKind::tag) {
        const auto& pa = path.at(*a.branch_node_id);
        const auto& pb = path.at(*b.branch_node_id);
        v = pa.count(*b.branch_node_id) || pb.count(*a.branch_node_id);
      } else {
        const auto& tag = a.kind == TokenKind::tag ? a : b;
        const auto& other = a.kind == TokenKind::tag ? b : a;
        if (other.kind == TokenKind::code && other.branch_node_id)
          v = path.at(*other.branch_node_id).count(*tag.branch_node_id) > 0;
      }
      m.set(i, j, v);
    }
  }
  return m;
}

namespace {

AstNode attrs(AstNode n, std::mt19937_64& rng) {
  static const char* kAttrs[] = {"lineno", "col_offset", "end_lineno", "end_col_offset"};
  std::uniform_int_distribution<int> coin(0, 1);
  for (const char* a : kAttrs)
    if (coin(rng)) n.children.push_back(AstNode::leaf("int", std::to_string(rng() % 40), a));
  return n;
}

AstNode random_expr(std::mt19937_64& rng, int depth, const std::string& role) {
  std::uniform_int_distribution<int> pick(0, 2);
  const int k = depth <= 0 ? pick(rng) % 2 : pick(rng);
  if (k == 0) {
    AstNode name = AstNode::interior(
        "Name", {AstNode::leaf("identifier", "v" + std::to_string(rng() % 9), "id"),
                 AstNode::interior("Load", {}, "ctx")},
        role);
    return attrs(std::move(name), rng);
  }
  if (k == 1)
    return attrs(AstNode::interior("Constant", {AstNode::leaf("constant", std::to_string(rng() % 100), "value")},
                                   role),
                 rng);
  static const char* kOps[] = {"Add", "Sub", "Mult", "Div"};
  AstNode op = AstNode::interior(kOps[rng() % 4], {}, "op");
  return attrs(AstNode::interior("BinOp",
                                 {random_expr(rng, depth - 1, "left"), std::move(op),
                                  random_expr(rng, depth - 1, "right")},
                                 role),
               rng);
}

}  // namespace

AstTree random_python_tree(std::mt19937_64& rng) {
  std::vector<AstNode> body;
  const int stmts = 1 + static_cast<int>(rng() % 3);
  for (int s = 0; s < stmts; ++s) {
    AstNode target = AstNode::interior(
        "Name", {AstNode::leaf("identifier", "t" + std::to_string(s), "id"),
                 AstNode::interior("Store", {}, "ctx")},
        "targets");
    AstNode assign = AstNode::interior(
        "Assign", {attrs(std::move(target), rng), random_expr(rng, 2, "value")}, "body");
    if (rng() % 2) assign.children.push_back(AstNode::leaf("NoneType", "None", "type_comment"));
    body.push_back(attrs(std::move(assign), rng));
  }
  return make_tree(AstNode::interior("Module", std::move(body)), SourceLanguage::python);
}

std::string python_assign_json() {
  return R"({"type": "Module", "children": [
  {"type": "Assign", "role": "body", "children": [
    {"type": "Name", "role": "targets", "children": [
      {"type": "identifier", "role": "id", "token": "result", "children": []},
      {"type": "Store", "role": "ctx", "children": []},
      {"type": "int", "role": "lineno", "token": "1", "children": []},
      {"type": "int", "role": "col_offset", "token": "0", "children": []}]},
    {"type": "BinOp", "role": "value", "children": [
      {"type": "Name", "role": "left", "children": [
        {"type": "identifier", "role": "id", "token": "test1", "children": []},
        {"type": "Load", "role": "ctx", "children": []},
        {"type": "int", "role": "lineno", "token": "1", "children": []},
        {"type": "int", "role": "col_offset", "token": "9", "children": []}]},
      {"type": "Add", "role": "op", "children": []},
      {"type": "Constant", "role": "right", "children": [
        {"type": "constant", "role": "value", "token": "1", "children": []},
        {"type": "int", "role": "lineno", "token": "1", "children": []},
        {"type": "int", "role": "col_offset", "token": "17", "children": []}]},
      {"type": "int", "role": "lineno", "token": "1", "children": []},
      {"type": "int", "role": "end_col_offset", "token": "18", "children": []}]},
    {"type": "int", "role": "lineno", "token": "1", "children": []},
    {"type": "int", "role": "col_offset", "token": "0", "children": []},
    {"type": "int", "role": "end_lineno", "token": "1", "children": []},
    {"type": "int", "role": "end_col_offset", "token": "18", "children": []}]}]})";
}

GradientCheck finite_difference_check(Objective objective, std::span<const Sample> batch,
                                      const ModelParams& params, const ModelConfig& config,
                                      std::size_t samples, double step, double tolerance,
                                      std::uint64_t seed) {
  const auto analytic = compute_gradients(objective, batch, params, config);
  ModelParams probe = params;
  std::vector<std::pair<std::string, Mat*>> tensors;
  probe.for_each([&](const std::string& name, Mat& m) { tensors.emplace_back(name, &m); });
  std::vector<const Mat*> grads;
  analytic.grads.for_each([&](const std::string&, const Mat& m) { grads.push_back(&m); });

  std::mt19937_64 rng(seed);
  GradientCheck out;
  std::set<std::string> seen;
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t t = s % tensors.size();
    Mat& m = *tensors[t].second;
    const auto r = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(m.rows()));
    const auto c = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(m.cols()));
    const double orig = m(r, c);
    m(r, c) = orig + step;
    const double up = compute_loss(objective, batch, probe, config);
    m(r, c) = orig - step;
    const double down = compute_loss(objective, batch, probe, config);
    m(r, c) = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double exact = (*grads[t])(r, c);
    // Round-off in the central difference is about eps * |loss| / step; a
    // coordinate whose gradient sits below that level cannot be resolved,
    // so the denominator never drops under noise / tolerance.
    const double noise = std::numeric_limits<double>::epsilon() *
                         std::max(std::abs(up), std::abs(down)) / step;
    const double scale = std::max({std::abs(numeric), std::abs(exact), noise / tolerance});
    const double rel = std::abs(numeric - exact) / scale;
    const bool ok = rel <= tolerance;
    ++out.sampled;
    out.agreeing += ok;
    if (!ok) out.worst_rel = std::max(out.worst_rel, rel);
    seen.insert(tensors[t].first);
  }
  out.tensors_seen.assign(seen.begin(), seen.end());
  return out;
}

}  // namespace astmask::oracle
