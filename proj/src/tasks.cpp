#include "astmask/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "astmask/ast_json.hpp"
#include "astmask/error.hpp"
#include "astmask/minilang.hpp"
#include "json.hpp"

namespace astmask {

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::qa: return "qa";
    case TaskKind::clone: return "clone";
    case TaskKind::refine: return "refine";
  }
  return "qa";
}

TaskKind task_kind_from_string(std::string_view name) {
  if (name == "qa") return TaskKind::qa;
  if (name == "clone") return TaskKind::clone;
  if (name == "refine") return TaskKind::refine;
  throw ValidationError("unknown task: " + std::string(name));
}

std::string_view to_string(Mutation m) {
  switch (m) {
    case Mutation::operator_swap: return "operator_swap";
    case Mutation::off_by_one_literal: return "off_by_one_literal";
    case Mutation::method_name: return "method_name";
  }
  return "operator_swap";
}

void TaskExample::validate() const {
  if (first.empty()) throw ValidationError("task example has an empty first field");
  if (kind == TaskKind::refine) {
    if (second.empty()) throw ValidationError("refine example needs a non-empty fixed field");
    if (label) throw ValidationError("refine example must not carry a label");
  } else {
    if (second.empty()) throw ValidationError("task example has an empty second field");
    if (!label || (*label != 0 && *label != 1))
      throw ValidationError("qa/clone example needs label 0 or 1");
  }
}

AstTree code_to_tree(std::string_view code) {
  const auto start = code.find_first_not_of(" \t\r\n");
  if (start != std::string_view::npos && code[start] == '{') {
    AstTree t = ingest_ast_json(code, SourceLanguage::python);
    return prune(t, PrunePolicy::python_default());
  }
  return prune(minilang::parse(code), PrunePolicy::minilang_default());
}

// --- generation ---------------------------------------------------------------

namespace {

enum class Cat { type, var, method, fname, literal, op, punct, keyword };

struct GenToken {
  std::string text;
  Cat cat;
};

using Rng = std::mt19937_64;

const std::vector<std::string> kTypes = {"Double", "Integer", "String", "Long", "int", "double", "long"};
const std::vector<std::string> kVars = {
    "result", "total", "count",  "index",     "value",    "data",       "buffer",
    "tmp",    "var",   "TEST_var", "maxValue", "min_value", "item_count", "avg_score",
    "user_name", "retry_limit", "offset", "config", "client", "amount"};
const std::vector<std::string> kMethods = {
    "getValueAsDouble", "getMax",    "getMin",     "computeSum", "readFile",   "parseInt",
    "toString",         "getFirst",  "getLast",    "calculateTotal", "isEmpty", "size",
    "append",           "findIndex", "loadConfig", "sendRequest"};
const std::vector<std::string> kFunctionNames = {
    "processData", "computeTotal", "handleRequest", "updateCount", "buildReport",
    "parse_value", "load_items",   "calcAverage",   "checkLimit",  "resolveAmount",
    "mergeRecords", "validate_input"};
// Replacement names for alpha-renaming; disjoint from every pool above.
const std::vector<std::string> kRenamePool = {
    "alpha", "beta", "gamma", "delta_v", "acc", "cur", "prev", "node", "elem", "cursor",
    "holder", "slot", "fooBar", "bazQux", "tmp_1", "item_x", "vA", "vB", "kappa", "sigma",
    "omega", "lhs", "rhs", "probe"};

template <class T>
const T& pick(Rng& rng, const std::vector<T>& pool) {
  std::uniform_int_distribution<std::size_t> d(0, pool.size() - 1);
  return pool[d(rng)];
}

int uniform(Rng& rng, int lo, int hi) {
  std::uniform_int_distribution<int> d(lo, hi);
  return d(rng);
}

bool chance(Rng& rng, double p) {
  std::uniform_real_distribution<double> d(0.0, 1.0);
  return d(rng) < p;
}

std::vector<std::string> texts(const std::vector<GenToken>& toks) {
  std::vector<std::string> out;
  out.reserve(toks.size());
  for (const auto& t : toks) out.push_back(t.text);
  return out;
}

std::string render(const std::vector<GenToken>& toks) {
  const auto t = texts(toks);
  return minilang::join_tokens(t);
}

struct FunctionInfo {
  std::vector<GenToken> tokens;
  std::string return_type;
  std::set<std::string> called;
};

class FunctionGenerator {
 public:
  explicit FunctionGenerator(Rng& rng) : rng_(rng) {}

  FunctionInfo generate() {
    FunctionInfo f;
    out_ = &f.tokens;
    called_ = &f.called;
    scope_.clear();
    f.return_type = pick(rng_, kTypes);
    emit(f.return_type, Cat::type);
    emit(pick(rng_, kFunctionNames), Cat::fname);
    emit("(", Cat::punct);
    const int params = uniform(rng_, 0, 2);
    for (int i = 0; i < params; ++i) {
      if (i) emit(",", Cat::punct);
      emit(pick(rng_, kTypes), Cat::type);
      std::string name = fresh_var();
      emit(name, Cat::var);
      scope_.push_back(name);
    }
    emit(")", Cat::punct);
    emit("{", Cat::punct);
    const int stmts = uniform(rng_, 1, 3);
    for (int i = 0; i < stmts; ++i) statement();
    emit("return", Cat::keyword);
    expression(2);
    emit(";", Cat::punct);
    emit("}", Cat::punct);
    return f;
  }

 private:
  void emit(const std::string& text, Cat cat) { out_->push_back({text, cat}); }

  std::string fresh_var() {
    for (int tries = 0; tries < 50; ++tries) {
      const std::string& v = pick(rng_, kVars);
      if (std::find(scope_.begin(), scope_.end(), v) == scope_.end()) return v;
    }
    return pick(rng_, kVars);
  }

  std::string some_var() { return scope_.empty() ? pick(rng_, kVars) : pick(rng_, scope_); }

  void statement() {
    const int kind = uniform(rng_, 0, 9);
    if (kind < 5) {
      emit(pick(rng_, kTypes), Cat::type);
      std::string name = fresh_var();
      emit(name, Cat::var);
      emit("=", Cat::punct);
      expression(3);
      emit(";", Cat::punct);
      scope_.push_back(name);
    } else if (kind < 8) {
      emit(some_var(), Cat::var);
      emit("=", Cat::punct);
      expression(3);
      emit(";", Cat::punct);
    } else {
      call();
      emit(";", Cat::punct);
    }
  }

  void expression(int max_operands) {
    const int n = uniform(rng_, 1, max_operands);
    for (int i = 0; i < n; ++i) {
      if (i) {
        static const std::vector<std::string> ops = {"+", "-", "*", "/"};
        emit(pick(rng_, ops), Cat::op);
      }
      operand(true);
    }
  }

  void operand(bool allow_call) {
    const int r = uniform(rng_, 0, 19);
    if (allow_call && r < 6) {
      call();
    } else if (r < 13) {
      emit(some_var(), Cat::var);
    } else if (r < 17) {
      emit(std::to_string(uniform(rng_, 0, 100)), Cat::literal);
    } else if (r < 19) {
      emit(std::to_string(uniform(rng_, 0, 9)) + "." + std::to_string(uniform(rng_, 0, 99)),
           Cat::literal);
    } else {
      static const std::vector<std::string> strs = {"\"ok\"", "\"error\"", "\"name\"", "\"id\""};
      emit(pick(rng_, strs), Cat::literal);
    }
  }

  void call() {
    if (chance(rng_, 0.6)) {
      emit(some_var(), Cat::var);
      emit(".", Cat::punct);
    }
    const std::string& m = pick(rng_, kMethods);
    called_->insert(m);
    emit(m, Cat::method);
    emit("(", Cat::punct);
    const int args = uniform(rng_, 0, 2);
    for (int i = 0; i < args; ++i) {
      if (i) emit(",", Cat::punct);
      operand(false);
    }
    emit(")", Cat::punct);
  }

  Rng& rng_;
  std::vector<GenToken>* out_ = nullptr;
  std::set<std::string>* called_ = nullptr;
  std::vector<std::string> scope_;
};

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  // Fisher-Yates with our own index draws so the order does not depend on
  // the standard library's std::shuffle implementation.
  for (std::size_t i = v.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> d(0, i - 1);
    std::swap(v[i - 1], v[d(rng)]);
  }
}

std::vector<int> balanced_labels(std::size_t n, Rng& rng) {
  std::vector<int> labels(n, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n / 2), 1);
  shuffle(labels, rng);
  return labels;
}

}  // namespace

std::vector<std::string> gen_corpus(std::uint64_t seed, std::size_t n) {
  if (n == 0) throw ValidationError("gen_corpus: n must be at least 1");
  Rng rng(seed);
  FunctionGenerator gen(rng);
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(render(gen.generate().tokens));
  return out;
}

std::string rename_identifiers(std::string_view source,
                               std::span<const std::pair<std::string, std::string>> renaming) {
  std::map<std::string, std::string> map(renaming.begin(), renaming.end());
  auto toks = minilang::lex(source);
  std::vector<std::string> out;
  out.reserve(toks.size());
  for (std::size_t i = 0; i < toks.size(); ++i) {
    auto& t = toks[i];
    // A name directly followed by "(" is a method; it is never renamed.
    const bool is_call = i + 1 < toks.size() && toks[i + 1].text == "(";
    auto it = map.find(t.text);
    if (t.kind == minilang::TokenKind::identifier && !is_call && it != map.end())
      out.push_back(it->second);
    else
      out.push_back(t.text);
  }
  return minilang::join_tokens(out);
}

namespace {

// Consistent substitution of variable and function names drawn from the
// rename pool, plus an occasional integer literal change.
std::vector<GenToken> alpha_rename(std::vector<GenToken> toks, Rng& rng,
                                   std::vector<std::pair<std::string, std::string>>& renaming) {
  std::vector<std::string> names;
  for (const auto& t : toks)
    if ((t.cat == Cat::var || t.cat == Cat::fname) &&
        std::find(names.begin(), names.end(), t.text) == names.end())
      names.push_back(t.text);
  std::vector<std::string> pool = kRenamePool;
  shuffle(pool, rng);
  for (std::size_t k = 0; k < names.size() && k < pool.size(); ++k)
    renaming.emplace_back(names[k], pool[k]);
  std::map<std::string, std::string> map(renaming.begin(), renaming.end());
  for (auto& t : toks)
    if (t.cat == Cat::var || t.cat == Cat::fname)
      if (auto it = map.find(t.text); it != map.end()) t.text = it->second;
  if (chance(rng, 0.3)) {
    for (auto& t : toks)
      if (t.cat == Cat::literal && std::isdigit(static_cast<unsigned char>(t.text[0])) &&
          t.text.find('.') == std::string::npos) {
        t.text = std::to_string(uniform(rng, 0, 100));
        break;
      }
  }
  return toks;
}

}  // namespace

std::vector<ClonePairInfo> gen_clone_pairs_detailed(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  FunctionGenerator gen(rng);
  const auto labels = balanced_labels(n, rng);
  std::vector<ClonePairInfo> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ClonePairInfo info;
    info.example.kind = TaskKind::clone;
    info.example.label = labels[i];
    const FunctionInfo f = gen.generate();
    info.example.first = render(f.tokens);
    // Negatives get renamed too, so the second function's identifiers say
    // nothing about the label.
    std::vector<std::pair<std::string, std::string>> renaming;
    if (labels[i] == 1) {
      info.example.second = render(alpha_rename(f.tokens, rng, renaming));
      info.renaming = std::move(renaming);
    } else {
      info.example.second = render(alpha_rename(gen.generate().tokens, rng, renaming));
    }
    out.push_back(std::move(info));
  }
  return out;
}

std::vector<TaskExample> gen_clone_pairs(std::uint64_t seed, std::size_t n) {
  std::vector<TaskExample> out;
  for (auto& p : gen_clone_pairs_detailed(seed, n)) out.push_back(std::move(p.example));
  return out;
}

std::vector<TaskExample> gen_qa_pairs(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  FunctionGenerator gen(rng);
  const auto labels = balanced_labels(n, rng);
  std::vector<TaskExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool positive = labels[i] == 1;
    FunctionInfo f = gen.generate();
    // "calls" queries need a called method for positives and an uncalled
    // one for negatives; fall back to a type query when impossible.
    bool ask_call = chance(rng, 0.5);
    if (ask_call && positive && f.called.empty()) ask_call = false;
    std::string query;
    if (ask_call) {
      std::vector<std::string> candidates;
      for (const auto& m : kMethods)
        if (f.called.count(m) == static_cast<std::size_t>(positive ? 1 : 0)) candidates.push_back(m);
      query = "code that calls " + pick(rng, candidates);
    } else {
      std::string type = f.return_type;
      if (!positive) {
        std::vector<std::string> others;
        for (const auto& t : kTypes)
          if (t != f.return_type) others.push_back(t);
        type = pick(rng, others);
      }
      query = "function that returns " + type;
    }
    out.push_back({TaskExample{TaskKind::qa, render(f.tokens), query, labels[i]}});
  }
  return out;
}

// --- bug-fix pairs ------------------------------------------------------------

namespace {

struct OpFamily {
  const char* var;
  const char* op;
};
const std::vector<OpFamily> kOpFamilies = {{"sum", "+"},     {"total", "+"},    {"diff", "-"},
                                           {"delta", "-"},   {"product", "*"},  {"scaled", "*"},
                                           {"ratio", "/"},   {"quotient", "/"}};

struct AccessorFamily {
  const char* var;
  const char* fname;
  const char* method;
};
const std::vector<AccessorFamily> kAccessors = {{"maxValue", "findMax", "getMax"},
                                                {"minValue", "findMin", "getMin"},
                                                {"firstItem", "pickFirst", "getFirst"},
                                                {"lastItem", "pickLast", "getLast"}};

std::string swapped_op(const std::string& op) {
  if (op == "+") return "-";
  if (op == "-") return "+";
  if (op == "*") return "/";
  return "*";
}

std::string swapped_method(const std::string& m) {
  if (m == "getMax") return "getMin";
  if (m == "getMin") return "getMax";
  if (m == "getFirst") return "getLast";
  return "getFirst";
}

const std::vector<std::string> kRefineTypes = {"int", "double", "Integer", "Double", "long"};
const std::vector<std::string> kRefineNames = {"computeValue", "processItems", "updateState",
                                               "evaluateScore", "applyRate", "mergeCounts"};
const std::vector<std::string> kParamNames = {"a", "b", "x", "y", "data", "items", "base", "rate"};

std::vector<GenToken> refine_function(Rng& rng) {
  std::vector<GenToken> t;
  auto emit = [&](const std::string& s, Cat c) { t.push_back({s, c}); };
  const bool return_call = chance(rng, 0.35);
  const AccessorFamily& ret_acc = pick(rng, kAccessors);

  emit(pick(rng, kRefineTypes), Cat::type);
  emit(return_call ? ret_acc.fname : pick(rng, kRefineNames), Cat::fname);
  emit("(", Cat::punct);
  std::vector<std::string> params = kParamNames;
  shuffle(params, rng);
  params.resize(2);
  for (int i = 0; i < 2; ++i) {
    if (i) emit(",", Cat::punct);
    emit(pick(rng, kRefineTypes), Cat::type);
    emit(params[static_cast<std::size_t>(i)], Cat::var);
  }
  emit(")", Cat::punct);
  emit("{", Cat::punct);

  std::vector<std::string> declared;
  const int stmts = uniform(rng, 1, 2);
  for (int s = 0; s < stmts; ++s) {
    if (chance(rng, 0.6)) {
      const OpFamily& fam = pick(rng, kOpFamilies);
      if (std::find(declared.begin(), declared.end(), fam.var) != declared.end()) continue;
      emit(pick(rng, kRefineTypes), Cat::type);
      emit(fam.var, Cat::var);
      emit("=", Cat::punct);
      emit(pick(rng, params), Cat::var);
      emit(fam.op, Cat::op);
      if (chance(rng, 0.5))
        emit(std::to_string(10 * uniform(rng, 1, 10)), Cat::literal);
      else
        emit(pick(rng, params), Cat::var);
      declared.push_back(fam.var);
    } else {
      const AccessorFamily& acc = pick(rng, kAccessors);
      if (std::find(declared.begin(), declared.end(), acc.var) != declared.end()) continue;
      emit(pick(rng, kRefineTypes), Cat::type);
      emit(acc.var, Cat::var);
      emit("=", Cat::punct);
      emit(pick(rng, params), Cat::var);
      emit(".", Cat::punct);
      emit(acc.method, Cat::method);
      emit("(", Cat::punct);
      emit(")", Cat::punct);
      declared.push_back(acc.var);
    }
    emit(";", Cat::punct);
  }
  emit("return", Cat::keyword);
  if (return_call) {
    emit(ret_acc.method, Cat::method);
    emit("(", Cat::punct);
    emit(params[0], Cat::var);
    emit(",", Cat::punct);
    emit(params[1], Cat::var);
    emit(")", Cat::punct);
  } else if (!declared.empty()) {
    emit(pick(rng, declared), Cat::var);
  } else {
    emit(params[0], Cat::var);
  }
  emit(";", Cat::punct);
  emit("}", Cat::punct);
  return t;
}

}  // namespace

TaskExample BugfixPair::as_example() const {
  return TaskExample{TaskKind::refine, buggy, fixed, std::nullopt};
}

std::vector<BugfixPair> gen_bugfix_pairs(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<BugfixPair> out;
  out.reserve(n);
  while (out.size() < n) {
    auto fixed = refine_function(rng);
    // Token index in `fixed` equals the lexer index: every GenToken is one
    // lexer token.
    std::vector<std::pair<std::size_t, Mutation>> sites;
    for (std::size_t k = 0; k < fixed.size(); ++k) {
      const auto& t = fixed[k];
      if (t.cat == Cat::op) sites.emplace_back(k, Mutation::operator_swap);
      if (t.cat == Cat::literal) sites.emplace_back(k, Mutation::off_by_one_literal);
      if (t.cat == Cat::method) sites.emplace_back(k, Mutation::method_name);
    }
    if (sites.empty()) continue;
    const auto [site, mutation] = pick(rng, sites);
    auto buggy = fixed;
    std::string& tok = buggy[site].text;
    switch (mutation) {
      case Mutation::operator_swap: tok = swapped_op(tok); break;
      case Mutation::method_name: tok = swapped_method(tok); break;
      case Mutation::off_by_one_literal: {
        const int v = std::stoi(tok);
        tok = std::to_string(chance(rng, 0.5) ? v + 1 : v - 1);
        break;
      }
    }
    out.push_back({render(buggy), render(fixed), mutation, site, fixed[site].text, tok});
  }
  return out;
}

// --- JSONL ----------------------------------------------------------------------

namespace {

std::string code_field(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ValidationError(std::string("missing field \"") + key + "\"");
  if (it->is_string()) {
    if (it->get<std::string>().empty()) throw ValidationError(std::string("empty field \"") + key + "\"");
    return it->get<std::string>();
  }
  if (it->is_object()) return it->dump();
  throw ValidationError(std::string("field \"") + key + "\" must be a string or AST-JSON object");
}

int label_field(const nlohmann::json& j) {
  auto it = j.find("label");
  if (it == j.end()) throw ValidationError("missing field \"label\"");
  if (!it->is_number_integer()) throw ValidationError("\"label\" must be 0 or 1");
  const auto v = it->get<long long>();
  if (v != 0 && v != 1) throw ValidationError("\"label\" must be 0 or 1, got " + std::to_string(v));
  return static_cast<int>(v);
}

TaskExample parse_line(const std::string& line, TaskKind kind) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("line is not a JSON object");
  TaskExample ex;
  ex.kind = kind;
  switch (kind) {
    case TaskKind::qa:
      ex.first = code_field(j, "code");
      if (!j.contains("query") || !j["query"].is_string())
        throw ValidationError("missing string field \"query\"");
      ex.second = j["query"].get<std::string>();
      ex.label = label_field(j);
      break;
    case TaskKind::clone:
      ex.first = code_field(j, "code1");
      ex.second = code_field(j, "code2");
      ex.label = label_field(j);
      break;
    case TaskKind::refine:
      ex.first = code_field(j, "buggy");
      ex.second = code_field(j, "fixed");
      break;
  }
  ex.validate();
  return ex;
}

nlohmann::ordered_json code_value(const std::string& code) {
  const auto start = code.find_first_not_of(" \t\r\n");
  if (start != std::string::npos && code[start] == '{') {
    try {
      return nlohmann::ordered_json::parse(code);
    } catch (const nlohmann::json::exception&) {
    }
  }
  return code;
}

}  // namespace

LoadReport parse_jsonl(std::string_view text, TaskKind kind, bool strict) {
  LoadReport report;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      report.examples.push_back(parse_line(line, kind));
    } catch (const ValidationError& e) {
      const std::string msg = "line " + std::to_string(lineno) + ": " + e.what();
      if (strict) throw ValidationError(msg);
      report.skipped.push_back(msg);
    }
  }
  return report;
}

LoadReport load_jsonl(const std::filesystem::path& path, TaskKind kind, bool strict) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open dataset " + path.string());
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_jsonl(buf.str(), kind, strict);
}

std::string to_jsonl(std::span<const TaskExample> examples) {
  std::ostringstream os;
  for (const auto& ex : examples) {
    nlohmann::ordered_json j;
    switch (ex.kind) {
      case TaskKind::qa:
        j["query"] = ex.second;
        j["code"] = code_value(ex.first);
        j["label"] = ex.label.value_or(0);
        break;
      case TaskKind::clone:
        j["code1"] = code_value(ex.first);
        j["code2"] = code_value(ex.second);
        j["label"] = ex.label.value_or(0);
        break;
      case TaskKind::refine:
        j["buggy"] = code_value(ex.first);
        j["fixed"] = code_value(ex.second);
        break;
    }
    os << j.dump() << '\n';
  }
  return os.str();
}

void write_jsonl(const std::filesystem::path& path, std::span<const TaskExample> examples) {
  std::ofstream os(path);
  if (!os) throw RuntimeFailure("cannot open " + path.string() + " for writing");
  os << to_jsonl(examples);
}

}  // namespace astmask
