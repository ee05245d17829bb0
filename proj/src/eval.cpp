#include "astmask/eval.hpp"

#include <cstdio>
#include <sstream>

#include "astmask/error.hpp"
#include "astmask/minilang.hpp"

namespace astmask {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ValidationError(std::string(what) + ": length mismatch");
  if (a == 0) throw ValidationError(std::string(what) + ": empty input");
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::vector<std::string> code_tokens(const std::string& text) {
  try {
    return minilang::token_texts(text);
  } catch (const std::exception&) {
    std::vector<std::string> out;
    std::istringstream is(text);
    for (std::string w; is >> w;) out.push_back(w);
    return out;
  }
}

bool is_json_code(const std::string& code) {
  const auto start = code.find_first_not_of(" \t\r\n");
  return start != std::string::npos && code[start] == '{';
}

std::string render_tokens(const std::vector<std::string>& toks, bool as_minilang) {
  if (as_minilang) return minilang::join_tokens(toks);
  std::string out;
  for (const auto& t : toks) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

}  // namespace

double metric_accuracy(std::span<const int> preds, std::span<const int> labels) {
  check_lengths(preds.size(), labels.size(), "accuracy");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
  return ratio(hit, preds.size());
}

PrecisionRecallF1 metric_f1(std::span<const int> preds, std::span<const int> labels) {
  check_lengths(preds.size(), labels.size(), "f1");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] == 1 && labels[i] == 1) ++tp;
    else if (preds[i] == 1) ++fp;
    else if (labels[i] == 1) ++fn;
  }
  PrecisionRecallF1 r;
  r.precision = ratio(tp, tp + fp);
  r.recall = ratio(tp, tp + fn);
  const double s = r.precision + r.recall;
  r.f1 = s == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / s;
  return r;
}

double metric_exact_match(std::span<const std::string> outputs,
                          std::span<const std::string> references) {
  check_lengths(outputs.size(), references.size(), "exact_match");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i)
    hit += code_tokens(outputs[i]) == code_tokens(references[i]);
  return ratio(hit, outputs.size());
}

std::string config_fingerprint(const ModelConfig& model, const TrainConfig& train) {
  const std::string text = model.to_json().dump() + "|" + train.to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nlohmann::ordered_json MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["task"] = to_string(task);
  j["split"] = split;
  if (accuracy) j["accuracy"] = *accuracy;
  if (precision) j["precision"] = *precision;
  if (recall) j["recall"] = *recall;
  if (f1) j["f1"] = *f1;
  if (exact_match) j["exact_match"] = *exact_match;
  j["n"] = n;
  j["fingerprint"] = fingerprint;
  return j;
}

Predictions predict(const Checkpoint& ckpt, TaskKind task, std::span<const TaskExample> examples,
                    std::size_t max_len) {
  max_len = std::min<std::size_t>(max_len, static_cast<std::size_t>(ckpt.config.max_len));
  ForwardOptions fopt;
  fopt.trim_padding = true;
  Predictions out;
  for (const auto& ex : examples) {
    if (ex.kind != task) throw ValidationError("predict: example kind does not match the task");
    const EncodedExample e = encode_task_example(ex, ckpt.vocab, max_len);
    const ForwardTrace t = encode_forward(e, ckpt.params, ckpt.config, fopt);
    if (task == TaskKind::refine) {
      const auto ids = decode_generate(t, ckpt.params, ckpt.config, max_len);
      std::vector<std::string> toks;
      for (const auto id : ids)
        if (id != Vocabulary::kSepId) toks.push_back(ckpt.vocab.token(id));
      out.fixes.push_back(render_tokens(toks, !is_json_code(ex.first)));
    } else {
      out.labels.push_back(predict_class(cls_classify(t, ckpt.params)));
    }
  }
  return out;
}

MetricsReport evaluate(const Checkpoint& ckpt, TaskKind task, std::span<const TaskExample> examples,
                       std::size_t max_len, const std::string& fingerprint,
                       const std::string& split) {
  if (examples.empty()) throw ValidationError("evaluate: no examples");
  const Predictions p = predict(ckpt, task, examples, max_len);
  MetricsReport r;
  r.task = task;
  r.split = split;
  r.n = examples.size();
  r.fingerprint = fingerprint;
  if (task == TaskKind::refine) {
    std::vector<std::string> refs;
    for (const auto& ex : examples)
      refs.push_back(render_tokens(target_tokens(ex.second), !is_json_code(ex.second)));
    r.exact_match = metric_exact_match(p.fixes, refs);
    return r;
  }
  std::vector<int> labels;
  for (const auto& ex : examples) labels.push_back(*ex.label);
  r.accuracy = metric_accuracy(p.labels, labels);
  if (task == TaskKind::clone) {
    const auto f = metric_f1(p.labels, labels);
    r.precision = f.precision;
    r.recall = f.recall;
    r.f1 = f.f1;
  }
  return r;
}

std::vector<AblationRow> ablation_run(const Checkpoint& base, const TrainConfig& config,
                                      std::span<const TaskExample> train,
                                      std::span<const TaskExample> heldout, std::size_t max_len) {
  struct Variant {
    const char* name;
    AblationFlags flags;
  };
  const Variant variants[] = {
      {"full", {false, false}}, {"no_ast_position", {true, false}}, {"no_ast_mask", {false, true}}};
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    TrainConfig tc = config;
    tc.ablation = v.flags;
    FinetuneOptions fo;
    fo.max_len = max_len;
    FinetuneResult res = finetune(train, heldout, base, tc, fo);
    rows.push_back({v.name, v.flags.apply(base.config), tc, res.report});
  }
  return rows;
}

std::string ablation_table(std::span<const AblationRow> rows) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %-6s %-6s %-9s %-9s %-9s %-9s %-9s %-6s %s\n", "variant",
                "astpos", "mask", "accuracy", "precision", "recall", "f1", "exact", "n",
                "fingerprint");
  os << line;
  auto cell = [](const std::optional<double>& v) {
    char b[32];
    if (v) std::snprintf(b, sizeof b, "%.4f", *v);
    else std::snprintf(b, sizeof b, "-");
    return std::string(b);
  };
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-16s %-6s %-6s %-9s %-9s %-9s %-9s %-9s %-6zu %s\n",
                  r.name.c_str(), r.config.use_ast_position ? "on" : "off",
                  r.config.use_ast_mask ? "on" : "off", cell(r.report.accuracy).c_str(),
                  cell(r.report.precision).c_str(), cell(r.report.recall).c_str(),
                  cell(r.report.f1).c_str(), cell(r.report.exact_match).c_str(), r.report.n,
                  r.report.fingerprint.c_str());
    os << line;
  }
  return os.str();
}

nlohmann::ordered_json ablation_json(std::span<const AblationRow> rows) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["variant"] = r.name;
    j["use_ast_position"] = r.config.use_ast_position;
    j["use_ast_mask"] = r.config.use_ast_mask;
    j["seed"] = r.train.seed;
    j["report"] = r.report.to_json();
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace astmask
