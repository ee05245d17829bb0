// astmask command-line front end.
//
//   astmask gen --kind clone --n 1000 --seed 1 --out clone.jsonl
//   astmask pretrain --corpus corpus.jsonl --steps 2000 --out base.ckpt
//   astmask finetune --task clone --train train.jsonl --heldout test.jsonl --checkpoint base.ckpt
//
// Exit status: 0 success, 1 invalid input, 2 runtime failure.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "astmask/ast_json.hpp"
#include "astmask/checkpoint.hpp"
#include "astmask/error.hpp"
#include "astmask/eval.hpp"
#include "astmask/minilang.hpp"
#include "astmask/tasks.hpp"
#include "astmask/training.hpp"

using namespace astmask;

namespace {

struct Shared {
  std::uint64_t seed = 0;
  std::optional<int> max_len;
  std::optional<double> lr;
  std::optional<int> batch_size;
  double warmup = 0.1;
  double dropout = 0.1;
  bool no_ast_position = false;
  bool no_ast_mask = false;
  std::string mask_mode = "additive";
  std::string out;
};

struct ModelShape {
  int d_model = 64;
  int heads = 2;
  int layers = 2;
  int d_ff = 128;
  int decoder_layers = 2;
};

void add_shared(CLI::App* cmd, Shared& s) {
  cmd->add_option("--seed", s.seed, "Random seed");
  cmd->add_option("--max-len", s.max_len, "Maximum encoded length (512 qa/clone, 256 refine)");
  cmd->add_option("--lr", s.lr, "Learning rate (1e-5 qa, 2e-5 clone, 1e-4 refine)");
  cmd->add_option("--batch-size", s.batch_size, "Batch size (16 qa/clone, 32 refine)");
  cmd->add_option("--warmup", s.warmup, "Warm-up fraction of the step budget");
  cmd->add_option("--dropout", s.dropout, "Dropout probability");
  cmd->add_flag("--no-ast-position", s.no_ast_position, "Disable AST-position embeddings");
  cmd->add_flag("--no-ast-mask", s.no_ast_mask, "Replace the visibility matrix with all-ones");
  cmd->add_option("--mask-mode", s.mask_mode, "additive or multiplicative")
      ->check(CLI::IsMember({"additive", "multiplicative"}));
  cmd->add_option("--out", s.out, "Output path (stdout when omitted)");
}

void add_shape(CLI::App* cmd, ModelShape& m) {
  cmd->add_option("--d-model", m.d_model, "Hidden size");
  cmd->add_option("--heads", m.heads, "Attention heads");
  cmd->add_option("--layers", m.layers, "Encoder layers");
  cmd->add_option("--d-ff", m.d_ff, "Feed-forward size");
  cmd->add_option("--decoder-layers", m.decoder_layers, "Decoder layers for refine");
}

int default_max_len(TrainTask t) { return t == TrainTask::refine ? 256 : 512; }
double default_lr(TrainTask t) {
  switch (t) {
    case TrainTask::qa: return 1e-5;
    case TrainTask::clone: return 2e-5;
    case TrainTask::refine: return 1e-4;
    case TrainTask::mlm: return 1e-4;
  }
  return 1e-4;
}
int default_batch(TrainTask t) { return t == TrainTask::refine ? 32 : 16; }

TrainConfig train_config(const Shared& s, TrainTask task, int steps) {
  TrainConfig c;
  c.task = task;
  c.seed = s.seed;
  c.learning_rate = s.lr.value_or(default_lr(task));
  c.batch_size = s.batch_size.value_or(default_batch(task));
  c.warmup_ratio = s.warmup;
  c.max_steps = steps;
  c.ablation = {s.no_ast_position, s.no_ast_mask};
  c.validate();
  return c;
}

ModelConfig model_config(const Shared& s, const ModelShape& m, int max_len) {
  ModelConfig c;
  c.d_model = m.d_model;
  c.n_heads = m.heads;
  c.n_layers = m.layers;
  c.d_ff = m.d_ff;
  c.max_len = max_len;
  c.max_ast_pos = max_len;
  c.dropout = s.dropout;
  c.mask_mode = mask_mode_from_string(s.mask_mode);
  return c;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

void emit(const Shared& s, const std::string& text) {
  if (s.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream os(s.out, std::ios::binary);
  if (!os) throw RuntimeFailure("cannot write " + s.out);
  os << text;
}

/// One {"code": ...} object per line.
std::vector<std::string> read_corpus(const std::string& path) {
  std::vector<std::string> out;
  std::istringstream is(read_file(path));
  std::size_t lineno = 0;
  for (std::string line; std::getline(is, line);) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto& code = j.at("code");
      out.push_back(code.is_string() ? code.get<std::string>() : code.dump());
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.empty()) throw ValidationError(path + ": empty corpus");
  return out;
}

Vocabulary read_vocab(const std::string& path) {
  std::istringstream is(read_file(path));
  return Vocabulary::load(is);
}

int run(int argc, char** argv) {
  CLI::App app{"AST-aware masked transformer toolkit"};
  app.require_subcommand(1);

  // gen
  Shared gen_s;
  std::string gen_kind = "corpus";
  std::size_t gen_n = 100;
  auto* gen = app.add_subcommand("gen", "Generate synthetic MiniLang data as JSONL");
  add_shared(gen, gen_s);
  gen->add_option("--kind", gen_kind, "corpus, qa, clone or refine")
      ->check(CLI::IsMember({"corpus", "qa", "clone", "refine"}));
  gen->add_option("--n", gen_n, "Number of items");

  // parse / prune / linearize
  Shared tree_s;
  std::string input;
  std::string lang = "python";
  bool no_tags = false, with_visibility = false;
  auto* parse_cmd = app.add_subcommand("parse", "Parse MiniLang source into AST-JSON");
  parse_cmd->add_option("input", input, "MiniLang source file")->required();
  parse_cmd->add_option("--out", tree_s.out, "Output path");
  auto* prune_cmd = app.add_subcommand("prune", "Prune an AST-JSON tree");
  prune_cmd->add_option("input", input, "AST-JSON file")->required();
  prune_cmd->add_option("--lang", lang, "python, java, minilang or other");
  prune_cmd->add_option("--out", tree_s.out, "Output path");
  auto* lin_cmd = app.add_subcommand("linearize", "Linearize code into tagged tokens (JSONL)");
  lin_cmd->add_option("input", input, "MiniLang source or AST-JSON file")->required();
  lin_cmd->add_flag("--no-tags", no_tags, "Emit code tokens only");
  lin_cmd->add_flag("--visibility", with_visibility, "Append the visibility matrix rows");
  lin_cmd->add_option("--out", tree_s.out, "Output path");

  // vocab
  Shared voc_s;
  std::string voc_corpus, voc_data, voc_task = "qa";
  std::size_t min_freq = 1, max_size = 50000;
  auto* voc_cmd = app.add_subcommand("vocab", "Build a vocabulary");
  voc_cmd->add_option("--corpus", voc_corpus, "Corpus JSONL ({\"code\": ...} per line)");
  voc_cmd->add_option("--data", voc_data, "Task JSONL to include");
  voc_cmd->add_option("--task", voc_task, "Task of --data");
  voc_cmd->add_option("--min-freq", min_freq, "Minimum token count");
  voc_cmd->add_option("--max-size", max_size, "Maximum vocabulary size");
  voc_cmd->add_option("--out", voc_s.out, "Output path");

  // pretrain
  Shared pre_s;
  ModelShape pre_m;
  std::string pre_corpus, pre_vocab, pre_curve, pre_ckdir;
  int pre_steps = 1000, pre_every = 0;
  double mask_prob = 0.15;
  auto* pre_cmd = app.add_subcommand("pretrain", "Masked-LM pretraining");
  add_shared(pre_cmd, pre_s);
  add_shape(pre_cmd, pre_m);
  pre_cmd->add_option("--corpus", pre_corpus, "Corpus JSONL")->required();
  pre_cmd->add_option("--vocab", pre_vocab, "Vocabulary file (built from the corpus if omitted)");
  pre_cmd->add_option("--steps", pre_steps, "Optimizer steps");
  pre_cmd->add_option("--mask-prob", mask_prob, "MLM selection probability");
  pre_cmd->add_option("--loss-csv", pre_curve, "Write the loss curve here");
  pre_cmd->add_option("--checkpoint-every", pre_every, "Snapshot interval in steps");
  pre_cmd->add_option("--checkpoint-dir", pre_ckdir, "Snapshot directory");

  // finetune / ablate
  Shared ft_s;
  ModelShape ft_m;
  std::string ft_task = "qa", ft_train, ft_heldout, ft_ckpt, ft_report, ft_curve;
  int ft_steps = 1000;
  auto* ft_cmd = app.add_subcommand("finetune", "Fine-tune on a task and report held-out metrics");
  auto* ab_cmd = app.add_subcommand("ablate", "Fine-tune full / no AST position / no AST mask");
  for (auto* cmd : {ft_cmd, ab_cmd}) {
    add_shared(cmd, ft_s);
    add_shape(cmd, ft_m);
    cmd->add_option("--task", ft_task, "qa, clone or refine")
        ->check(CLI::IsMember({"qa", "clone", "refine"}));
    cmd->add_option("--train", ft_train, "Training JSONL")->required();
    cmd->add_option("--heldout", ft_heldout, "Held-out JSONL")->required();
    cmd->add_option("--checkpoint", ft_ckpt, "Starting checkpoint (fresh model if omitted)");
    cmd->add_option("--steps", ft_steps, "Optimizer steps");
  }
  ft_cmd->add_option("--report", ft_report, "Write the metrics report here");
  ft_cmd->add_option("--loss-csv", ft_curve, "Write the loss curve here");

  // eval
  Shared ev_s;
  std::string ev_task = "qa", ev_ckpt, ev_data, ev_split = "test";
  auto* ev_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a task dataset");
  add_shared(ev_cmd, ev_s);
  ev_cmd->add_option("--task", ev_task, "qa, clone or refine")
      ->check(CLI::IsMember({"qa", "clone", "refine"}));
  ev_cmd->add_option("--checkpoint", ev_ckpt, "Checkpoint")->required();
  ev_cmd->add_option("--data", ev_data, "Task JSONL")->required();
  ev_cmd->add_option("--split", ev_split, "Split name for the report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (gen->parsed()) {
    std::string text;
    if (gen_kind == "corpus") {
      for (const auto& code : gen_corpus(gen_s.seed, gen_n)) {
        nlohmann::ordered_json line;
        line["code"] = code;
        text += line.dump() + "\n";
      }
    } else if (gen_kind == "qa") {
      text = to_jsonl(gen_qa_pairs(gen_s.seed, gen_n));
    } else if (gen_kind == "clone") {
      text = to_jsonl(gen_clone_pairs(gen_s.seed, gen_n));
    } else {
      std::vector<TaskExample> ex;
      for (const auto& p : gen_bugfix_pairs(gen_s.seed, gen_n)) ex.push_back(p.as_example());
      text = to_jsonl(ex);
    }
    emit(gen_s, text);
    return 0;
  }
  if (parse_cmd->parsed()) {
    emit(tree_s, emit_ast_json(minilang::parse(read_file(input))) + "\n");
    return 0;
  }
  if (prune_cmd->parsed()) {
    const auto language = source_language_from_string(lang);
    const AstTree tree = ingest_ast_json(read_file(input), language);
    emit(tree_s, emit_ast_json(prune(tree, PrunePolicy::for_language(language))) + "\n");
    return 0;
  }
  if (lin_cmd->parsed()) {
    const LinearSequence seq = linearize(code_to_tree(read_file(input)), !no_tags);
    std::string text = to_jsonl(seq);
    if (with_visibility) {
      const auto rows = build_visibility(seq).to_rows();
      for (const auto& r : rows) text += nlohmann::json(r).dump() + "\n";
    }
    emit(tree_s, text);
    return 0;
  }
  if (voc_cmd->parsed()) {
    std::vector<std::string> corpus;
    if (!voc_corpus.empty()) corpus = read_corpus(voc_corpus);
    std::vector<TaskExample> data;
    if (!voc_data.empty()) data = load_jsonl(voc_data, task_kind_from_string(voc_task)).examples;
    const Vocabulary v = build_task_vocab(data, corpus, min_freq, max_size);
    std::ostringstream os;
    v.save(os);
    emit(voc_s, os.str());
    return 0;
  }
  if (pre_cmd->parsed()) {
    const auto corpus = read_corpus(pre_corpus);
    const Vocabulary vocab =
        pre_vocab.empty() ? build_task_vocab({}, corpus) : read_vocab(pre_vocab);
    const TrainConfig tc = [&] {
      TrainConfig c = train_config(pre_s, TrainTask::mlm, pre_steps);
      c.mlm_mask_prob = mask_prob;
      c.validate();
      return c;
    }();
    const int max_len = pre_s.max_len.value_or(128);
    ModelConfig mc = model_config(pre_s, pre_m, max_len);
    Checkpoint ckpt = init_checkpoint(vocab, mc, pre_s.seed);
    std::vector<EncodedExample> encoded;
    for (const auto& code : corpus)
      encoded.push_back(encode(code_sequence(code), vocab, static_cast<std::size_t>(max_len)));
    PretrainOptions po;
    po.checkpoint_interval = pre_every;
    po.checkpoint_dir = std::filesystem::path(pre_ckdir.empty() ? "." : pre_ckdir);
    const auto res = pretrain_mlm(encoded, std::move(ckpt), tc, po);
    if (!pre_curve.empty()) {
      std::ofstream os(pre_curve);
      if (!os) throw RuntimeFailure("cannot write " + pre_curve);
      os << loss_curve_csv(res.curve);
    }
    if (pre_s.out.empty()) throw ValidationError("pretrain needs --out for the checkpoint");
    save_checkpoint(pre_s.out, res.checkpoint);
    nlohmann::ordered_json j;
    j["steps"] = pre_steps;
    j["final_loss"] = res.curve.empty() ? 0.0 : res.curve.back().loss;
    j["checkpoint"] = pre_s.out;
    std::cout << j.dump() << "\n";
    return 0;
  }
  if (ft_cmd->parsed() || ab_cmd->parsed()) {
    const TrainTask task = train_task_from_string(ft_task);
    const TaskKind kind = task_kind_from_string(ft_task);
    const auto train = load_jsonl(ft_train, kind).examples;
    const auto heldout = load_jsonl(ft_heldout, kind).examples;
    const int max_len = ft_s.max_len.value_or(default_max_len(task));
    Checkpoint ckpt;
    if (ft_ckpt.empty()) {
      ModelConfig mc = model_config(ft_s, ft_m, max_len);
      if (kind == TaskKind::refine) mc.decoder_layers = ft_m.decoder_layers;
      ckpt = init_checkpoint(build_task_vocab(train, {}), mc, ft_s.seed);
    } else {
      ckpt = load_checkpoint(std::filesystem::path(ft_ckpt));
      if (kind == TaskKind::refine && ckpt.config.decoder_layers == 0)
        attach_decoder(ckpt, ft_m.decoder_layers, ft_s.seed);
      ckpt.config.mask_mode = mask_mode_from_string(ft_s.mask_mode);
      ckpt.config.dropout = ft_s.dropout;
    }
    if (max_len > ckpt.config.max_len)
      std::cerr << "note: --max-len " << max_len << " exceeds the model's " << ckpt.config.max_len
                << "; using " << ckpt.config.max_len << "\n";
    const TrainConfig tc = train_config(ft_s, task, ft_steps);
    if (ab_cmd->parsed()) {
      const auto rows = ablation_run(ckpt, tc, train, heldout, static_cast<std::size_t>(max_len));
      std::cout << ablation_table(rows);
      if (!ft_s.out.empty()) {
        std::ofstream os(ft_s.out);
        if (!os) throw RuntimeFailure("cannot write " + ft_s.out);
        os << ablation_json(rows).dump(2) << "\n";
      }
      return 0;
    }
    FinetuneOptions fo;
    fo.max_len = static_cast<std::size_t>(max_len);
    const auto res = finetune(train, heldout, std::move(ckpt), tc, fo);
    if (!ft_s.out.empty()) save_checkpoint(std::filesystem::path(ft_s.out), res.checkpoint);
    if (!ft_curve.empty()) {
      std::ofstream os(ft_curve);
      if (!os) throw RuntimeFailure("cannot write " + ft_curve);
      os << loss_curve_csv(res.curve);
    }
    const std::string report = res.report.to_json().dump() + "\n";
    if (!ft_report.empty()) {
      std::ofstream os(ft_report);
      if (!os) throw RuntimeFailure("cannot write " + ft_report);
      os << report;
    }
    std::cout << report;
    return 0;
  }
  if (ev_cmd->parsed()) {
    const TaskKind kind = task_kind_from_string(ev_task);
    Checkpoint ckpt = load_checkpoint(std::filesystem::path(ev_ckpt));
    ckpt.config.mask_mode = mask_mode_from_string(ev_s.mask_mode);
    TrainConfig tc = train_config(ev_s, train_task(kind), 0);
    ckpt.config = tc.ablation.apply(ckpt.config);
    const auto data = load_jsonl(ev_data, kind).examples;
    const int max_len = ev_s.max_len.value_or(default_max_len(train_task(kind)));
    const auto report = evaluate(ckpt, kind, data, static_cast<std::size_t>(max_len),
                                 config_fingerprint(ckpt.config, tc), ev_split);
    emit(ev_s, report.to_json().dump() + "\n");
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const RuntimeFailure& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
}
