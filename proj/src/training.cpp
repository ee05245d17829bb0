#include "astmask/training.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "astmask/error.hpp"
#include "astmask/eval.hpp"
#include "astmask/minilang.hpp"

namespace astmask {

std::string_view to_string(TrainTask task) {
  switch (task) {
    case TrainTask::mlm: return "mlm";
    case TrainTask::qa: return "qa";
    case TrainTask::clone: return "clone";
    case TrainTask::refine: return "refine";
  }
  return "mlm";
}

TrainTask train_task_from_string(std::string_view name) {
  if (name == "mlm") return TrainTask::mlm;
  return train_task(task_kind_from_string(name));
}

TrainTask train_task(TaskKind kind) noexcept {
  switch (kind) {
    case TaskKind::qa: return TrainTask::qa;
    case TaskKind::clone: return TrainTask::clone;
    case TaskKind::refine: return TrainTask::refine;
  }
  return TrainTask::qa;
}

ModelConfig AblationFlags::apply(ModelConfig config) const {
  if (no_ast_position) config.use_ast_position = false;
  if (no_ast_mask) config.use_ast_mask = false;
  return config;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("train config: " + m); };
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning rate must be positive");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) fail("warmup ratio must lie in [0, 1)");
  if (batch_size <= 0) fail("batch size must be positive");
  if (max_steps < 0) fail("max steps must be non-negative");
  if (!(mlm_mask_prob > 0.0 && mlm_mask_prob < 1.0)) fail("mlm mask probability must lie in (0, 1)");
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["learning_rate"] = learning_rate;
  j["warmup_ratio"] = warmup_ratio;
  j["batch_size"] = batch_size;
  j["max_steps"] = max_steps;
  j["seed"] = seed;
  j["mlm_mask_prob"] = mlm_mask_prob;
  j["task"] = to_string(task);
  j["no_ast_position"] = ablation.no_ast_position;
  j["no_ast_mask"] = ablation.no_ast_mask;
  return j;
}

double scheduled_lr(const TrainConfig& config, int step) {
  const int warmup = static_cast<int>(std::ceil(config.warmup_ratio * config.max_steps));
  if (warmup <= 0 || step >= warmup) return config.learning_rate;
  return config.learning_rate * static_cast<double>(std::max(step, 0)) / warmup;
}

Sample mask_for_mlm(const EncodedExample& example, double prob, int vocab_size,
                    std::mt19937_64& rng) {
  const std::size_t n = example.length();
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < n; ++i) {
    const int id = example.ids[i];
    if (example.ast_segment[i] != 0) continue;
    if (id == Vocabulary::kClsId || id == Vocabulary::kSepId || id == Vocabulary::kPadId ||
        id == Vocabulary::kMaskId)
      continue;
    candidates.push_back(i);
  }
  if (candidates.empty()) throw ValidationError("mask_for_mlm: example has no code tokens");
  if (vocab_size <= Vocabulary::kNumSpecials)
    throw ValidationError("mask_for_mlm: vocabulary has no regular tokens");

  Sample s{example, {}};
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::int32_t> random_id(Vocabulary::kNumSpecials, vocab_size - 1);
  for (const auto i : candidates) {
    if (!(unit(rng) < prob)) continue;
    s.mlm_targets.push_back({i, example.ids[i]});
    const double r = unit(rng);
    if (r < 0.8)
      s.example.ids[i] = Vocabulary::kMaskId;
    else if (r < 0.9)
      s.example.ids[i] = random_id(rng);
  }
  return s;
}

namespace {

std::vector<std::pair<std::string, Mat*>> tensors(ModelParams& p) {
  std::vector<std::pair<std::string, Mat*>> out;
  p.for_each([&](const std::string& name, Mat& m) { out.emplace_back(name, &m); });
  return out;
}

std::vector<const Mat*> const_tensors(const ModelParams& p) {
  std::vector<const Mat*> out;
  p.for_each([&](const std::string&, const Mat& m) { out.push_back(&m); });
  return out;
}

}  // namespace

OptimizerState OptimizerState::for_params(const ModelParams& params) {
  OptimizerState s;
  s.m = params;
  s.m.set_zero();
  s.v = s.m;
  return s;
}

void adam_step(ModelParams& params, const ModelParams& grads, OptimizerState& state, double lr) {
  auto p = tensors(params);
  auto g = const_tensors(grads);
  auto m = tensors(state.m);
  auto v = tensors(state.v);
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size())
    throw ValidationError("adam_step: parameter structure mismatch");
  for (std::size_t k = 0; k < p.size(); ++k) {
    const Mat& gk = *g[k];
    if (gk.rows() != p[k].second->rows() || gk.cols() != p[k].second->cols() ||
        m[k].second->rows() != gk.rows() || m[k].second->cols() != gk.cols())
      throw ValidationError("adam_step: shape mismatch in " + p[k].first);
    if (!gk.allFinite())
      throw RuntimeFailure("adam_step: non-finite gradient in " + p[k].first + " at step " +
                           std::to_string(state.step + 1));
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < p.size(); ++k) {
    Mat& mk = *m[k].second;
    Mat& vk = *v[k].second;
    const Mat& gk = *g[k];
    mk = state.beta1 * mk + (1.0 - state.beta1) * gk;
    vk = state.beta2 * vk + (1.0 - state.beta2) * gk.cwiseProduct(gk);
    const auto mhat = mk.array() / c1;
    const auto vhat = vk.array() / c2;
    p[k].second->array() -= lr * mhat / (vhat.sqrt() + state.eps);
  }
}

std::string loss_curve_csv(std::span<const LossPoint> curve) {
  std::ostringstream os;
  os.precision(17);
  os << "step,loss,lr\n";
  for (const auto& pt : curve) os << pt.step << ',' << pt.loss << ',' << pt.lr << '\n';
  return os.str();
}

// --- task encoding --------------------------------------------------------------

namespace {

bool looks_like_json(std::string_view code) {
  const auto start = code.find_first_not_of(" \t\r\n");
  return start != std::string_view::npos && code[start] == '{';
}

}  // namespace

std::vector<std::string> target_tokens(std::string_view code) {
  if (looks_like_json(code)) return preorder_tokens(code_to_tree(code).root);
  return minilang::token_texts(code);
}

LinearSequence code_sequence(std::string_view code) { return linearize(code_to_tree(code)); }

EncodedExample encode_task_example(const TaskExample& example, const Vocabulary& vocab,
                                   std::size_t max_len) {
  example.validate();
  EncodedExample e;
  switch (example.kind) {
    case TaskKind::qa:
      e = encode(query_sequence(example.second), code_sequence(example.first), vocab, max_len);
      break;
    case TaskKind::clone:
      e = encode(code_sequence(example.first), code_sequence(example.second), vocab, max_len);
      break;
    case TaskKind::refine: {
      e = encode(code_sequence(example.first), vocab, max_len);
      std::vector<std::int32_t> target;
      for (const auto& t : target_tokens(example.second)) target.push_back(vocab.id(t));
      if (target.size() + 1 > max_len) target.resize(max_len - 1);
      target.push_back(Vocabulary::kSepId);
      e.target_ids = std::move(target);
      break;
    }
  }
  e.label = example.label;
  return e;
}

Vocabulary build_task_vocab(std::span<const TaskExample> examples,
                            std::span<const std::string> corpus, std::size_t min_freq,
                            std::size_t max_size) {
  VocabBuilder b;
  for (const auto& code : corpus) b.add(code_sequence(code));
  for (const auto& ex : examples) {
    switch (ex.kind) {
      case TaskKind::qa:
        b.add_text(ex.second);
        b.add(code_sequence(ex.first));
        break;
      case TaskKind::clone:
        b.add(code_sequence(ex.first));
        b.add(code_sequence(ex.second));
        break;
      case TaskKind::refine:
        b.add(code_sequence(ex.first));
        for (const auto& t : target_tokens(ex.second)) b.add_whole(t);
        break;
    }
  }
  if (b.empty()) throw ValidationError("cannot build a vocabulary from empty data");
  return b.build(min_freq, max_size);
}

Checkpoint init_checkpoint(const Vocabulary& vocab, ModelConfig config, std::uint64_t seed) {
  config.vocab_size = static_cast<int>(vocab.size());
  config.validate();
  Checkpoint c;
  c.config = config;
  c.params = ModelParams::initialize(config, seed);
  c.vocab = vocab;
  return c;
}

void attach_decoder(Checkpoint& ckpt, int layers, std::uint64_t seed) {
  if (layers <= 0) throw ValidationError("attach_decoder: layer count must be positive");
  if (ckpt.config.decoder_layers > 0) throw ValidationError("checkpoint already has a decoder");
  ModelConfig cfg = ckpt.config;
  cfg.decoder_layers = layers;
  const ModelParams fresh = ModelParams::initialize(cfg, seed);
  ckpt.params.dec_emb_ln = fresh.dec_emb_ln;
  ckpt.params.decoder = fresh.decoder;
  ckpt.params.out_w = fresh.out_w;
  ckpt.params.out_b = fresh.out_b;
  ckpt.config = cfg;
}

// --- training loops ---------------------------------------------------------------

namespace {

/// Epoch-wise shuffled index stream.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    reshuffle();
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    out.reserve(batch);
    while (out.size() < batch) {
      if (pos_ == order_.size()) {
        reshuffle();
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  void reshuffle() {
    for (std::size_t i = order_.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> d(0, i - 1);
      std::swap(order_[i - 1], order_[d(rng_)]);
    }
  }

  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

std::uint64_t step_seed(std::uint64_t seed, int step) {
  std::uint64_t x = seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(step);
  x ^= x >> 31;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 29;
  return x;
}

}  // namespace

PretrainResult pretrain_mlm(std::span<const EncodedExample> corpus, Checkpoint ckpt,
                            const TrainConfig& config, const PretrainOptions& options) {
  config.validate();
  ckpt.config.validate();
  if (corpus.empty()) throw ValidationError("pretrain: empty corpus");
  if (static_cast<std::size_t>(ckpt.config.vocab_size) != ckpt.vocab.size())
    throw ValidationError("pretrain: model vocabulary size does not match the vocabulary");
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (const auto id : corpus[i].ids)
      if (id < 0 || static_cast<std::size_t>(id) >= ckpt.vocab.size())
        throw ValidationError("pretrain: corpus example " + std::to_string(i) +
                              " uses an id outside the vocabulary");
    if (corpus[i].max_len() > static_cast<std::size_t>(ckpt.config.max_len))
      throw ValidationError("pretrain: corpus example longer than the model max_len");
  }
  ckpt.config = config.ablation.apply(ckpt.config);

  PretrainResult result;
  BatchSampler sampler(corpus.size(), config.seed);
  std::mt19937_64 mask_rng(step_seed(config.seed, -1));
  OptimizerState opt = OptimizerState::for_params(ckpt.params);
  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  for (int step = 1; step <= config.max_steps; ++step) {
    std::vector<Sample> batch;
    batch.reserve(batch_size);
    for (const auto idx : sampler.next(batch_size))
      batch.push_back(mask_for_mlm(corpus[idx], config.mlm_mask_prob, ckpt.config.vocab_size, mask_rng));
    const GradientOptions gopt{true, step_seed(config.seed, step)};
    auto lg = compute_gradients(Objective::mlm, batch, ckpt.params, ckpt.config, gopt);
    const double lr = scheduled_lr(config, step);
    adam_step(ckpt.params, lg.grads, opt, lr);
    result.curve.push_back({step, lg.loss, lr});
    if (options.on_step) options.on_step(result.curve.back());
    if (options.checkpoint_interval > 0 && step % options.checkpoint_interval == 0) {
      Checkpoint snap = ckpt;
      snap.meta["objective"] = "mlm";
      snap.meta["step"] = step;
      save_checkpoint(options.checkpoint_dir / ("step-" + std::to_string(step) + ".ckpt"), snap);
    }
  }
  if (config.max_steps > 0) {
    ckpt.meta["objective"] = "mlm";
    ckpt.meta["step"] = config.max_steps;
    ckpt.meta["train"] = config.to_json();
  }
  result.checkpoint = std::move(ckpt);
  return result;
}

FinetuneResult finetune(std::span<const TaskExample> train, std::span<const TaskExample> heldout,
                        Checkpoint ckpt, const TrainConfig& config, const FinetuneOptions& options) {
  config.validate();
  if (config.task == TrainTask::mlm) throw ValidationError("finetune: task must be qa, clone or refine");
  const TaskKind kind = task_kind_from_string(to_string(config.task));
  for (std::size_t i = 0; i < train.size(); ++i)
    if (train[i].kind != kind)
      throw ValidationError("finetune: training example " + std::to_string(i) + " is not a " +
                            std::string(to_string(kind)) + " example");
  for (std::size_t i = 0; i < heldout.size(); ++i)
    if (heldout[i].kind != kind)
      throw ValidationError("finetune: held-out example " + std::to_string(i) + " is not a " +
                            std::string(to_string(kind)) + " example");
  if (kind == TaskKind::refine && (ckpt.config.decoder_layers <= 0 || ckpt.params.decoder.empty()))
    throw ValidationError("finetune: refine needs a checkpoint with decoder layers");

  const ModelConfig trained_config = config.ablation.apply(ckpt.config);
  const std::size_t max_len =
      std::min<std::size_t>(options.max_len, static_cast<std::size_t>(ckpt.config.max_len));
  const std::string fingerprint = config_fingerprint(trained_config, config);

  FinetuneResult result;
  if (config.max_steps > 0) {
    if (train.empty()) throw ValidationError("finetune: empty training set");
    ckpt.config = trained_config;
    std::vector<EncodedExample> encoded;
    encoded.reserve(train.size());
    for (const auto& ex : train) encoded.push_back(encode_task_example(ex, ckpt.vocab, max_len));
    const Objective objective = kind == TaskKind::refine ? Objective::seq2seq : Objective::classify;
    BatchSampler sampler(encoded.size(), config.seed);
    OptimizerState opt = OptimizerState::for_params(ckpt.params);
    const auto batch_size = static_cast<std::size_t>(config.batch_size);
    for (int step = 1; step <= config.max_steps; ++step) {
      std::vector<Sample> batch;
      batch.reserve(batch_size);
      for (const auto idx : sampler.next(batch_size)) batch.push_back({encoded[idx], {}});
      const GradientOptions gopt{true, step_seed(config.seed, step)};
      auto lg = compute_gradients(objective, batch, ckpt.params, ckpt.config, gopt);
      const double lr = scheduled_lr(config, step);
      adam_step(ckpt.params, lg.grads, opt, lr);
      result.curve.push_back({step, lg.loss, lr});
      if (options.on_step) options.on_step(result.curve.back());
    }
    ckpt.meta["objective"] = std::string(to_string(kind));
    ckpt.meta["step"] = config.max_steps;
    ckpt.meta["train"] = config.to_json();
    ckpt.meta["fingerprint"] = fingerprint;
  }
  // With zero steps the flags still shape evaluation but not the returned checkpoint.
  Checkpoint eval_ckpt_storage;
  const Checkpoint* eval_ckpt = &ckpt;
  if (config.max_steps == 0 && !(trained_config == ckpt.config)) {
    eval_ckpt_storage = ckpt;
    eval_ckpt_storage.config = trained_config;
    eval_ckpt = &eval_ckpt_storage;
  }
  if (!heldout.empty()) result.report = evaluate(*eval_ckpt, kind, heldout, max_len, fingerprint);
  else {
    result.report.task = kind;
    result.report.fingerprint = fingerprint;
  }
  result.checkpoint = std::move(ckpt);
  return result;
}

}  // namespace astmask
