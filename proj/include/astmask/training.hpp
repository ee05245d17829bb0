#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "astmask/checkpoint.hpp"
#include "astmask/metrics.hpp"
#include "astmask/model.hpp"
#include "astmask/tasks.hpp"
#include "json.hpp"

namespace astmask {

enum class TrainTask { mlm, qa, clone, refine };

std::string_view to_string(TrainTask task);
TrainTask train_task_from_string(std::string_view name);
TrainTask train_task(TaskKind kind) noexcept;

struct AblationFlags {
  bool no_ast_position = false;
  bool no_ast_mask = false;

  /// Copy of `config` with the flags applied.
  ModelConfig apply(ModelConfig config) const;
  bool operator==(const AblationFlags&) const = default;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double warmup_ratio = 0.1;
  int batch_size = 16;
  int max_steps = 1000;
  std::uint64_t seed = 0;
  double mlm_mask_prob = 0.15;
  TrainTask task = TrainTask::mlm;
  AblationFlags ablation;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Learning rate for 1-based `step`: linear ramp over
/// ceil(warmup_ratio * max_steps) steps, constant afterwards.
double scheduled_lr(const TrainConfig& config, int step);

/// Selects code positions independently with probability `prob`. Selected
/// positions become [MASK] (80%), a random non-special id (10%) or stay
/// unchanged (10%); targets keep the original ids. Tags and specials are
/// never selected.
Sample mask_for_mlm(const EncodedExample& example, double prob, int vocab_size,
                    std::mt19937_64& rng);

struct OptimizerState {
  ModelParams m;
  ModelParams v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerState for_params(const ModelParams& params);
};

/// Bias-corrected Adam. Throws RuntimeFailure naming the tensor when a
/// gradient is not finite; nothing is updated in that case.
void adam_step(ModelParams& params, const ModelParams& grads, OptimizerState& state, double lr);

struct LossPoint {
  int step;
  double loss;
  double lr;
};

/// "step,loss,lr" with a header line.
std::string loss_curve_csv(std::span<const LossPoint> curve);

// --- task encoding --------------------------------------------------------

/// Whole tokens the decoder predicts for a code field: lexer tokens for
/// MiniLang, leaf tokens in pre-order for AST-JSON.
std::vector<std::string> target_tokens(std::string_view code);

/// Linearized sequence of a code field (AST-JSON or MiniLang).
LinearSequence code_sequence(std::string_view code);

/// Encoder input plus label (qa, clone) or decoder targets (refine).
/// qa puts the query in the first span and the code in the second.
EncodedExample encode_task_example(const TaskExample& example, const Vocabulary& vocab,
                                   std::size_t max_len);

/// Vocabulary covering code, query words and, for refine, whole target
/// tokens.
Vocabulary build_task_vocab(std::span<const TaskExample> examples,
                            std::span<const std::string> corpus, std::size_t min_freq = 1,
                            std::size_t max_size = 50000);

/// Fresh model for `vocab`.
Checkpoint init_checkpoint(const Vocabulary& vocab, ModelConfig config, std::uint64_t seed);

/// Adds freshly initialized decoder layers to a checkpoint without one.
void attach_decoder(Checkpoint& ckpt, int layers, std::uint64_t seed);

// --- pretraining and fine-tuning -------------------------------------------

struct PretrainOptions {
  /// Save "step-<n>.ckpt" into `checkpoint_dir` every this many steps (0 = never).
  int checkpoint_interval = 0;
  std::filesystem::path checkpoint_dir;
  std::function<void(const LossPoint&)> on_step;
};

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<LossPoint> curve;
};

/// Masked-LM training over `corpus` (already encoded with `ckpt.vocab`).
PretrainResult pretrain_mlm(std::span<const EncodedExample> corpus, Checkpoint ckpt,
                            const TrainConfig& config, const PretrainOptions& options = {});

struct FinetuneResult {
  Checkpoint checkpoint;
  std::vector<LossPoint> curve;
  MetricsReport report;  // held-out split
};

struct FinetuneOptions {
  std::size_t max_len = 512;
  std::function<void(const LossPoint&)> on_step;
};

/// Trains `ckpt` on `train` for config.max_steps steps, then evaluates on
/// `heldout`. Ablation flags are written into the checkpoint config. Zero
/// steps returns the checkpoint untouched plus baseline metrics.
FinetuneResult finetune(std::span<const TaskExample> train, std::span<const TaskExample> heldout,
                        Checkpoint ckpt, const TrainConfig& config,
                        const FinetuneOptions& options = {});

}  // namespace astmask
