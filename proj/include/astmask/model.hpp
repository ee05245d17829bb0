#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "astmask/vocab.hpp"
#include "json.hpp"

namespace astmask {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using BoolMat = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class MaskMode { additive_neg_inf, multiplicative_literal };

std::string_view to_string(MaskMode mode);
MaskMode mask_mode_from_string(std::string_view name);

/// Logit given to a disallowed attention pair in additive mode.
inline constexpr double kMaskedLogit = -1e9;
inline constexpr double kLayerNormEps = 1e-5;

struct ModelConfig {
  int d_model = 64;
  int n_heads = 2;
  int n_layers = 2;
  int d_ff = 128;
  int max_len = 128;
  int max_ast_pos = 128;
  int vocab_size = 0;
  MaskMode mask_mode = MaskMode::additive_neg_inf;
  bool use_ast_position = true;
  bool use_ast_mask = true;
  int decoder_layers = 0;
  double dropout = 0.1;

  int d_k() const noexcept { return d_model / n_heads; }
  /// Throws ValidationError when the invariants do not hold.
  void validate() const;

  nlohmann::ordered_json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  bool operator==(const ModelConfig&) const = default;
};

struct NormParams {
  Mat gain;  // 1 x d
  Mat bias;  // 1 x d
};

struct AttentionParams {
  Mat wq, wk, wv, wo;  // d x d
  Mat bq, bk, bv, bo;  // 1 x d
};

struct FeedForwardParams {
  Mat w1;  // d x d_ff
  Mat b1;  // 1 x d_ff
  Mat w2;  // d_ff x d
  Mat b2;  // 1 x d
};

struct EncoderLayerParams {
  AttentionParams attn;
  NormParams ln1;
  FeedForwardParams ff;
  NormParams ln2;
};

struct DecoderLayerParams {
  AttentionParams self_attn;
  NormParams ln1;
  AttentionParams cross_attn;
  NormParams ln2;
  FeedForwardParams ff;
  NormParams ln3;
};

/// Every trainable tensor. Gradients use the same type.
struct ModelParams {
  Mat token_emb;        // vocab x d
  Mat hard_pos_emb;     // max_len x d
  Mat ast_pos_emb;      // max_ast_pos x d
  Mat segment_emb;      // 2 x d
  Mat ast_segment_emb;  // 2 x d
  NormParams emb_ln;
  std::vector<EncoderLayerParams> layers;
  Mat pool_w, pool_b;  // d x d, 1 x d
  Mat mlm_w, mlm_b;    // d x vocab, 1 x vocab
  Mat cls_w, cls_b;    // d x 2, 1 x 2
  // Refinement decoder; empty when decoder_layers == 0. Shares token_emb
  // and hard_pos_emb with the encoder.
  NormParams dec_emb_ln;
  std::vector<DecoderLayerParams> decoder;
  Mat out_w, out_b;  // d x vocab, 1 x vocab

  /// All tensors zero, shaped for `config`.
  static ModelParams zeros(const ModelConfig& config);
  /// normal(0, 0.02) weights and embeddings, zero biases, unit norm gains.
  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed);

  /// Visits (name, tensor) pairs in a fixed order.
  void for_each(const std::function<void(const std::string&, Mat&)>& fn);
  void for_each(const std::function<void(const std::string&, const Mat&)>& fn) const;

  std::size_t parameter_count() const;
  bool all_finite() const;
  void set_zero();
  /// this += scale * other
  void add_scaled(const ModelParams& other, double scale);

  bool operator==(const ModelParams& other) const;
};

struct NormCache {
  Mat xhat;
  Eigen::VectorXd inv_std;
};

struct AttentionMask {
  BoolMat allowed;          // false -> logit forced to kMaskedLogit
  Mat multiplier;           // multiplicative mode only; empty otherwise
  bool active = true;       // false -> every pair allowed, no masking applied
};

struct AttentionCache {
  Mat q, k, v;
  std::vector<Mat> probs;   // per head, Lq x Lk
  std::vector<Mat> scores;  // per head, softmax argument after masking
  Mat concat;
};

struct EncoderLayerCache {
  Mat input;
  AttentionCache attn;
  Mat attn_drop;
  NormCache ln1;
  Mat h1;
  Mat ff_pre;
  Mat ff_act;
  Mat ff_drop;
  NormCache ln2;
};

struct ForwardOptions {
  bool train_mode = false;
  /// Run only over the real-token prefix; padded rows are never computed.
  bool trim_padding = false;
  std::uint64_t dropout_seed = 0;
  /// Skip mask construction entirely (plain transformer attention). Only
  /// meaningful for inputs without padding; used as a reference path.
  bool reference_unmasked = false;
};

/// Everything a backward pass needs, plus the observable per-layer state.
struct ForwardTrace {
  std::size_t length = 0;  // rows computed
  std::vector<std::int32_t> ids, hard_pos, ast_pos, segment, ast_segment;
  Mat embedding_sum;  // pre-norm sum of the embedding tables
  NormCache emb_ln;
  Mat emb_drop;
  std::vector<Mat> hidden;  // h^0 .. h^{n_layers}
  std::vector<EncoderLayerCache> layers;
  AttentionMask mask;
  Mat pool_pre;  // 1 x d, before tanh
  Mat pooled;    // 1 x d
  std::vector<std::uint8_t> pad_mask;

  const Mat& output() const { return hidden.back(); }
  const Mat& attention(std::size_t layer, std::size_t head) const {
    return layers.at(layer).attn.probs.at(head);
  }
};

/// Receives the effective allowed-pair matrix of every encoder forward on
/// this thread while installed. Used to verify ablation wiring.
using MaskObserver = std::function<void(const BoolMat& allowed, const ModelConfig& config)>;

class ScopedMaskObserver {
 public:
  explicit ScopedMaskObserver(MaskObserver fn);
  ~ScopedMaskObserver();
  ScopedMaskObserver(const ScopedMaskObserver&) = delete;
  ScopedMaskObserver& operator=(const ScopedMaskObserver&) = delete;

 private:
  MaskObserver previous_;
};

/// Embedding sum (before normalisation) for the first `rows` positions.
Mat embedding_sum(const EncodedExample& example, const ModelParams& params,
                  const ModelConfig& config, std::size_t rows);

/// Normalised embedding layer output for all positions.
Mat embed(const EncodedExample& example, const ModelParams& params, const ModelConfig& config);

/// Allowed-pair matrix for the encoder: visibility (or all-ones when the AST
/// mask is disabled) intersected with the key padding mask.
AttentionMask encoder_mask(const EncodedExample& example, const ModelConfig& config,
                           std::size_t rows);

/// Multi-head attention of `xq` over `xkv`, including the output projection.
Mat attention_forward(const Mat& xq, const Mat& xkv, const AttentionParams& p,
                      const AttentionMask& mask, const ModelConfig& config,
                      AttentionCache& cache);

/// One encoder block: masked attention, residual + norm, feed-forward,
/// residual + norm.
Mat ast_mask_attention(const Mat& h, const AttentionMask& mask, const EncoderLayerParams& p,
                       const ModelConfig& config, EncoderLayerCache* cache = nullptr);

ForwardTrace encode_forward(const EncodedExample& example, const ModelParams& params,
                            const ModelConfig& config, const ForwardOptions& options = {});

/// rows x vocab scores for every computed position.
Mat mlm_logits(const ForwardTrace& trace, const ModelParams& params);

/// Two-class scores from the pooled [CLS] vector.
Eigen::Vector2d cls_classify(const ForwardTrace& trace, const ModelParams& params);

/// argmax with ties going to the lower class.
int predict_class(const Eigen::Vector2d& logits) noexcept;

// --- decoder --------------------------------------------------------------

struct DecoderLayerCache {
  Mat input;
  AttentionCache self_attn;
  Mat self_drop;
  NormCache ln1;
  Mat h1;
  AttentionCache cross_attn;
  Mat cross_drop;
  NormCache ln2;
  Mat h2;
  Mat ff_pre, ff_act, ff_drop;
  NormCache ln3;
};

struct DecoderTrace {
  std::vector<std::int32_t> input_ids;
  NormCache emb_ln;
  Mat emb_drop;
  std::vector<Mat> hidden;
  std::vector<DecoderLayerCache> layers;
  AttentionMask self_mask;
  AttentionMask cross_mask;
  Mat logits;  // T x vocab
};

/// Teacher-forced decoder pass over `input_ids` (starting with [CLS]).
DecoderTrace decode_forward(const ForwardTrace& encoder, std::span<const std::int32_t> input_ids,
                            const ModelParams& params, const ModelConfig& config,
                            const ForwardOptions& options = {});

/// Greedy decoding from [CLS]. Stops after emitting [SEP] (which is included)
/// or after `max_out_len` tokens. Throws ValidationError without a decoder.
std::vector<std::int32_t> decode_generate(const ForwardTrace& encoder, const ModelParams& params,
                                          const ModelConfig& config, std::size_t max_out_len);

// --- objectives and gradients ---------------------------------------------

enum class Objective { mlm, classify, seq2seq };

struct MlmTarget {
  std::size_t position;
  std::int32_t id;
  bool operator==(const MlmTarget&) const = default;
};

/// One training instance: the (possibly masked) input plus what to predict.
/// classify reads `example.label`; seq2seq reads `example.target_ids`.
struct Sample {
  EncodedExample example;
  std::vector<MlmTarget> mlm_targets;
};

struct GradientOptions {
  bool train_mode = false;
  std::uint64_t dropout_seed = 0;
};

struct LossAndGradients {
  double loss = 0.0;
  ModelParams grads;
};

/// Mean loss over the batch: per target token for mlm and seq2seq, per
/// example for classify. Batches with nothing to predict have loss 0.
double compute_loss(Objective objective, std::span<const Sample> batch, const ModelParams& params,
                    const ModelConfig& config, const GradientOptions& options = {});

/// Loss and exact gradients of `compute_loss` with respect to every tensor.
/// Throws RuntimeFailure on a non-finite loss.
LossAndGradients compute_gradients(Objective objective, std::span<const Sample> batch,
                                   const ModelParams& params, const ModelConfig& config,
                                   const GradientOptions& options = {});

}  // namespace astmask
