#pragma once

// Building blocks shared by the encoder and the decoder. Forward functions
// fill caches; backward functions accumulate parameter gradients.

#include <cstdint>
#include <random>

#include "astmask/model.hpp"

namespace astmask::detail {

Mat add_row(const Mat& x, const Mat& row);
Mat colsum(const Mat& x);

Mat layer_norm_forward(const Mat& x, const NormParams& p, NormCache& cache);
Mat layer_norm_backward(const Mat& dy, const NormCache& cache, const NormParams& p,
                        NormParams& grad);

Mat gelu(const Mat& x);
Mat gelu_grad(const Mat& x);

Mat softmax_rows(const Mat& s);

void attention_backward(const Mat& dout, const Mat& xq, const Mat& xkv, const AttentionParams& p,
                        const AttentionMask& mask, const ModelConfig& config,
                        const AttentionCache& cache, AttentionParams& grad, Mat& dxq, Mat& dxkv);

Mat feed_forward(const Mat& x, const FeedForwardParams& p, Mat& pre, Mat& act);
/// Returns d input; `pre`/`act` are the cached forward intermediates.
Mat feed_forward_backward(const Mat& dy, const Mat& x, const Mat& pre, const Mat& act,
                          const FeedForwardParams& p, FeedForwardParams& grad);

/// Inverted-dropout multiplier (entries 0 or 1/(1-p)); empty when inactive.
Mat dropout_mask(std::size_t rows, std::size_t cols, double p, std::mt19937_64& rng);
Mat apply_mask(const Mat& x, const Mat& mask);

AttentionMask causal_mask(std::size_t n);
AttentionMask key_padding_mask(std::size_t rows, std::span<const std::uint8_t> pad,
                               std::size_t cols);

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream);

/// Accumulates d(loss)/d(encoder output) back into every encoder tensor.
void encoder_backward(const ForwardTrace& trace, Mat d_out, const Mat& d_pooled,
                      const ModelParams& params, const ModelConfig& config, ModelParams& grads);

/// Accumulates decoder gradients given d(loss)/d(logits); adds the gradient
/// with respect to the encoder output into `d_enc`.
void decoder_backward(const DecoderTrace& trace, const ForwardTrace& encoder, const Mat& dlogits,
                      const ModelParams& params, const ModelConfig& config, ModelParams& grads,
                      Mat& d_enc);

}  // namespace astmask::detail
