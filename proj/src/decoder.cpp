#include "astmask/error.hpp"
#include "astmask/model.hpp"
#include "layers.hpp"

namespace astmask {

using namespace detail;

DecoderTrace decode_forward(const ForwardTrace& enc, std::span<const std::int32_t> input_ids,
                            const ModelParams& params, const ModelConfig& config,
                            const ForwardOptions& options) {
  if (config.decoder_layers <= 0 || params.decoder.empty())
    throw ValidationError("decoder requested but the model has no decoder layers");
  const std::size_t T = input_ids.size();
  if (T == 0) throw ValidationError("decode_forward: empty decoder input");
  if (T > static_cast<std::size_t>(config.max_len))
    throw ValidationError("decode_forward: decoder input longer than max_len");
  const bool dropout = options.train_mode && config.dropout > 0.0;
  auto rng = make_rng(options.dropout_seed, 1);
  const auto d = static_cast<std::size_t>(config.d_model);

  DecoderTrace t;
  t.input_ids.assign(input_ids.begin(), input_ids.end());
  Mat x(static_cast<Eigen::Index>(T), config.d_model);
  for (std::size_t k = 0; k < T; ++k) {
    const auto id = input_ids[k];
    if (id < 0 || id >= params.token_emb.rows())
      throw ValidationError("decode_forward: token id out of range");
    x.row(static_cast<Eigen::Index>(k)) =
        params.token_emb.row(id) + params.hard_pos_emb.row(static_cast<Eigen::Index>(k));
  }
  if (dropout) t.emb_drop = dropout_mask(T, d, config.dropout, rng);
  t.hidden.push_back(apply_mask(layer_norm_forward(x, params.dec_emb_ln, t.emb_ln), t.emb_drop));
  t.self_mask = causal_mask(T);
  t.cross_mask = key_padding_mask(T, enc.pad_mask, enc.length);

  const Mat& memory = enc.output();
  t.layers.resize(params.decoder.size());
  for (std::size_t l = 0; l < params.decoder.size(); ++l) {
    const auto& p = params.decoder[l];
    auto& c = t.layers[l];
    if (dropout) {
      c.self_drop = dropout_mask(T, d, config.dropout, rng);
      c.cross_drop = dropout_mask(T, d, config.dropout, rng);
      c.ff_drop = dropout_mask(T, d, config.dropout, rng);
    }
    c.input = t.hidden.back();
    const Mat a = apply_mask(
        attention_forward(c.input, c.input, p.self_attn, t.self_mask, config, c.self_attn),
        c.self_drop);
    c.h1 = layer_norm_forward(c.input + a, p.ln1, c.ln1);
    const Mat x2 = apply_mask(
        attention_forward(c.h1, memory, p.cross_attn, t.cross_mask, config, c.cross_attn),
        c.cross_drop);
    c.h2 = layer_norm_forward(c.h1 + x2, p.ln2, c.ln2);
    const Mat f = apply_mask(feed_forward(c.h2, p.ff, c.ff_pre, c.ff_act), c.ff_drop);
    t.hidden.push_back(layer_norm_forward(c.h2 + f, p.ln3, c.ln3));
  }
  t.logits = add_row(t.hidden.back() * params.out_w, params.out_b);
  return t;
}

namespace detail {

void decoder_backward(const DecoderTrace& t, const ForwardTrace& enc, const Mat& dlogits,
                      const ModelParams& params, const ModelConfig& config, ModelParams& grads,
                      Mat& d_enc) {
  grads.out_w.noalias() += t.hidden.back().transpose() * dlogits;
  grads.out_b += colsum(dlogits);
  Mat dh = dlogits * params.out_w.transpose();
  const Mat& memory = enc.output();
  for (std::size_t l = params.decoder.size(); l-- > 0;) {
    const auto& c = t.layers[l];
    const auto& p = params.decoder[l];
    auto& g = grads.decoder[l];
    const Mat dz3 = layer_norm_backward(dh, c.ln3, p.ln3, g.ln3);
    Mat dh2 = dz3 + feed_forward_backward(apply_mask(dz3, c.ff_drop), c.h2, c.ff_pre, c.ff_act,
                                          p.ff, g.ff);
    const Mat dz2 = layer_norm_backward(dh2, c.ln2, p.ln2, g.ln2);
    Mat dxq, dxkv;
    attention_backward(apply_mask(dz2, c.cross_drop), c.h1, memory, p.cross_attn, t.cross_mask,
                       config, c.cross_attn, g.cross_attn, dxq, dxkv);
    d_enc += dxkv;
    const Mat dh1 = dz2 + dxq;
    const Mat dz1 = layer_norm_backward(dh1, c.ln1, p.ln1, g.ln1);
    attention_backward(apply_mask(dz1, c.self_drop), c.input, c.input, p.self_attn, t.self_mask,
                       config, c.self_attn, g.self_attn, dxq, dxkv);
    dh = dz1 + dxq + dxkv;
  }
  const Mat dx =
      layer_norm_backward(apply_mask(dh, t.emb_drop), t.emb_ln, params.dec_emb_ln, grads.dec_emb_ln);
  for (std::size_t k = 0; k < t.input_ids.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    grads.token_emb.row(t.input_ids[k]) += dx.row(r);
    grads.hard_pos_emb.row(r) += dx.row(r);
  }
}

}  // namespace detail

std::vector<std::int32_t> decode_generate(const ForwardTrace& enc, const ModelParams& params,
                                          const ModelConfig& config, std::size_t max_out_len) {
  if (config.decoder_layers <= 0 || params.decoder.empty())
    throw ValidationError("decode_generate: model has no decoder");
  const std::size_t limit = std::min<std::size_t>(max_out_len, static_cast<std::size_t>(config.max_len));
  std::vector<std::int32_t> input{Vocabulary::kClsId};
  std::vector<std::int32_t> out;
  while (out.size() < limit) {
    const DecoderTrace t = decode_forward(enc, input, params, config);
    Eigen::Index best = 0;
    t.logits.row(t.logits.rows() - 1).maxCoeff(&best);
    const auto id = static_cast<std::int32_t>(best);
    out.push_back(id);
    if (id == Vocabulary::kSepId) break;
    input.push_back(id);
  }
  return out;
}

}  // namespace astmask
