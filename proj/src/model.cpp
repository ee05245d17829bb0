#include "astmask/model.hpp"

#include <cmath>

#include "astmask/error.hpp"
#include "layers.hpp"

namespace astmask {

std::string_view to_string(MaskMode mode) {
  return mode == MaskMode::additive_neg_inf ? "additive" : "multiplicative";
}

MaskMode mask_mode_from_string(std::string_view name) {
  if (name == "additive" || name == "additive_neg_inf") return MaskMode::additive_neg_inf;
  if (name == "multiplicative" || name == "multiplicative_literal")
    return MaskMode::multiplicative_literal;
  throw ValidationError("unknown mask mode: " + std::string(name));
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("model config: " + m); };
  if (d_model <= 0 || n_heads <= 0) fail("d_model and n_heads must be positive");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (n_layers < 0 || decoder_layers < 0) fail("layer counts must be non-negative");
  if (d_ff <= 0) fail("d_ff must be positive");
  if (max_len <= 0 || max_ast_pos <= 0) fail("max_len and max_ast_pos must be positive");
  if (vocab_size <= Vocabulary::kNumSpecials) fail("vocab_size must exceed the special tokens");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
}

nlohmann::ordered_json ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["d_model"] = d_model;
  j["n_heads"] = n_heads;
  j["n_layers"] = n_layers;
  j["d_ff"] = d_ff;
  j["max_len"] = max_len;
  j["max_ast_pos"] = max_ast_pos;
  j["vocab_size"] = vocab_size;
  j["mask_mode"] = to_string(mask_mode);
  j["use_ast_position"] = use_ast_position;
  j["use_ast_mask"] = use_ast_mask;
  j["decoder_layers"] = decoder_layers;
  j["dropout"] = dropout;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.max_ast_pos = j.at("max_ast_pos").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.mask_mode = mask_mode_from_string(j.at("mask_mode").get<std::string>());
    c.use_ast_position = j.at("use_ast_position").get<bool>();
    c.use_ast_mask = j.at("use_ast_mask").get<bool>();
    c.decoder_layers = j.at("decoder_layers").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
}

// --- parameters -------------------------------------------------------------

namespace {

NormParams norm_zeros(int d) { return {Mat::Zero(1, d), Mat::Zero(1, d)}; }

AttentionParams attention_zeros(int d) {
  AttentionParams a;
  for (Mat* m : {&a.wq, &a.wk, &a.wv, &a.wo}) *m = Mat::Zero(d, d);
  for (Mat* m : {&a.bq, &a.bk, &a.bv, &a.bo}) *m = Mat::Zero(1, d);
  return a;
}

FeedForwardParams ff_zeros(int d, int dff) {
  return {Mat::Zero(d, dff), Mat::Zero(1, dff), Mat::Zero(dff, d), Mat::Zero(1, d)};
}

template <class Params, class Fn>
void visit_all(Params& p, Fn&& fn) {
  fn("token_emb", p.token_emb);
  fn("hard_pos_emb", p.hard_pos_emb);
  fn("ast_pos_emb", p.ast_pos_emb);
  fn("segment_emb", p.segment_emb);
  fn("ast_segment_emb", p.ast_segment_emb);
  fn("emb_ln.gain", p.emb_ln.gain);
  fn("emb_ln.bias", p.emb_ln.bias);
  auto attn = [&](const std::string& prefix, auto& a) {
    fn(prefix + ".wq", a.wq);
    fn(prefix + ".bq", a.bq);
    fn(prefix + ".wk", a.wk);
    fn(prefix + ".bk", a.bk);
    fn(prefix + ".wv", a.wv);
    fn(prefix + ".bv", a.bv);
    fn(prefix + ".wo", a.wo);
    fn(prefix + ".bo", a.bo);
  };
  auto norm = [&](const std::string& prefix, auto& n) {
    fn(prefix + ".gain", n.gain);
    fn(prefix + ".bias", n.bias);
  };
  auto ff = [&](const std::string& prefix, auto& f) {
    fn(prefix + ".w1", f.w1);
    fn(prefix + ".b1", f.b1);
    fn(prefix + ".w2", f.w2);
    fn(prefix + ".b2", f.b2);
  };
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const std::string pre = "encoder." + std::to_string(i);
    attn(pre + ".attn", p.layers[i].attn);
    norm(pre + ".ln1", p.layers[i].ln1);
    ff(pre + ".ff", p.layers[i].ff);
    norm(pre + ".ln2", p.layers[i].ln2);
  }
  fn("pool_w", p.pool_w);
  fn("pool_b", p.pool_b);
  fn("mlm_w", p.mlm_w);
  fn("mlm_b", p.mlm_b);
  fn("cls_w", p.cls_w);
  fn("cls_b", p.cls_b);
  if (!p.decoder.empty()) {
    norm("dec_emb_ln", p.dec_emb_ln);
    for (std::size_t i = 0; i < p.decoder.size(); ++i) {
      const std::string pre = "decoder." + std::to_string(i);
      attn(pre + ".self_attn", p.decoder[i].self_attn);
      norm(pre + ".ln1", p.decoder[i].ln1);
      attn(pre + ".cross_attn", p.decoder[i].cross_attn);
      norm(pre + ".ln2", p.decoder[i].ln2);
      ff(pre + ".ff", p.decoder[i].ff);
      norm(pre + ".ln3", p.decoder[i].ln3);
    }
    fn("out_w", p.out_w);
    fn("out_b", p.out_b);
  }
}

bool is_norm_gain(const std::string& name) {
  return name.size() >= 5 && name.compare(name.size() - 5, 5, ".gain") == 0;
}

bool is_bias(const std::string& name) {
  if (name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0) return true;
  const auto dot = name.find_last_of("._");
  return dot != std::string::npos && name[dot + 1] == 'b' && name.size() - dot <= 3;
}

}  // namespace

ModelParams ModelParams::zeros(const ModelConfig& c) {
  c.validate();
  const int d = c.d_model, v = c.vocab_size;
  ModelParams p;
  p.token_emb = Mat::Zero(v, d);
  p.hard_pos_emb = Mat::Zero(c.max_len, d);
  p.ast_pos_emb = Mat::Zero(c.max_ast_pos, d);
  p.segment_emb = Mat::Zero(2, d);
  p.ast_segment_emb = Mat::Zero(2, d);
  p.emb_ln = norm_zeros(d);
  for (int i = 0; i < c.n_layers; ++i)
    p.layers.push_back({attention_zeros(d), norm_zeros(d), ff_zeros(d, c.d_ff), norm_zeros(d)});
  p.pool_w = Mat::Zero(d, d);
  p.pool_b = Mat::Zero(1, d);
  p.mlm_w = Mat::Zero(d, v);
  p.mlm_b = Mat::Zero(1, v);
  p.cls_w = Mat::Zero(d, 2);
  p.cls_b = Mat::Zero(1, 2);
  if (c.decoder_layers > 0) {
    p.dec_emb_ln = norm_zeros(d);
    for (int i = 0; i < c.decoder_layers; ++i)
      p.decoder.push_back({attention_zeros(d), norm_zeros(d), attention_zeros(d), norm_zeros(d),
                           ff_zeros(d, c.d_ff), norm_zeros(d)});
    p.out_w = Mat::Zero(d, v);
    p.out_b = Mat::Zero(1, v);
  }
  return p;
}

ModelParams ModelParams::initialize(const ModelConfig& c, std::uint64_t seed) {
  ModelParams p = zeros(c);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  p.for_each([&](const std::string& name, Mat& m) {
    if (is_norm_gain(name)) {
      m.setOnes();
    } else if (!is_bias(name)) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    }
  });
  return p;
}

void ModelParams::for_each(const std::function<void(const std::string&, Mat&)>& fn) {
  visit_all(*this, fn);
}

void ModelParams::for_each(const std::function<void(const std::string&, const Mat&)>& fn) const {
  visit_all(*this, fn);
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Mat& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

bool ModelParams::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Mat& m) { ok = ok && m.allFinite(); });
  return ok;
}

void ModelParams::set_zero() {
  for_each([](const std::string&, Mat& m) { m.setZero(); });
}

void ModelParams::add_scaled(const ModelParams& other, double scale) {
  std::vector<const Mat*> theirs;
  other.for_each([&](const std::string&, const Mat& m) { theirs.push_back(&m); });
  std::size_t k = 0;
  for_each([&](const std::string&, Mat& m) { m += scale * *theirs.at(k++); });
}

bool ModelParams::operator==(const ModelParams& other) const {
  std::vector<std::pair<std::string, const Mat*>> a, b;
  for_each([&](const std::string& n, const Mat& m) { a.emplace_back(n, &m); });
  other.for_each([&](const std::string& n, const Mat& m) { b.emplace_back(n, &m); });
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first) return false;
    const Mat& x = *a[i].second;
    const Mat& y = *b[i].second;
    if (x.rows() != y.rows() || x.cols() != y.cols() || x != y) return false;
  }
  return true;
}

// --- building blocks --------------------------------------------------------

namespace detail {

Mat add_row(const Mat& x, const Mat& row) { return x.rowwise() + row.row(0); }

Mat colsum(const Mat& x) { return x.colwise().sum(); }

Mat layer_norm_forward(const Mat& x, const NormParams& p, NormCache& cache) {
  const Eigen::Index n = x.rows(), d = x.cols();
  cache.xhat.resize(n, d);
  cache.inv_std.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.inv_std(i) = inv;
    cache.xhat.row(i) = (x.row(i).array() - mu) * inv;
  }
  Mat y = cache.xhat.array().rowwise() * p.gain.row(0).array();
  return y.rowwise() + p.bias.row(0);
}

Mat layer_norm_backward(const Mat& dy, const NormCache& cache, const NormParams& p,
                        NormParams& grad) {
  grad.gain += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  grad.bias += dy.colwise().sum();
  const Mat dxhat = dy.array().rowwise() * p.gain.row(0).array();
  const double d = static_cast<double>(dy.cols());
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double s1 = dxhat.row(i).sum();
    const double s2 = dxhat.row(i).dot(cache.xhat.row(i));
    dx.row(i) = (cache.inv_std(i) / d) *
                (d * dxhat.row(i).array() - s1 - cache.xhat.row(i).array() * s2).matrix();
  }
  return dx;
}

Mat gelu(const Mat& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); });
}

Mat gelu_grad(const Mat& x) {
  return x.unaryExpr([](double v) {
    const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * v * v) * 0.5 * M_2_SQRTPI * M_SQRT1_2;
    return cdf + v * pdf;
  });
}

Mat softmax_rows(const Mat& s) {
  Mat e = (s.colwise() - s.rowwise().maxCoeff()).array().exp();
  const Eigen::VectorXd sums = e.rowwise().sum();
  e.array().colwise() /= sums.array();
  return e;
}

Mat dropout_mask(std::size_t rows, std::size_t cols, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return {};
  std::bernoulli_distribution keep(1.0 - p);
  Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  const double scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(rng) ? scale : 0.0;
  return m;
}

Mat apply_mask(const Mat& x, const Mat& mask) {
  if (mask.size() == 0) return x;
  return x.cwiseProduct(mask);
}

AttentionMask causal_mask(std::size_t n) {
  AttentionMask m;
  const auto N = static_cast<Eigen::Index>(n);
  m.allowed = BoolMat::Constant(N, N, false);
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) m.allowed(i, j) = true;
  m.active = n > 1;
  return m;
}

AttentionMask key_padding_mask(std::size_t rows, std::span<const std::uint8_t> pad,
                               std::size_t cols) {
  AttentionMask m;
  m.allowed = BoolMat::Constant(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols),
                                true);
  bool any = false;
  for (std::size_t j = 0; j < cols; ++j)
    if (!pad[j]) {
      m.allowed.col(static_cast<Eigen::Index>(j)).setConstant(false);
      any = true;
    }
  m.active = any;
  return m;
}

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

Mat feed_forward(const Mat& x, const FeedForwardParams& p, Mat& pre, Mat& act) {
  pre = add_row(x * p.w1, p.b1);
  act = gelu(pre);
  return add_row(act * p.w2, p.b2);
}

Mat feed_forward_backward(const Mat& dy, const Mat& x, const Mat& pre, const Mat& act,
                          const FeedForwardParams& p, FeedForwardParams& grad) {
  grad.w2.noalias() += act.transpose() * dy;
  grad.b2 += colsum(dy);
  const Mat dact = dy * p.w2.transpose();
  const Mat dpre = dact.cwiseProduct(gelu_grad(pre));
  grad.w1.noalias() += x.transpose() * dpre;
  grad.b1 += colsum(dpre);
  return dpre * p.w1.transpose();
}

void attention_backward(const Mat& dout, const Mat& xq, const Mat& xkv, const AttentionParams& p,
                        const AttentionMask& mask, const ModelConfig& config,
                        const AttentionCache& cache, AttentionParams& grad, Mat& dxq, Mat& dxkv) {
  const int dk = config.d_k();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  grad.wo.noalias() += cache.concat.transpose() * dout;
  grad.bo += colsum(dout);
  const Mat dconcat = dout * p.wo.transpose();

  Mat dq = Mat::Zero(cache.q.rows(), cache.q.cols());
  Mat dk_all = Mat::Zero(cache.k.rows(), cache.k.cols());
  Mat dv = Mat::Zero(cache.v.rows(), cache.v.cols());
  for (int h = 0; h < config.n_heads; ++h) {
    const Mat& P = cache.probs[static_cast<std::size_t>(h)];
    const auto Qh = cache.q.middleCols(h * dk, dk);
    const auto Kh = cache.k.middleCols(h * dk, dk);
    const auto Vh = cache.v.middleCols(h * dk, dk);
    const auto dOh = dconcat.middleCols(h * dk, dk);
    const Mat dP = dOh * Vh.transpose();
    dv.middleCols(h * dk, dk).noalias() += P.transpose() * dOh;
    const Eigen::VectorXd rowdot = dP.cwiseProduct(P).rowwise().sum();
    Mat dS = P.array() * (dP.colwise() - rowdot).array();
    if (mask.multiplier.size() != 0) dS = dS.cwiseProduct(mask.multiplier);
    dS *= scale;
    dq.middleCols(h * dk, dk).noalias() += dS * Kh;
    dk_all.middleCols(h * dk, dk).noalias() += dS.transpose() * Qh;
  }
  grad.wq.noalias() += xq.transpose() * dq;
  grad.bq += colsum(dq);
  grad.wk.noalias() += xkv.transpose() * dk_all;
  grad.bk += colsum(dk_all);
  grad.wv.noalias() += xkv.transpose() * dv;
  grad.bv += colsum(dv);
  dxq = dq * p.wq.transpose();
  dxkv = dk_all * p.wk.transpose() + dv * p.wv.transpose();
}

}  // namespace detail

using namespace detail;

Mat attention_forward(const Mat& xq, const Mat& xkv, const AttentionParams& p,
                      const AttentionMask& mask, const ModelConfig& config,
                      AttentionCache& cache) {
  if (!xq.allFinite() || !xkv.allFinite())
    throw RuntimeFailure("attention: non-finite input values");
  const int dk = config.d_k();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  cache.q = add_row(xq * p.wq, p.bq);
  cache.k = add_row(xkv * p.wk, p.bk);
  cache.v = add_row(xkv * p.wv, p.bv);
  cache.concat.resize(xq.rows(), config.d_model);
  cache.probs.resize(static_cast<std::size_t>(config.n_heads));
  cache.scores.resize(static_cast<std::size_t>(config.n_heads));
  for (int h = 0; h < config.n_heads; ++h) {
    Mat s = (cache.q.middleCols(h * dk, dk) * cache.k.middleCols(h * dk, dk).transpose()) * scale;
    if (mask.multiplier.size() != 0) s = s.cwiseProduct(mask.multiplier);
    if (mask.active) s = mask.allowed.select(s.array(), kMaskedLogit).matrix();
    Mat prob = softmax_rows(s);
    cache.concat.middleCols(h * dk, dk).noalias() = prob * cache.v.middleCols(h * dk, dk);
    cache.probs[static_cast<std::size_t>(h)] = std::move(prob);
    cache.scores[static_cast<std::size_t>(h)] = std::move(s);
  }
  return add_row(cache.concat * p.wo, p.bo);
}

namespace {

thread_local MaskObserver g_mask_observer;

}  // namespace

ScopedMaskObserver::ScopedMaskObserver(MaskObserver fn) : previous_(std::move(g_mask_observer)) {
  g_mask_observer = std::move(fn);
}

ScopedMaskObserver::~ScopedMaskObserver() { g_mask_observer = std::move(previous_); }

Mat embedding_sum(const EncodedExample& ex, const ModelParams& p, const ModelConfig& c,
                  std::size_t rows) {
  Mat out(static_cast<Eigen::Index>(rows), c.d_model);
  for (std::size_t i = 0; i < rows; ++i) {
    const auto check = [&](std::int32_t idx, Eigen::Index bound, const char* what) {
      if (idx < 0 || idx >= bound)
        throw ValidationError(std::string("embed: ") + what + " index " + std::to_string(idx) +
                              " out of bounds at position " + std::to_string(i));
      return idx;
    };
    const auto r = static_cast<Eigen::Index>(i);
    out.row(r) = p.token_emb.row(check(ex.ids[i], p.token_emb.rows(), "token")) +
                 p.hard_pos_emb.row(check(ex.hard_pos[i], p.hard_pos_emb.rows(), "hard position")) +
                 p.segment_emb.row(check(ex.segment[i], 2, "segment")) +
                 p.ast_segment_emb.row(check(ex.ast_segment[i], 2, "ast segment"));
    if (c.use_ast_position)
      out.row(r) += p.ast_pos_emb.row(check(ex.ast_pos[i], p.ast_pos_emb.rows(), "ast position"));
  }
  return out;
}

Mat embed(const EncodedExample& example, const ModelParams& params, const ModelConfig& config) {
  NormCache cache;
  return layer_norm_forward(embedding_sum(example, params, config, example.max_len()),
                            params.emb_ln, cache);
}

AttentionMask encoder_mask(const EncodedExample& ex, const ModelConfig& c, std::size_t rows) {
  const auto n = static_cast<Eigen::Index>(rows);
  BoolMat visible(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      visible(i, j) = !c.use_ast_mask ||
                      ex.visibility(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  if (g_mask_observer) g_mask_observer(visible, c);

  AttentionMask m;
  m.allowed = visible;
  if (c.mask_mode == MaskMode::multiplicative_literal) {
    // Literal form: visibility multiplies the softmax argument. Padding
    // still has to be excluded, so it keeps the additive treatment.
    m.multiplier = visible.cast<double>().matrix();
    m.allowed.setConstant(true);
  }
  for (Eigen::Index j = 0; j < n; ++j)
    if (!ex.attention_pad_mask[static_cast<std::size_t>(j)]) m.allowed.col(j).setConstant(false);
  m.active = !m.allowed.all();
  return m;
}

Mat ast_mask_attention(const Mat& h, const AttentionMask& mask, const EncoderLayerParams& p,
                       const ModelConfig& config, EncoderLayerCache* cache) {
  EncoderLayerCache local;
  EncoderLayerCache& c = cache ? *cache : local;
  c.input = h;
  const Mat a = apply_mask(attention_forward(h, h, p.attn, mask, config, c.attn), c.attn_drop);
  c.h1 = layer_norm_forward(h + a, p.ln1, c.ln1);
  const Mat f = apply_mask(feed_forward(c.h1, p.ff, c.ff_pre, c.ff_act), c.ff_drop);
  return layer_norm_forward(c.h1 + f, p.ln2, c.ln2);
}

ForwardTrace encode_forward(const EncodedExample& ex, const ModelParams& params,
                            const ModelConfig& config, const ForwardOptions& options) {
  const std::size_t rows = options.trim_padding ? ex.length() : ex.max_len();
  if (rows == 0) throw ValidationError("encode_forward: example has no tokens");
  const bool dropout = options.train_mode && config.dropout > 0.0;
  auto rng = make_rng(options.dropout_seed, 0);
  const auto d = static_cast<std::size_t>(config.d_model);

  ForwardTrace t;
  t.length = rows;
  auto head = [&](const std::vector<std::int32_t>& v) {
    return std::vector<std::int32_t>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(rows));
  };
  t.ids = head(ex.ids);
  t.hard_pos = head(ex.hard_pos);
  t.ast_pos = head(ex.ast_pos);
  t.segment = head(ex.segment);
  t.ast_segment = head(ex.ast_segment);
  t.pad_mask.assign(ex.attention_pad_mask.begin(),
                    ex.attention_pad_mask.begin() + static_cast<std::ptrdiff_t>(rows));

  t.embedding_sum = embedding_sum(ex, params, config, rows);
  if (dropout) t.emb_drop = dropout_mask(rows, d, config.dropout, rng);
  t.hidden.push_back(apply_mask(layer_norm_forward(t.embedding_sum, params.emb_ln, t.emb_ln),
                                t.emb_drop));
  if (options.reference_unmasked) {
    t.mask.active = false;
  } else {
    t.mask = encoder_mask(ex, config, rows);
  }

  t.layers.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& c = t.layers[l];
    if (dropout) {
      c.attn_drop = dropout_mask(rows, d, config.dropout, rng);
      c.ff_drop = dropout_mask(rows, d, config.dropout, rng);
    }
    t.hidden.push_back(ast_mask_attention(t.hidden.back(), t.mask, params.layers[l], config, &c));
  }
  t.pool_pre = add_row(t.hidden.back().topRows(1) * params.pool_w, params.pool_b);
  t.pooled = t.pool_pre.array().tanh().matrix();
  return t;
}

Mat mlm_logits(const ForwardTrace& trace, const ModelParams& params) {
  return add_row(trace.output() * params.mlm_w, params.mlm_b);
}

Eigen::Vector2d cls_classify(const ForwardTrace& trace, const ModelParams& params) {
  const Mat z = add_row(trace.pooled * params.cls_w, params.cls_b);
  return {z(0, 0), z(0, 1)};
}

int predict_class(const Eigen::Vector2d& logits) noexcept { return logits(1) > logits(0) ? 1 : 0; }

namespace detail {

void encoder_backward(const ForwardTrace& t, Mat d_out, const Mat& d_pooled,
                      const ModelParams& params, const ModelConfig& config, ModelParams& grads) {
  if (d_pooled.size() != 0) {
    const Mat d_pre = d_pooled.array() * (1.0 - t.pooled.array().square());
    grads.pool_w.noalias() += t.hidden.back().topRows(1).transpose() * d_pre;
    grads.pool_b += d_pre;
    d_out.topRows(1) += d_pre * params.pool_w.transpose();
  }
  Mat dh = std::move(d_out);
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const auto& c = t.layers[l];
    const auto& p = params.layers[l];
    auto& g = grads.layers[l];
    Mat dz2 = layer_norm_backward(dh, c.ln2, p.ln2, g.ln2);
    Mat dh1 = dz2;
    dh1 += feed_forward_backward(apply_mask(dz2, c.ff_drop), c.h1, c.ff_pre, c.ff_act, p.ff, g.ff);
    Mat dz1 = layer_norm_backward(dh1, c.ln1, p.ln1, g.ln1);
    Mat dxq, dxkv;
    attention_backward(apply_mask(dz1, c.attn_drop), c.input, c.input, p.attn, t.mask, config,
                       c.attn, g.attn, dxq, dxkv);
    dh = dz1 + dxq + dxkv;
  }
  const Mat dsum = layer_norm_backward(apply_mask(dh, t.emb_drop), t.emb_ln, params.emb_ln,
                                       grads.emb_ln);
  for (std::size_t i = 0; i < t.length; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    grads.token_emb.row(t.ids[i]) += dsum.row(r);
    grads.hard_pos_emb.row(t.hard_pos[i]) += dsum.row(r);
    grads.segment_emb.row(t.segment[i]) += dsum.row(r);
    grads.ast_segment_emb.row(t.ast_segment[i]) += dsum.row(r);
    if (config.use_ast_position) grads.ast_pos_emb.row(t.ast_pos[i]) += dsum.row(r);
  }
}

}  // namespace detail

// --- objectives -------------------------------------------------------------

namespace {

// Cross-entropy of one logit row; writes softmax - onehot into `grad`.
double cross_entropy(const Eigen::Ref<const Eigen::RowVectorXd>& logits, int target,
                     Eigen::Ref<Eigen::RowVectorXd> grad) {
  const double m = logits.maxCoeff();
  const Eigen::RowVectorXd e = (logits.array() - m).exp();
  const double z = e.sum();
  grad = e / z;
  grad(target) -= 1.0;
  return -(logits(target) - m - std::log(z));
}

std::size_t normaliser(Objective objective, std::span<const Sample> batch) {
  std::size_t n = 0;
  for (const auto& s : batch) {
    switch (objective) {
      case Objective::mlm: n += s.mlm_targets.size(); break;
      case Objective::classify: ++n; break;
      case Objective::seq2seq:
        if (!s.example.target_ids) throw ValidationError("seq2seq sample without target_ids");
        n += s.example.target_ids->size();
        break;
    }
  }
  return n;
}

// Loss of one sample (unnormalised sum); accumulates gradients when asked.
double sample_loss(Objective objective, const Sample& s, const ModelParams& params,
                   const ModelConfig& config, const ForwardOptions& fo, double weight,
                   ModelParams* grads) {
  if (objective == Objective::mlm && s.mlm_targets.empty()) return 0.0;
  const ForwardTrace t = encode_forward(s.example, params, config, fo);
  const auto d = config.d_model;
  double loss = 0.0;
  Mat d_out = Mat::Zero(static_cast<Eigen::Index>(t.length), d);
  Mat d_pooled;

  switch (objective) {
    case Objective::mlm: {
      for (const auto& tgt : s.mlm_targets) {
        if (tgt.position >= t.length)
          throw ValidationError("mlm target position beyond the real tokens");
        const auto r = static_cast<Eigen::Index>(tgt.position);
        const Eigen::RowVectorXd h = t.output().row(r);
        const Eigen::RowVectorXd logits = h * params.mlm_w + params.mlm_b.row(0);
        Eigen::RowVectorXd g(logits.size());
        loss += cross_entropy(logits, tgt.id, g);
        if (grads) {
          g *= weight;
          grads->mlm_w.noalias() += h.transpose() * g;
          grads->mlm_b.row(0) += g;
          d_out.row(r) += g * params.mlm_w.transpose();
        }
      }
      break;
    }
    case Objective::classify: {
      if (!s.example.label || (*s.example.label != 0 && *s.example.label != 1))
        throw ValidationError("classification sample needs a 0/1 label");
      const Eigen::RowVectorXd logits = t.pooled * params.cls_w + params.cls_b;
      Eigen::RowVectorXd g(2);
      loss = cross_entropy(logits, *s.example.label, g);
      if (grads) {
        g *= weight;
        grads->cls_w.noalias() += t.pooled.transpose() * g;
        grads->cls_b.row(0) += g;
        d_pooled = g * params.cls_w.transpose();
      }
      break;
    }
    case Objective::seq2seq: {
      if (config.decoder_layers <= 0) throw ValidationError("seq2seq objective needs a decoder");
      const auto& target = *s.example.target_ids;
      if (target.empty()) return 0.0;
      std::vector<std::int32_t> input{Vocabulary::kClsId};
      input.insert(input.end(), target.begin(), target.end() - 1);
      ForwardOptions dfo = fo;
      dfo.dropout_seed = fo.dropout_seed ^ 0x5eedULL;
      const DecoderTrace dt = decode_forward(t, input, params, config, dfo);
      Mat dlogits(dt.logits.rows(), dt.logits.cols());
      for (std::size_t k = 0; k < target.size(); ++k) {
        const auto r = static_cast<Eigen::Index>(k);
        loss += cross_entropy(dt.logits.row(r), target[k], dlogits.row(r));
      }
      if (grads) {
        dlogits *= weight;
        decoder_backward(dt, t, dlogits, params, config, *grads, d_out);
      }
      break;
    }
  }
  if (grads) encoder_backward(t, std::move(d_out), d_pooled, params, config, *grads);
  return loss;
}

double run(Objective objective, std::span<const Sample> batch, const ModelParams& params,
           const ModelConfig& config, const GradientOptions& options, ModelParams* grads) {
  const std::size_t n = normaliser(objective, batch);
  if (n == 0) return 0.0;
  const double weight = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ForwardOptions fo;
    fo.train_mode = options.train_mode;
    fo.trim_padding = true;
    fo.dropout_seed = options.dropout_seed * 1000003ULL + i;
    total += sample_loss(objective, batch[i], params, config, fo, weight, grads);
  }
  return total * weight;
}

}  // namespace

double compute_loss(Objective objective, std::span<const Sample> batch, const ModelParams& params,
                    const ModelConfig& config, const GradientOptions& options) {
  return run(objective, batch, params, config, options, nullptr);
}

LossAndGradients compute_gradients(Objective objective, std::span<const Sample> batch,
                                   const ModelParams& params, const ModelConfig& config,
                                   const GradientOptions& options) {
  LossAndGradients out;
  out.grads = ModelParams::zeros(config);
  out.loss = run(objective, batch, params, config, options, &out.grads);
  if (!std::isfinite(out.loss)) throw RuntimeFailure("compute_gradients: non-finite loss");
  return out;
}

}  // namespace astmask
