#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "astmask/checkpoint.hpp"
#include "astmask/error.hpp"
#include "astmask/training.hpp"

using namespace astmask;

namespace {

ModelConfig tiny_config(const Vocabulary& vocab) {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_ff = 32;
  c.max_len = 48;
  c.max_ast_pos = 48;
  c.vocab_size = static_cast<int>(vocab.size());
  return c;
}

struct Corpus {
  Vocabulary vocab;
  std::vector<EncodedExample> encoded;
};

Corpus small_corpus(std::size_t n, std::size_t max_len = 48) {
  Corpus c;
  std::vector<LinearSequence> seqs;
  for (const auto& src : gen_corpus(3, n)) seqs.push_back(linearize(code_to_tree(src)));
  c.vocab = build_vocab(seqs, 1, 5000);
  for (const auto& s : seqs) c.encoded.push_back(encode(s, c.vocab, max_len));
  return c;
}

std::size_t candidate_count(const EncodedExample& e) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < e.length(); ++i)
    n += e.ast_segment[i] == 0 && !Vocabulary::is_special(e.ids[i]);
  return n;
}

}  // namespace

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.mlm_mask_prob = 1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c.mlm_mask_prob = 0.15;
  c.warmup_ratio = 1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_EQ(train_task_from_string("clone"), TrainTask::clone);
  EXPECT_THROW(train_task_from_string("translate"), ValidationError);
}

TEST(MaskForMlm, ZeroProbabilityLeavesExampleAlone) {
  const Corpus c = small_corpus(1);
  std::mt19937_64 rng(1);
  const Sample s = mask_for_mlm(c.encoded[0], 0.0, static_cast<int>(c.vocab.size()), rng);
  EXPECT_EQ(s.example, c.encoded[0]);
  EXPECT_TRUE(s.mlm_targets.empty());
}

TEST(MaskForMlm, FullProbabilityTargetsEveryCodeToken) {
  const Corpus c = small_corpus(1);
  const EncodedExample& e = c.encoded[0];
  std::mt19937_64 rng(2);
  const Sample s = mask_for_mlm(e, 1.0, static_cast<int>(c.vocab.size()), rng);
  EXPECT_EQ(s.mlm_targets.size(), candidate_count(e));
  for (const auto& t : s.mlm_targets) {
    EXPECT_EQ(e.ast_segment[t.position], 0);
    EXPECT_EQ(t.id, e.ids[t.position]);
  }
  for (std::size_t i = 0; i < e.max_len(); ++i)
    if (e.ast_segment[i] == 1 || Vocabulary::is_special(e.ids[i])) EXPECT_EQ(s.example.ids[i], e.ids[i]);
}

TEST(MaskForMlm, SelectionRateMonteCarlo) {
  const Corpus c = small_corpus(1);
  const EncodedExample& e = c.encoded[0];
  std::mt19937_64 rng(3);
  std::size_t selected = 0, masked = 0;
  const std::size_t trials = 10000;
  for (std::size_t t = 0; t < trials; ++t) {
    const Sample s = mask_for_mlm(e, 0.15, static_cast<int>(c.vocab.size()), rng);
    selected += s.mlm_targets.size();
    for (const auto& m : s.mlm_targets) masked += s.example.ids[m.position] == Vocabulary::kMaskId;
  }
  const double rate = static_cast<double>(selected) / static_cast<double>(trials * candidate_count(e));
  EXPECT_GE(rate, 0.13);
  EXPECT_LE(rate, 0.17);
  EXPECT_NEAR(static_cast<double>(masked) / static_cast<double>(selected), 0.8, 0.02);
}

TEST(MaskForMlm, EmptyTargetSetHasZeroLoss) {
  const Corpus c = small_corpus(1);
  const ModelConfig cfg = tiny_config(c.vocab);
  const ModelParams p = ModelParams::initialize(cfg, 1);
  const std::vector<Sample> batch{{c.encoded[0], {}}};
  EXPECT_EQ(compute_loss(Objective::mlm, batch, p, cfg), 0.0);
}

TEST(Adam, ZeroGradientsLeaveParamsUnchanged) {
  const Corpus c = small_corpus(1);
  const ModelConfig cfg = tiny_config(c.vocab);
  ModelParams p = ModelParams::initialize(cfg, 1);
  const ModelParams before = p;
  OptimizerState st = OptimizerState::for_params(p);
  adam_step(p, ModelParams::zeros(cfg), st, 0.001);
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, FirstStepMagnitude) {
  const Corpus c = small_corpus(1);
  const ModelConfig cfg = tiny_config(c.vocab);
  ModelParams p = ModelParams::initialize(cfg, 1);
  const ModelParams before = p;
  ModelParams g = ModelParams::zeros(cfg);
  g.for_each([](const std::string&, Mat& m) { m.setOnes(); });
  OptimizerState st = OptimizerState::for_params(p);
  adam_step(p, g, st, 0.001);
  // m_hat = v_hat = 1 at t = 1.
  const double expected = 0.001 / (1.0 + 1e-8);
  std::vector<const Mat*> old;
  before.for_each([&](const std::string&, const Mat& m) { old.push_back(&m); });
  std::size_t k = 0;
  p.for_each([&](const std::string& name, const Mat& m) {
    const double worst = ((*old[k++] - m).array() - expected).abs().maxCoeff();
    EXPECT_LT(worst, 1e-15) << name;
  });
}

TEST(Adam, NonFiniteGradientAborts) {
  const Corpus c = small_corpus(1);
  const ModelConfig cfg = tiny_config(c.vocab);
  ModelParams p = ModelParams::initialize(cfg, 1);
  const ModelParams before = p;
  ModelParams g = ModelParams::zeros(cfg);
  g.layers[0].ff.w1(0, 0) = std::numeric_limits<double>::quiet_NaN();
  OptimizerState st = OptimizerState::for_params(p);
  try {
    adam_step(p, g, st, 0.001);
    FAIL() << "expected RuntimeFailure";
  } catch (const RuntimeFailure& e) {
    EXPECT_NE(std::string(e.what()).find("ff.w1"), std::string::npos) << e.what();
  }
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step, 0);
}

TEST(Schedule, WarmupReachesConfiguredRate) {
  TrainConfig c;
  c.learning_rate = 2e-5;
  for (const int max_steps : {1, 7, 10, 1000, 3001}) {
    c.max_steps = max_steps;
    const int w = static_cast<int>(std::ceil(0.1 * max_steps));
    EXPECT_NEAR(scheduled_lr(c, w), c.learning_rate, c.learning_rate / max_steps);
    EXPECT_EQ(scheduled_lr(c, max_steps), c.learning_rate);
    if (w > 1) EXPECT_LT(scheduled_lr(c, 1), c.learning_rate);
  }
  c.warmup_ratio = 0.0;
  EXPECT_EQ(scheduled_lr(c, 1), c.learning_rate);
}

TEST(Schedule, LossCurveCsv) {
  const std::vector<LossPoint> curve{{1, 2.5, 1e-4}};
  EXPECT_EQ(loss_curve_csv(curve).substr(0, 13), "step,loss,lr\n");
}

TEST(Pretrain, DeterministicAndFinite) {
  const Corpus c = small_corpus(12);
  const Checkpoint init = init_checkpoint(c.vocab, tiny_config(c.vocab), 5);
  TrainConfig tc;
  tc.max_steps = 6;
  tc.batch_size = 4;
  tc.learning_rate = 1e-3;
  const auto a = pretrain_mlm(c.encoded, init, tc);
  const auto b = pretrain_mlm(c.encoded, init, tc);
  ASSERT_EQ(a.curve.size(), 6u);
  for (const auto& pt : a.curve) EXPECT_TRUE(std::isfinite(pt.loss));
  EXPECT_EQ(a.checkpoint.params, b.checkpoint.params);
  std::ostringstream sa, sb;
  save_checkpoint(sa, a.checkpoint);
  save_checkpoint(sb, b.checkpoint);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_FALSE(a.checkpoint.params == init.params);
}

TEST(Pretrain, RejectsVocabularyMismatch) {
  Corpus c = small_corpus(4);
  Checkpoint init = init_checkpoint(c.vocab, tiny_config(c.vocab), 5);
  c.encoded[0].ids[1] = static_cast<std::int32_t>(c.vocab.size()) + 3;
  TrainConfig tc;
  tc.max_steps = 1;
  EXPECT_THROW(pretrain_mlm(c.encoded, init, tc), ValidationError);
}

TEST(Finetune, ZeroStepsReturnsCheckpointUnchanged) {
  const auto data = gen_clone_pairs(1, 6);
  const Vocabulary vocab = build_task_vocab(data, {});
  const Checkpoint init = init_checkpoint(vocab, tiny_config(vocab), 2);
  TrainConfig tc;
  tc.task = TrainTask::clone;
  tc.max_steps = 0;
  const auto r = finetune(data, data, init, tc);
  EXPECT_EQ(r.checkpoint.params, init.params);
  EXPECT_EQ(r.checkpoint.config, init.config);
  EXPECT_TRUE(r.curve.empty());
  EXPECT_EQ(r.report.n, 6u);
  ASSERT_TRUE(r.report.f1.has_value());
}

TEST(Finetune, RefineWithoutDecoderIsRejected) {
  std::vector<TaskExample> data;
  for (const auto& p : gen_bugfix_pairs(1, 2)) data.push_back(p.as_example());
  const Vocabulary vocab = build_task_vocab(data, {});
  const Checkpoint init = init_checkpoint(vocab, tiny_config(vocab), 2);
  TrainConfig tc;
  tc.task = TrainTask::refine;
  tc.max_steps = 1;
  EXPECT_THROW(finetune(data, data, init, tc), ValidationError);
}

TEST(Finetune, SchemaMismatchIsRejected) {
  const auto data = gen_qa_pairs(1, 4);
  const Vocabulary vocab = build_task_vocab(data, {});
  const Checkpoint init = init_checkpoint(vocab, tiny_config(vocab), 2);
  TrainConfig tc;
  tc.task = TrainTask::clone;
  tc.max_steps = 1;
  EXPECT_THROW(finetune(data, data, init, tc), ValidationError);
}

TEST(Finetune, AblationFlagsReachTheCheckpoint) {
  const auto data = gen_clone_pairs(2, 8);
  const Vocabulary vocab = build_task_vocab(data, {});
  const Checkpoint init = init_checkpoint(vocab, tiny_config(vocab), 2);
  TrainConfig tc;
  tc.task = TrainTask::clone;
  tc.max_steps = 2;
  tc.batch_size = 2;
  tc.ablation.no_ast_mask = true;
  const auto r = finetune(data, data, init, tc);
  EXPECT_FALSE(r.checkpoint.config.use_ast_mask);
  EXPECT_TRUE(r.checkpoint.config.use_ast_position);
  EXPECT_EQ(r.curve.size(), 2u);
}

TEST(Encoding, RefineTargetsEndWithSeparator) {
  const auto pairs = gen_bugfix_pairs(4, 1);
  const TaskExample ex = pairs[0].as_example();
  const Vocabulary vocab = build_task_vocab(std::vector<TaskExample>{ex}, {});
  const EncodedExample e = encode_task_example(ex, vocab, 256);
  ASSERT_TRUE(e.target_ids.has_value());
  const auto want = target_tokens(ex.second);
  ASSERT_EQ(e.target_ids->size(), want.size() + 1);
  EXPECT_EQ(e.target_ids->back(), Vocabulary::kSepId);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_EQ(vocab.token((*e.target_ids)[i]), want[i]);
}
