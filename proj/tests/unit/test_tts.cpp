// Copyright 2026 The voximp Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "voximp/gan.hpp"
#include "voximp/tts.hpp"

namespace voximp {
namespace {

using testing::expect_error;

TEST(LengthRegulator, ExpandsTokens) {
  EXPECT_EQ(length_regulator_indices({2, 0, 3}), (std::vector<int>{0, 0, 2, 2, 2}));
  EXPECT_EQ(length_regulator_indices({1, 1}, 4), (std::vector<int>{4, 5}));
  expect_error(ErrorCode::kInvalidArgument, [] { length_regulator_indices({1, -1}); });
  ag::Graph g;
  Var t = g.input(Mat{{1.0, 2.0}, {3.0, 4.0}});
  Var y = length_regulate(t, {3, 1});
  EXPECT_EQ(y.value(), (Mat{{1, 2}, {1, 2}, {1, 2}, {3, 4}}));
  g.backward(ag::sum_all(y));
  EXPECT_EQ(g.grad(t), (Mat{{3, 3}, {1, 1}}));
  expect_error(ErrorCode::kShapeError, [&] { length_regulate(t, {1}); });
}

TEST(ComputeLosses, MatchesHandComputation) {
  AcousticPrediction p;
  p.mel = Mat::Zero(3, kNumMels);
  p.mel(0, 0) = 2.0;
  p.log_duration = Eigen::VectorXd::Zero(2);
  p.pitch = Eigen::VectorXd::Constant(2, 1.0);
  p.energy = Eigen::VectorXd::Zero(2);
  VarianceTargets t;
  t.durations = {1, 2};
  t.pitch = {1.0, 3.0};
  t.energy = {0.5, -0.5};
  const LossBreakdown l = compute_losses(p, Mat::Zero(3, kNumMels), t);
  EXPECT_DOUBLE_EQ(l.mel, 2.0 / (3.0 * kNumMels));
  EXPECT_DOUBLE_EQ(l.duration, std::log(2.0) * std::log(2.0) / 2.0);
  EXPECT_DOUBLE_EQ(l.pitch, 2.0);
  EXPECT_DOUBLE_EQ(l.energy, 0.25);
  EXPECT_DOUBLE_EQ(l.total, l.mel + l.duration + l.pitch + l.energy);
  expect_error(ErrorCode::kShapeError, [&] { compute_losses(p, Mat::Zero(4, kNumMels), t); });
}

TEST(Lsgan, FixedPointAndLosses) {
  // At the optimum D outputs 1/2 everywhere when real and fake match.
  const Eigen::VectorXd half = Eigen::VectorXd::Constant(5, 0.5);
  const LsganLosses l = lsgan_losses(half, half);
  EXPECT_DOUBLE_EQ(l.d_real, 0.25);
  EXPECT_DOUBLE_EQ(l.d_fake, 0.25);
  EXPECT_DOUBLE_EQ(l.generator, 0.25);
  EXPECT_DOUBLE_EQ(l.discriminator(), 0.5);
  const LsganLosses perfect = lsgan_losses(Eigen::VectorXd::Ones(2), Eigen::VectorXd::Zero(2));
  EXPECT_EQ(perfect.discriminator(), 0.0);
  EXPECT_EQ(perfect.generator, 1.0);
  expect_error(ErrorCode::kShapeError, [] { lsgan_losses(Eigen::VectorXd(), Eigen::VectorXd::Ones(1)); });
}

TEST(UnfoldTime, EdgeReplicationPerSegment) {
  ag::Graph g(false);
  Var x = g.constant(Mat{{1}, {2}, {3}, {10}, {20}});
  const Mat u = unfold_time(x, {3, 2}, 1).value();
  EXPECT_EQ(u, (Mat{{1, 1, 2}, {1, 2, 3}, {2, 3, 3}, {10, 10, 20}, {10, 20, 20}}));
  expect_error(ErrorCode::kShapeError, [&] { unfold_time(x, {3}, 1); });
}

TEST(StagePlans, DeskAndFullPresets) {
  EXPECT_EQ(default_plan(Stage::kPretrain).steps, 2000);
  EXPECT_EQ(default_plan(Stage::kGanRefine).steps, 0);
  EXPECT_EQ(default_plan(Stage::kControl).steps, 1000);
  EXPECT_EQ(default_plan(Stage::kPretrain, Preset::kFull).steps, 200000);
  EXPECT_EQ(default_plan(Stage::kGanRefine, Preset::kFull).steps, 200000);
  EXPECT_EQ(default_plan(Stage::kControl, Preset::kFull).steps, 50000);
  EXPECT_EQ(default_plan(Stage::kControl).trainable_namespaces, (std::vector<std::string>{kNsControl}));
  EXPECT_EQ(ControlConfig{}.proj_dim, 32);
}

ModelOptions small_model() {
  ModelOptions o;
  o.backbone.hidden = 32;
  o.backbone.ffn_dim = 64;
  o.backbone.encoder_layers = 1;
  o.backbone.decoder_layers = 1;
  return o;
}

const Dataset& tiny_corpus() {
  static const Dataset ds = [] {
    CorpusOptions o;
    o.n_speakers = 10;
    o.utts_per_speaker = 3;
    return Dataset::from_built(build_corpus(OracleGenerator{}, o));
  }();
  return ds;
}

StagePlan plan(Stage s, long steps) {
  StagePlan p = default_plan(s);
  p.steps = steps;
  p.batch_size = 2;
  p.seed = 17;
  return p;
}

TEST(TtsModel, RequiresPretrainBeforeOtherStages) {
  TtsModel m(small_model(), 1);
  expect_error(ErrorCode::kStageOrderViolation, [&] { train_stage(m, plan(Stage::kControl, 1), tiny_corpus()); });
  expect_error(ErrorCode::kStageOrderViolation, [&] { train_stage(m, plan(Stage::kGanRefine, 1), tiny_corpus()); });
  expect_error(ErrorCode::kNotInitialized, [&] {
    m.synthesize_from_latent({1, 2}, Eigen::RowVectorXd::Zero(384), ImpressionVector::constant(4.0));
  });
}

TEST(TtsModel, LayoutMismatchIsConfigError) {
  ModelOptions o = small_model();
  o.backbone.speaker_dim = 100;
  expect_error(ErrorCode::kConfigError, [&] { TtsModel m(o, 1); });
}

TEST(TrainStage, PretrainReducesLoss) {
  TtsModel m(small_model(), 2);
  StagePlan p = plan(Stage::kPretrain, 60);
  p.warmup = 20;
  const TrainReport r = train_stage(m, p, tiny_corpus());
  ASSERT_EQ(r.steps.size(), 60u);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += r.steps[static_cast<std::size_t>(i)].total;
    last += r.steps[r.steps.size() - 1 - static_cast<std::size_t>(i)].total;
  }
  EXPECT_LT(last, first);
  EXPECT_TRUE(m.stage_done(Stage::kPretrain));
}

TEST(TtsModel, SpeakerSkipAddsAProjectedEmbeddingToEveryFrame) {
  ModelOptions o = small_model();
  o.backbone.speaker_skip = true;
  o.stl.bypass = true;
  TtsModel m(o, 4);
  train_stage(m, plan(Stage::kPretrain, 2), tiny_corpus());
  const Eigen::RowVectorXd x = m.latent(tiny_corpus().mels[1]);
  const ImpressionVector v = ImpressionVector::constant(4.0);
  const std::vector<int> toks = {3, 1, 4, 1, 5};
  const SynthesisOutput with = m.synthesize_from_latent(toks, x, v);
  const auto w = m.params().with_prefix(kNsBackbone + "/spk_out");
  ASSERT_EQ(w.size(), 1u);
  const Eigen::RowVectorXd shift = m.speaker_embedding(x, v) * w[0]->value;
  w[0]->value.setZero();
  const SynthesisOutput without = m.synthesize_from_latent(toks, x, v);
  ASSERT_EQ(with.durations, without.durations);
  for (Index t = 0; t < with.mel.rows(); ++t) {
    EXPECT_LT((with.mel.row(t) - without.mel.row(t) - shift).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(BackboneOptions, JsonIsStrict) {
  BackboneOptions o;
  o.output_norm = false;
  o.speaker_skip = true;
  const nlohmann::json j = o;
  const BackboneOptions back = j.get<BackboneOptions>();
  EXPECT_FALSE(back.output_norm);
  EXPECT_TRUE(back.speaker_skip);
  nlohmann::json missing = j;
  missing.erase("speaker_skip");
  EXPECT_THROW(missing.get<BackboneOptions>(), nlohmann::json::exception);
}

class TrainedModel : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    model_ = new TtsModel(small_model(), 3);
    train_stage(*model_, plan(Stage::kPretrain, 5), tiny_corpus());
  }
  static void TearDownTestSuite() { delete model_; }
  static TtsModel* model_;
};
TtsModel* TrainedModel::model_ = nullptr;

TEST_F(TrainedModel, ControlStageTouchesOnlyControlParameters) {
  const auto& store = model_->params();
  std::map<std::string, std::uint64_t> before;
  for (const auto& ns : {kNsEncoder, kNsStl, kNsBackbone, kNsDiscriminator, kNsControl}) before[ns] = store.hash(ns);
  train_stage(*model_, plan(Stage::kControl, 3), tiny_corpus());
  for (const auto& ns : {kNsEncoder, kNsStl, kNsBackbone, kNsDiscriminator}) EXPECT_EQ(store.hash(ns), before[ns]) << ns;
  EXPECT_NE(store.hash(kNsControl), before[kNsControl]);
}

TEST_F(TrainedModel, GanStageLeavesControlAlone) {
  const std::uint64_t control = model_->params().hash(kNsControl);
  const std::uint64_t disc = model_->params().hash(kNsDiscriminator);
  const TrainReport r = train_stage(*model_, plan(Stage::kGanRefine, 2), tiny_corpus());
  EXPECT_EQ(model_->params().hash(kNsControl), control);
  EXPECT_NE(model_->params().hash(kNsDiscriminator), disc);
  for (const auto& s : r.steps) {
    EXPECT_GT(s.gan_discriminator, 0.0);
    EXPECT_GT(s.gan_generator, 0.0);
  }
}

TEST_F(TrainedModel, ControlStageIsReproducible) {
  const TrainReport a = train_stage(*model_, plan(Stage::kControl, 3), tiny_corpus());
  const std::uint64_t h = model_->params().hash(kNsControl);
  const TrainReport b = train_stage(*model_, plan(Stage::kControl, 3), tiny_corpus());
  EXPECT_EQ(model_->params().hash(kNsControl), h);
  for (std::size_t i = 0; i < a.steps.size(); ++i) EXPECT_EQ(a.steps[i].total, b.steps[i].total);
}

TEST_F(TrainedModel, CheckpointRoundTrip) {
  testing::TempDir dir("tts_ckpt");
  model_->save(dir.path() / "m.ckpt");
  const auto back = TtsModel::load(dir.path() / "m.ckpt");
  EXPECT_EQ(back->params().hash(), model_->params().hash());
  EXPECT_EQ(back->stages(), model_->stages());
  const std::vector<int> toks = {1, 2, 3, 4};
  const Eigen::RowVectorXd x = model_->latent(tiny_corpus().mels[0]);
  const ImpressionVector v = ImpressionVector::constant(4.0);
  EXPECT_EQ(back->synthesize_from_latent(toks, x, v).mel, model_->synthesize_from_latent(toks, x, v).mel);
}

TEST_F(TrainedModel, SynthesisShapesAndDurations) {
  const Eigen::RowVectorXd x = model_->latent(tiny_corpus().mels[0]);
  const SynthesisOutput s = model_->synthesize_from_latent({5, 6, 7}, x, ImpressionVector::constant(4.0));
  ASSERT_EQ(s.durations.size(), 3u);
  int total = 0;
  for (int d : s.durations) {
    EXPECT_GE(d, 1);
    total += d;
  }
  EXPECT_EQ(s.mel.rows(), total);
  EXPECT_EQ(s.mel.cols(), kNumMels);
  expect_error(ErrorCode::kEmptyContent, [&] { model_->synthesize_from_latent({}, x, ImpressionVector::constant(4.0)); });
}

}  // namespace
}  // namespace voximp
