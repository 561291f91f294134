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
#include "voximp/speaker_encoder.hpp"

namespace voximp {
namespace {

using testing::expect_error;

SSLFeatureStack random_stack(Index frames, Index layers, Index channels, Rng& rng) {
  SSLFeatureStack s;
  s.frames = frames;
  s.layers = layers;
  s.channels = channels;
  s.data.resize(layers, frames * channels);
  for (Index i = 0; i < s.data.size(); ++i) s.data.data()[i] = rng.normal();
  return s;
}

TEST(LayerWeightedSum, SaturatedLogitsSelectLayer) {
  Rng rng(1);
  const auto s = random_stack(6, 4, 5, rng);
  Eigen::RowVectorXd logits = Eigen::RowVectorXd::Zero(4);
  logits(2) = 50.0;
  EXPECT_LT((layer_weighted_sum(s, logits) - s.layer(2)).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(LayerWeightedSum, IdenticalLayersAreFixedPoint) {
  Rng rng(2);
  auto s = random_stack(5, 3, 4, rng);
  for (Index l = 1; l < 3; ++l) s.data.row(l) = s.data.row(0);
  EXPECT_LT((layer_weighted_sum(s, Eigen::RowVectorXd::Zero(3)) - s.layer(0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LayerWeightedSum, MatchesLoopOracleAndGraphVersion) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_stack(7, 4, 6, rng);
    Eigen::RowVectorXd logits(4);
    for (Index l = 0; l < 4; ++l) logits(l) = rng.normal(0.0, 2.0);
    std::vector<double> w(4);
    double z = 0.0;
    for (Index l = 0; l < 4; ++l) z += std::exp(logits(l));
    for (Index l = 0; l < 4; ++l) w[l] = std::exp(logits(l)) / z;
    double wsum = 0.0;
    for (double v : w) wsum += v;
    EXPECT_NEAR(wsum, 1.0, 1e-6);
    const Mat out = layer_weighted_sum(s, logits);
    for (Index t = 0; t < 7; ++t) {
      for (Index c = 0; c < 6; ++c) {
        double ref = 0.0;
        for (Index l = 0; l < 4; ++l) ref += w[l] * s(t, l, c);
        EXPECT_NEAR(out(t, c), ref, 1e-6);
      }
    }
    ag::Graph g(false);
    const Mat via_graph = layer_weighted_sum(g, s, g.constant(Mat(logits))).value();
    EXPECT_LT((via_graph - out).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(LayerWeightedSum, Errors) {
  Rng rng(4);
  const auto s = random_stack(3, 4, 2, rng);
  expect_error(ErrorCode::kShapeError, [&] { layer_weighted_sum(s, Eigen::RowVectorXd::Zero(3)); });
  Eigen::RowVectorXd bad = Eigen::RowVectorXd::Zero(4);
  bad(1) = NAN;
  expect_error(ErrorCode::kInvalidArgument, [&] { layer_weighted_sum(s, bad); });
}

TEST(LayerWeightedSum, GradientReachesLogits) {
  Rng rng(5);
  const auto s = random_stack(5, 4, 3, rng);
  Eigen::RowVectorXd logits(4);
  for (Index l = 0; l < 4; ++l) logits(l) = rng.normal();
  const Mat target = Mat::Random(5, 3);
  auto loss_at = [&](const Eigen::RowVectorXd& lg) { return (layer_weighted_sum(s, lg) - target).squaredNorm() / 15.0; };
  ag::Graph g;
  Var lv = g.input(Mat(logits));
  Var loss = ag::mse(layer_weighted_sum(g, s, lv), g.constant(target));
  g.backward(loss);
  const Mat grad = g.grad(lv);
  double norm = 0.0;
  for (Index l = 0; l < 4; ++l) {
    Eigen::RowVectorXd p = logits, m = logits;
    p(l) += 1e-6;
    m(l) -= 1e-6;
    const double numeric = (loss_at(p) - loss_at(m)) / 2e-6;
    EXPECT_LT(std::abs(grad(0, l) - numeric) / std::max(1e-8, std::abs(numeric)), 1e-3);
    norm += std::abs(grad(0, l));
  }
  EXPECT_GT(norm, 0.0);
}

struct PoolFixture : public ::testing::Test {
  nn::ParamStore store;
  Rng rng{7};
  AttentionScorer scorer{store, "attn", 6, 5, rng};
};

TEST_F(PoolFixture, SingletonAndConstantSequence) {
  ag::Graph g(false);
  const Mat one = Mat::Random(1, 6);
  const auto r1 = attention_pool(g, scorer, g.constant(one), {true});
  EXPECT_DOUBLE_EQ(r1.weights.value()(0, 0), 1.0);
  EXPECT_LT((r1.pooled.value() - one).cwiseAbs().maxCoeff(), 1e-15);

  Mat constant(9, 6);
  for (Index t = 0; t < 9; ++t) constant.row(t) = one.row(0);
  const auto r2 = attention_pool(g, scorer, g.constant(constant), std::vector<bool>(9, true));
  EXPECT_LT((r2.pooled.value() - one).cwiseAbs().maxCoeff(), 1e-12);
}

TEST_F(PoolFixture, MaskedFramesGetZeroAndPaddingIsInvisible) {
  ag::Graph g(false);
  const Mat seq = Mat::Random(5, 6) * 3.0;
  const auto plain = attention_pool(g, scorer, g.constant(seq), std::vector<bool>(5, true));
  for (int pad : {1, 4, 11}) {
    Mat padded = Mat::Random(5 + pad, 6) * 100.0;
    padded.topRows(5) = seq;
    std::vector<bool> mask(static_cast<std::size_t>(5 + pad), false);
    std::fill(mask.begin(), mask.begin() + 5, true);
    const auto r = attention_pool(g, scorer, g.constant(padded), mask);
    const Mat& w = r.weights.value();
    for (Index t = 5; t < 5 + pad; ++t) EXPECT_EQ(w(0, t), 0.0);
    EXPECT_NEAR(w.sum(), 1.0, 1e-6);
    EXPECT_GE(w.minCoeff(), 0.0);
    EXPECT_LT((r.pooled.value() - plain.pooled.value()).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST_F(PoolFixture, AllMaskedIsEmptySequence) {
  ag::Graph g(false);
  expect_error(ErrorCode::kEmptySequence,
               [&] { attention_pool(g, scorer, g.constant(Mat::Random(3, 6)), std::vector<bool>(3, false)); });
  expect_error(ErrorCode::kShapeError,
               [&] { attention_pool(g, scorer, g.constant(Mat::Random(3, 6)), std::vector<bool>(2, true)); });
}

TEST(SpeakerEncoder, DeterministicDefaultWidthAndOrderSensitive) {
  nn::ParamStore store;
  Rng rng(8);
  SpeakerEncoder enc(store, "enc", SpeakerEncoderOptions{}, rng);
  FrontendStub fe;
  const Mat mel = Mat::Random(30, kNumMels) - Mat::Constant(30, kNumMels, 3.0);
  const auto stack = fe.extract(mel);
  const auto x1 = enc.encode_utterance(stack), x2 = enc.encode_utterance(stack);
  EXPECT_EQ(x1.size(), 384);
  EXPECT_EQ(x1, x2);
  EXPECT_TRUE(x1.allFinite());
  const Mat reversed = mel.colwise().reverse();
  EXPECT_GT((enc.encode_utterance(fe.extract(reversed)) - x1).norm(), 1e-9);
}

TEST(SpeakerEncoder, BatchMatchesSingle) {
  nn::ParamStore store;
  Rng rng(9);
  SpeakerEncoderOptions opt;
  opt.lstm_hidden = 16;
  opt.attn_dim = 8;
  opt.embed_dim = 12;
  SpeakerEncoder enc(store, "enc", opt, rng);
  FrontendStub fe;
  const auto a = fe.extract(Mat::Random(10, kNumMels)), b = fe.extract(Mat::Random(10, kNumMels));
  ag::Graph g(false);
  const SSLFeatureStack* both[] = {&a, &b};
  const Mat out = enc.encode(g, both).value();
  EXPECT_LT((out.row(0) - enc.encode_utterance(a)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((out.row(1) - enc.encode_utterance(b)).cwiseAbs().maxCoeff(), 1e-12);
  const auto c = fe.extract(Mat::Random(11, kNumMels));
  const SSLFeatureStack* ragged[] = {&a, &c};
  expect_error(ErrorCode::kShapeError, [&] { enc.encode(g, ragged); });
}

TEST(FrontendStub, DeterministicAndLinear) {
  FrontendStub a, b;
  EXPECT_EQ(a.hash(), b.hash());
  const Mat m1 = Mat::Random(8, kNumMels), m2 = Mat::Random(8, kNumMels);
  const auto s1 = a.extract(m1), s2 = a.extract(m2), s12 = a.extract(0.3 * m1 + 0.7 * m2);
  EXPECT_EQ(s1.data, b.extract(m1).data);
  // Affine in the mel: a convex mix of inputs gives the same mix of features.
  EXPECT_LT((s12.data - (0.3 * s1.data + 0.7 * s2.data)).cwiseAbs().maxCoeff(), 1e-10);
  expect_error(ErrorCode::kShapeError, [&] { a.extract(Mat::Zero(0, kNumMels)); });
  expect_error(ErrorCode::kShapeError, [&] { a.extract(Mat::Zero(4, 40)); });
}

TEST(FeatureStackIo, RoundTripAndCrop) {
  testing::TempDir dir("stack_io");
  Rng rng(10);
  const auto s = random_stack(6, 3, 4, rng);
  write_feature_stack(dir.path() / "s.f32", s);
  const auto back = read_feature_stack(dir.path() / "s.f32");
  EXPECT_LT((back.data - s.data).cwiseAbs().maxCoeff(), 1e-6);
  const auto c = crop_stack(s, 2, 3);
  for (Index t = 0; t < 3; ++t) {
    for (Index l = 0; l < 3; ++l) {
      for (Index k = 0; k < 4; ++k) EXPECT_EQ(c(t, l, k), s(t + 2, l, k));
    }
  }
  expect_error(ErrorCode::kShapeError, [&] { crop_stack(s, 4, 3); });
}

TEST(StyleTokenLayer, SingleTokenIgnoresQuery) {
  nn::ParamStore store;
  Rng rng(11);
  StyleTokenLayer stl(store, "stl", 8, StlOptions{1, 2, 0.0, false}, rng);
  const auto a = stl.transform(Eigen::RowVectorXd::Random(8)), b = stl.transform(Eigen::RowVectorXd::Random(8));
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(StyleTokenLayer, HeadsAreConvexCombinationsAndQueriesDiffer) {
  nn::ParamStore store;
  Rng rng(12);
  StyleTokenLayer stl(store, "stl", 16, StlOptions{8, 4, 0.0, false}, rng);
  ag::Graph g(false);
  const Mat q = Mat::Random(5, 16) * 2.0;
  const auto out = stl(g, g.constant(q));
  const Mat& values = out.values.value();
  ASSERT_EQ(out.head_weights.size(), 4u);
  for (int h = 0; h < 4; ++h) {
    const Mat& w = out.head_weights[h].value();
    for (Index b = 0; b < 5; ++b) {
      EXPECT_NEAR(w.row(b).sum(), 1.0, 1e-6);
      EXPECT_GE(w.row(b).minCoeff(), 0.0);
      const Eigen::RowVectorXd expect = w.row(b) * values.middleCols(h * 4, 4);
      EXPECT_LT((out.embedding.value().row(b).segment(h * 4, 4) - expect).cwiseAbs().maxCoeff(), 1e-12);
      for (Index c = 0; c < 4; ++c) {
        EXPECT_LE(out.embedding.value()(b, h * 4 + c), values.col(h * 4 + c).maxCoeff() + 1e-12);
        EXPECT_GE(out.embedding.value()(b, h * 4 + c), values.col(h * 4 + c).minCoeff() - 1e-12);
      }
    }
  }
  for (Index b = 1; b < 5; ++b) EXPECT_GT((out.embedding.value().row(b) - out.embedding.value().row(0)).norm(), 0.0);
}

TEST(StyleTokenLayer, BypassIsAffineAroundTheMixture) {
  nn::ParamStore store;
  Rng rng(14);
  StlOptions o{1, 2};
  o.bypass = true;
  StyleTokenLayer stl(store, "stl", 8, o, rng);
  const Eigen::RowVectorXd a = Eigen::RowVectorXd::Random(8), b = Eigen::RowVectorXd::Random(8);
  const Eigen::RowVectorXd zero = stl.transform(Eigen::RowVectorXd::Zero(8));
  const Eigen::RowVectorXd sum = stl.transform(a + b) - zero;
  EXPECT_LT((sum - (stl.transform(a) - zero) - (stl.transform(b) - zero)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GT((stl.transform(a) - zero).norm(), 0.0);
  EXPECT_EQ(store.with_prefix("stl/bypass").size(), 1u);
}

TEST(StyleTokenLayer, OptionsJsonIsStrict) {
  StlOptions o{16, 8, 2.5, true};
  const nlohmann::json j = o;
  const StlOptions back = j.get<StlOptions>();
  EXPECT_EQ(back.tokens, 16);
  EXPECT_EQ(back.heads, 8);
  EXPECT_EQ(back.logit_scale, 2.5);
  EXPECT_TRUE(back.bypass);
  nlohmann::json missing = j;
  missing.erase("bypass");
  EXPECT_THROW(missing.get<StlOptions>(), nlohmann::json::exception);
}

TEST(StyleTokenLayer, HeadsMustDivideWidth) {
  nn::ParamStore store;
  Rng rng(13);
  expect_error(ErrorCode::kInvalidArgument, [&] { StyleTokenLayer stl(store, "stl", 10, StlOptions{8, 4}, rng); });
}

}  // namespace
}  // namespace voximp
