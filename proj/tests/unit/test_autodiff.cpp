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

#include <functional>

#include "voximp/ag/graph.hpp"
#include "voximp/ag/lstm.hpp"
#include "voximp/rng.hpp"

namespace voximp::ag {
namespace {

Mat random_mat(Index r, Index c, Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, scale);
  return m;
}

using Builder = std::function<Var(Graph&, const std::vector<Var>&)>;

// Compares reverse-mode gradients of sum(w .* f(inputs)) against central
// differences for every input entry.
double max_rel_error(const std::vector<Mat>& inputs, const Builder& build, std::uint64_t seed = 1) {
  Rng rng(seed);
  Mat weights;
  {
    Graph probe(false);
    std::vector<Var> vs;
    for (const Mat& m : inputs) vs.push_back(probe.constant(m));
    const Mat& out = build(probe, vs).value();
    weights = random_mat(out.rows(), out.cols(), rng);
  }
  auto loss_of = [&](const std::vector<Mat>& xs) {
    Graph g(false);
    std::vector<Var> vs;
    for (const Mat& m : xs) vs.push_back(g.constant(m));
    return (build(g, vs).value().array() * weights.array()).sum();
  };
  Graph g;
  std::vector<Var> vs;
  for (const Mat& m : inputs) vs.push_back(g.input(m));
  Var out = build(g, vs);
  Var loss = sum_all(mul(out, g.constant(weights)));
  g.backward(loss);
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Mat analytic = g.grad(vs[k]);
    if (analytic.size() == 0) analytic = Mat::Zero(inputs[k].rows(), inputs[k].cols());
    for (Index i = 0; i < inputs[k].size(); ++i) {
      std::vector<Mat> plus = inputs, minus = inputs;
      plus[k].data()[i] += h;
      minus[k].data()[i] -= h;
      const double numeric = (loss_of(plus) - loss_of(minus)) / (2 * h);
      const double a = analytic.data()[i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

TEST(Autodiff, ElementwiseOps) {
  Rng rng(3);
  const Mat a = random_mat(3, 4, rng), b = random_mat(3, 4, rng);
  const Mat pos = (random_mat(3, 4, rng).array().abs() + 0.5).matrix();
  EXPECT_LT(max_rel_error({a, b}, [](Graph&, auto& v) { return mul(add(v[0], v[1]), sub(v[0], v[1])); }), 1e-6);
  EXPECT_LT(max_rel_error({a}, [](Graph&, auto& v) { return tanh(v[0]); }), 1e-6);
  EXPECT_LT(max_rel_error({a}, [](Graph&, auto& v) { return sigmoid(v[0]); }), 1e-6);
  EXPECT_LT(max_rel_error({a}, [](Graph&, auto& v) { return exp(v[0]); }), 1e-6);
  EXPECT_LT(max_rel_error({pos}, [](Graph&, auto& v) { return log(v[0]); }), 1e-6);
  EXPECT_LT(max_rel_error({a}, [](Graph&, auto& v) { return square(v[0]); }), 1e-6);
  EXPECT_LT(max_rel_error({pos}, [](Graph&, auto& v) { return abs(v[0]); }), 1e-6);
  EXPECT_LT(max_rel_error({pos}, [](Graph&, auto& v) { return relu(v[0]); }), 1e-6);
  EXPECT_LT(max_rel_error({a}, [](Graph&, auto& v) { return add_scalar(scale(v[0], -2.5), 1.0); }), 1e-6);
}

TEST(Autodiff, MatrixOps) {
  Rng rng(4);
  const Mat a = random_mat(3, 5, rng), b = random_mat(5, 2, rng), c = random_mat(4, 5, rng);
  const Mat row = random_mat(1, 5, rng), s = random_mat(1, 1, rng);
  EXPECT_LT(max_rel_error({a, b}, [](Graph&, auto& v) { return matmul(v[0], v[1]); }), 1e-6);
  EXPECT_LT(max_rel_error({a, c}, [](Graph&, auto& v) { return matmul_nt(v[0], v[1]); }), 1e-6);
  EXPECT_LT(max_rel_error({a}, [](Graph&, auto& v) { return transpose(v[0]); }), 1e-6);
  EXPECT_LT(max_rel_error({a, row}, [](Graph&, auto& v) { return add_row(v[0], v[1]); }), 1e-6);
  EXPECT_LT(max_rel_error({a, row}, [](Graph&, auto& v) { return mul_row(v[0], v[1]); }), 1e-6);
  EXPECT_LT(max_rel_error({a, s}, [](Graph&, auto& v) { return mul_scalar(v[0], v[1]); }), 1e-6);
  EXPECT_LT(max_rel_error({a}, [](Graph&, auto& v) { return softmax_rows(v[0]); }), 1e-6);
  EXPECT_LT(max_rel_error({a, c}, [](Graph&, auto& v) { return concat_rows({v[0], v[1]}); }), 1e-6);
  EXPECT_LT(max_rel_error({a, b}, [](Graph&, auto& v) { return concat_cols({v[0], matmul(v[0], v[1])}); }), 1e-6);
  EXPECT_LT(max_rel_error({a}, [](Graph&, auto& v) { return slice_rows(v[0], 1, 2); }), 1e-6);
  EXPECT_LT(max_rel_error({a}, [](Graph&, auto& v) { return slice_cols(v[0], 2, 3); }), 1e-6);
  EXPECT_LT(max_rel_error({a}, [](Graph&, auto& v) { return gather_rows(v[0], {2, 0, 0, 1, 2}); }), 1e-6);
  EXPECT_LT(max_rel_error({a}, [](Graph&, auto& v) { return reshape(v[0], 5, 3); }), 1e-6);
  EXPECT_LT(max_rel_error({row}, [](Graph&, auto& v) { return broadcast_rows(v[0], 4); }), 1e-6);
  EXPECT_LT(max_rel_error({a}, [](Graph&, auto& v) { return mean_rows(v[0]); }), 1e-6);
  EXPECT_LT(max_rel_error({a, c}, [](Graph&, auto& v) { return mse(slice_rows(v[0], 0, 3), slice_rows(v[1], 1, 3)); }), 1e-6);
}

TEST(Autodiff, MaskedSoftmaxAndLayerNorm) {
  Rng rng(5);
  const Mat a = random_mat(2, 6, rng);
  const std::vector<bool> keep = {true, false, true, true, false, true};
  EXPECT_LT(max_rel_error({a}, [&](Graph&, auto& v) { return softmax_rows(v[0], &keep); }), 1e-6);
  const Mat x = random_mat(4, 6, rng), gamma = random_mat(1, 6, rng), beta = random_mat(1, 6, rng);
  EXPECT_LT(max_rel_error({x, gamma, beta}, [](Graph&, auto& v) { return layer_norm_rows(v[0], v[1], v[2]); }),
            1e-5);
}

TEST(Autodiff, SoftmaxMaskedEntriesExactlyZero) {
  Graph g(false);
  const std::vector<bool> keep = {false, true, true};
  const Mat out = softmax_rows(g.constant(Mat::Constant(1, 3, 2.0)), &keep).value();
  EXPECT_EQ(out(0, 0), 0.0);
  EXPECT_NEAR(out.sum(), 1.0, 1e-12);
  const std::vector<bool> none = {false, false, false};
  EXPECT_THROW(softmax_rows(g.constant(Mat::Zero(1, 3)), &none), Error);
}

TEST(Autodiff, LstmBothDirections) {
  Rng rng(6);
  const Index batch = 2, steps = 4, in = 3, hidden = 2;
  const Mat x = random_mat(steps * batch, in, rng, 0.8);
  const Mat wx = random_mat(in, 4 * hidden, rng, 0.5), wh = random_mat(hidden, 4 * hidden, rng, 0.5);
  const Mat b = random_mat(1, 4 * hidden, rng, 0.3);
  for (bool reverse : {false, true}) {
    EXPECT_LT(max_rel_error({x, wx, wh, b},
                            [&](Graph&, auto& v) { return lstm(v[0], v[1], v[2], v[3], batch, reverse); }),
              1e-6)
        << "reverse=" << reverse;
  }
}

TEST(Autodiff, LstmBatchMatchesSingleSequences) {
  Rng rng(7);
  const Index batch = 3, steps = 5, in = 2, hidden = 3;
  const Mat x = random_mat(steps * batch, in, rng);
  const Mat wx = random_mat(in, 4 * hidden, rng), wh = random_mat(hidden, 4 * hidden, rng);
  const Mat b = random_mat(1, 4 * hidden, rng);
  Graph g(false);
  const Mat joint = lstm(g.constant(x), g.constant(wx), g.constant(wh), g.constant(b), batch, true).value();
  for (Index k = 0; k < batch; ++k) {
    Mat xs(steps, in);
    for (Index t = 0; t < steps; ++t) xs.row(t) = x.row(t * batch + k);
    const Mat single = lstm(g.constant(xs), g.constant(wx), g.constant(wh), g.constant(b), 1, true).value();
    for (Index t = 0; t < steps; ++t) {
      EXPECT_LT((single.row(t) - joint.row(t * batch + k)).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Autodiff, GradientReversal) {
  Graph g;
  Var x = g.input((Mat(1, 2) << 1.5, -2.0).finished());
  Var y = grl(x, 0.5);
  EXPECT_EQ(y.value(), x.value());
  Var loss = sum_all(mul(y, g.constant((Mat(1, 2) << 2.0, -4.0).finished())));
  g.backward(loss);
  EXPECT_DOUBLE_EQ(g.grad(x)(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(g.grad(x)(0, 1), 2.0);
  EXPECT_THROW(grl(x, -1.0), Error);
}

TEST(Autodiff, FrozenParamsReceiveNoGradient) {
  Mat w = Mat::Ones(2, 2), gw = Mat::Zero(2, 2);
  Graph g;
  Var frozen = g.param(w, nullptr);
  Var live = g.param(w, &gw);
  g.backward(sum_all(matmul(frozen, live)));
  EXPECT_TRUE(gw.isApprox(Mat::Constant(2, 2, 2.0)));
}

}  // namespace
}  // namespace voximp::ag
