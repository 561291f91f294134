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

#include <algorithm>
#include <sstream>

#include "test_util.hpp"
#include "voximp/eval.hpp"

namespace voximp {
namespace {

using testing::expect_error;

std::vector<double> random_series(Rng& rng, int n, bool ties) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = ties ? static_cast<double>(rng.uniform_int(0, 4)) : rng.normal();
  return v;
}

// Rank of x[i] = (number below) + (number equal + 1) / 2.
std::vector<double> brute_ranks(const std::vector<double>& x) {
  std::vector<double> r;
  for (double xi : x) {
    double below = 0.0, equal = 0.0;
    for (double xj : x) {
      below += xj < xi ? 1.0 : 0.0;
      equal += xj == xi ? 1.0 : 0.0;
    }
    r.push_back(below + (equal + 1.0) / 2.0);
  }
  return r;
}

double brute_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  long double n = static_cast<long double>(x.size()), sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const long double mx = sx / n, my = sy / n;
  long double num = 0, dx = 0, dy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += (x[i] - mx) * (y[i] - my);
    dx += (x[i] - mx) * (x[i] - mx);
    dy += (y[i] - my) * (y[i] - my);
  }
  return static_cast<double>(num / std::sqrt(dx * dy));
}

TEST(Statistics, AverageRanksMatchBruteForce) {
  EXPECT_EQ(average_ranks({10, 20, 20, 5}), (std::vector<double>{2, 3.5, 3.5, 1}));
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = random_series(rng, rng.uniform_int(1, 30), trial % 2 == 0);
    EXPECT_EQ(average_ranks(x), brute_ranks(x));
  }
}

TEST(Statistics, PearsonMatchesBruteForce) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = rng.uniform_int(3, 40);
    const auto x = random_series(rng, n, false), y = random_series(rng, n, false);
    EXPECT_NEAR(pearson(x, y), brute_pearson(x, y), 1e-9);
  }
  EXPECT_EQ(pearson({1, 1, 1}, {1, 2, 3}), 0.0);
  expect_error(ErrorCode::kShapeError, [] { pearson({1}, {1}); });
  expect_error(ErrorCode::kShapeError, [] { pearson({1, 2}, {1, 2, 3}); });
}

TEST(Statistics, SpearmanClosedFormWithoutTies) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = rng.uniform_int(3, 40);
    const auto x = random_series(rng, n, false), y = random_series(rng, n, false);
    const auto rx = brute_ranks(x), ry = brute_ranks(y);
    double d2 = 0.0;
    for (int i = 0; i < n; ++i) d2 += std::pow(rx[static_cast<std::size_t>(i)] - ry[static_cast<std::size_t>(i)], 2);
    const double nn = static_cast<double>(n);
    EXPECT_NEAR(spearman(x, y), 1.0 - 6.0 * d2 / (nn * (nn * nn - 1.0)), 1e-9);
  }
}

TEST(Statistics, SpearmanWithTiesAndMonotoneMaps) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = rng.uniform_int(3, 30);
    const auto x = random_series(rng, n, true), y = random_series(rng, n, true);
    EXPECT_NEAR(spearman(x, y), brute_pearson(brute_ranks(x), brute_ranks(y)) * 1.0, 1e-9);
  }
  const std::vector<double> d = {-3, -2, -1, 0, 1, 2, 3};
  std::vector<double> cubed;
  for (double v : d) cubed.push_back(v * v * v + 4.0);
  EXPECT_DOUBLE_EQ(spearman(d, cubed), 1.0);
  std::vector<double> flipped(cubed.rbegin(), cubed.rend());
  EXPECT_DOUBLE_EQ(spearman(d, flipped), -1.0);
}

TEST(Statistics, MeanStdCosineQuantile) {
  const MeanStd m = mean_std({2, 4, 4, 4, 5, 5, 7, 9});
  EXPECT_DOUBLE_EQ(m.mean, 5.0);
  EXPECT_DOUBLE_EQ(m.std, 2.0);
  expect_error(ErrorCode::kInsufficientData, [] { mean_std({}); });
  Eigen::RowVectorXd a(3), b(3);
  a << 1, 0, 0;
  b << 0, 2, 0;
  EXPECT_DOUBLE_EQ(cosine(a, b), 0.0);
  EXPECT_DOUBLE_EQ(cosine(a, 3.0 * a), 1.0);
  EXPECT_DOUBLE_EQ(cosine(a, -a), -1.0);
  EXPECT_EQ(cosine(a, Eigen::RowVectorXd::Zero(3)), 0.0);
  EXPECT_DOUBLE_EQ(median({5, 1, 3}), 3.0);
  EXPECT_DOUBLE_EQ(median({4, 1, 3, 2}), 2.5);
  std::vector<double> hundred;
  for (int i = 0; i <= 100; ++i) hundred.push_back(i);
  EXPECT_DOUBLE_EQ(plot::quantile(hundred, 0.95), 95.0);
}

TEST(PairSweep, MinOwnRho) {
  PairSweepResult r;
  r.deltas = {-1, 0, 1};
  r.mean_d1 = Mat{{1, 1, 1}, {2, 2, 2}, {3, 3, 3}};
  r.mean_d2 = Mat{{1, 2, 3}, {1, 2, 3}, {1, 2, 3}};
  EXPECT_DOUBLE_EQ(r.min_own_rho(), 1.0);
  r.mean_d2(1, 2) = 0.0;
  EXPECT_LT(r.min_own_rho(), 1.0);
}

TEST(SweepSentences, DeterministicAndInRange) {
  const auto a = sweep_sentences(20, 40, 7), b = sweep_sentences(20, 40, 7), c = sweep_sentences(20, 40, 8);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (const auto& s : a) {
    EXPECT_GE(s.size(), 12u);
    EXPECT_LE(s.size(), 20u);
    for (int t : s) {
      EXPECT_GE(t, 0);
      EXPECT_LT(t, 40);
    }
  }
  expect_error(ErrorCode::kInvalidArgument, [] { sweep_sentences(0, 40, 0); });
}

TEST(Reports, SweepCsvIsStable) {
  SweepResult r;
  r.dim = Dim::I;
  r.deltas = {-1, 0, 1};
  r.mean = {3.0, 4.0, 5.0 + 1.0 / 3.0};
  r.std = {0.1, 0.2, 0.3};
  r.n = {2, 2, 2};
  std::ostringstream a, b;
  write_sweep_csv(a, r);
  write_sweep_csv(b, r);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str().find("5.33333333"), std::string::npos);
  EXPECT_DOUBLE_EQ(r.spearman_rho(), 1.0);
}

TEST(References, OneFemaleOneMale) {
  CorpusOptions o;
  o.n_speakers = 20;
  o.utts_per_speaker = 2;
  const OracleGenerator gen;
  const Dataset ds = Dataset::from_built(build_corpus(gen, o));
  const auto refs = pick_reference_utterances(ds);
  ASSERT_EQ(refs.size(), 2u);
  std::set<char> genders;
  for (std::size_t i : refs) {
    EXPECT_EQ(ds.manifest.records[i].split, "test");
    genders.insert(ds.manifest.records[i].gender_tag);
  }
  EXPECT_EQ(genders.size(), 2u);
}

}  // namespace
}  // namespace voximp
