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

#include <set>

#include "test_util.hpp"
#include "voximp/corpus.hpp"

namespace voximp {
namespace {

using testing::expect_error;

const OracleGenerator& generator() {
  static const OracleGenerator gen;
  return gen;
}

TEST(OracleGenerator, BasisIsOrthonormal) {
  const Mat& b = generator().impression_basis();
  ASSERT_EQ(b.rows(), kNumRatedDims);
  ASSERT_EQ(b.cols(), kNumMels);
  const Mat gram = b * b.transpose();
  EXPECT_LT((gram - Mat::Identity(kNumRatedDims, kNumRatedDims)).cwiseAbs().maxCoeff(), 1e-9);
  // Speaker and content subspaces are orthogonal to the impression basis.
  EXPECT_LT((b * generator().speaker_basis().transpose()).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((b * generator().content_table().transpose()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(OracleGenerator, SpeakerDeterminismAndSeedSensitivity) {
  const auto a = generator().make_speaker(0), b = generator().make_speaker(0), c = generator().make_speaker(1);
  EXPECT_EQ(a.spectral_template, b.spectral_template);
  EXPECT_EQ(a.factors, b.factors);
  EXPECT_GT((a.spectral_template - c.spectral_template).norm(), 0.0);
}

TEST(OracleGenerator, FactorRangesAndMeans) {
  std::array<double, kNumDims> mean{};
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto sp = generator().make_speaker(s);
    for (int d = 0; d < kNumRatedDims; ++d) {
      EXPECT_GE(sp.factors.at(d), 1.5);
      EXPECT_LE(sp.factors.at(d), 6.5);
      mean[d] += sp.factors.at(d) / 1000.0;
    }
    EXPECT_GE(sp.factors[Dim::K], -2.0);
    EXPECT_LE(sp.factors[Dim::K], 2.0);
    EXPECT_EQ(sp.gender_tag, sp.factors[Dim::B] >= 4.0 ? 'f' : 'm');
  }
  for (int d = 0; d < kNumRatedDims; ++d) {
    EXPECT_GE(mean[d], 3.7);
    EXPECT_LE(mean[d], 4.3);
  }
}

TEST(OracleGenerator, RenderDeterministicAndConsistent) {
  const auto sp = generator().make_speaker(3);
  const std::vector<int> toks = {1, 5, 9, 2, 30};
  const auto u1 = generator().render_utterance(sp, toks, 0.0, 42);
  const auto u2 = generator().render_utterance(sp, toks, 0.0, 42);
  EXPECT_EQ(u1.mel.frames, u2.mel.frames);
  Index total = 0;
  for (int d : u1.durations) total += d;
  EXPECT_EQ(u1.mel.num_frames(), total);
  EXPECT_DOUBLE_EQ(u1.moras_per_second, 5.0 / (static_cast<double>(total) * 0.01));
  EXPECT_EQ(u1.label, sp.factors);
}

TEST(OracleGenerator, CentredFactorsLeaveTemplatePlusContent) {
  auto sp = generator().make_speaker(7);
  std::array<double, kNumDims> f{};
  f.fill(4.0);
  f[index_of(Dim::K)] = 0.0;
  sp.factors = ImpressionVector(f);
  const std::vector<int> toks = {3, 4};
  const auto u = generator().render_utterance(sp, toks, 0.0, 1);
  Index t = 0;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    for (int k = 0; k < u.durations[i]; ++k, ++t) {
      const Eigen::RowVectorXd expected = sp.spectral_template + generator().content_table().row(toks[i]);
      EXPECT_LT((u.mel.frames.row(t) - expected).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(OracleGenerator, FactorStepAddsBasisOnEveryFrame) {
  const auto sp = generator().make_speaker(11);
  const std::vector<int> toks = {0, 1, 2, 3, 4, 5};
  for (int d = 0; d < kNumRatedDims; ++d) {
    auto bumped = sp;
    bumped.factors.set(dim_at(d), sp.factors.at(d) + 1.0);
    const auto a = generator().render_utterance(sp, toks, 0.0, 5);
    const auto b = generator().render_utterance(bumped, toks, 0.0, 5);
    ASSERT_EQ(a.mel.num_frames(), b.mel.num_frames());
    for (Index t = 0; t < a.mel.num_frames(); ++t) {
      const Eigen::RowVectorXd diff = b.mel.frames.row(t) - a.mel.frames.row(t);
      EXPECT_LT((diff - generator().impression_basis().row(d)).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(OracleGenerator, FasterSpeakersHaveShorterUtterances) {
  auto slow = generator().make_speaker(2), fast = slow;
  slow.factors.set(Dim::K, -2.0);
  fast.factors.set(Dim::K, 2.0);
  const std::vector<int> toks(20, 7);
  EXPECT_GT(generator().render_utterance(slow, toks, 0.0, 1).mel.num_frames(),
            generator().render_utterance(fast, toks, 0.0, 1).mel.num_frames());
}

TEST(OracleGenerator, RenderErrors) {
  const auto sp = generator().make_speaker(0);
  expect_error(ErrorCode::kEmptyContent, [&] { generator().render_utterance(sp, {}, 0.1, 0); });
  expect_error(ErrorCode::kInvalidArgument, [&] { generator().render_utterance(sp, {1}, -0.1, 0); });
  expect_error(ErrorCode::kInvalidArgument, [&] { generator().render_utterance(sp, {99}, 0.1, 0); });
}

TEST(SplitCounts, PartitionAndErrors) {
  EXPECT_EQ(split_counts(10, {0.8, 0.1, 0.1}), (std::array<int, 3>{8, 1, 1}));
  EXPECT_EQ(split_counts(40, {0.8, 0.1, 0.1}), (std::array<int, 3>{32, 4, 4}));
  expect_error(ErrorCode::kInsufficientSpeakers, [] { split_counts(2, {0.8, 0.1, 0.1}); });
  expect_error(ErrorCode::kInsufficientSpeakers, [] { split_counts(4, {0.9, 0.05, 0.05}); });
  expect_error(ErrorCode::kInvalidArgument, [] { split_counts(10, {0.5, 0.1, 0.1}); });
}

CorpusOptions small_options() {
  CorpusOptions o;
  o.n_speakers = 10;
  o.utts_per_speaker = 4;
  return o;
}

TEST(BuildCorpus, DisjointSplitsAndConstantSpeakerLabels) {
  const auto c = build_corpus(generator(), small_options());
  EXPECT_EQ(c.manifest.records.size(), 40u);
  const auto tr = c.manifest.speakers("train"), va = c.manifest.speakers("val"), te = c.manifest.speakers("test");
  EXPECT_EQ(tr.size(), 8u);
  EXPECT_EQ(va.size(), 1u);
  EXPECT_EQ(te.size(), 1u);
  for (const auto& s : te) {
    EXPECT_EQ(tr.count(s), 0u);
    EXPECT_EQ(va.count(s), 0u);
  }
  std::map<std::string, ImpressionVector> first;
  for (std::size_t i = 0; i < c.manifest.records.size(); ++i) {
    const auto& r = c.manifest.records[i];
    auto [it, fresh] = first.emplace(r.speaker_id, r.label);
    for (int d = 0; d < kNumRatedDims; ++d) EXPECT_EQ(r.label.at(d), it->second.at(d));
    Index frames = 0;
    for (int d : r.durations) frames += d;
    EXPECT_EQ(c.mels[i].rows(), frames);
  }
}

TEST(BuildCorpus, DefaultScaleAudit) {
  const auto c = build_corpus(generator(), CorpusOptions{});
  EXPECT_EQ(c.manifest.records.size(), 2000u);
  std::vector<double> k;
  for (std::size_t s = 0; s < c.speakers.size(); ++s) {
    for (const auto& r : c.manifest.records) {
      if (r.speaker_id != c.speakers[s].speaker_id) continue;
      for (int d = 0; d < kNumRatedDims; ++d) EXPECT_EQ(r.label.at(d), c.speakers[s].factors.at(d));
    }
  }
  for (const auto& r : c.manifest.records) k.push_back(r.label[Dim::K]);
  double mean = 0.0;
  for (double v : k) mean += v;
  // K is stored with six decimals.
  EXPECT_NEAR(mean / static_cast<double>(k.size()), 0.0, 5e-7);
}

TEST(BuildCorpus, SeedDeterminism) {
  const auto a = build_corpus(generator(), small_options()), b = build_corpus(generator(), small_options());
  for (std::size_t i = 0; i < a.mels.size(); ++i) EXPECT_EQ(a.mels[i], b.mels[i]);
  auto other = small_options();
  other.seed = 1;
  const auto c = build_corpus(generator(), other);
  EXPECT_NE(a.mels[0].rows() == c.mels[0].rows() ? (a.mels[0] - c.mels[0]).norm() : 1.0, 0.0);
}

TEST(BuildCorpus, SaveAndLoadRoundTrip) {
  testing::TempDir dir("corpus_roundtrip");
  auto c = build_corpus(generator(), small_options());
  save_corpus(dir.path(), c);
  const Dataset ds = Dataset::load(dir.path() / "manifest.jsonl");
  ASSERT_EQ(ds.manifest.records.size(), c.manifest.records.size());
  for (std::size_t i = 0; i < ds.mels.size(); ++i) {
    EXPECT_EQ(ds.mels[i], c.mels[i]);
    const auto& a = ds.manifest.records[i];
    const auto& b = c.manifest.records[i];
    EXPECT_EQ(a.utt_id, b.utt_id);
    EXPECT_EQ(a.split, b.split);
    EXPECT_EQ(a.tokens, b.tokens);
    EXPECT_EQ(a.durations, b.durations);
    EXPECT_EQ(a.gender_tag, b.gender_tag);
    for (int d = 0; d < kNumDims; ++d) EXPECT_NEAR(a.label.at(d), b.label.at(d), 1e-12);
  }
}

TEST(MelIo, SidecarAndErrors) {
  testing::TempDir dir("mel_io");
  MelSpectrogram m;
  m.frames = Mat::Random(7, kNumMels);
  write_mel(dir.path() / "a.f32", m);
  const MelSpectrogram back = read_mel(dir.path() / "a.f32");
  EXPECT_EQ(back.frames.rows(), 7);
  EXPECT_LT((back.frames - m.frames).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_DOUBLE_EQ(back.frame_shift_ms, 10.0);
  expect_error(ErrorCode::kIoError, [&] { read_mel(dir.path() / "missing.f32"); });
}

TEST(VarianceTargets, Proxies) {
  Mat mel = Mat::Zero(5, kNumMels);
  mel.topRows(2).leftCols(20).setConstant(2.0);
  mel.bottomRows(3).setConstant(-1.0);
  const auto vt = variance_targets(mel, {2, 3});
  EXPECT_DOUBLE_EQ(vt.energy[0], 0.5);
  EXPECT_DOUBLE_EQ(vt.pitch[0], 2.0);
  EXPECT_DOUBLE_EQ(vt.energy[1], -1.0);
  EXPECT_DOUBLE_EQ(vt.pitch[1], 0.0);
  expect_error(ErrorCode::kShapeError, [&] { variance_targets(mel, {2, 2}); });
  expect_error(ErrorCode::kShapeError, [&] { variance_targets(mel, {0, 5}); });
}

}  // namespace
}  // namespace voximp
