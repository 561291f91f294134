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

#pragma once

// Objective evaluation: impression sweeps scored by the estimator and
// speaker similarity measured with an independently trained embedder.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "voximp/corpus.hpp"
#include "voximp/estimator.hpp"
#include "voximp/plot.hpp"
#include "voximp/tts.hpp"

namespace voximp {

// ---- statistics ------------------------------------------------------------------

/// Ranks starting at 1, ties sharing their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> rank(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) fail(ErrorCode::kShapeError, "pearson: need two equal-length series");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n, my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

/// Spearman rank correlation; 0 when either series is constant.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(average_ranks(x), average_ranks(y));
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

inline MeanStd mean_std(const std::vector<double>& v) {
  if (v.empty()) fail(ErrorCode::kInsufficientData, "mean of empty sample");
  MeanStd m;
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(v.size()));
  return m;
}

inline double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  if (a.size() != b.size()) fail(ErrorCode::kShapeError, "cosine: length mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

inline double median(const std::vector<double>& v) { return plot::quantile(v, 0.5); }

// ---- sweep setup -----------------------------------------------------------------

inline std::vector<double> default_deltas() { return {-3, -2, -1, 0, 1, 2, 3}; }

/// Seeded token sequences shared by every cell of a sweep.
inline std::vector<std::vector<int>> sweep_sentences(int n, int vocab, std::uint64_t seed, int min_len = 12,
                                                     int max_len = 20) {
  if (n < 1) fail(ErrorCode::kInvalidArgument, "need at least one sentence");
  Rng rng(Rng::derive(seed, 0x5e47e4ceULL));
  std::vector<std::vector<int>> out;
  for (int i = 0; i < n; ++i) {
    std::vector<int> toks(static_cast<std::size_t>(rng.uniform_int(min_len, max_len)));
    for (int& t : toks) t = rng.uniform_int(0, vocab - 1);
    out.push_back(std::move(toks));
  }
  return out;
}

/// A reference utterance with its latent and the estimator's reading of it,
/// which serves as the unmodulated impression vector.
struct Reference {
  std::size_t index = 0;  // dataset record
  std::string speaker_id;
  char gender_tag = 'f';
  Mat mel;
  Eigen::RowVectorXd latent;
  ImpressionVector base;
};

inline Reference make_reference(const TtsModel& model, const ImpressionEstimator& est, const Dataset& data,
                                std::size_t index) {
  const auto& rec = data.manifest.records.at(index);
  Reference r;
  r.index = index;
  r.speaker_id = rec.speaker_id;
  r.gender_tag = rec.gender_tag;
  r.mel = data.mels.at(index);
  r.latent = model.latent(r.mel);
  r.base = est.estimate_mel(r.mel, rec.tokens.size());
  return r;
}

/// First utterance of one female and one male held-out speaker (by speaker
/// id order), or of the first two held-out speakers when a gender is absent.
inline std::vector<std::size_t> pick_reference_utterances(const Dataset& data, const std::string& split = "test",
                                                          std::size_t count = 2) {
  const auto groups = data.by_speaker(split);
  std::vector<std::size_t> out;
  for (char gender : {'f', 'm'}) {
    for (const auto& [spk, idx] : groups) {
      if (data.manifest.records[idx.front()].gender_tag == gender) {
        out.push_back(idx.front());
        break;
      }
    }
  }
  for (const auto& [spk, idx] : groups) {
    if (out.size() >= count) break;
    if (std::find(out.begin(), out.end(), idx.front()) == out.end()) out.push_back(idx.front());
  }
  if (out.size() > count) out.resize(count);
  if (out.size() < count) fail(ErrorCode::kInsufficientSpeakers, "not enough speakers in split '" + split + "'");
  return out;
}

/// Synthesises every sentence with `v` and returns the estimator's readings.
inline std::vector<ImpressionVector> synthesize_and_estimate(const TtsModel& model, const ImpressionEstimator& est,
                                                             const Reference& ref, const ImpressionVector& v,
                                                             const std::vector<std::vector<int>>& sentences) {
  std::vector<ImpressionVector> out;
  out.reserve(sentences.size());
  for (const auto& toks : sentences) {
    const SynthesisOutput s = model.synthesize_from_latent(toks, ref.latent, v);
    out.push_back(est.estimate_mel(s.mel, toks.size()));
  }
  return out;
}

// ---- sweeps ----------------------------------------------------------------------

struct SweepResult {
  Dim dim = Dim::A;
  std::vector<double> deltas;
  std::vector<double> mean;
  std::vector<double> std;
  std::vector<int> n;
  std::vector<std::vector<double>> scores;  // per delta, per sentence

  double spearman_rho() const { return spearman(deltas, mean); }
};

inline SweepResult sweep_single(const TtsModel& model, const ImpressionEstimator& est, const Reference& ref,
                                const ImpressionVector& base_v, Dim dim, const std::vector<double>& deltas,
                                const std::vector<std::vector<int>>& sentences) {
  if (deltas.empty()) fail(ErrorCode::kInvalidArgument, "empty delta grid");
  SweepResult r;
  r.dim = dim;
  r.deltas = deltas;
  for (double d : deltas) {
    std::vector<double> s;
    for (const auto& e : synthesize_and_estimate(model, est, ref, modulate(base_v, {{dim, d}}), sentences)) {
      s.push_back(e[dim]);
    }
    const MeanStd ms = mean_std(s);
    r.mean.push_back(ms.mean);
    r.std.push_back(ms.std);
    r.n.push_back(static_cast<int>(s.size()));
    r.scores.push_back(std::move(s));
  }
  return r;
}

struct PairSweepResult {
  Dim d1 = Dim::E, d2 = Dim::H;
  std::vector<double> deltas;
  Mat mean_d1;  // rows: delta of d1, cols: delta of d2
  Mat mean_d2;
  int n = 0;

  /// Lowest Spearman rho of d1's score against delta1 over every column,
  /// and of d2's score against delta2 over every row.
  double min_own_rho() const {
    double lo = 1.0;
    for (Index c = 0; c < mean_d1.cols(); ++c) {
      std::vector<double> y;
      for (Index r = 0; r < mean_d1.rows(); ++r) y.push_back(mean_d1(r, c));
      lo = std::min(lo, spearman(deltas, y));
    }
    for (Index r = 0; r < mean_d2.rows(); ++r) {
      std::vector<double> y;
      for (Index c = 0; c < mean_d2.cols(); ++c) y.push_back(mean_d2(r, c));
      lo = std::min(lo, spearman(deltas, y));
    }
    return lo;
  }
};

inline PairSweepResult sweep_pair(const TtsModel& model, const ImpressionEstimator& est, const Reference& ref,
                                  const ImpressionVector& base_v, Dim d1, Dim d2, const std::vector<double>& deltas,
                                  const std::vector<std::vector<int>>& sentences) {
  if (d1 == d2) fail(ErrorCode::kInvalidArgument, "sweep_pair needs two different dims");
  if (deltas.empty()) fail(ErrorCode::kInvalidArgument, "empty delta grid");
  PairSweepResult r;
  r.d1 = d1;
  r.d2 = d2;
  r.deltas = deltas;
  r.n = static_cast<int>(sentences.size());
  const Index k = static_cast<Index>(deltas.size());
  r.mean_d1.resize(k, k);
  r.mean_d2.resize(k, k);
  for (Index i = 0; i < k; ++i) {
    for (Index j = 0; j < k; ++j) {
      const auto v = modulate(base_v, {{d1, deltas[static_cast<std::size_t>(i)]}, {d2, deltas[static_cast<std::size_t>(j)]}});
      std::vector<double> s1, s2;
      for (const auto& e : synthesize_and_estimate(model, est, ref, v, sentences)) {
        s1.push_back(e[d1]);
        s2.push_back(e[d2]);
      }
      r.mean_d1(i, j) = mean_std(s1).mean;
      r.mean_d2(i, j) = mean_std(s2).mean;
    }
  }
  return r;
}

// ---- speaker embedder --------------------------------------------------------------

struct EmbedderOptions {
  int n_speakers = 40;
  int utts_per_speaker = 12;
  int hidden = 128;
  int dim = 64;
  double scale = 10.0;   // cosine-softmax logit scale
  double margin = 0.2;   // additive cosine margin
  int steps = 400;
  double lr = 1e-3;
  std::uint64_t seed = 0xe3bedULL;
  FrontendOptions frontend;
};

/// Utterance-to-vector map for similarity scoring. Frame-averaged frontend
/// features go through a two-layer network trained with an additive-margin
/// cosine softmax over its own synthetic speakers, which never overlap the
/// corpus the TTS model is trained on.
class SpeakerEmbedder {
 public:
  explicit SpeakerEmbedder(const EmbedderOptions& opt = {}) : opt_(opt), frontend_(opt.frontend) {
    Rng rng(Rng::derive(opt.seed, 0x1a7eULL));
    const Index in = static_cast<Index>(opt.frontend.layers) * opt.frontend.channels;
    l1_ = nn::Linear(store_, "embedder/l1", in, opt.hidden, rng);
    l2_ = nn::Linear(store_, "embedder/l2", opt.hidden, opt.dim, rng);
    classes_ = &store_.create("embedder/classes", opt.n_speakers, opt.dim);
    nn::init_normal(*classes_, 1.0, rng);
    mu_ = Eigen::RowVectorXd::Zero(in);
    sd_ = Eigen::RowVectorXd::Ones(in);
  }
  SpeakerEmbedder(const SpeakerEmbedder&) = delete;
  SpeakerEmbedder& operator=(const SpeakerEmbedder&) = delete;

  /// Per-layer frame means of the frontend stack, concatenated.
  Eigen::RowVectorXd pooled_features(const Mat& mel) const {
    const SSLFeatureStack s = frontend_.extract(mel);
    Eigen::RowVectorXd f(s.layers * s.channels);
    for (Index l = 0; l < s.layers; ++l) f.segment(l * s.channels, s.channels) = s.layer(l).colwise().mean();
    return f;
  }

  /// Speaker corpus used for training; seeded independently of any TTS corpus.
  BuiltCorpus training_corpus(const OracleGenerator& gen) const {
    CorpusOptions co;
    co.n_speakers = opt_.n_speakers;
    co.utts_per_speaker = opt_.utts_per_speaker;
    co.split_ratios = {1.0, 0.0, 0.0};
    co.seed = Rng::derive(opt_.seed, 0x5ea4e45ULL);
    return build_corpus(gen, co);
  }

  /// Returns the final training loss.
  double train(const OracleGenerator& gen) {
    const BuiltCorpus corpus = training_corpus(gen);
    std::map<std::string, int> cls;
    for (const auto& r : corpus.manifest.records) cls.emplace(r.speaker_id, static_cast<int>(cls.size()));
    const Index n = static_cast<Index>(corpus.mels.size());
    Mat feats(n, mu_.size());
    Mat onehot = Mat::Zero(n, opt_.n_speakers);
    for (Index i = 0; i < n; ++i) {
      feats.row(i) = pooled_features(corpus.mels[static_cast<std::size_t>(i)]);
      onehot(i, cls.at(corpus.manifest.records[static_cast<std::size_t>(i)].speaker_id)) = 1.0;
    }
    mu_ = feats.colwise().mean();
    sd_ = ((feats.rowwise() - mu_).array().square().colwise().mean()).sqrt().max(1e-8).matrix();
    const Mat x = (feats.rowwise() - mu_).array().rowwise() / sd_.array();

    store_.set_trainable({"embedder"});
    nn::Adam adam(store_, {0.9, 0.999, 1e-8, 0.0});
    double loss_value = 0.0;
    for (int step = 0; step < opt_.steps; ++step) {
      ag::Graph g;
      Var z = embed_graph(g, g.constant(x));
      Var c = normalize_rows(g, nn::bind(g, *classes_));
      Var cos = ag::matmul_nt(z, c);
      Var logits = ag::scale(ag::sub(cos, g.constant(opt_.margin * onehot)), opt_.scale);
      Var p = ag::softmax_rows(logits);
      Var loss = ag::scale(ag::sum_all(ag::mul(ag::log(ag::add_scalar(p, 1e-12)), g.constant(onehot))),
                           -1.0 / static_cast<double>(n));
      loss_value = loss.value()(0, 0);
      g.backward(loss);
      adam.step(opt_.lr);
      store_.zero_grad();
    }
    store_.set_trainable({});
    trained_ = true;
    return loss_value;
  }

  /// Unit-norm embedding of a mel spectrogram.
  Eigen::RowVectorXd embed(const Mat& mel) const {
    if (!trained_) fail(ErrorCode::kNotInitialized, "speaker embedder has not been trained");
    const Eigen::RowVectorXd f = ((pooled_features(mel) - mu_).array() / sd_.array()).matrix();
    ag::Graph g(false);
    return embed_graph(g, g.constant(Mat(f))).value().row(0);
  }

  const EmbedderOptions& options() const { return opt_; }

 private:
  static Var normalize_rows(ag::Graph& g, Var x) {
    Var sq = ag::matmul(ag::square(x), g.constant(Mat::Ones(x.cols(), 1)));
    Var inv = ag::exp(ag::scale(ag::log(ag::add_scalar(sq, 1e-12)), -0.5));
    return ag::mul(x, ag::matmul(inv, g.constant(Mat::Ones(1, x.cols()))));
  }

  Var embed_graph(ag::Graph& g, Var x) const { return normalize_rows(g, l2_(g, ag::relu(l1_(g, x)))); }

  EmbedderOptions opt_;
  FrontendStub frontend_;
  nn::ParamStore store_;
  nn::Linear l1_, l2_;
  nn::Parameter* classes_ = nullptr;
  Eigen::RowVectorXd mu_, sd_;
  bool trained_ = false;
};

// ---- speaker similarity ------------------------------------------------------------

struct SimilarityReport {
  std::string speaker_id;
  std::vector<int> levels;                    // |delta|
  std::vector<std::vector<double>> modulated;  // cosines per level
  std::vector<double> same_speaker;            // other recordings of the reference speaker
  std::vector<double> different_speaker;       // recordings of other same-gender speakers

  double median_at(int level) const {
    for (std::size_t i = 0; i < levels.size(); ++i) {
      if (levels[i] == level) return median(modulated[i]);
    }
    fail(ErrorCode::kInvalidArgument, "no similarity level " + std::to_string(level));
  }
  double different_speaker_p95() const { return plot::quantile(different_speaker, 0.95); }
};

/// Cosine similarity to the reference for outputs modulated on every dim by
/// each signed level, plus recorded same- and different-speaker baselines.
inline SimilarityReport speaker_similarity(const TtsModel& model, const SpeakerEmbedder& embedder,
                                           const Reference& ref, const Dataset& recordings,
                                           const std::vector<std::vector<int>>& sentences,
                                           const std::vector<int>& levels = {0, 1, 2, 3}) {
  SimilarityReport rep;
  rep.speaker_id = ref.speaker_id;
  rep.levels = levels;
  const Eigen::RowVectorXd ref_emb = embedder.embed(ref.mel);
  for (int level : levels) {
    if (level < 0) fail(ErrorCode::kInvalidArgument, "similarity levels are magnitudes");
    std::vector<double> cos;
    std::vector<ImpressionVector> vs;
    if (level == 0) {
      vs.push_back(ref.base);
    } else {
      for (int d = 0; d < kNumDims; ++d) {
        for (double sign : {-1.0, 1.0}) vs.push_back(modulate(ref.base, {{dim_at(d), sign * level}}));
      }
    }
    for (const auto& v : vs) {
      for (const auto& toks : sentences) {
        cos.push_back(cosine(embedder.embed(model.synthesize_from_latent(toks, ref.latent, v).mel), ref_emb));
      }
    }
    rep.modulated.push_back(std::move(cos));
  }
  for (std::size_t i = 0; i < recordings.manifest.records.size(); ++i) {
    if (i == ref.index) continue;
    const auto& rec = recordings.manifest.records[i];
    if (rec.speaker_id == ref.speaker_id) {
      rep.same_speaker.push_back(cosine(embedder.embed(recordings.mels[i]), ref_emb));
    } else if (rec.gender_tag == ref.gender_tag) {
      rep.different_speaker.push_back(cosine(embedder.embed(recordings.mels[i]), ref_emb));
    }
  }
  if (rep.different_speaker.empty()) fail(ErrorCode::kInsufficientSpeakers, "no same-gender speakers to compare");
  return rep;
}

// ---- reports -----------------------------------------------------------------------

inline std::string fmt9(double v) { return format_metric(v); }

inline std::ofstream open_report(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
  return out;
}

inline void write_sweep_csv(std::ostream& out, const SweepResult& r) {
  out << "delta,mean,std,n\n";
  for (std::size_t i = 0; i < r.deltas.size(); ++i) {
    out << fmt9(r.deltas[i]) << ',' << fmt9(r.mean[i]) << ',' << fmt9(r.std[i]) << ',' << r.n[i] << '\n';
  }
}

inline void write_pair_csv(std::ostream& out, const PairSweepResult& r) {
  const std::string a = label_string(r.d1), b = label_string(r.d2);
  out << "delta_" << a << ",delta_" << b << ",mean_" << a << ",mean_" << b << ",n\n";
  for (Index i = 0; i < r.mean_d1.rows(); ++i) {
    for (Index j = 0; j < r.mean_d1.cols(); ++j) {
      out << fmt9(r.deltas[static_cast<std::size_t>(i)]) << ',' << fmt9(r.deltas[static_cast<std::size_t>(j)]) << ','
          << fmt9(r.mean_d1(i, j)) << ',' << fmt9(r.mean_d2(i, j)) << ',' << r.n << '\n';
    }
  }
}

inline void write_similarity_csv(std::ostream& out, const SimilarityReport& r) {
  out << "group,level,cosine\n";
  for (std::size_t i = 0; i < r.levels.size(); ++i) {
    for (double c : r.modulated[i]) out << "self," << r.levels[i] << ',' << fmt9(c) << '\n';
  }
  for (double c : r.same_speaker) out << "self_rec,," << fmt9(c) << '\n';
  for (double c : r.different_speaker) out << "others_rec,," << fmt9(c) << '\n';
}

/// Writes sweep_<dim>.csv and sweep_<dim>.png; returns the CSV path.
inline std::filesystem::path emit_report(const SweepResult& r, const std::filesystem::path& out_dir) {
  const std::string stem = "sweep_" + label_string(r.dim);
  const auto csv = out_dir / (stem + ".csv");
  auto out = open_report(csv);
  write_sweep_csv(out, r);
  plot::line_plot(out_dir / (stem + ".png"), r.deltas, r.mean, r.std);
  return csv;
}

/// Writes sweep2d_<d1><d2>.csv plus one heatmap per dimension.
inline std::filesystem::path emit_report(const PairSweepResult& r, const std::filesystem::path& out_dir) {
  const std::string stem = "sweep2d_" + label_string(r.d1) + label_string(r.d2);
  const auto csv = out_dir / (stem + ".csv");
  auto out = open_report(csv);
  write_pair_csv(out, r);
  plot::heatmap(out_dir / (stem + "_" + label_string(r.d1) + ".png"), r.mean_d1);
  plot::heatmap(out_dir / (stem + "_" + label_string(r.d2) + ".png"), r.mean_d2);
  return csv;
}

/// Writes similarity_<speaker>.csv and a box plot with the same-speaker
/// mean and different-speaker 95th percentile as reference lines.
inline std::filesystem::path emit_report(const SimilarityReport& r, const std::filesystem::path& out_dir) {
  const std::string stem = "similarity_" + r.speaker_id;
  const auto csv = out_dir / (stem + ".csv");
  auto out = open_report(csv);
  write_similarity_csv(out, r);
  std::vector<std::vector<double>> groups = r.modulated;
  groups.push_back(r.same_speaker);
  groups.push_back(r.different_speaker);
  std::vector<double> lines = {r.different_speaker_p95()};
  if (!r.same_speaker.empty()) lines.push_back(mean_std(r.same_speaker).mean);
  plot::box_plot(out_dir / (stem + ".png"), groups, lines);
  return csv;
}

}  // namespace voximp
