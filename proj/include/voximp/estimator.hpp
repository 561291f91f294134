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

// Impression estimator: frontend features -> layer weighting -> BiLSTM ->
// attention pooling -> linear head over the ten rated dims. The pooled
// sequence is the BiLSTM output concatenated with its input. The speaking
// rate dim K is computed from the utterance's speech rate, never regressed.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "voximp/corpus.hpp"
#include "voximp/frontend.hpp"
#include "voximp/impression.hpp"
#include "voximp/nn/checkpoint.hpp"
#include "voximp/nn/layers.hpp"
#include "voximp/nn/optim.hpp"
#include "voximp/speaker_encoder.hpp"

namespace voximp {

inline const std::string kNsEstimator = "estimator";

/// Root mean squared error over every dim of every item.
inline double rmse(std::span<const ImpressionVector> pred, std::span<const ImpressionVector> truth) {
  if (pred.size() != truth.size() || pred.empty()) fail(ErrorCode::kShapeError, "rmse: lengths differ or are zero");
  double sq = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (int d = 0; d < kNumDims; ++d) sq += std::pow(pred[i].at(d) - truth[i].at(d), 2);
  }
  return std::sqrt(sq / static_cast<double>(pred.size() * kNumDims));
}

/// Same, restricted to the rated dims A..J.
inline double rmse_rated(std::span<const ImpressionVector> pred, std::span<const ImpressionVector> truth) {
  if (pred.size() != truth.size() || pred.empty()) fail(ErrorCode::kShapeError, "rmse: lengths differ or are zero");
  double sq = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (int d = 0; d < kNumRatedDims; ++d) sq += std::pow(pred[i].at(d) - truth[i].at(d), 2);
  }
  return std::sqrt(sq / static_cast<double>(pred.size() * kNumRatedDims));
}

inline double moras_per_second(std::size_t tokens, Index frames) {
  if (frames < 1) fail(ErrorCode::kInvalidArgument, "speech rate needs at least one frame");
  return static_cast<double>(tokens) / (static_cast<double>(frames) * kFrameShiftMs / 1000.0);
}

struct EstimatorOptions {
  FrontendOptions frontend;
  int lstm_hidden = 32;
  int attn_dim = 32;
  int epochs = 30;
  int batch_size = 16;
  int crop_frames = 48;
  double lr = 1e-2;
  double mixup = 1.0;  // probability of replacing an item by a convex mix of two items
  std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const EstimatorOptions& o) {
  j = {{"frontend", o.frontend},     {"lstm_hidden", o.lstm_hidden}, {"attn_dim", o.attn_dim},
       {"epochs", o.epochs},         {"batch_size", o.batch_size},   {"crop_frames", o.crop_frames},
       {"lr", o.lr},                 {"mixup", o.mixup},             {"seed", o.seed}};
}
inline void from_json(const nlohmann::json& j, EstimatorOptions& o) {
  o.frontend = j.at("frontend").get<FrontendOptions>();
  o.lstm_hidden = j.at("lstm_hidden").get<int>();
  o.attn_dim = j.at("attn_dim").get<int>();
  o.epochs = j.at("epochs").get<int>();
  o.batch_size = j.at("batch_size").get<int>();
  o.crop_frames = j.at("crop_frames").get<int>();
  o.lr = j.at("lr").get<double>();
  o.mixup = j.at("mixup").get<double>();
  o.seed = j.at("seed").get<std::uint64_t>();
}

class ImpressionEstimator {
 public:
  explicit ImpressionEstimator(const EstimatorOptions& opt) : opt_(opt), frontend_(opt.frontend) {
    Rng rng(Rng::derive(opt.seed, 0xe571ULL));
    logits_ = &store_.create(kNsEstimator + "/layer_logits", 1, opt.frontend.layers);
    lstm_ = nn::BiLstm(store_, kNsEstimator + "/lstm", opt.frontend.channels, opt.lstm_hidden, rng);
    const int pooled = 2 * opt.lstm_hidden + opt.frontend.channels;
    scorer_ = AttentionScorer(store_, kNsEstimator + "/attn", pooled, opt.attn_dim, rng);
    head_ = nn::Linear(store_, kNsEstimator + "/head", pooled, kNumRatedDims, rng);
  }
  ImpressionEstimator(const ImpressionEstimator&) = delete;
  ImpressionEstimator& operator=(const ImpressionEstimator&) = delete;

  static std::unique_ptr<ImpressionEstimator> load(const std::filesystem::path& path) {
    const nn::Checkpoint ck = nn::read_checkpoint(path);
    if (!ck.meta.contains("kind") || ck.meta.at("kind") != "estimator") {
      fail(ErrorCode::kIoError, path.string() + " is not an estimator checkpoint");
    }
    auto m = std::make_unique<ImpressionEstimator>(ck.meta.at("options").get<EstimatorOptions>());
    nn::load_into(m->store_, ck);
    m->rate_mean_ = ck.meta.at("rate_mean").get<double>();
    m->rate_std_ = ck.meta.at("rate_std").get<double>();
    m->trained_ = true;
    return m;
  }

  void save(const std::filesystem::path& path) const {
    nn::save_checkpoint(path, store_,
                        {{"kind", "estimator"}, {"options", opt_}, {"rate_mean", rate_mean_}, {"rate_std", rate_std_}});
  }

  /// Centred A..J predictions (B x 10) for equal-length stacks.
  Var forward(ag::Graph& g, std::span<const SSLFeatureStack* const> batch) const {
    const Index frames = batch.front()->frames;
    const Index b_count = static_cast<Index>(batch.size());
    Var logits = nn::bind(g, *logits_);
    std::vector<Var> per;
    for (const SSLFeatureStack* s : batch) {
      if (s->frames != frames) fail(ErrorCode::kShapeError, "estimator batch lengths differ");
      per.push_back(layer_weighted_sum(g, *s, logits));
    }
    Var x = per.front();
    if (b_count > 1) {
      std::vector<int> tm(static_cast<std::size_t>(frames * b_count));
      for (Index t = 0; t < frames; ++t) {
        for (Index b = 0; b < b_count; ++b) tm[static_cast<std::size_t>(t * b_count + b)] = static_cast<int>(b * frames + t);
      }
      x = ag::gather_rows(ag::concat_rows(per), std::move(tm));
    }
    Var hs = ag::concat_cols({lstm_(g, x, b_count), x});
    const std::vector<bool> mask(static_cast<std::size_t>(frames), true);
    std::vector<Var> pooled;
    for (Index b = 0; b < b_count; ++b) {
      Var seq = hs;
      if (b_count > 1) {
        std::vector<int> rows(static_cast<std::size_t>(frames));
        for (Index t = 0; t < frames; ++t) rows[static_cast<std::size_t>(t)] = static_cast<int>(t * b_count + b);
        seq = ag::gather_rows(hs, std::move(rows));
      }
      pooled.push_back(attention_pool(g, scorer_, seq, mask).pooled);
    }
    return head_(g, b_count > 1 ? ag::concat_rows(pooled) : pooled.front());
  }

  /// Estimated vector. K is the standardised speech rate when the rate is
  /// given, and 0 otherwise.
  ImpressionVector estimate(const SSLFeatureStack& stack, std::optional<double> rate = std::nullopt) const {
    if (!trained_) fail(ErrorCode::kNotInitialized, "estimator has not been trained or loaded");
    ag::Graph g(false);
    const SSLFeatureStack* one[] = {&stack};
    const Eigen::RowVectorXd y = forward(g, one).value().row(0);
    std::array<double, kNumDims> s{};
    for (int d = 0; d < kNumRatedDims; ++d) s[d] = y(d) + 4.0;
    s[index_of(Dim::K)] = rate ? standardize_rate(*rate) : 0.0;
    return ImpressionVector(s);
  }

  /// Estimate for a mel with a known token count.
  ImpressionVector estimate_mel(const Mat& mel, std::size_t tokens) const {
    return estimate(frontend_.extract(mel), moras_per_second(tokens, mel.rows()));
  }

  double standardize_rate(double rate) const { return (rate - rate_mean_) / rate_std_; }
  void set_rate_stats(double mean, double stddev) {
    if (!(stddev > 0.0)) fail(ErrorCode::kZeroVariance, "speech-rate std must be positive");
    rate_mean_ = mean;
    rate_std_ = stddev;
  }
  double rate_mean() const { return rate_mean_; }
  double rate_std() const { return rate_std_; }

  void mark_trained() { trained_ = true; }
  bool trained() const { return trained_; }
  const EstimatorOptions& options() const { return opt_; }
  const FrontendStub& frontend() const { return frontend_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }

 private:
  EstimatorOptions opt_;
  FrontendStub frontend_;
  nn::ParamStore store_;
  nn::Parameter* logits_ = nullptr;
  nn::BiLstm lstm_;
  AttentionScorer scorer_;
  nn::Linear head_;
  double rate_mean_ = 0.0;
  double rate_std_ = 1.0;
  bool trained_ = false;
};

struct EpochLog {
  int epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
};

struct EstimatorReport {
  std::vector<EpochLog> epochs;
  int selected_epoch = 0;
  double selected_val_mse = 0.0;
  double heldout_rmse = 0.0;  // rated dims, test split
  std::size_t heldout_items = 0;
};

inline void write_estimator_report_csv(std::ostream& out, const EstimatorReport& r) {
  out << "epoch,train_mse,val_mse,selected\n";
  for (const auto& e : r.epochs) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%d\n", e.epoch, e.train_mse, e.val_mse,
                  e.epoch == r.selected_epoch ? 1 : 0);
    out << buf;
  }
}

/// Mean and population std of every record's speech rate.
inline std::pair<double, double> speech_rate_stats(const Manifest& m) {
  if (m.records.size() < 2) fail(ErrorCode::kInsufficientData, "need at least two utterances for rate statistics");
  double mean = 0.0;
  for (const auto& r : m.records) mean += r.moras_per_second;
  mean /= static_cast<double>(m.records.size());
  double var = 0.0;
  for (const auto& r : m.records) var += std::pow(r.moras_per_second - mean, 2);
  const double sd = std::sqrt(var / static_cast<double>(m.records.size()));
  if (!(sd > 0.0)) fail(ErrorCode::kZeroVariance, "speech rates have zero variance");
  return {mean, sd};
}

inline void check_disjoint_speakers(const Manifest& m, const std::string& a, const std::string& b) {
  const auto sa = m.speakers(a), sb = m.speakers(b);
  for (const auto& s : sa) {
    if (sb.count(s) != 0) fail(ErrorCode::kSplitLeakage, "speaker " + s + " appears in both " + a + " and " + b);
  }
}

namespace detail {

inline Mat centred_rated(const ImpressionVector& v) {
  Mat y(1, kNumRatedDims);
  for (int d = 0; d < kNumRatedDims; ++d) y(0, d) = v.at(d) - 4.0;
  return y;
}

inline double mean_squared_error_rated(const ImpressionEstimator& est, const std::vector<SSLFeatureStack>& stacks,
                                       const std::vector<ImpressionVector>& labels) {
  double sq = 0.0;
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    const ImpressionVector p = est.estimate(stacks[i]);
    for (int d = 0; d < kNumRatedDims; ++d) sq += std::pow(p.at(d) - labels[i].at(d), 2);
  }
  return sq / static_cast<double>(stacks.size() * kNumRatedDims);
}

}  // namespace detail

/// Trains on the "train" split, selects the epoch with the lowest
/// validation MSE and reports held-out RMSE on the "test" split.
inline EstimatorReport train_estimator(ImpressionEstimator& est, const Dataset& data,
                                       const std::function<void(const EpochLog&)>& on_epoch = {}) {
  const EstimatorOptions& opt = est.options();
  const auto train_idx = data.indices("train"), val_idx = data.indices("val"), test_idx = data.indices("test");
  if (train_idx.empty() || val_idx.empty()) fail(ErrorCode::kInsufficientData, "estimator needs train and val data");
  check_disjoint_speakers(data.manifest, "train", "val");
  check_disjoint_speakers(data.manifest, "train", "test");
  const auto [rate_mean, rate_std] = speech_rate_stats(data.manifest);
  est.set_rate_stats(rate_mean, rate_std);
  est.mark_trained();

  std::vector<SSLFeatureStack> train_stacks, val_stacks;
  std::vector<ImpressionVector> train_labels, val_labels;
  for (std::size_t i : train_idx) {
    train_stacks.push_back(est.frontend().extract(data.mels[i]));
    train_labels.push_back(data.manifest.records[i].label);
  }
  for (std::size_t i : val_idx) {
    val_stacks.push_back(est.frontend().extract(data.mels[i]));
    val_labels.push_back(data.manifest.records[i].label);
  }

  nn::ParamStore& store = est.params();
  store.set_trainable({kNsEstimator});
  nn::Adam adam(store, {0.9, 0.999, 1e-8, 5.0});
  std::map<std::string, Mat> best;
  EstimatorReport report;
  report.selected_val_mse = std::numeric_limits<double>::infinity();
  Rng rng(Rng::derive(opt.seed, 0xe5e7ULL));
  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::vector<std::size_t> order(train_stacks.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::shuffle(order.begin(), order.end(), rng.engine());
    double train_sq = 0.0;
    std::size_t train_n = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
      std::vector<std::size_t> partner;
      for (std::size_t k = start; k < end; ++k) {
        partner.push_back(rng.bernoulli(opt.mixup)
                              ? static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(order.size()) - 1))
                              : order[k]);
      }
      Index len = opt.crop_frames;
      for (std::size_t k = start; k < end; ++k) len = std::min(len, train_stacks[order[k]].frames);
      for (std::size_t p : partner) len = std::min(len, train_stacks[p].frames);
      std::vector<SSLFeatureStack> crops;
      Mat target(static_cast<Index>(end - start), kNumRatedDims);
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = train_stacks[order[k]];
        crops.push_back(crop_stack(s, rng.uniform_int(0, static_cast<int>(s.frames - len)), len));
        target.row(static_cast<Index>(k - start)) = detail::centred_rated(train_labels[order[k]]);
        if (const std::size_t other = partner[k - start]; other != order[k]) {
          const auto& o = train_stacks[other];
          const double lam = rng.uniform(0.0, 1.0);
          const SSLFeatureStack oc = crop_stack(o, rng.uniform_int(0, static_cast<int>(o.frames - len)), len);
          crops.back().data = lam * crops.back().data + (1.0 - lam) * oc.data;
          target.row(static_cast<Index>(k - start)) =
              lam * target.row(static_cast<Index>(k - start)) + (1.0 - lam) * detail::centred_rated(train_labels[other]);
        }
      }
      std::vector<const SSLFeatureStack*> ptrs;
      for (const auto& c : crops) ptrs.push_back(&c);
      ag::Graph g;
      Var loss = ag::mse(est.forward(g, ptrs), g.constant(target));
      train_sq += loss.value()(0, 0) * static_cast<double>(end - start);
      train_n += end - start;
      g.backward(loss);
      adam.step(opt.lr);
      store.zero_grad();
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_mse = train_sq / static_cast<double>(train_n);
    log.val_mse = detail::mean_squared_error_rated(est, val_stacks, val_labels);
    report.epochs.push_back(log);
    if (log.val_mse < report.selected_val_mse) {
      report.selected_val_mse = log.val_mse;
      report.selected_epoch = epoch;
      best.clear();
      for (const auto& [name, p] : store.all()) best[name] = p.value;
    }
    if (on_epoch) on_epoch(log);
  }
  for (auto& [name, p] : store.all()) p.value = best.at(name);
  store.set_trainable({});

  if (!test_idx.empty()) {
    std::vector<ImpressionVector> pred, truth;
    for (std::size_t i : test_idx) {
      const auto& rec = data.manifest.records[i];
      pred.push_back(est.estimate(est.frontend().extract(data.mels[i]), rec.moras_per_second));
      truth.push_back(rec.label);
    }
    report.heldout_rmse = rmse_rated(pred, truth);
    report.heldout_items = pred.size();
  }
  return report;
}

/// Labels every record: A..J from the estimator, K from the speech rates
/// standardised over the whole manifest.
inline Manifest auto_label(const ImpressionEstimator& est, const Dataset& data) {
  Manifest out = data.manifest;
  if (out.records.empty()) return out;
  std::vector<double> rates;
  for (const auto& r : out.records) rates.push_back(r.moras_per_second);
  std::vector<double> z(rates.size(), 0.0);
  if (rates.size() >= 2) z = standardize_speech_rates(rates);
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    ImpressionVector v = est.estimate(est.frontend().extract(data.mels[i]));
    v.set(Dim::K, z[i]);
    out.records[i].label = v;
  }
  return out;
}

}  // namespace voximp
