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

// Non-autoregressive acoustic model in the FastSpeech2 mould: a Transformer
// encoder over linguistic vectors, a variance adaptor (duration, pitch and
// energy predictors plus a length regulator) and a Transformer decoder that
// emits 80-bin log-mel frames.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "voximp/ag/graph.hpp"
#include "voximp/corpus.hpp"
#include "voximp/nn/layers.hpp"
#include "voximp/nn/params.hpp"
#include "voximp/rng.hpp"

namespace voximp {

using ag::Var;

struct BackboneOptions {
  int vocab_size = 40;
  int ling_dim = 32;
  std::uint64_t ling_seed = 0x11a9e5ULL;
  int hidden = 128;
  int heads = 2;
  int ffn_dim = 512;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int speaker_dim = 384;
  bool output_norm = true;  // LayerNorm between the last decoder block and the mel head
  bool speaker_skip = true;  // linear map of the speaker row added to every output frame
};

inline void to_json(nlohmann::json& j, const BackboneOptions& o) {
  j = {{"vocab_size", o.vocab_size}, {"ling_dim", o.ling_dim},         {"ling_seed", o.ling_seed},
       {"hidden", o.hidden},         {"heads", o.heads},               {"ffn_dim", o.ffn_dim},
       {"encoder_layers", o.encoder_layers}, {"decoder_layers", o.decoder_layers},
       {"speaker_dim", o.speaker_dim}, {"output_norm", o.output_norm},
       {"speaker_skip", o.speaker_skip}};
}
inline void from_json(const nlohmann::json& j, BackboneOptions& o) {
  o.vocab_size = j.at("vocab_size").get<int>();
  o.ling_dim = j.at("ling_dim").get<int>();
  o.ling_seed = j.at("ling_seed").get<std::uint64_t>();
  o.hidden = j.at("hidden").get<int>();
  o.heads = j.at("heads").get<int>();
  o.ffn_dim = j.at("ffn_dim").get<int>();
  o.encoder_layers = j.at("encoder_layers").get<int>();
  o.decoder_layers = j.at("decoder_layers").get<int>();
  o.speaker_dim = j.at("speaker_dim").get<int>();
  o.output_norm = j.at("output_norm").get<bool>();
  o.speaker_skip = j.at("speaker_skip").get<bool>();
}

/// Fixed token-to-vector table standing in for a linguistic frontend.
class LinguisticTable {
 public:
  LinguisticTable(int vocab_size, int dim, std::uint64_t seed) : table_(vocab_size, dim) {
    Rng rng(seed);
    for (Index i = 0; i < table_.size(); ++i) table_.data()[i] = rng.normal();
  }

  /// N x P linguistic sequence for a token list.
  Mat featurize(const std::vector<int>& tokens) const {
    if (tokens.empty()) fail(ErrorCode::kEmptyContent, "linguistic sequence needs at least one token");
    Mat out(static_cast<Index>(tokens.size()), table_.cols());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i] < 0 || tokens[i] >= table_.rows()) fail(ErrorCode::kInvalidArgument, "token id out of range");
      out.row(static_cast<Index>(i)) = table_.row(tokens[i]);
    }
    return out;
  }

  Index dim() const { return table_.cols(); }

 private:
  Mat table_;
};

/// Row indices that expand token t into durations[t] consecutive frames.
inline std::vector<int> length_regulator_indices(const std::vector<int>& durations, int offset = 0) {
  std::vector<int> idx;
  for (std::size_t t = 0; t < durations.size(); ++t) {
    if (durations[t] < 0) fail(ErrorCode::kInvalidArgument, "negative duration");
    for (int k = 0; k < durations[t]; ++k) idx.push_back(offset + static_cast<int>(t));
  }
  return idx;
}

inline Var length_regulate(Var tokens, const std::vector<int>& durations) {
  if (static_cast<Index>(durations.size()) != tokens.rows()) fail(ErrorCode::kShapeError, "durations vs tokens");
  return ag::gather_rows(tokens, length_regulator_indices(durations));
}

struct LossBreakdown {
  double mel = 0.0;
  double duration = 0.0;
  double pitch = 0.0;
  double energy = 0.0;
  double total = 0.0;
};

struct AcousticPrediction {
  Mat mel;
  Eigen::VectorXd log_duration;
  Eigen::VectorXd pitch;
  Eigen::VectorXd energy;
};

/// Mel L1 plus MSE on log-duration, pitch and energy.
inline LossBreakdown compute_losses(const AcousticPrediction& pred, const Mat& mel,
                                    const VarianceTargets& targets) {
  const Index n = static_cast<Index>(targets.durations.size());
  if (pred.mel.rows() != mel.rows() || pred.mel.cols() != mel.cols()) fail(ErrorCode::kShapeError, "mel shape");
  if (pred.log_duration.size() != n || pred.pitch.size() != n || pred.energy.size() != n ||
      static_cast<Index>(targets.pitch.size()) != n || static_cast<Index>(targets.energy.size()) != n) {
    fail(ErrorCode::kShapeError, "variance prediction length");
  }
  LossBreakdown l;
  l.mel = (pred.mel - mel).cwiseAbs().mean();
  for (Index i = 0; i < n; ++i) {
    const double ld = std::log(static_cast<double>(targets.durations[static_cast<std::size_t>(i)]));
    l.duration += std::pow(pred.log_duration(i) - ld, 2);
    l.pitch += std::pow(pred.pitch(i) - targets.pitch[static_cast<std::size_t>(i)], 2);
    l.energy += std::pow(pred.energy(i) - targets.energy[static_cast<std::size_t>(i)], 2);
  }
  l.duration /= static_cast<double>(n);
  l.pitch /= static_cast<double>(n);
  l.energy /= static_cast<double>(n);
  l.total = l.mel + l.duration + l.pitch + l.energy;
  return l;
}

struct BackboneItem {
  const Mat* ling = nullptr;                // N x P
  const VarianceTargets* targets = nullptr;  // teacher-forced durations, pitch, energy
};

struct BackboneLosses {
  Var mel, duration, pitch, energy, total;
  Var mel_pred;                     // stacked teacher-forced frames
  Var mel_target;
  std::vector<Index> frame_lengths;  // per item
};

struct SynthesisOutput {
  Mat mel;
  std::vector<int> durations;
  int clamped_tokens = 0;  // tokens whose predicted duration was raised to one frame
};

class AcousticModel {
 public:
  AcousticModel(nn::ParamStore& store, const std::string& ns, const BackboneOptions& opt, Rng& rng)
      : opt_(opt),
        ling_(opt.vocab_size, opt.ling_dim, opt.ling_seed),
        in_proj_(store, ns + "/in_proj", opt.ling_dim, opt.hidden, rng),
        spk_proj_(store, ns + "/spk_proj", opt.speaker_dim, opt.hidden, rng),
        dur_(store, ns + "/duration", opt.hidden, 1, rng),
        pitch_(store, ns + "/pitch", opt.hidden, 1, rng),
        energy_(store, ns + "/energy", opt.hidden, 1, rng),
        pitch_embed_(store, ns + "/pitch_embed", 1, opt.hidden, rng),
        energy_embed_(store, ns + "/energy_embed", 1, opt.hidden, rng),
        enc_norm_(store, ns + "/enc_norm", opt.hidden),
        dec_norm_(store, ns + "/dec_norm", opt.hidden),
        out_proj_(store, ns + "/out_proj", opt.hidden, kNumMels, rng) {
    for (int i = 0; i < opt.encoder_layers; ++i) {
      encoder_.emplace_back(store, ns + "/enc" + std::to_string(i), opt.hidden, opt.heads, opt.ffn_dim, rng);
    }
    for (int i = 0; i < opt.decoder_layers; ++i) {
      decoder_.emplace_back(store, ns + "/dec" + std::to_string(i), opt.hidden, opt.heads, opt.ffn_dim, rng);
    }
    if (opt.speaker_skip) spk_out_.emplace(store, ns + "/spk_out", opt.speaker_dim, kNumMels, rng, false);
  }

  const BackboneOptions& options() const { return opt_; }
  const LinguisticTable& linguistic() const { return ling_; }

  /// Starts every output head at the mean of its training target.
  void init_output_biases(const Eigen::RowVectorXd& mel_mean, double log_duration_mean, double pitch_mean,
                          double energy_mean) {
    out_proj_.bias()->value = mel_mean;
    dur_.bias()->value.setConstant(log_duration_mean);
    pitch_.bias()->value.setConstant(pitch_mean);
    energy_.bias()->value.setConstant(energy_mean);
  }

  /// Teacher-forced forward pass over a batch. `speaker` is B x speaker_dim
  /// (one conditioning row per item). Returns the loss terms.
  BackboneLosses train_losses(ag::Graph& g, const std::vector<BackboneItem>& items, Var speaker,
                              const std::vector<const Mat*>& target_mels) const {
    if (items.empty() || items.size() != target_mels.size() || speaker.rows() != static_cast<Index>(items.size())) {
      fail(ErrorCode::kShapeError, "train_losses: batch sizes disagree");
    }
    std::vector<Index> tok_len, frame_len;
    std::vector<int> spk_of_token, frame_index;
    Index total_tokens = 0, total_frames = 0;
    for (std::size_t b = 0; b < items.size(); ++b) {
      const Index n = items[b].ling->rows();
      const auto& d = items[b].targets->durations;
      if (static_cast<Index>(d.size()) != n) fail(ErrorCode::kShapeError, "durations vs linguistic length");
      const auto idx = length_regulator_indices(d, static_cast<int>(total_tokens));
      if (static_cast<Index>(idx.size()) != target_mels[b]->rows()) {
        fail(ErrorCode::kShapeError, "durations do not sum to the target frame count");
      }
      frame_index.insert(frame_index.end(), idx.begin(), idx.end());
      for (Index i = 0; i < n; ++i) spk_of_token.push_back(static_cast<int>(b));
      tok_len.push_back(n);
      frame_len.push_back(static_cast<Index>(idx.size()));
      total_tokens += n;
      total_frames += static_cast<Index>(idx.size());
    }
    Mat ling(total_tokens, opt_.ling_dim), tok_pe(total_tokens, opt_.hidden), frame_pe(total_frames, opt_.hidden);
    Mat log_dur(total_tokens, 1), pitch(total_tokens, 1), energy(total_tokens, 1), mel(total_frames, kNumMels);
    Index tr = 0, fr = 0;
    for (std::size_t b = 0; b < items.size(); ++b) {
      const Index n = tok_len[b], t = frame_len[b];
      ling.middleRows(tr, n) = *items[b].ling;
      tok_pe.middleRows(tr, n) = pe(n);
      frame_pe.middleRows(fr, t) = pe(t);
      mel.middleRows(fr, t) = *target_mels[b];
      for (Index i = 0; i < n; ++i) {
        const std::size_t k = static_cast<std::size_t>(i);
        log_dur(tr + i, 0) = std::log(static_cast<double>(items[b].targets->durations[k]));
        pitch(tr + i, 0) = items[b].targets->pitch[k];
        energy(tr + i, 0) = items[b].targets->energy[k];
      }
      tr += n;
      fr += t;
    }
    Var h = encode(g, g.constant(std::move(ling)), g.constant(std::move(tok_pe)), speaker, spk_of_token, tok_len);
    BackboneLosses out;
    out.duration = ag::mse(dur_(g, h), g.constant(log_dur));
    out.pitch = ag::mse(pitch_(g, h), g.constant(pitch));
    out.energy = ag::mse(energy_(g, h), g.constant(energy));
    Var adapted = ag::add(h, ag::add(pitch_embed_(g, g.constant(pitch)), energy_embed_(g, g.constant(energy))));
    std::vector<int> spk_of_frame(frame_index.size());
    for (std::size_t i = 0; i < frame_index.size(); ++i) spk_of_frame[i] = spk_of_token[static_cast<std::size_t>(frame_index[i])];
    Var frames = ag::add(ag::gather_rows(adapted, std::move(frame_index)), g.constant(std::move(frame_pe)));
    Var pred = decode(g, frames, frame_len, speaker, std::move(spk_of_frame));
    out.mel_pred = pred;
    out.mel_target = g.constant(std::move(mel));
    out.frame_lengths = frame_len;
    out.mel = ag::l1(pred, out.mel_target);
    out.total = ag::add(ag::add(out.mel, out.duration), ag::add(out.pitch, out.energy));
    return out;
  }

  /// Inference for one item with predicted durations, pitch and energy.
  /// `speaker` is a 1 x speaker_dim Var so callers can differentiate
  /// through it.
  Var synthesize(ag::Graph& g, const Mat& ling, Var speaker, SynthesisOutput* info = nullptr) const {
    const Index n = ling.rows();
    std::vector<int> spk_rows(static_cast<std::size_t>(n), 0);
    const std::vector<Index> tok_len = {n};
    Var h = encode(g, g.constant(ling), g.constant(pe(n)), speaker, spk_rows, tok_len);
    const Mat& ld = dur_(g, h).value();
    std::vector<int> durations(static_cast<std::size_t>(n));
    int clamped = 0;
    for (Index i = 0; i < n; ++i) {
      const long d = std::lround(std::exp(ld(i, 0)));
      if (d < 1) ++clamped;
      durations[static_cast<std::size_t>(i)] = static_cast<int>(std::max(1L, std::min(d, 1000L)));
    }
    Var adapted = ag::add(h, ag::add(pitch_embed_(g, pitch_(g, h)), energy_embed_(g, energy_(g, h))));
    auto idx = length_regulator_indices(durations);
    const Index frames = static_cast<Index>(idx.size());
    Var x = ag::add(ag::gather_rows(adapted, std::move(idx)), g.constant(pe(frames)));
    const std::vector<Index> frame_len = {frames};
    Var mel = decode(g, x, frame_len, speaker, std::vector<int>(static_cast<std::size_t>(frames), 0));
    if (info != nullptr) {
      info->durations = durations;
      info->clamped_tokens = clamped;
    }
    return mel;
  }

  /// Prediction with teacher-forced durations, for loss reporting.
  AcousticPrediction predict_teacher_forced(const Mat& ling, const Eigen::RowVectorXd& speaker,
                                            const VarianceTargets& targets) const {
    ag::Graph g(false);
    const Index n = ling.rows();
    std::vector<int> spk_rows(static_cast<std::size_t>(n), 0);
    const std::vector<Index> tok_len = {n};
    Var h = encode(g, g.constant(ling), g.constant(pe(n)), g.constant(Mat(speaker)), spk_rows, tok_len);
    AcousticPrediction p;
    p.log_duration = dur_(g, h).value().col(0);
    p.pitch = pitch_(g, h).value().col(0);
    p.energy = energy_(g, h).value().col(0);
    Mat pitch = Eigen::Map<const Mat>(targets.pitch.data(), n, 1);
    Mat energy = Eigen::Map<const Mat>(targets.energy.data(), n, 1);
    Var adapted = ag::add(h, ag::add(pitch_embed_(g, g.constant(pitch)), energy_embed_(g, g.constant(energy))));
    auto idx = length_regulator_indices(targets.durations);
    const Index frames = static_cast<Index>(idx.size());
    Var x = ag::add(ag::gather_rows(adapted, std::move(idx)), g.constant(pe(frames)));
    const std::vector<Index> frame_len = {frames};
    p.mel = decode(g, x, frame_len, g.constant(Mat(speaker)), std::vector<int>(static_cast<std::size_t>(frames), 0))
                .value();
    return p;
  }

 private:
  Mat pe(Index len) const {
    if (len > static_cast<Index>(pe_cache_.rows())) {
      pe_cache_ = nn::positional_encoding(std::max<Index>(len, 2 * pe_cache_.rows()), opt_.hidden);
    }
    return pe_cache_.topRows(len);
  }

  Var encode(ag::Graph& g, Var ling, Var tok_pe, Var speaker, const std::vector<int>& spk_rows,
             const std::vector<Index>& lengths) const {
    Var h = ag::add(in_proj_(g, ling), tok_pe);
    for (const auto& block : encoder_) h = block(g, h, &lengths);
    h = enc_norm_(g, h);
    Var spk = spk_proj_(g, speaker);
    return ag::add(h, ag::gather_rows(spk, spk_rows));
  }

  Var decode(ag::Graph& g, Var frames, const std::vector<Index>& lengths, Var speaker,
             std::vector<int> spk_of_frame) const {
    Var x = frames;
    for (const auto& block : decoder_) x = block(g, x, &lengths);
    Var mel = out_proj_(g, opt_.output_norm ? dec_norm_(g, x) : x);
    if (!spk_out_) return mel;
    return ag::add(mel, ag::gather_rows((*spk_out_)(g, speaker), std::move(spk_of_frame)));
  }

  BackboneOptions opt_;
  LinguisticTable ling_;
  nn::Linear in_proj_, spk_proj_;
  std::vector<nn::FftBlock> encoder_, decoder_;
  nn::Linear dur_, pitch_, energy_;
  nn::Linear pitch_embed_, energy_embed_;
  nn::LayerNorm enc_norm_, dec_norm_;
  nn::Linear out_proj_;
  std::optional<nn::Linear> spk_out_;
  mutable Mat pe_cache_;
};

}  // namespace voximp
