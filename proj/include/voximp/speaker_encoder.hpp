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

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "voximp/ag/graph.hpp"
#include "voximp/frontend.hpp"
#include "voximp/nn/layers.hpp"
#include "voximp/nn/params.hpp"

namespace voximp {

using ag::Var;

inline Eigen::RowVectorXd softmax(const Eigen::RowVectorXd& logits) {
  Eigen::RowVectorXd e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

/// sum_l softmax(logits)_l * stack[:, l, :] as a plain T x D matrix.
inline Mat layer_weighted_sum(const SSLFeatureStack& stack, const Eigen::RowVectorXd& logits) {
  if (logits.size() != stack.layers) fail(ErrorCode::kShapeError, "layer logits length");
  if (!logits.allFinite()) fail(ErrorCode::kInvalidArgument, "layer logits must be finite");
  const Eigen::RowVectorXd w = softmax(logits);
  Eigen::RowVectorXd flat = w * stack.data;
  return Eigen::Map<const Mat>(flat.data(), stack.frames, stack.channels);
}

/// Differentiable version; `logits` is a 1 x L Var.
inline Var layer_weighted_sum(ag::Graph& g, const SSLFeatureStack& stack, Var logits) {
  if (logits.cols() != stack.layers) fail(ErrorCode::kShapeError, "layer logits length");
  Var w = ag::softmax_rows(logits);
  Var flat = ag::matmul(w, g.constant(stack.data));
  return ag::reshape(flat, stack.frames, stack.channels);
}

/// Feed-forward attention scorer e_t = v . tanh(W h_t + b).
class AttentionScorer {
 public:
  AttentionScorer() = default;
  AttentionScorer(nn::ParamStore& store, const std::string& name, Index in, Index attn_dim, Rng& rng)
      : proj_(store, name + "/proj", in, attn_dim, rng),
        v_(&store.create(name + "/v", attn_dim, 1)) {
    nn::init_xavier(*v_, rng);
  }

  /// T x 1 scores.
  Var operator()(ag::Graph& g, Var seq) const {
    return ag::matmul(ag::tanh(proj_(g, seq)), nn::bind(g, *v_));
  }

 private:
  nn::Linear proj_;
  nn::Parameter* v_ = nullptr;
};

struct PoolResult {
  Var pooled;   // 1 x H
  Var weights;  // 1 x T
};

/// Masked attention pooling: frames with mask[t] == false get weight
/// exactly zero. Throws EmptySequence when every frame is masked.
inline PoolResult attention_pool(ag::Graph& g, const AttentionScorer& scorer, Var seq,
                                 const std::vector<bool>& mask) {
  if (static_cast<Index>(mask.size()) != seq.rows()) fail(ErrorCode::kShapeError, "attention mask length");
  bool any = false;
  for (bool m : mask) any = any || m;
  if (!any) fail(ErrorCode::kEmptySequence, "attention_pool: all frames masked");
  Var scores = ag::transpose(scorer(g, seq));
  Var w = ag::softmax_rows(scores, &mask);
  return {ag::matmul(w, seq), w};
}

struct SpeakerEncoderOptions {
  int layers = 4;
  int channels = 64;
  int lstm_hidden = 128;
  int attn_dim = 128;
  int embed_dim = 384;
};

inline void to_json(nlohmann::json& j, const SpeakerEncoderOptions& o) {
  j = {{"layers", o.layers}, {"channels", o.channels}, {"lstm_hidden", o.lstm_hidden},
       {"attn_dim", o.attn_dim}, {"embed_dim", o.embed_dim}};
}
inline void from_json(const nlohmann::json& j, SpeakerEncoderOptions& o) {
  o.layers = j.at("layers").get<int>();
  o.channels = j.at("channels").get<int>();
  o.lstm_hidden = j.at("lstm_hidden").get<int>();
  o.attn_dim = j.at("attn_dim").get<int>();
  o.embed_dim = j.at("embed_dim").get<int>();
}

/// Utterance-level encoder: softmax-weighted layer sum, bidirectional LSTM,
/// feed-forward attention pooling and a linear map to the embedding size.
/// The pooled sequence is the BiLSTM output concatenated with its input.
class SpeakerEncoder {
 public:
  SpeakerEncoder(nn::ParamStore& store, const std::string& ns, const SpeakerEncoderOptions& opt, Rng& rng)
      : opt_(opt),
        layer_logits_(&store.create(ns + "/layer_logits", 1, opt.layers)),
        lstm_(store, ns + "/lstm", opt.channels, opt.lstm_hidden, rng),
        scorer_(store, ns + "/attn", 2 * opt.lstm_hidden + opt.channels, opt.attn_dim, rng),
        out_(store, ns + "/out", 2 * opt.lstm_hidden + opt.channels, opt.embed_dim, rng) {}

  /// Encodes a batch of equal-length stacks into a B x E matrix.
  Var encode(ag::Graph& g, std::span<const SSLFeatureStack* const> batch) const {
    if (batch.empty()) fail(ErrorCode::kShapeError, "encode: empty batch");
    const Index frames = batch.front()->frames;
    const Index b_count = static_cast<Index>(batch.size());
    Var logits = nn::bind(g, *layer_logits_);
    std::vector<Var> per_utt;
    per_utt.reserve(batch.size());
    for (const SSLFeatureStack* s : batch) {
      if (s->frames != frames) fail(ErrorCode::kShapeError, "encode: batch stacks differ in length");
      if (s->layers != opt_.layers || s->channels != opt_.channels) {
        fail(ErrorCode::kShapeError, "encode: stack layout does not match the encoder");
      }
      per_utt.push_back(layer_weighted_sum(g, *s, logits));
    }
    Var x = per_utt.front();
    if (b_count > 1) {
      std::vector<int> time_major(static_cast<std::size_t>(frames * b_count));
      for (Index t = 0; t < frames; ++t) {
        for (Index b = 0; b < b_count; ++b) time_major[static_cast<std::size_t>(t * b_count + b)] = static_cast<int>(b * frames + t);
      }
      x = ag::gather_rows(ag::concat_rows(per_utt), std::move(time_major));
    }
    Var hs = ag::concat_cols({lstm_(g, x, b_count), x});
    const std::vector<bool> mask(static_cast<std::size_t>(frames), true);
    std::vector<Var> pooled;
    pooled.reserve(batch.size());
    for (Index b = 0; b < b_count; ++b) {
      Var seq = hs;
      if (b_count > 1) {
        std::vector<int> rows(static_cast<std::size_t>(frames));
        for (Index t = 0; t < frames; ++t) rows[static_cast<std::size_t>(t)] = static_cast<int>(t * b_count + b);
        seq = ag::gather_rows(hs, std::move(rows));
      }
      pooled.push_back(attention_pool(g, scorer_, seq, mask).pooled);
    }
    Var p = b_count > 1 ? ag::concat_rows(pooled) : pooled.front();
    return out_(g, p);
  }

  /// Inference-mode embedding x of one utterance.
  Eigen::RowVectorXd encode_utterance(const SSLFeatureStack& stack) const {
    ag::Graph g(false);
    const SSLFeatureStack* one[] = {&stack};
    return encode(g, one).value().row(0);
  }

  const SpeakerEncoderOptions& options() const { return opt_; }
  const AttentionScorer& scorer() const { return scorer_; }
  nn::Parameter& layer_logits() const { return *layer_logits_; }

 private:
  SpeakerEncoderOptions opt_;
  nn::Parameter* layer_logits_;
  nn::BiLstm lstm_;
  AttentionScorer scorer_;
  nn::Linear out_;
};

struct StlOptions {
  int tokens = 8;
  int heads = 4;
  double logit_scale = 0.0;  // > 0: cosine attention with this fixed scale
  bool bypass = true;        // add a linear map of the query to the token mixture
};

/// Rows scaled to unit L2 norm.
inline Var l2_normalize_rows(ag::Graph& g, Var x) {
  Var sq = ag::matmul(ag::square(x), g.constant(Mat::Ones(x.cols(), 1)));
  Var inv = ag::exp(ag::scale(ag::log(ag::add_scalar(sq, 1e-12)), -0.5));
  return ag::mul(x, ag::matmul(inv, g.constant(Mat::Ones(1, x.cols()))));
}

/// Style token layer: multi-head attention with the input as query over a
/// bank of learned tokens. Each head's output is a convex combination of
/// that head's slice of the token value projections.
class StyleTokenLayer {
 public:
  struct Output {
    Var embedding;                  // B x E
    std::vector<Var> head_weights;  // per head, B x tokens
    Var values;                     // tokens x E
  };

  StyleTokenLayer(nn::ParamStore& store, const std::string& ns, Index embed_dim, const StlOptions& opt,
                  Rng& rng)
      : opt_(opt),
        tokens_(&store.create(ns + "/tokens", opt.tokens, embed_dim)),
        q_(store, ns + "/q", embed_dim, embed_dim, rng, false),
        k_(store, ns + "/k", embed_dim, embed_dim, rng, false),
        v_(store, ns + "/v", embed_dim, embed_dim, rng, false) {
    if (embed_dim % opt.heads != 0) fail(ErrorCode::kInvalidArgument, "STL: embed dim not divisible by heads");
    nn::init_normal(*tokens_, 0.5, rng);
    if (opt.bypass) bypass_.emplace(store, ns + "/bypass", embed_dim, embed_dim, rng, false);
  }

  Output operator()(ag::Graph& g, Var query) const {
    const Index embed = query.cols();
    const Index head_dim = embed / opt_.heads;
    Var bank = ag::tanh(nn::bind(g, *tokens_));
    Var keys = k_(g, bank);
    Var values = v_(g, bank);
    Var q = q_(g, query);
    Output out;
    out.values = values;
    std::vector<Var> heads;
    for (int h = 0; h < opt_.heads; ++h) {
      Var qh = ag::slice_cols(q, h * head_dim, head_dim);
      Var kh = ag::slice_cols(keys, h * head_dim, head_dim);
      Var vh = ag::slice_cols(values, h * head_dim, head_dim);
      Var logits = opt_.logit_scale > 0.0
                       ? ag::scale(ag::matmul_nt(l2_normalize_rows(g, qh), l2_normalize_rows(g, kh)), opt_.logit_scale)
                       : ag::scale(ag::matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(head_dim)));
      Var w = ag::softmax_rows(logits);
      out.head_weights.push_back(w);
      heads.push_back(ag::matmul(w, vh));
    }
    out.embedding = opt_.heads == 1 ? heads.front() : ag::concat_cols(heads);
    if (bypass_) out.embedding = ag::add(out.embedding, (*bypass_)(g, query));
    return out;
  }

  Eigen::RowVectorXd transform(const Eigen::RowVectorXd& x) const {
    ag::Graph g(false);
    return (*this)(g, g.constant(Mat(x))).embedding.value().row(0);
  }

  const StlOptions& options() const { return opt_; }

 private:
  StlOptions opt_;
  nn::Parameter* tokens_;
  nn::Linear q_, k_, v_;
  std::optional<nn::Linear> bypass_;
};

inline void to_json(nlohmann::json& j, const StlOptions& o) {
  j = {{"tokens", o.tokens}, {"heads", o.heads}, {"logit_scale", o.logit_scale}, {"bypass", o.bypass}};
}
inline void from_json(const nlohmann::json& j, StlOptions& o) {
  o.tokens = j.at("tokens").get<int>();
  o.heads = j.at("heads").get<int>();
  o.logit_scale = j.at("logit_scale").get<double>();
  o.bypass = j.at("bypass").get<bool>();
}

}  // namespace voximp
