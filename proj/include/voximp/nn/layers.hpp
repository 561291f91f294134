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
#include <string>
#include <vector>

#include "voximp/ag/graph.hpp"
#include "voximp/ag/lstm.hpp"
#include "voximp/nn/params.hpp"

namespace voximp::nn {

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, Index in, Index out, Rng& rng,
         bool with_bias = true)
      : w_(&store.create(name + "/w", in, out)) {
    init_xavier(*w_, rng);
    if (with_bias) b_ = &store.create(name + "/b", 1, out);
  }

  Var operator()(ag::Graph& g, Var x) const {
    Var y = ag::matmul(x, bind(g, *w_));
    return b_ != nullptr ? ag::add_row(y, bind(g, *b_)) : y;
  }

  Index in() const { return w_->value.rows(); }
  Index out() const { return w_->value.cols(); }
  Parameter& weight() const { return *w_; }
  Parameter* bias() const { return b_; }

 private:
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, Index dim)
      : gamma_(&store.create(name + "/gamma", 1, dim)), beta_(&store.create(name + "/beta", 1, dim)) {
    gamma_->value.setOnes();
  }

  Var operator()(ag::Graph& g, Var x) const {
    return ag::layer_norm_rows(x, bind(g, *gamma_), bind(g, *beta_));
  }

 private:
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
};

/// Multi-head self-attention. With `lengths`, x holds several sequences
/// stacked by rows and attention stays within each sequence.
class SelfAttention {
 public:
  SelfAttention() = default;
  SelfAttention(ParamStore& store, const std::string& name, Index dim, int heads, Rng& rng)
      : heads_(heads),
        q_(store, name + "/q", dim, dim, rng),
        k_(store, name + "/k", dim, dim, rng),
        v_(store, name + "/v", dim, dim, rng),
        o_(store, name + "/o", dim, dim, rng) {
    if (dim % heads != 0) fail(ErrorCode::kInvalidArgument, "attention dim not divisible by heads");
  }

  Var operator()(ag::Graph& g, Var x, const std::vector<Index>* lengths = nullptr) const {
    const Index dim = x.cols();
    const Index head_dim = dim / heads_;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    const std::vector<Index> whole = {x.rows()};
    const std::vector<Index>& segs = lengths != nullptr ? *lengths : whole;
    Var q = q_(g, x);
    Var k = k_(g, x);
    Var v = v_(g, x);
    std::vector<Var> rows;
    rows.reserve(segs.size());
    Index start = 0;
    for (Index len : segs) {
      Var qs = segs.size() == 1 ? q : ag::slice_rows(q, start, len);
      Var ks = segs.size() == 1 ? k : ag::slice_rows(k, start, len);
      Var vs = segs.size() == 1 ? v : ag::slice_rows(v, start, len);
      std::vector<Var> outs;
      outs.reserve(static_cast<std::size_t>(heads_));
      for (int h = 0; h < heads_; ++h) {
        Var qh = ag::slice_cols(qs, h * head_dim, head_dim);
        Var kh = ag::slice_cols(ks, h * head_dim, head_dim);
        Var vh = ag::slice_cols(vs, h * head_dim, head_dim);
        Var att = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), inv_sqrt));
        outs.push_back(ag::matmul(att, vh));
      }
      rows.push_back(heads_ == 1 ? outs.front() : ag::concat_cols(outs));
      start += len;
    }
    if (start != x.rows()) fail(ErrorCode::kShapeError, "attention segment lengths do not cover the input");
    return o_(g, rows.size() == 1 ? rows.front() : ag::concat_rows(rows));
  }

 private:
  int heads_ = 1;
  Linear q_, k_, v_, o_;
};

/// Feed-forward Transformer block (pre-norm): attention and a position-wise
/// two-layer ReLU network, each applied to a normalised copy of the input and
/// added back through a residual connection.
class FftBlock {
 public:
  FftBlock() = default;
  FftBlock(ParamStore& store, const std::string& name, Index dim, int heads, Index ffn_dim,
           Rng& rng)
      : ln1_(store, name + "/ln1", dim),
        attn_(store, name + "/attn", dim, heads, rng),
        ln2_(store, name + "/ln2", dim),
        ffn1_(store, name + "/ffn1", dim, ffn_dim, rng),
        ffn2_(store, name + "/ffn2", ffn_dim, dim, rng) {}

  Var operator()(ag::Graph& g, Var x, const std::vector<Index>* lengths = nullptr) const {
    Var y = ag::add(x, attn_(g, ln1_(g, x), lengths));
    return ag::add(y, ffn2_(g, ag::relu(ffn1_(g, ln2_(g, y)))));
  }

 private:
  LayerNorm ln1_;
  SelfAttention attn_;
  LayerNorm ln2_;
  Linear ffn1_, ffn2_;
};

/// Bidirectional LSTM; output columns are [forward hidden | backward hidden].
class BiLstm {
 public:
  BiLstm() = default;
  BiLstm(ParamStore& store, const std::string& name, Index in, Index hidden, Rng& rng)
      : hidden_(hidden) {
    for (int d = 0; d < 2; ++d) {
      const std::string dir = name + (d == 0 ? "/fwd" : "/bwd");
      wx_[d] = &store.create(dir + "/wx", in, 4 * hidden);
      wh_[d] = &store.create(dir + "/wh", hidden, 4 * hidden);
      b_[d] = &store.create(dir + "/b", 1, 4 * hidden);
      const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
      init_uniform(*wx_[d], bound, rng);
      init_uniform(*wh_[d], bound, rng);
      b_[d]->value.middleCols(hidden, hidden).setOnes();  // forget-gate bias
    }
  }

  /// x is time-major with `batch` sequences of equal length.
  Var operator()(ag::Graph& g, Var x, Index batch) const {
    Var f = ag::lstm(x, bind(g, *wx_[0]), bind(g, *wh_[0]), bind(g, *b_[0]), batch, false);
    Var b = ag::lstm(x, bind(g, *wx_[1]), bind(g, *wh_[1]), bind(g, *b_[1]), batch, true);
    return ag::concat_cols({f, b});
  }

  Index output_dim() const { return 2 * hidden_; }

 private:
  Index hidden_ = 0;
  Parameter* wx_[2] = {nullptr, nullptr};
  Parameter* wh_[2] = {nullptr, nullptr};
  Parameter* b_[2] = {nullptr, nullptr};
};

/// Sinusoidal position table, rows = positions.
inline Mat positional_encoding(Index length, Index dim) {
  Mat pe(length, dim);
  for (Index pos = 0; pos < length; ++pos) {
    for (Index i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      pe(pos, i) = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  }
  return pe;
}

}  // namespace voximp::nn
