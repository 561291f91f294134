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

// Least-squares GAN pieces used by the optional refinement stage.

#include <string>
#include <vector>

#include "voximp/ag/graph.hpp"
#include "voximp/corpus.hpp"
#include "voximp/nn/layers.hpp"
#include "voximp/nn/params.hpp"

namespace voximp {

using ag::Var;

struct LsganLosses {
  double d_real = 0.0;  // mean (D(real) - 1)^2
  double d_fake = 0.0;  // mean D(fake)^2
  double generator = 0.0;  // mean (D(fake) - 1)^2
  double discriminator() const { return d_real + d_fake; }
};

inline LsganLosses lsgan_losses(const Eigen::VectorXd& real_scores, const Eigen::VectorXd& fake_scores) {
  if (real_scores.size() == 0 || fake_scores.size() == 0) fail(ErrorCode::kShapeError, "empty score vector");
  LsganLosses l;
  l.d_real = (real_scores.array() - 1.0).square().mean();
  l.d_fake = fake_scores.array().square().mean();
  l.generator = (fake_scores.array() - 1.0).square().mean();
  return l;
}

/// Rows of x gathered at time offsets -r..r and concatenated, with edge
/// replication inside each segment. A linear layer on the result is a 1-D
/// convolution over time.
inline Var unfold_time(Var x, const std::vector<Index>& lengths, int radius) {
  std::vector<Var> parts;
  for (int o = -radius; o <= radius; ++o) {
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(x.rows()));
    Index start = 0;
    for (Index len : lengths) {
      for (Index t = 0; t < len; ++t) idx.push_back(static_cast<int>(start + std::clamp<Index>(t + o, 0, len - 1)));
      start += len;
    }
    if (start != x.rows()) fail(ErrorCode::kShapeError, "unfold_time: lengths do not cover input");
    parts.push_back(ag::gather_rows(x, std::move(idx)));
  }
  return parts.size() == 1 ? parts.front() : ag::concat_cols(parts);
}

struct DiscriminatorOptions {
  int channels1 = 64;
  int channels2 = 32;
  int radius = 1;
};

inline void to_json(nlohmann::json& j, const DiscriminatorOptions& o) {
  j = {{"channels1", o.channels1}, {"channels2", o.channels2}, {"radius", o.radius}};
}
inline void from_json(const nlohmann::json& j, DiscriminatorOptions& o) {
  o.channels1 = j.at("channels1").get<int>();
  o.channels2 = j.at("channels2").get<int>();
  o.radius = j.at("radius").get<int>();
}

/// Two temporal convolutions and a per-frame linear scorer over mel frames.
class Discriminator {
 public:
  Discriminator(nn::ParamStore& store, const std::string& ns, const DiscriminatorOptions& opt, Rng& rng)
      : opt_(opt),
        conv1_(store, ns + "/conv1", static_cast<Index>(kNumMels) * (2 * opt.radius + 1), opt.channels1, rng),
        conv2_(store, ns + "/conv2", static_cast<Index>(opt.channels1) * (2 * opt.radius + 1), opt.channels2, rng),
        head_(store, ns + "/head", opt.channels2, 1, rng) {}

  /// Per-frame scores (rows x 1) for stacked mels of the given lengths.
  Var operator()(ag::Graph& g, Var mel, const std::vector<Index>& lengths) const {
    Var h = ag::relu(conv1_(g, unfold_time(mel, lengths, opt_.radius)));
    h = ag::relu(conv2_(g, unfold_time(h, lengths, opt_.radius)));
    return head_(g, h);
  }

 private:
  DiscriminatorOptions opt_;
  nn::Linear conv1_, conv2_, head_;
};

}  // namespace voximp
