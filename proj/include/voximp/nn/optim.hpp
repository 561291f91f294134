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

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "voximp/nn/params.hpp"

namespace voximp::nn {

/// Adam over the trainable subset of a ParamStore, with optional clipping of
/// the global gradient norm.
class Adam {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
    double clip_norm = 1.0;  // <= 0 disables clipping
  };

  /// Tracks the trainable parameters of `store`, restricted to
  /// `namespaces` when that list is non-empty.
  Adam(ParamStore& store, Options opt, const std::vector<std::string>& namespaces = {}) : opt_(opt) {
    for (auto& [name, p] : store.all()) {
      if (!p.trainable) continue;
      bool keep = namespaces.empty();
      for (const auto& ns : namespaces) keep = keep || ParamStore::in_namespace(name, ns);
      if (!keep) continue;
      slots_.push_back({&p, Mat::Zero(p.value.rows(), p.value.cols()),
                        Mat::Zero(p.value.rows(), p.value.cols())});
    }
  }
  explicit Adam(ParamStore& store) : Adam(store, Options{}) {}

  /// Applies one update with learning rate `lr` and returns the pre-clip
  /// gradient norm.
  double step(double lr) {
    ++t_;
    double sq = 0.0;
    for (auto& s : slots_) sq += s.param->grad.squaredNorm();
    const double norm = std::sqrt(sq);
    const double clip = (opt_.clip_norm > 0.0 && norm > opt_.clip_norm) ? opt_.clip_norm / norm : 1.0;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (auto& s : slots_) {
      const Mat g = s.param->grad * clip;
      s.m = opt_.beta1 * s.m + (1.0 - opt_.beta1) * g;
      s.v = opt_.beta2 * s.v + (1.0 - opt_.beta2) * g.cwiseProduct(g);
      s.param->value.array() -=
          lr * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + opt_.eps);
    }
    return norm;
  }

  long steps() const { return t_; }
  std::size_t size() const { return slots_.size(); }

 private:
  struct Slot {
    Parameter* param;
    Mat m;
    Mat v;
  };
  Options opt_;
  std::vector<Slot> slots_;
  long t_ = 0;
};

/// Transformer warmup schedule: scale * d^-0.5 * min(s^-0.5, s * warmup^-1.5).
struct NoamSchedule {
  double model_dim = 128.0;
  double warmup = 400.0;
  double scale = 1.0;

  double operator()(long step) const {
    const double s = static_cast<double>(std::max<long>(step, 1));
    return scale / std::sqrt(model_dim) * std::min(1.0 / std::sqrt(s), s * std::pow(warmup, -1.5));
  }
};

}  // namespace voximp::nn
