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

// Impression control module.
//
// The speaker latent x is passed through high-ratio dropout and projected to
// a small width (p_x); the impression vector gets its own projection (p_v);
// the two are concatenated and mapped back to the latent width to form the
// conditioning query h. An adversary tries to read the impression vector
// back out of p_x through a gradient reversal layer, which pushes the x
// projection to discard impression information.

#include <cmath>
#include <string>

#include "json.hpp"
#include "voximp/ag/graph.hpp"
#include "voximp/impression.hpp"
#include "voximp/nn/layers.hpp"
#include "voximp/nn/params.hpp"
#include "voximp/rng.hpp"

namespace voximp {

using ag::Index;
using ag::Mat;
using ag::Var;

enum class Mode { kTrain, kEval };

struct ControlConfig {
  double dropout_rate = 0.8;
  int proj_dim = 32;
  double grl_lambda = 1.0;
  double lambda_adv = 0.1;
  int adversary_hidden = 64;
  bool use_adversary = true;
};

inline void to_json(nlohmann::json& j, const ControlConfig& c) {
  j = {{"dropout_rate", c.dropout_rate}, {"proj_dim", c.proj_dim}, {"grl_lambda", c.grl_lambda},
       {"lambda_adv", c.lambda_adv}, {"adversary_hidden", c.adversary_hidden},
       {"use_adversary", c.use_adversary}};
}
inline void from_json(const nlohmann::json& j, ControlConfig& c) {
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.proj_dim = j.at("proj_dim").get<int>();
  c.grl_lambda = j.at("grl_lambda").get<double>();
  c.lambda_adv = j.at("lambda_adv").get<double>();
  c.adversary_hidden = j.at("adversary_hidden").get<int>();
  c.use_adversary = j.at("use_adversary").get<bool>();
}

/// Gradient reversal with scale lambda (identity forward).
inline Var grl_apply(Var t, double lambda) { return ag::grl(t, lambda); }

/// Inverted dropout: survivors are scaled by 1/(1-rate) so E[out] = x.
inline Var dropout(ag::Graph& g, Var x, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) fail(ErrorCode::kInvalidArgument, "dropout rate must be in [0,1)");
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  Mat mask(x.rows(), x.cols());
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.bernoulli(rate) ? 0.0 : keep_scale;
  return ag::mul(x, g.constant(std::move(mask)));
}

/// Centres A..J on the Likert midpoint; K is already zero-mean.
inline Mat centred_impressions(const Mat& v) {
  Mat c = v;
  c.leftCols(kNumRatedDims).array() -= 4.0;
  return c;
}

inline Mat impression_rows(std::span<const ImpressionVector> vs) {
  Mat m(static_cast<Index>(vs.size()), kNumDims);
  for (std::size_t i = 0; i < vs.size(); ++i) m.row(static_cast<Index>(i)) = vs[i].row();
  return m;
}

class ControlModule {
 public:
  struct Output {
    Var h;         // B x E conditioning query
    Var p_x;       // B x proj_dim
    Var p_v;       // B x proj_dim
    Var adv_pred;  // B x 11, centred; invalid when the adversary is off
  };

  ControlModule(nn::ParamStore& store, const std::string& ns, Index embed_dim, const ControlConfig& cfg,
                Rng& rng)
      : cfg_(cfg),
        proj_x_(store, ns + "/proj_x", embed_dim, cfg.proj_dim, rng),
        proj_v_(store, ns + "/proj_v", kNumDims, cfg.proj_dim, rng),
        fuse_(store, ns + "/fuse", 2 * cfg.proj_dim, embed_dim, rng),
        adv1_(store, ns + "/adversary/l1", cfg.proj_dim, cfg.adversary_hidden, rng),
        adv2_(store, ns + "/adversary/l2", cfg.adversary_hidden, kNumDims, rng) {}

  const ControlConfig& config() const { return cfg_; }
  void set_config(const ControlConfig& cfg) {
    if (cfg.proj_dim != cfg_.proj_dim || cfg.adversary_hidden != cfg_.adversary_hidden) {
      fail(ErrorCode::kInvalidArgument, "control config change would alter parameter shapes");
    }
    cfg_ = cfg;
  }

  /// x: B x E latent, v: B x 11 raw impression scores.
  Output condition(ag::Graph& g, Var x, const Mat& v, Mode mode, Rng* rng) const {
    if (v.cols() != kNumDims || v.rows() != x.rows()) fail(ErrorCode::kShapeError, "condition: v shape");
    if (!v.allFinite() || !x.value().allFinite()) fail(ErrorCode::kInvalidArgument, "condition: non-finite input");
    Var xd = x;
    if (mode == Mode::kTrain) {
      if (rng == nullptr) fail(ErrorCode::kInvalidArgument, "train-mode condition needs an Rng");
      xd = dropout(g, x, cfg_.dropout_rate, *rng);
    }
    Output out;
    out.p_x = proj_x_(g, xd);
    out.p_v = proj_v_(g, g.constant(centred_impressions(v)));
    out.h = fuse_(g, ag::concat_cols({out.p_x, out.p_v}));
    if (cfg_.use_adversary && mode == Mode::kTrain) {
      out.adv_pred = adversary_predict(g, grl_apply(out.p_x, cfg_.grl_lambda));
    }
    return out;
  }

  /// Two-layer ReLU regressor from p_x to the centred impression vector.
  Var adversary_predict(ag::Graph& g, Var p_x) const { return adv2_(g, ag::relu(adv1_(g, p_x))); }

  ImpressionVector adversary_estimate(const Eigen::RowVectorXd& p_x) const {
    ag::Graph g(false);
    Eigen::RowVectorXd c = adversary_predict(g, g.constant(Mat(p_x))).value().row(0);
    c.head(kNumRatedDims).array() += 4.0;
    std::array<double, kNumDims> s{};
    for (int d = 0; d < kNumDims; ++d) s[d] = c(d);
    return ImpressionVector(s);
  }

  /// Eval-mode conditioning of one latent.
  Eigen::RowVectorXd condition_eval(const Eigen::RowVectorXd& x, const ImpressionVector& v) const {
    ag::Graph g(false);
    return condition(g, g.constant(Mat(x)), Mat(v.row()), Mode::kEval, nullptr).h.value().row(0);
  }

  /// Eval-mode p_x of one latent.
  Eigen::RowVectorXd project_x(const Eigen::RowVectorXd& x) const {
    ag::Graph g(false);
    return proj_x_(g, g.constant(Mat(x))).value().row(0);
  }

 private:
  ControlConfig cfg_;
  nn::Linear proj_x_, proj_v_, fuse_;
  nn::Linear adv1_, adv2_;
};

inline double control_loss(double recon_loss, double adv_mse, const ControlConfig& cfg) {
  if (!(std::isfinite(recon_loss) && recon_loss >= 0.0 && std::isfinite(adv_mse) && adv_mse >= 0.0)) {
    fail(ErrorCode::kInvalidArgument, "control_loss: losses must be finite and >= 0");
  }
  return recon_loss + cfg.lambda_adv * adv_mse;
}

inline Var control_loss(Var recon_loss, Var adv_mse, const ControlConfig& cfg) {
  return ag::add(recon_loss, ag::scale(adv_mse, cfg.lambda_adv));
}

}  // namespace voximp
