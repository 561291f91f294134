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

#include <memory>
#include <utility>
#include <vector>

#include "voximp/ag/graph.hpp"

namespace voximp::ag {

using Arr = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Single-direction LSTM over a time-major batch.
///
/// `x` holds T*batch rows ordered time-major (row t*batch + b). Gate layout
/// in the 4H columns of wx/wh/bias is [input, forget, cell, output]. When
/// `reverse` is set the recurrence runs from t = T-1 down to 0; outputs are
/// always stored at their own time index. Initial state is zero.
inline Var lstm(Var x, Var wx, Var wh, Var bias, Index batch, bool reverse) {
  const Index rows = x.rows();
  const Index hidden = wh.rows();
  if (batch <= 0 || rows % batch != 0) fail(ErrorCode::kShapeError, "lstm: rows not divisible by batch");
  if (wx.rows() != x.cols() || wx.cols() != 4 * hidden || wh.cols() != 4 * hidden) {
    fail(ErrorCode::kShapeError, "lstm: weight shapes");
  }
  detail::require_row(bias, 4 * hidden, "lstm bias");
  const Index steps = rows / batch;

  struct Saved {
    Mat gates;  // post-activation i, f, g, o per row, (T*B) x 4H
    Mat cell;   // (T*B) x H
  };
  auto saved = std::make_shared<Saved>();
  saved->gates.resize(rows, 4 * hidden);
  saved->cell.resize(rows, hidden);
  Mat out(rows, hidden);

  Mat pre = x.value() * wx.value();
  pre.rowwise() += bias.value().row(0);
  Mat h = Mat::Zero(batch, hidden);
  Mat c = Mat::Zero(batch, hidden);
  const Mat& whv = wh.value();
  for (Index s = 0; s < steps; ++s) {
    const Index t = reverse ? steps - 1 - s : s;
    Mat gates = pre.middleRows(t * batch, batch);
    gates.noalias() += h * whv;
    auto gi = gates.leftCols(hidden).array();
    gi = (1.0 + (-gi).exp()).inverse();
    auto gf = gates.middleCols(hidden, hidden).array();
    gf = (1.0 + (-gf).exp()).inverse();
    auto gg = gates.middleCols(2 * hidden, hidden).array();
    gg = gg.tanh();
    auto go = gates.rightCols(hidden).array();
    go = (1.0 + (-go).exp()).inverse();
    c = (gf * c.array() + gi * gg).matrix();
    h = (go * c.array().tanh()).matrix();
    saved->gates.middleRows(t * batch, batch) = gates;
    saved->cell.middleRows(t * batch, batch) = c;
    out.middleRows(t * batch, batch) = h;
  }

  Graph& g = *x.graph();
  return g.op(std::move(out), {x, wx, wh, bias},
              [x, wx, wh, bias, batch, reverse, steps, hidden, saved](Graph& gr, int self,
                                                                       const Mat& gout) {
                const Mat& hs = gr.value(self);
                const Mat& whv = wh.value();
                Mat dpre(steps * batch, 4 * hidden);
                Mat dh_next = Mat::Zero(batch, hidden);
                Mat dc_next = Mat::Zero(batch, hidden);
                Mat dwh = Mat::Zero(hidden, 4 * hidden);
                for (Index s = steps - 1; s >= 0; --s) {
                  const Index t = reverse ? steps - 1 - s : s;
                  const Index prev_t = reverse ? t + 1 : t - 1;
                  const bool has_prev = s > 0;
                  auto gates = saved->gates.middleRows(t * batch, batch);
                  auto i = gates.leftCols(hidden).array();
                  auto f = gates.middleCols(hidden, hidden).array();
                  auto gg = gates.middleCols(2 * hidden, hidden).array();
                  auto o = gates.rightCols(hidden).array();
                  auto c = saved->cell.middleRows(t * batch, batch).array();
                  Mat c_prev = has_prev ? Mat(saved->cell.middleRows(prev_t * batch, batch))
                                        : Mat::Zero(batch, hidden);
                  Mat dh = gout.middleRows(t * batch, batch) + dh_next;
                  Arr tc = c.tanh();
                  Arr dc = dh.array() * o * (1.0 - tc.square()) + dc_next.array();
                  auto d = dpre.middleRows(t * batch, batch);
                  d.leftCols(hidden) = (dc * gg * i * (1.0 - i)).matrix();
                  d.middleCols(hidden, hidden) = (dc * c_prev.array() * f * (1.0 - f)).matrix();
                  d.middleCols(2 * hidden, hidden) = (dc * i * (1.0 - gg.square())).matrix();
                  d.rightCols(hidden) = (dh.array() * tc * o * (1.0 - o)).matrix();
                  if (has_prev) {
                    dwh.noalias() += hs.middleRows(prev_t * batch, batch).transpose() * d;
                  }
                  dh_next.noalias() = d * whv.transpose();
                  dc_next = (dc * f).matrix();
                }
                if (gr.needs_grad(wh)) gr.accumulate(wh.id(), dwh);
                if (gr.needs_grad(bias)) gr.accumulate(bias.id(), dpre.colwise().sum());
                if (gr.needs_grad(wx)) gr.accumulate(wx.id(), x.value().transpose() * dpre);
                if (gr.needs_grad(x)) gr.accumulate(x.id(), dpre * wx.value().transpose());
              });
}

}  // namespace voximp::ag
