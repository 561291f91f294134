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

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "voximp/error.hpp"

namespace voximp {

inline constexpr int kNumDims = 11;
/// Dims A..J come from listener ratings; K is derived from speech rate.
inline constexpr int kNumRatedDims = 10;

enum class Dim : int { A = 0, B, C, D, E, F, G, H, I, J, K };

enum class Scale { kLikert7, kZScore };

struct ImpressionDim {
  Dim id;
  char label;
  std::string_view name_pair;
  Scale scale;
};

inline constexpr std::array<ImpressionDim, kNumDims> kImpressionDims = {{
    {Dim::A, 'A', "High–Low pitched", Scale::kLikert7},
    {Dim::B, 'B', "Masculine–Feminine", Scale::kLikert7},
    {Dim::C, 'C', "Clear–Hoarse", Scale::kLikert7},
    {Dim::D, 'D', "Calm–Restless", Scale::kLikert7},
    {Dim::E, 'E', "Powerful–Weak", Scale::kLikert7},
    {Dim::F, 'F', "Youthful–Elderly", Scale::kLikert7},
    {Dim::G, 'G', "Thick–Thin", Scale::kLikert7},
    {Dim::H, 'H', "Tense–Relaxed", Scale::kLikert7},
    {Dim::I, 'I', "Dark–Bright", Scale::kLikert7},
    {Dim::J, 'J', "Cold–Warm", Scale::kLikert7},
    {Dim::K, 'K', "Slow–Fast", Scale::kZScore},
}};

inline constexpr int index_of(Dim d) { return static_cast<int>(d); }
inline constexpr Dim dim_at(int i) { return static_cast<Dim>(i); }
inline constexpr char label_of(Dim d) { return static_cast<char>('A' + index_of(d)); }
inline std::string label_string(Dim d) { return std::string(1, label_of(d)); }

inline Dim parse_dim(std::string_view label) {
  if (label.size() == 1 && label[0] >= 'A' && label[0] <= 'K') return dim_at(label[0] - 'A');
  if (label.size() == 1 && label[0] >= 'a' && label[0] <= 'k') return dim_at(label[0] - 'a');
  fail(ErrorCode::kInvalidArgument, "unknown impression dimension '" + std::string(label) + "'");
}

/// 11 finite scores keyed by dimension. A..J live on the 1..7 Likert scale
/// when they come from ratings or the LLM mapper; modulated vectors may leave
/// that range on purpose. K is a z-score.
class ImpressionVector {
 public:
  ImpressionVector() { scores_.fill(0.0); }
  explicit ImpressionVector(const std::array<double, kNumDims>& scores) : scores_(scores) {
    for (double s : scores_) {
      if (!std::isfinite(s)) fail(ErrorCode::kInvalidArgument, "impression scores must be finite");
    }
  }

  static ImpressionVector constant(double likert, double k = 0.0) {
    std::array<double, kNumDims> s{};
    s.fill(likert);
    s[index_of(Dim::K)] = k;
    return ImpressionVector(s);
  }

  double operator[](Dim d) const { return scores_[index_of(d)]; }
  double at(int i) const { return scores_.at(static_cast<std::size_t>(i)); }
  void set(Dim d, double value) {
    if (!std::isfinite(value)) fail(ErrorCode::kInvalidArgument, "impression scores must be finite");
    scores_[index_of(d)] = value;
  }

  const std::array<double, kNumDims>& scores() const { return scores_; }

  Eigen::RowVectorXd row() const {
    return Eigen::Map<const Eigen::RowVectorXd>(scores_.data(), kNumDims);
  }

  friend bool operator==(const ImpressionVector& a, const ImpressionVector& b) {
    return a.scores_ == b.scores_;
  }

 private:
  std::array<double, kNumDims> scores_;
};

struct RatingSet {
  std::string utterance_id;
  std::array<std::vector<int>, kNumRatedDims> per_dim_ratings;
};

/// Per-dimension arithmetic mean of 7-point ratings for A..J; K is the
/// already standardised speech rate, passed through untouched.
inline ImpressionVector aggregate_ratings(const RatingSet& rs, double speech_rate_z) {
  if (!std::isfinite(speech_rate_z)) fail(ErrorCode::kInvalidArgument, "speech rate z must be finite");
  std::array<double, kNumDims> s{};
  for (int d = 0; d < kNumRatedDims; ++d) {
    const auto& list = rs.per_dim_ratings[static_cast<std::size_t>(d)];
    if (list.empty()) {
      fail(ErrorCode::kMissingRatings,
           "utterance '" + rs.utterance_id + "' has no ratings for dim " + label_string(dim_at(d)));
    }
    double total = 0.0;
    for (int r : list) {
      if (r < 1 || r > 7) {
        fail(ErrorCode::kInvalidRating, "rating " + std::to_string(r) + " outside 1..7 for dim " +
                                            label_string(dim_at(d)));
      }
      total += r;
    }
    s[static_cast<std::size_t>(d)] = total / static_cast<double>(list.size());
  }
  s[index_of(Dim::K)] = speech_rate_z;
  return ImpressionVector(s);
}

/// (r - mean) / std with the population standard deviation.
inline std::vector<double> standardize_speech_rates(std::span<const double> rates) {
  if (rates.size() < 2) fail(ErrorCode::kInsufficientData, "need at least two speech rates");
  double mean = 0.0;
  for (double r : rates) {
    if (!std::isfinite(r)) fail(ErrorCode::kInvalidArgument, "speech rates must be finite");
    mean += r;
  }
  mean /= static_cast<double>(rates.size());
  double var = 0.0;
  for (double r : rates) var += (r - mean) * (r - mean);
  var /= static_cast<double>(rates.size());
  const double sd = std::sqrt(var);
  if (!(sd > 0.0)) fail(ErrorCode::kZeroVariance, "speech rates have zero variance");
  std::vector<double> out;
  out.reserve(rates.size());
  for (double r : rates) out.push_back((r - mean) / sd);
  return out;
}

using Deltas = std::map<Dim, double>;

/// Shifts the named dims; no clamping.
inline ImpressionVector modulate(const ImpressionVector& v, const Deltas& deltas) {
  std::array<double, kNumDims> s = v.scores();
  for (const auto& [dim, delta] : deltas) {
    if (!std::isfinite(delta)) {
      fail(ErrorCode::kInvalidDelta, "non-finite delta for dim " + label_string(dim));
    }
    s[index_of(dim)] += delta;
  }
  return ImpressionVector(s);
}

struct CorrelationMatrix {
  Eigen::Matrix<double, kNumDims, kNumDims> values;
  std::size_t n_samples = 0;

  double operator()(Dim a, Dim b) const { return values(index_of(a), index_of(b)); }
};

/// Pearson correlation between every pair of dims across `vs`.
inline CorrelationMatrix correlation_matrix(std::span<const ImpressionVector> vs) {
  if (vs.size() < 3) fail(ErrorCode::kInsufficientData, "need at least three vectors");
  const double n = static_cast<double>(vs.size());
  std::array<double, kNumDims> mean{};
  for (const auto& v : vs) {
    for (int d = 0; d < kNumDims; ++d) mean[d] += v.at(d);
  }
  for (double& m : mean) m /= n;
  Eigen::Matrix<double, kNumDims, kNumDims> cov = Eigen::Matrix<double, kNumDims, kNumDims>::Zero();
  for (const auto& v : vs) {
    std::array<double, kNumDims> c{};
    for (int d = 0; d < kNumDims; ++d) c[d] = v.at(d) - mean[d];
    for (int a = 0; a < kNumDims; ++a) {
      for (int b = a; b < kNumDims; ++b) cov(a, b) += c[a] * c[b];
    }
  }
  for (int d = 0; d < kNumDims; ++d) {
    if (!(cov(d, d) > 0.0)) {
      fail(ErrorCode::kZeroVariance, "dim " + label_string(dim_at(d)) + " has zero variance");
    }
  }
  CorrelationMatrix out;
  out.n_samples = vs.size();
  for (int a = 0; a < kNumDims; ++a) {
    out.values(a, a) = 1.0;
    for (int b = a + 1; b < kNumDims; ++b) {
      const double r = std::clamp(cov(a, b) / std::sqrt(cov(a, a) * cov(b, b)), -1.0, 1.0);
      out.values(a, b) = r;
      out.values(b, a) = r;
    }
  }
  return out;
}

// ---- serialisation ----------------------------------------------------------

struct LabeledVector {
  std::string utt_id;
  ImpressionVector vector;
};

inline std::string format_fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  // Avoid "-0.000000" so equal values always serialise identically.
  if (std::string_view(buf) == "-0.000000") return "0.000000";
  return buf;
}

inline std::string csv_header() { return "utt_id,A,B,C,D,E,F,G,H,I,J,K"; }

inline std::string to_csv_row(const LabeledVector& lv) {
  std::string row = lv.utt_id;
  for (int d = 0; d < kNumDims; ++d) row += "," + format_fixed6(lv.vector.at(d));
  return row;
}

inline void write_vectors_csv(std::ostream& out, std::span<const LabeledVector> rows) {
  out << csv_header() << '\n';
  for (const auto& r : rows) out << to_csv_row(r) << '\n';
}

inline std::vector<LabeledVector> read_vectors_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != csv_header()) {
    fail(ErrorCode::kIoError, "impression CSV must start with header " + csv_header());
  }
  std::vector<LabeledVector> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    LabeledVector lv{cell, {}};
    std::array<double, kNumDims> s{};
    for (int d = 0; d < kNumDims; ++d) {
      if (!std::getline(ss, cell, ',')) fail(ErrorCode::kIoError, "short CSV row: " + line);
      try {
        s[d] = std::stod(cell);
      } catch (const std::exception&) {
        fail(ErrorCode::kIoError, "bad number '" + cell + "' in CSV row");
      }
    }
    lv.vector = ImpressionVector(s);
    rows.push_back(std::move(lv));
  }
  return rows;
}

/// {"A": 4.000000, ..., "K": 0.000000} with fixed 6-decimal numbers.
inline std::string scores_json(const ImpressionVector& v) {
  std::string s = "{";
  for (int d = 0; d < kNumDims; ++d) {
    if (d > 0) s += ", ";
    s += "\"" + label_string(dim_at(d)) + "\": " + format_fixed6(v.at(d));
  }
  return s + "}";
}

inline std::string to_json_line(const LabeledVector& lv) {
  return "{\"utt_id\": " + nlohmann::json(lv.utt_id).dump() + ", \"scores\": " + scores_json(lv.vector) +
         "}";
}

inline ImpressionVector vector_from_json(const nlohmann::json& scores) {
  std::array<double, kNumDims> s{};
  for (int d = 0; d < kNumDims; ++d) {
    const std::string key = label_string(dim_at(d));
    if (!scores.contains(key)) fail(ErrorCode::kMissingDimension, key);
    s[d] = scores.at(key).get<double>();
  }
  return ImpressionVector(s);
}

inline LabeledVector labeled_from_json(const nlohmann::json& j) {
  return {j.at("utt_id").get<std::string>(), vector_from_json(j.at("scores"))};
}

}  // namespace voximp
