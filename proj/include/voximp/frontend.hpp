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
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "voximp/ag/graph.hpp"
#include "voximp/corpus.hpp"
#include "voximp/error.hpp"
#include "voximp/rng.hpp"

namespace voximp {

/// Frame x layer x channel representation of one utterance.
///
/// Stored as `layers` rows of frames*channels values so that a softmax
/// weighting over layers is a single (1 x L) * (L x T*D) product.
struct SSLFeatureStack {
  Index frames = 0;
  Index layers = 0;
  Index channels = 0;
  Mat data;  // layers x (frames * channels), each row is a row-major T x D block

  Mat layer(Index l) const { return Eigen::Map<const Mat>(data.row(l).data(), frames, channels); }
  double operator()(Index t, Index l, Index c) const { return data(l, t * channels + c); }
};

/// Produces feature stacks from mel spectrograms. Implementations are
/// frozen: nothing downstream ever updates them.
class Frontend {
 public:
  virtual ~Frontend() = default;
  virtual SSLFeatureStack extract(const Mat& mel) const = 0;
  virtual Index layers() const = 0;
  virtual Index channels() const = 0;
};

struct FrontendOptions {
  int layers = 4;  // including the input-embedding layer
  int channels = 64;
  int context = 1;  // frames on each side
  std::uint64_t seed = 0xf207e7dULL;
  double input_offset = -3.5;  // subtracted from mel values before projection
};

inline void to_json(nlohmann::json& j, const FrontendOptions& o) {
  j = {{"layers", o.layers}, {"channels", o.channels}, {"context", o.context}, {"seed", o.seed},
       {"input_offset", o.input_offset}};
}
inline void from_json(const nlohmann::json& j, FrontendOptions& o) {
  o.layers = j.at("layers").get<int>();
  o.channels = j.at("channels").get<int>();
  o.context = j.at("context").get<int>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.input_offset = j.at("input_offset").get<double>();
}

/// Desk-scale stand-in for a pretrained self-supervised speech model: each
/// pseudo-layer is a fixed seeded linear map of the mel frame and its
/// neighbours (edges replicated).
class FrontendStub final : public Frontend {
 public:
  explicit FrontendStub(FrontendOptions opt = {}) : opt_(opt) {
    const Index in = static_cast<Index>(kNumMels) * (2 * opt_.context + 1);
    Rng rng(opt_.seed);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(in));
    weights_.reserve(static_cast<std::size_t>(opt_.layers));
    for (int l = 0; l < opt_.layers; ++l) {
      Mat w(in, opt_.channels);
      for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal(0.0, stddev);
      weights_.push_back(std::move(w));
    }
  }

  SSLFeatureStack extract(const Mat& mel) const override {
    if (mel.rows() < 1 || mel.cols() != kNumMels) {
      fail(ErrorCode::kShapeError, "frontend expects a T x 80 mel with T >= 1");
    }
    const Index frames = mel.rows();
    const int width = 2 * opt_.context + 1;
    Mat ctx(frames, static_cast<Index>(kNumMels) * width);
    for (Index t = 0; t < frames; ++t) {
      for (int k = 0; k < width; ++k) {
        const Index src = std::clamp<Index>(t + k - opt_.context, 0, frames - 1);
        ctx.block(t, static_cast<Index>(k) * kNumMels, 1, kNumMels) = mel.row(src).array() - opt_.input_offset;
      }
    }
    SSLFeatureStack s;
    s.frames = frames;
    s.layers = opt_.layers;
    s.channels = opt_.channels;
    s.data.resize(opt_.layers, frames * opt_.channels);
    for (int l = 0; l < opt_.layers; ++l) {
      Mat out = ctx * weights_[static_cast<std::size_t>(l)];
      s.data.row(l) = Eigen::Map<const Eigen::RowVectorXd>(out.data(), out.size());
    }
    return s;
  }

  Index layers() const override { return opt_.layers; }
  Index channels() const override { return opt_.channels; }
  const FrontendOptions& options() const { return opt_; }

  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Mat& w : weights_) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(w.data());
      for (std::size_t i = 0; i < sizeof(double) * static_cast<std::size_t>(w.size()); ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
      }
    }
    return h;
  }

 private:
  FrontendOptions opt_;
  std::vector<Mat> weights_;
};

// Feature stacks computed elsewhere (for instance by a real self-supervised
// model run offline) use the same raw float32 + JSON sidecar layout as mels.

inline void write_feature_stack(const std::filesystem::path& path, const SSLFeatureStack& s) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot write feature stack " + path.string());
  // On disk the layout is frame-major: T x L x D.
  for (Index t = 0; t < s.frames; ++t) {
    for (Index l = 0; l < s.layers; ++l) {
      for (Index c = 0; c < s.channels; ++c) {
        const float v = static_cast<float>(s(t, l, c));
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
    }
  }
  nlohmann::ordered_json side;
  side["shape"] = {s.frames, s.layers, s.channels};
  side["dtype"] = "float32";
  std::ofstream sc(std::filesystem::path(path).replace_extension(".json"), std::ios::trunc);
  sc << side.dump() << '\n';
}

inline SSLFeatureStack read_feature_stack(const std::filesystem::path& path) {
  std::ifstream sc(std::filesystem::path(path).replace_extension(".json"));
  if (!sc) fail(ErrorCode::kIoError, "missing feature sidecar for " + path.string());
  const auto side = nlohmann::json::parse(sc);
  const auto shape = side.at("shape").get<std::vector<Index>>();
  if (shape.size() != 3 || shape[0] < 1) fail(ErrorCode::kIoError, "bad feature stack shape");
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot open feature stack " + path.string());
  SSLFeatureStack s;
  s.frames = shape[0];
  s.layers = shape[1];
  s.channels = shape[2];
  s.data.resize(s.layers, s.frames * s.channels);
  for (Index t = 0; t < s.frames; ++t) {
    for (Index l = 0; l < s.layers; ++l) {
      for (Index c = 0; c < s.channels; ++c) {
        float v = 0.0f;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        s.data(l, t * s.channels + c) = v;
      }
    }
  }
  if (!in) fail(ErrorCode::kIoError, "truncated feature stack " + path.string());
  return s;
}

/// Crops frames [start, start + length) out of a stack.
inline SSLFeatureStack crop_stack(const SSLFeatureStack& s, Index start, Index length) {
  if (start < 0 || length < 1 || start + length > s.frames) fail(ErrorCode::kShapeError, "crop_stack range");
  SSLFeatureStack out;
  out.frames = length;
  out.layers = s.layers;
  out.channels = s.channels;
  out.data = s.data.middleCols(start * s.channels, length * s.channels);
  return out;
}

}  // namespace voximp
