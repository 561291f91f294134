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
#include <cstring>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "voximp/ag/graph.hpp"
#include "voximp/error.hpp"
#include "voximp/rng.hpp"

namespace voximp::nn {

using ag::Index;
using ag::Mat;
using ag::Var;

struct Parameter {
  Mat value;
  Mat grad;
  bool trainable = true;
};

/// Named parameter arrays. Names are slash-separated and the first path
/// component is the module namespace ("backbone/dec0/ffn1/w"); freezing,
/// hashing and checkpoint filtering all work on those prefixes.
///
/// std::map keeps iteration order (and therefore hashes, checkpoints and
/// optimizer state) independent of construction order.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter& create(const std::string& name, Index rows, Index cols) {
    auto [it, inserted] = params_.try_emplace(name);
    if (!inserted) fail(ErrorCode::kInvalidArgument, "duplicate parameter " + name);
    it->second.value = Mat::Zero(rows, cols);
    it->second.grad = Mat::Zero(rows, cols);
    return it->second;
  }

  Parameter& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) fail(ErrorCode::kInvalidArgument, "unknown parameter " + name);
    return it->second;
  }
  const Parameter* find(const std::string& name) const {
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : &it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::map<std::string, Parameter>& all() { return params_; }
  const std::map<std::string, Parameter>& all() const { return params_; }

  std::vector<Parameter*> with_prefix(std::string_view prefix) {
    std::vector<Parameter*> out;
    for (auto& [name, p] : params_) {
      if (name.compare(0, prefix.size(), prefix) == 0) out.push_back(&p);
    }
    return out;
  }

  /// Marks exactly the parameters under the given namespaces as trainable.
  void set_trainable(const std::vector<std::string>& namespaces) {
    for (auto& [name, p] : params_) {
      p.trainable = false;
      for (const auto& ns : namespaces) {
        if (in_namespace(name, ns)) p.trainable = true;
      }
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.grad.setZero();
  }

  /// FNV-1a over names, shapes and raw value bytes of every parameter whose
  /// namespace is `ns` (empty string hashes everything).
  std::uint64_t hash(std::string_view ns = {}) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* data, std::size_t n) {
      const auto* bytes = static_cast<const unsigned char*>(data);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& [name, p] : params_) {
      if (!ns.empty() && !in_namespace(name, ns)) continue;
      feed(name.data(), name.size());
      const std::int64_t shape[2] = {p.value.rows(), p.value.cols()};
      feed(shape, sizeof(shape));
      feed(p.value.data(), sizeof(double) * static_cast<std::size_t>(p.value.size()));
    }
    return h;
  }

  std::size_t count(std::string_view ns = {}) const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) {
      if (ns.empty() || in_namespace(name, ns)) n += static_cast<std::size_t>(p.value.size());
    }
    return n;
  }

  static bool in_namespace(std::string_view name, std::string_view ns) {
    return name.size() > ns.size() && name.compare(0, ns.size(), ns) == 0 && name[ns.size()] == '/';
  }

  static std::string namespace_of(std::string_view name) {
    return std::string(name.substr(0, name.find('/')));
  }

 private:
  std::map<std::string, Parameter> params_;
};

inline void init_uniform(Parameter& p, double bound, Rng& rng) {
  for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = rng.uniform(-bound, bound);
}

inline void init_normal(Parameter& p, double stddev, Rng& rng) {
  for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = rng.normal(0.0, stddev);
}

/// Glorot/Xavier uniform for a fan_in x fan_out weight.
inline void init_xavier(Parameter& p, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
  init_uniform(p, bound, rng);
}

/// Places a parameter on the graph; frozen parameters and inference graphs
/// get a leaf without a gradient slot.
inline Var bind(ag::Graph& g, Parameter& p) {
  return g.param(p.value, (p.trainable && g.recording()) ? &p.grad : nullptr);
}

}  // namespace voximp::nn
