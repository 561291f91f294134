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

// Unified checkpoint archive.
//
//   offset 0   8 bytes   magic "VOXIMPCK"
//          8   u32 LE    schema version
//         12   u64 LE    header length N
//         20   N bytes   UTF-8 JSON header {"schema", "meta", "tensors":[{name,rows,cols}]}
//       20+N   f64 LE    tensor payloads, row-major, in header order

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "voximp/error.hpp"
#include "voximp/nn/params.hpp"

namespace voximp::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr std::uint32_t kCheckpointSchema = 1;
inline constexpr char kCheckpointMagic[8] = {'V', 'O', 'X', 'I', 'M', 'P', 'C', 'K'};

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Mat> tensors;
};

/// Writes every parameter (or only those in `namespaces`, when non-empty).
inline void save_checkpoint(const std::filesystem::path& path, const ParamStore& store,
                            const nlohmann::json& meta,
                            const std::vector<std::string>& namespaces = {}) {
  nlohmann::json header;
  header["schema"] = kCheckpointSchema;
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  std::vector<const Mat*> payload;
  for (const auto& [name, p] : store.all()) {
    bool keep = namespaces.empty();
    for (const auto& ns : namespaces) keep = keep || ParamStore::in_namespace(name, ns);
    if (!keep) continue;
    header["tensors"].push_back({{"name", name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
    payload.push_back(&p.value);
  }
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint32_t schema = kCheckpointSchema;
  out.write(reinterpret_cast<const char*>(&schema), sizeof(schema));
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Mat* m : payload) {
    out.write(reinterpret_cast<const char*>(m->data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m->size())));
  }
  if (!out) fail(ErrorCode::kIoError, "short write on checkpoint " + path.string());
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::string(magic, 8) != std::string(kCheckpointMagic, 8)) {
    fail(ErrorCode::kIoError, "not a checkpoint archive: " + path.string());
  }
  std::uint32_t schema = 0;
  in.read(reinterpret_cast<char*>(&schema), sizeof(schema));
  if (schema != kCheckpointSchema) {
    fail(ErrorCode::kIoError, "unsupported checkpoint schema " + std::to_string(schema));
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) fail(ErrorCode::kIoError, "truncated checkpoint header: " + path.string());
  nlohmann::json header = nlohmann::json::parse(text);
  Checkpoint ck;
  ck.meta = header.value("meta", nlohmann::json::object());
  for (const auto& t : header.at("tensors")) {
    Mat m(t.at("rows").get<Index>(), t.at("cols").get<Index>());
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
    if (!in) fail(ErrorCode::kIoError, "truncated checkpoint payload: " + path.string());
    ck.tensors.emplace(t.at("name").get<std::string>(), std::move(m));
  }
  return ck;
}

/// Copies tensors into matching parameters. Every parameter of the store
/// under `namespaces` (all, when empty) must be present with the right shape.
inline void load_into(ParamStore& store, const Checkpoint& ck,
                      const std::vector<std::string>& namespaces = {}) {
  for (auto& [name, p] : store.all()) {
    bool want = namespaces.empty();
    for (const auto& ns : namespaces) want = want || ParamStore::in_namespace(name, ns);
    if (!want) continue;
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) fail(ErrorCode::kIoError, "checkpoint lacks parameter " + name);
    if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols()) {
      fail(ErrorCode::kShapeError, "checkpoint shape mismatch for " + name);
    }
    p.value = it->second;
  }
}

inline bool checkpoint_has_namespace(const Checkpoint& ck, const std::string& ns) {
  for (const auto& [name, m] : ck.tensors) {
    if (ParamStore::in_namespace(name, ns)) return true;
  }
  return false;
}

}  // namespace voximp::nn
