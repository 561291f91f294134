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

// Run configuration: one JSON document that fixes every input of the
// pipeline. Files are merged over the defaults; any key the defaults do not
// define is rejected.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "voximp/corpus.hpp"
#include "voximp/estimator.hpp"
#include "voximp/eval.hpp"
#include "voximp/llm.hpp"
#include "voximp/tts.hpp"

namespace voximp {

inline void to_json(nlohmann::json& j, const CorpusOptions& o) {
  j = {{"n_speakers", o.n_speakers}, {"utts_per_speaker", o.utts_per_speaker},
       {"split_ratios", o.split_ratios}, {"noise_sigma", o.noise_sigma},
       {"min_tokens", o.min_tokens}, {"max_tokens", o.max_tokens}};
}
inline void from_json(const nlohmann::json& j, CorpusOptions& o) {
  o.n_speakers = j.at("n_speakers").get<int>();
  o.utts_per_speaker = j.at("utts_per_speaker").get<int>();
  o.split_ratios = j.at("split_ratios").get<std::array<double, 3>>();
  o.noise_sigma = j.at("noise_sigma").get<double>();
  o.min_tokens = j.at("min_tokens").get<int>();
  o.max_tokens = j.at("max_tokens").get<int>();
}

/// Tunable part of a stage plan; namespaces and optimizer kind are fixed
/// per stage.
struct StageSettings {
  long steps = 0;
  double lr = 0.0;
  int warmup = 400;
  int batch_size = 8;
  int crop_frames = 64;
  double gan_weight = 0.1;
};

inline StageSettings settings_of(const StagePlan& p) {
  return {p.steps, p.lr, p.warmup, p.batch_size, p.crop_frames, p.gan_weight};
}

inline void to_json(nlohmann::json& j, const StageSettings& s) {
  j = {{"steps", s.steps},           {"lr", s.lr},
       {"warmup", s.warmup},         {"batch_size", s.batch_size},
       {"crop_frames", s.crop_frames}, {"gan_weight", s.gan_weight}};
}
inline void from_json(const nlohmann::json& j, StageSettings& s) {
  s.steps = j.at("steps").get<long>();
  s.lr = j.at("lr").get<double>();
  s.warmup = j.at("warmup").get<int>();
  s.batch_size = j.at("batch_size").get<int>();
  s.crop_frames = j.at("crop_frames").get<int>();
  s.gan_weight = j.at("gan_weight").get<double>();
}

struct EvalSettings {
  std::vector<double> deltas = default_deltas();
  int n_utts = 20;
  std::string dims = "ABCDEFGHIJK";
  std::string pair = "EH";
  int similarity_n_utts = 5;
  std::string reference_split = "test";
  int n_references = 2;
};

inline void to_json(nlohmann::json& j, const EvalSettings& e) {
  j = {{"deltas", e.deltas},
       {"n_utts", e.n_utts},
       {"dims", e.dims},
       {"pair", e.pair},
       {"similarity_n_utts", e.similarity_n_utts},
       {"reference_split", e.reference_split},
       {"n_references", e.n_references}};
}
inline void from_json(const nlohmann::json& j, EvalSettings& e) {
  e.deltas = j.at("deltas").get<std::vector<double>>();
  e.n_utts = j.at("n_utts").get<int>();
  e.dims = j.at("dims").get<std::string>();
  e.pair = j.at("pair").get<std::string>();
  e.similarity_n_utts = j.at("similarity_n_utts").get<int>();
  e.reference_split = j.at("reference_split").get<std::string>();
  e.n_references = j.at("n_references").get<int>();
}

inline void to_json(nlohmann::json& j, const EmbedderOptions& o) {
  j = {{"n_speakers", o.n_speakers}, {"utts_per_speaker", o.utts_per_speaker}, {"hidden", o.hidden},
       {"dim", o.dim},               {"scale", o.scale},   {"margin", o.margin},
       {"steps", o.steps},           {"lr", o.lr}};
}
inline void from_json(const nlohmann::json& j, EmbedderOptions& o) {
  o.n_speakers = j.at("n_speakers").get<int>();
  o.utts_per_speaker = j.at("utts_per_speaker").get<int>();
  o.hidden = j.at("hidden").get<int>();
  o.dim = j.at("dim").get<int>();
  o.scale = j.at("scale").get<double>();
  o.margin = j.at("margin").get<double>();
  o.steps = j.at("steps").get<int>();
  o.lr = j.at("lr").get<double>();
}

struct RunConfig {
  std::uint64_t seed = 0;
  std::string work_dir = "voximp_run";
  std::string preset = "desk";
  CorpusOptions corpus;
  ModelOptions model;
  StageSettings pretrain = settings_of(default_plan(Stage::kPretrain));
  StageSettings gan_refine = settings_of(default_plan(Stage::kGanRefine));
  StageSettings control = settings_of(default_plan(Stage::kControl));
  EstimatorOptions estimator;
  EvalSettings eval;
  EmbedderOptions embedder;
  llm::LlmClientConfig llm;

  std::filesystem::path dir() const { return work_dir; }
  std::filesystem::path corpus_dir() const { return dir() / "corpus"; }
  std::filesystem::path manifest_path() const { return corpus_dir() / "manifest.jsonl"; }
  std::filesystem::path tts_checkpoint() const { return dir() / "tts.ckpt"; }
  std::filesystem::path estimator_checkpoint() const { return dir() / "estimator.ckpt"; }
  std::filesystem::path reports_dir() const { return dir() / "reports"; }

  /// Seeds derived from the run seed so one integer fixes the whole run.
  CorpusOptions corpus_options() const {
    CorpusOptions c = corpus;
    c.seed = seed;
    return c;
  }
  std::uint64_t stage_seed(Stage s) const { return Rng::derive(seed, name_hash("stage/" + stage_name(s))); }
  EstimatorOptions estimator_options() const {
    EstimatorOptions e = estimator;
    e.seed = Rng::derive(seed, name_hash("estimator"));
    return e;
  }
  EmbedderOptions embedder_options() const {
    EmbedderOptions e = embedder;
    e.seed = Rng::derive(seed, name_hash("embedder"));
    return e;
  }
  std::uint64_t eval_seed() const { return Rng::derive(seed, name_hash("eval")); }

  StagePlan plan(Stage s) const {
    StagePlan p = default_plan(s, preset == "full" ? Preset::kFull : Preset::kDesk);
    const StageSettings& st = s == Stage::kPretrain ? pretrain : s == Stage::kGanRefine ? gan_refine : control;
    if (preset != "full") p.steps = st.steps;
    p.lr = st.lr;
    p.warmup = st.warmup;
    p.batch_size = st.batch_size;
    p.crop_frames = st.crop_frames;
    p.gan_weight = st.gan_weight;
    p.seed = stage_seed(s);
    return p;
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  nlohmann::json est = c.estimator;
  est.erase("seed");
  est.erase("frontend");
  j = {{"seed", c.seed},         {"work_dir", c.work_dir},   {"preset", c.preset},
       {"corpus", c.corpus},     {"model", c.model},         {"stages", {{"pretrain", c.pretrain},
                                                                         {"gan_refine", c.gan_refine},
                                                                         {"control", c.control}}},
       {"estimator", est},       {"eval", c.eval},           {"embedder", c.embedder},
       {"llm", c.llm}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  c.seed = j.at("seed").get<std::uint64_t>();
  c.work_dir = j.at("work_dir").get<std::string>();
  c.preset = j.at("preset").get<std::string>();
  if (c.preset != "desk" && c.preset != "full") fail(ErrorCode::kConfigError, "preset must be desk or full");
  c.corpus = j.at("corpus").get<CorpusOptions>();
  c.model = j.at("model").get<ModelOptions>();
  c.pretrain = j.at("stages").at("pretrain").get<StageSettings>();
  c.gan_refine = j.at("stages").at("gan_refine").get<StageSettings>();
  c.control = j.at("stages").at("control").get<StageSettings>();
  nlohmann::json est = j.at("estimator");
  est["seed"] = 0;
  est["frontend"] = c.model.frontend;
  c.estimator = est.get<EstimatorOptions>();
  c.eval = j.at("eval").get<EvalSettings>();
  c.embedder = j.at("embedder").get<EmbedderOptions>();
  c.embedder.frontend = c.model.frontend;
  c.llm = j.at("llm").get<llm::LlmClientConfig>();
}

/// Recursively overlays `user` onto `base`. Objects merge key by key;
/// everything else replaces. Keys absent from `base` and type changes are
/// configuration errors.
inline void merge_strict(nlohmann::json& base, const nlohmann::json& user, const std::string& path = "") {
  if (!user.is_object()) fail(ErrorCode::kConfigError, "config" + path + " must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string where = path + "." + key;
    if (!base.contains(key)) fail(ErrorCode::kConfigError, "unknown config key " + where.substr(1));
    nlohmann::json& slot = base[key];
    if (slot.is_object()) {
      merge_strict(slot, value, where);
    } else {
      const bool both_numbers = slot.is_number() && value.is_number();
      if (!both_numbers && slot.type() != value.type()) {
        fail(ErrorCode::kConfigError, "config key " + where.substr(1) + " has the wrong type");
      }
      slot = value;
    }
  }
}

inline RunConfig config_from_json(const nlohmann::json& user) {
  nlohmann::json merged = RunConfig{};
  merge_strict(merged, user);
  try {
    return merged.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfigError, e.what());
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, "cannot read config " + path.string());
  const auto j = nlohmann::json::parse(in, nullptr, false, true);
  if (j.is_discarded()) fail(ErrorCode::kConfigError, path.string() + " is not valid JSON");
  return config_from_json(j);
}

inline std::string config_text(const RunConfig& c) { return nlohmann::json(c).dump(2) + "\n"; }

}  // namespace voximp
