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

// Pipeline steps shared by the command-line tool and the acceptance suite.
// Every step reads and writes under RunConfig::work_dir.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <ostream>
#include <string>
#include <vector>

#include "voximp/config.hpp"
#include "voximp/corpus.hpp"
#include "voximp/estimator.hpp"
#include "voximp/eval.hpp"
#include "voximp/tts.hpp"

namespace voximp {

inline std::uint64_t file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return name_hash(bytes);
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline Dataset load_dataset(const RunConfig& cfg) {
  if (!std::filesystem::exists(cfg.manifest_path())) {
    fail(ErrorCode::kIoError, "no corpus at " + cfg.manifest_path().string() + " (run gen-corpus first)");
  }
  return Dataset::load(cfg.manifest_path());
}

struct CorpusSummary {
  std::size_t utterances = 0;
  std::array<std::size_t, 3> speakers{};
  std::string manifest_hash;
};

inline CorpusSummary gen_corpus(const RunConfig& cfg) {
  OracleGenerator gen;
  BuiltCorpus built = build_corpus(gen, cfg.corpus_options());
  save_corpus(cfg.corpus_dir(), built);
  CorpusSummary s;
  s.utterances = built.manifest.records.size();
  for (std::size_t k = 0; k < 3; ++k) s.speakers[k] = built.manifest.speakers(split_names()[k]).size();
  s.manifest_hash = hex64(file_hash(cfg.manifest_path()));
  return s;
}

inline std::filesystem::path metrics_path(const RunConfig& cfg, Stage s) {
  return cfg.reports_dir() / ("train_" + stage_name(s) + ".csv");
}

using StepLogger = std::function<void(Stage, const StepMetrics&)>;

/// Pretrain and, when it has steps, the GAN refinement stage. Always starts
/// from a freshly initialised model.
inline std::vector<TrainReport> train_backbone(const RunConfig& cfg, const Dataset& data, const StepLogger& log = {}) {
  TtsModel model(cfg.model, cfg.seed);
  std::vector<TrainReport> reports;
  for (Stage s : {Stage::kPretrain, Stage::kGanRefine}) {
    const StagePlan plan = cfg.plan(s);
    if (plan.steps == 0) continue;
    reports.push_back(train_stage(model, plan, data, [&](const StepMetrics& m) {
      if (log) log(s, m);
    }));
    write_metrics_csv(metrics_path(cfg, s), reports.back());
  }
  model.save(cfg.tts_checkpoint());
  return reports;
}

inline std::unique_ptr<TtsModel> load_tts(const RunConfig& cfg) {
  if (!std::filesystem::exists(cfg.tts_checkpoint())) {
    fail(ErrorCode::kStageOrderViolation, "no backbone checkpoint at " + cfg.tts_checkpoint().string() +
                                              " (run train-backbone first)");
  }
  return TtsModel::load(cfg.tts_checkpoint());
}

/// Control stage on the saved backbone; the checkpoint is updated in place.
/// Control options come from the config, so ablations need no retraining
/// of the backbone.
inline TrainReport train_control(const RunConfig& cfg, const Dataset& data, const StepLogger& log = {}) {
  auto model = load_tts(cfg);
  if (!model->stage_done(Stage::kPretrain)) {
    fail(ErrorCode::kStageOrderViolation, "checkpoint has no completed pretrain stage");
  }
  model->set_control_config(cfg.model.control);
  TrainReport r = train_stage(*model, cfg.plan(Stage::kControl), data, [&](const StepMetrics& m) {
    if (log) log(Stage::kControl, m);
  });
  write_metrics_csv(metrics_path(cfg, Stage::kControl), r);
  model->save(cfg.tts_checkpoint());
  return r;
}

inline EstimatorReport train_estimator(const RunConfig& cfg, const Dataset& data,
                                       const std::function<void(const EpochLog&)>& log = {}) {
  ImpressionEstimator est(cfg.estimator_options());
  EstimatorReport r = train_estimator(est, data, log);
  est.save(cfg.estimator_checkpoint());
  auto out = open_report(cfg.reports_dir() / "estimator.csv");
  write_estimator_report_csv(out, r);
  return r;
}

inline std::unique_ptr<ImpressionEstimator> load_estimator(const RunConfig& cfg) {
  if (!std::filesystem::exists(cfg.estimator_checkpoint())) {
    fail(ErrorCode::kNotInitialized, "no estimator at " + cfg.estimator_checkpoint().string() +
                                         " (run train-estimator first)");
  }
  return ImpressionEstimator::load(cfg.estimator_checkpoint());
}

/// Writes corpus/manifest_labeled.jsonl and reports/labels.csv.
inline Manifest label_corpus(const RunConfig& cfg, const Dataset& data) {
  const auto est = load_estimator(cfg);
  Manifest labeled = auto_label(*est, data);
  labeled.root = data.manifest.root;
  write_manifest(cfg.corpus_dir() / "manifest_labeled.jsonl", labeled);
  std::vector<LabeledVector> rows;
  for (const auto& r : labeled.records) rows.push_back({r.utt_id, r.label});
  auto out = open_report(cfg.reports_dir() / "labels.csv");
  write_vectors_csv(out, rows);
  return labeled;
}

/// Models and references needed by the evaluation commands.
struct EvalSetup {
  std::unique_ptr<TtsModel> model;
  std::unique_ptr<ImpressionEstimator> estimator;
  std::vector<Reference> references;
  std::vector<std::vector<int>> sentences;
};

inline EvalSetup eval_setup(const RunConfig& cfg, const Dataset& data, int n_sentences) {
  EvalSetup s;
  s.model = load_tts(cfg);
  if (!s.model->stage_done(Stage::kControl)) {
    fail(ErrorCode::kStageOrderViolation, "model has no trained control module (run train-control first)");
  }
  s.estimator = load_estimator(cfg);
  for (std::size_t idx : pick_reference_utterances(data, cfg.eval.reference_split,
                                                   static_cast<std::size_t>(cfg.eval.n_references))) {
    s.references.push_back(make_reference(*s.model, *s.estimator, data, idx));
  }
  s.sentences = sweep_sentences(n_sentences, cfg.model.backbone.vocab_size, cfg.eval_seed());
  return s;
}

inline std::filesystem::path reference_dir(const RunConfig& cfg, const Reference& r) {
  return cfg.reports_dir() / r.speaker_id;
}

inline std::vector<std::vector<SweepResult>> run_sweep1d(const RunConfig& cfg, const Dataset& data,
                                                         const std::vector<Dim>& dims) {
  const EvalSetup s = eval_setup(cfg, data, cfg.eval.n_utts);
  std::vector<std::vector<SweepResult>> out;
  for (const Reference& ref : s.references) {
    std::vector<SweepResult> per;
    for (Dim d : dims) {
      per.push_back(sweep_single(*s.model, *s.estimator, ref, ref.base, d, cfg.eval.deltas, s.sentences));
      emit_report(per.back(), reference_dir(cfg, ref));
    }
    out.push_back(std::move(per));
  }
  return out;
}

inline std::vector<PairSweepResult> run_sweep2d(const RunConfig& cfg, const Dataset& data, Dim d1, Dim d2) {
  const EvalSetup s = eval_setup(cfg, data, cfg.eval.n_utts);
  std::vector<PairSweepResult> out;
  for (const Reference& ref : s.references) {
    out.push_back(sweep_pair(*s.model, *s.estimator, ref, ref.base, d1, d2, cfg.eval.deltas, s.sentences));
    emit_report(out.back(), reference_dir(cfg, ref));
  }
  return out;
}

inline std::vector<SimilarityReport> run_simeval(const RunConfig& cfg, const Dataset& data) {
  const EvalSetup s = eval_setup(cfg, data, cfg.eval.similarity_n_utts);
  SpeakerEmbedder embedder(cfg.embedder_options());
  embedder.train(OracleGenerator{});
  std::vector<SimilarityReport> out;
  for (const Reference& ref : s.references) {
    out.push_back(speaker_similarity(*s.model, embedder, ref, data, s.sentences));
    emit_report(out.back(), cfg.reports_dir());
  }
  return out;
}

/// Correlation matrix of the manifest labels, as reports/correlations.csv.
inline CorrelationMatrix run_correlations(const RunConfig& cfg, const Manifest& m) {
  std::vector<ImpressionVector> vs;
  for (const auto& r : m.records) vs.push_back(r.label);
  const CorrelationMatrix c = correlation_matrix(vs);
  auto out = open_report(cfg.reports_dir() / "correlations.csv");
  out << "dim,A,B,C,D,E,F,G,H,I,J,K\n";
  for (int a = 0; a < kNumDims; ++a) {
    out << static_cast<char>('A' + a);
    for (int b = 0; b < kNumDims; ++b) out << ',' << format_fixed6(c.values(a, b));
    out << '\n';
  }
  return c;
}

}  // namespace voximp
