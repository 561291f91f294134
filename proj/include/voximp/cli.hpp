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

// Command-line front end. Exit codes: 0 success, 1 failed precondition or
// runtime error (one "error code=<Name>" line on stderr), 2 usage error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "voximp/config.hpp"
#include "voximp/llm.hpp"
#include "voximp/llm_http.hpp"
#include "voximp/pipeline.hpp"

namespace voximp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string work_dir;
};

inline RunConfig resolve_config(const CommonFlags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.work_dir.empty()) cfg.work_dir = f.work_dir;
  return cfg;
}

inline std::vector<int> parse_tokens(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      fail(ErrorCode::kInvalidArgument, "bad token id '" + item + "'");
    }
  }
  if (out.empty()) fail(ErrorCode::kEmptyContent, "no tokens given");
  return out;
}

/// "I=+3" style assignments.
inline Deltas parse_deltas(const std::vector<std::string>& items) {
  Deltas d;
  for (const auto& it : items) {
    const std::size_t eq = it.find('=');
    if (eq == std::string::npos) fail(ErrorCode::kInvalidArgument, "expected DIM=VALUE, got '" + it + "'");
    double v = 0.0;
    try {
      v = std::stod(it.substr(eq + 1));
    } catch (const std::exception&) {
      fail(ErrorCode::kInvalidDelta, "bad value in '" + it + "'");
    }
    d[parse_dim(it.substr(0, eq))] += v;
  }
  return d;
}

inline std::vector<Dim> parse_dims(const std::string& s) {
  std::vector<Dim> out;
  for (char c : s) {
    if (c == ',' || c == ' ') continue;
    out.push_back(parse_dim(std::string(1, c)));
  }
  return out;
}

inline std::size_t find_utterance(const Dataset& data, const std::string& utt_id) {
  for (std::size_t i = 0; i < data.manifest.records.size(); ++i) {
    if (data.manifest.records[i].utt_id == utt_id) return i;
  }
  fail(ErrorCode::kInvalidArgument, "unknown utterance '" + utt_id + "'");
}

inline void log_step(Stage s, const StepMetrics& m) {
  if (m.step == 1 || m.step % 100 == 0) {
    std::fprintf(stderr, "[%s] step %ld total %.4f mel %.4f adv %.4f\n", stage_name(s).c_str(), m.step, m.total,
                 m.mel, m.adversary);
  }
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"voximp: impression-controllable zero-shot TTS on a synthetic oracle corpus", "voximp"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand help for every subcommand");

  CommonFlags common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON run configuration");
    sub->add_option("--seed", common.seed, "Run seed (overrides the config)");
    sub->add_option("--work-dir", common.work_dir, "Output directory (overrides the config)");
    return sub;
  };

  long steps = -1, gan_steps = -1;
  int epochs = -1;
  std::string reference, tokens, out_path, target, dims, current;
  std::vector<std::string> set_items, delta_items;
  bool offline = false, labeled = false;

  auto* gen = add_common(app.add_subcommand("gen-corpus", "Generate the synthetic oracle corpus"));
  auto* tb = add_common(app.add_subcommand("train-backbone", "Pretrain (and optionally GAN-refine) the TTS model"));
  tb->add_option("--steps", steps, "Pretrain steps");
  tb->add_option("--gan-steps", gan_steps, "GAN refinement steps");
  auto* tc = add_common(app.add_subcommand("train-control", "Train the control module on a frozen backbone"));
  tc->add_option("--steps", steps, "Control steps");
  auto* te = add_common(app.add_subcommand("train-estimator", "Train the impression estimator"));
  te->add_option("--epochs", epochs, "Training epochs");
  auto* lb = add_common(app.add_subcommand("label", "Auto-label the corpus with the estimator"));
  auto* sy = add_common(app.add_subcommand("synth", "Synthesise one utterance"));
  sy->add_option("--reference", reference, "Reference utterance id")->required();
  sy->add_option("--tokens", tokens, "Comma-separated token ids")->required();
  sy->add_option("--set", set_items, "Absolute score DIM=VALUE (repeatable)");
  sy->add_option("--delta", delta_items, "Modulation DIM=DELTA (repeatable)");
  sy->add_option("--out", out_path, "Output mel path (.f32, JSON sidecar alongside)")->required();
  auto* s1 = add_common(app.add_subcommand("sweep1d", "Single-dimension impression sweep"));
  s1->add_option("--dim", dims, "Dimensions to sweep, e.g. I or ABC");
  auto* s2 = add_common(app.add_subcommand("sweep2d", "Two-dimension impression sweep"));
  s2->add_option("--dims", dims, "Dimension pair, e.g. EH");
  auto* se = add_common(app.add_subcommand("simeval", "Speaker similarity under modulation"));
  auto* mi = add_common(app.add_subcommand("map-impression", "Map a description to an impression vector"));
  mi->add_option("--target", target, "Target impression description")->required();
  mi->add_option("--current", current, "Current scores as a JSON object keyed A..K");
  mi->add_option("--reference", reference, "Take current scores from the estimator on this utterance");
  mi->add_flag("--offline", offline, "Use the deterministic offline client");
  mi->add_option("--out", out_path, "Write the mapping trace as JSON");
  auto* co = add_common(app.add_subcommand("correlations", "Correlation matrix of corpus labels"));
  co->add_flag("--labeled", labeled, "Use the auto-labelled manifest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "voximp: usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    RunConfig cfg = resolve_config(common);
    if (gen->parsed()) {
      const CorpusSummary s = gen_corpus(cfg);
      out << "utterances " << s.utterances << " speakers " << s.speakers[0] << '/' << s.speakers[1] << '/'
          << s.speakers[2] << " manifest_hash " << s.manifest_hash << '\n';
    } else if (tb->parsed()) {
      if (steps >= 0) cfg.pretrain.steps = steps;
      if (gan_steps >= 0) cfg.gan_refine.steps = gan_steps;
      const Dataset data = load_dataset(cfg);
      for (const auto& r : train_backbone(cfg, data, log_step)) {
        out << stage_name(r.stage) << " steps " << r.steps.size() << " final_total "
            << (r.steps.empty() ? 0.0 : r.steps.back().total) << '\n';
      }
    } else if (tc->parsed()) {
      if (steps >= 0) cfg.control.steps = steps;
      const Dataset data = load_dataset(cfg);
      const TrainReport r = train_control(cfg, data, log_step);
      out << "control steps " << r.steps.size() << " final_total " << (r.steps.empty() ? 0.0 : r.steps.back().total)
          << '\n';
    } else if (te->parsed()) {
      if (epochs >= 0) cfg.estimator.epochs = epochs;
      const Dataset data = load_dataset(cfg);
      const EstimatorReport r = train_estimator(cfg, data, [&](const EpochLog& e) {
        std::fprintf(stderr, "[estimator] epoch %d train %.4f val %.4f\n", e.epoch, e.train_mse, e.val_mse);
      });
      out << "selected_epoch " << r.selected_epoch << " val_mse " << r.selected_val_mse << " heldout_rmse "
          << r.heldout_rmse << '\n';
    } else if (lb->parsed()) {
      const Manifest m = label_corpus(cfg, load_dataset(cfg));
      out << "labeled " << m.records.size() << '\n';
    } else if (sy->parsed()) {
      const Dataset data = load_dataset(cfg);
      const auto model = load_tts(cfg);
      const auto est = load_estimator(cfg);
      const Reference ref = make_reference(*model, *est, data, find_utterance(data, reference));
      ImpressionVector v = ref.base;
      for (const auto& [d, val] : parse_deltas(set_items)) v.set(d, val);
      v = modulate(v, parse_deltas(delta_items));
      const SynthesisOutput s = model->synthesize_from_latent(parse_tokens(tokens), ref.latent, v);
      if (s.clamped_tokens > 0) std::fprintf(stderr, "clamped %d token durations\n", s.clamped_tokens);
      MelSpectrogram mel;
      mel.frames = s.mel;
      write_mel(out_path, mel);
      out << "frames " << s.mel.rows() << " scores " << scores_json(v) << '\n';
    } else if (s1->parsed()) {
      const Dataset data = load_dataset(cfg);
      const auto results = run_sweep1d(cfg, data, parse_dims(dims.empty() ? cfg.eval.dims : dims));
      for (const auto& per : results) {
        for (const auto& r : per) out << label_string(r.dim) << " spearman " << r.spearman_rho() << '\n';
      }
    } else if (s2->parsed()) {
      const std::vector<Dim> pair = parse_dims(dims.empty() ? cfg.eval.pair : dims);
      if (pair.size() != 2) fail(ErrorCode::kInvalidArgument, "--dims needs exactly two dimensions");
      const Dataset data = load_dataset(cfg);
      for (const auto& r : run_sweep2d(cfg, data, pair[0], pair[1])) {
        out << label_string(r.d1) << label_string(r.d2) << " min_spearman " << r.min_own_rho() << '\n';
      }
    } else if (se->parsed()) {
      const Dataset data = load_dataset(cfg);
      for (const auto& r : run_simeval(cfg, data)) {
        out << r.speaker_id << " median_at_3 " << r.median_at(3) << " others_p95 " << r.different_speaker_p95()
            << '\n';
      }
    } else if (mi->parsed()) {
      ImpressionVector cur = ImpressionVector::constant(4.0);
      if (!current.empty()) {
        const auto j = nlohmann::json::parse(current, nullptr, false);
        if (j.is_discarded()) fail(ErrorCode::kInvalidArgument, "--current is not JSON");
        cur = vector_from_json(j);
      } else if (!reference.empty()) {
        const Dataset data = load_dataset(cfg);
        const std::size_t idx = find_utterance(data, reference);
        cur = load_estimator(cfg)->estimate_mel(data.mels[idx], data.manifest.records[idx].tokens.size());
      }
      std::unique_ptr<llm::LlmClient> client;
      if (offline) {
        client = std::make_unique<llm::OfflineClient>();
      } else {
        client = std::make_unique<llm::HttpClient>(cfg.llm);
      }
      const auto r = llm::map_impression(*client, llm::PromptTemplate{}, cur, target, cfg.llm.max_retries);
      const std::string trace = llm::trace_to_json(r).dump(2) + "\n";
      if (!out_path.empty()) {
        auto f = open_report(out_path);
        f << trace;
      }
      out << scores_json(r.vector) << '\n';
    } else if (co->parsed()) {
      const std::filesystem::path path = labeled ? cfg.corpus_dir() / "manifest_labeled.jsonl" : cfg.manifest_path();
      if (!std::filesystem::exists(path)) fail(ErrorCode::kIoError, "no manifest at " + path.string());
      const CorrelationMatrix c = run_correlations(cfg, read_manifest(path));
      out << "n " << c.n_samples << " E-H " << c(Dim::E, Dim::H) << '\n';
    }
  } catch (const Error& e) {
    const std::string what = e.what();
    const std::size_t colon = what.find(": ");
    err << "voximp: error code=" << error_code_name(e.code())
        << " message=\"" << (colon == std::string::npos ? what : what.substr(colon + 2)) << "\"\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "voximp: error code=Internal message=\"" << e.what() << "\"\n";
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace voximp::cli
