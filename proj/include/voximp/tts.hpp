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

// End-to-end zero-shot TTS model and its staged training.
//
//   reference mel -> frontend -> speaker encoder -> x
//   x, v -> control module -> h -> style token layer -> e
//   linguistic sequence, e -> acoustic model -> mel

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "voximp/backbone.hpp"
#include "voximp/control.hpp"
#include "voximp/corpus.hpp"
#include "voximp/frontend.hpp"
#include "voximp/gan.hpp"
#include "voximp/nn/checkpoint.hpp"
#include "voximp/nn/optim.hpp"
#include "voximp/speaker_encoder.hpp"

namespace voximp {

inline const std::string kNsEncoder = "speaker_encoder";
inline const std::string kNsStl = "stl";
inline const std::string kNsBackbone = "backbone";
inline const std::string kNsControl = "control";
inline const std::string kNsDiscriminator = "discriminator";

enum class Stage { kPretrain, kGanRefine, kControl };

inline std::string stage_name(Stage s) {
  switch (s) {
    case Stage::kPretrain: return "pretrain";
    case Stage::kGanRefine: return "gan_refine";
    case Stage::kControl: return "control";
  }
  return "?";
}

inline Stage parse_stage(const std::string& s) {
  if (s == "pretrain") return Stage::kPretrain;
  if (s == "gan_refine") return Stage::kGanRefine;
  if (s == "control") return Stage::kControl;
  fail(ErrorCode::kInvalidArgument, "unknown stage '" + s + "'");
}

struct ModelOptions {
  FrontendOptions frontend;
  SpeakerEncoderOptions encoder;
  StlOptions stl;
  ControlConfig control;
  BackboneOptions backbone;
  DiscriminatorOptions discriminator;
};

inline void to_json(nlohmann::json& j, const ModelOptions& o) {
  j = {{"frontend", o.frontend}, {"encoder", o.encoder},   {"stl", o.stl},
       {"control", o.control},   {"backbone", o.backbone}, {"discriminator", o.discriminator}};
}
inline void from_json(const nlohmann::json& j, ModelOptions& o) {
  o.frontend = j.at("frontend").get<FrontendOptions>();
  o.encoder = j.at("encoder").get<SpeakerEncoderOptions>();
  o.stl = j.at("stl").get<StlOptions>();
  o.control = j.at("control").get<ControlConfig>();
  o.backbone = j.at("backbone").get<BackboneOptions>();
  o.discriminator = j.at("discriminator").get<DiscriminatorOptions>();
}

inline std::uint64_t name_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class TtsModel {
 public:
  TtsModel(const ModelOptions& opt, std::uint64_t seed) : opt_(opt), seed_(seed), frontend_(opt.frontend) {
    if (opt.encoder.layers != opt.frontend.layers || opt.encoder.channels != opt.frontend.channels) {
      fail(ErrorCode::kConfigError, "speaker encoder layout must match the frontend");
    }
    if (opt.backbone.speaker_dim != opt.encoder.embed_dim) {
      fail(ErrorCode::kConfigError, "backbone speaker_dim must equal the encoder embedding size");
    }
    Rng r_enc = ns_rng(seed, kNsEncoder), r_stl = ns_rng(seed, kNsStl), r_ctl = ns_rng(seed, kNsControl);
    Rng r_bb = ns_rng(seed, kNsBackbone), r_d = ns_rng(seed, kNsDiscriminator);
    encoder_ = std::make_unique<SpeakerEncoder>(store_, kNsEncoder, opt.encoder, r_enc);
    stl_ = std::make_unique<StyleTokenLayer>(store_, kNsStl, opt.encoder.embed_dim, opt.stl, r_stl);
    control_ = std::make_unique<ControlModule>(store_, kNsControl, opt.encoder.embed_dim, opt.control, r_ctl);
    backbone_ = std::make_unique<AcousticModel>(store_, kNsBackbone, opt.backbone, r_bb);
    disc_ = std::make_unique<Discriminator>(store_, kNsDiscriminator, opt.discriminator, r_d);
  }

  TtsModel(const TtsModel&) = delete;
  TtsModel& operator=(const TtsModel&) = delete;

  static Rng ns_rng(std::uint64_t seed, const std::string& ns) { return Rng(Rng::derive(seed, name_hash(ns))); }

  static std::unique_ptr<TtsModel> load(const std::filesystem::path& path) {
    const nn::Checkpoint ck = nn::read_checkpoint(path);
    if (!ck.meta.contains("kind") || ck.meta.at("kind") != "tts") {
      fail(ErrorCode::kIoError, path.string() + " is not a TTS checkpoint");
    }
    auto m = std::make_unique<TtsModel>(ck.meta.at("options").get<ModelOptions>(),
                                        ck.meta.at("seed").get<std::uint64_t>());
    nn::load_into(m->store_, ck);
    m->stages_ = ck.meta.at("stages");
    return m;
  }

  void save(const std::filesystem::path& path) const { nn::save_checkpoint(path, store_, meta()); }

  nlohmann::json meta() const {
    return {{"kind", "tts"}, {"options", opt_}, {"seed", seed_}, {"stages", stages_}};
  }

  bool stage_done(Stage s) const { return stages_.contains(stage_name(s)); }
  void mark_stage_done(Stage s, long steps, std::uint64_t seed) {
    stages_[stage_name(s)] = {{"steps", steps}, {"seed", seed}};
  }
  const nlohmann::json& stages() const { return stages_; }

  /// Re-draws every parameter of one namespace from `seed`.
  void reinit_namespace(const std::string& ns, std::uint64_t seed) {
    TtsModel fresh(opt_, seed);
    for (auto& [name, p] : store_.all()) {
      if (nn::ParamStore::in_namespace(name, ns)) p.value = fresh.store_.get(name).value;
    }
  }

  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }
  const ModelOptions& options() const { return opt_; }
  void set_control_config(const ControlConfig& c) {
    control_->set_config(c);
    opt_.control = c;
  }
  std::uint64_t seed() const { return seed_; }
  const FrontendStub& frontend() const { return frontend_; }
  const SpeakerEncoder& encoder() const { return *encoder_; }
  const StyleTokenLayer& stl() const { return *stl_; }
  const ControlModule& control() const { return *control_; }
  const AcousticModel& backbone() const { return *backbone_; }
  AcousticModel& mutable_backbone() { return *backbone_; }
  const Discriminator& discriminator() const { return *disc_; }

  /// Speaker latent x of a reference utterance.
  Eigen::RowVectorXd latent(const SSLFeatureStack& ref) const { return encoder_->encode_utterance(ref); }
  Eigen::RowVectorXd latent(const Mat& reference_mel) const { return latent(frontend_.extract(reference_mel)); }

  /// Conditioning embedding e. The control module is applied once its
  /// stage has been trained; before that x goes to the STL directly.
  Eigen::RowVectorXd speaker_embedding(const Eigen::RowVectorXd& x, const ImpressionVector& v) const {
    if (!stage_done(Stage::kControl)) return stl_->transform(x);
    return stl_->transform(control_->condition_eval(x, v));
  }

  SynthesisOutput synthesize_from_latent(const std::vector<int>& tokens, const Eigen::RowVectorXd& x,
                                         const ImpressionVector& v) const {
    require_trained();
    const Mat ling = backbone_->linguistic().featurize(tokens);
    ag::Graph g(false);
    SynthesisOutput out;
    out.mel = backbone_->synthesize(g, ling, g.constant(Mat(speaker_embedding(x, v))), &out).value();
    return out;
  }

  SynthesisOutput synthesize(const std::vector<int>& tokens, const SSLFeatureStack& reference,
                             const ImpressionVector& v) const {
    require_trained();
    return synthesize_from_latent(tokens, latent(reference), v);
  }

 private:
  void require_trained() const {
    if (!stage_done(Stage::kPretrain)) fail(ErrorCode::kNotInitialized, "model has no trained backbone");
  }

  ModelOptions opt_;
  std::uint64_t seed_;
  nn::ParamStore store_;
  FrontendStub frontend_;
  std::unique_ptr<SpeakerEncoder> encoder_;
  std::unique_ptr<StyleTokenLayer> stl_;
  std::unique_ptr<ControlModule> control_;
  std::unique_ptr<AcousticModel> backbone_;
  std::unique_ptr<Discriminator> disc_;
  nlohmann::json stages_ = nlohmann::json::object();
};

// ---- training ----------------------------------------------------------------

enum class OptimizerKind { kAdamNoam, kAdamFixed };

struct StagePlan {
  Stage stage = Stage::kPretrain;
  long steps = 0;
  std::vector<std::string> trainable_namespaces;
  OptimizerKind optimizer = OptimizerKind::kAdamNoam;
  double lr = 1.0;  // fixed rate, or the Noam scale factor
  int warmup = 400;
  int batch_size = 8;
  int crop_frames = 64;      // reference crop length while training the encoder
  double gan_weight = 0.1;   // generator adversarial loss weight
  std::uint64_t seed = 0;
};

enum class Preset { kDesk, kFull };

/// Default plan per stage. Desk steps are 2k/0/1k; full steps 200k/200k/50k.
inline StagePlan default_plan(Stage s, Preset preset = Preset::kDesk) {
  StagePlan p;
  p.stage = s;
  const bool full = preset == Preset::kFull;
  switch (s) {
    case Stage::kPretrain:
      p.steps = full ? 200000 : 2000;
      p.trainable_namespaces = {kNsEncoder, kNsStl, kNsBackbone};
      p.optimizer = OptimizerKind::kAdamNoam;
      p.lr = 1.0;
      break;
    case Stage::kGanRefine:
      p.steps = full ? 200000 : 0;
      p.trainable_namespaces = {kNsEncoder, kNsStl, kNsBackbone, kNsDiscriminator};
      p.optimizer = OptimizerKind::kAdamFixed;
      p.lr = 1e-3;
      break;
    case Stage::kControl:
      p.steps = full ? 50000 : 1000;
      p.trainable_namespaces = {kNsControl};
      p.optimizer = OptimizerKind::kAdamFixed;
      p.lr = 1e-3;
      break;
  }
  return p;
}

inline void to_json(nlohmann::json& j, const StagePlan& p) {
  j = {{"stage", stage_name(p.stage)},
       {"steps", p.steps},
       {"trainable_namespaces", p.trainable_namespaces},
       {"optimizer", p.optimizer == OptimizerKind::kAdamNoam ? "adam_noam" : "adam_fixed"},
       {"lr", p.lr},
       {"warmup", p.warmup},
       {"batch_size", p.batch_size},
       {"crop_frames", p.crop_frames},
       {"gan_weight", p.gan_weight},
       {"seed", p.seed}};
}

struct StepMetrics {
  long step = 0;
  double total = 0.0;
  double mel = 0.0;
  double duration = 0.0;
  double pitch = 0.0;
  double energy = 0.0;
  double adversary = 0.0;  // adversary MSE (control stage)
  double gan_generator = 0.0;
  double gan_discriminator = 0.0;
  double lr = 0.0;
};

struct TrainReport {
  Stage stage = Stage::kPretrain;
  std::vector<StepMetrics> steps;
  double seconds = 0.0;
};

inline std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline void write_metrics_csv(std::ostream& out, const TrainReport& r) {
  out << "step,total,mel,duration,pitch,energy,adversary,gan_generator,gan_discriminator,lr\n";
  for (const auto& m : r.steps) {
    out << m.step << ',' << format_metric(m.total) << ',' << format_metric(m.mel) << ','
        << format_metric(m.duration) << ',' << format_metric(m.pitch) << ',' << format_metric(m.energy) << ','
        << format_metric(m.adversary) << ',' << format_metric(m.gan_generator) << ','
        << format_metric(m.gan_discriminator) << ',' << format_metric(m.lr) << '\n';
  }
}

inline void write_metrics_csv(const std::filesystem::path& path, const TrainReport& r) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot write metrics " + path.string());
  write_metrics_csv(out, r);
}

/// Per-utterance training inputs derived once from a dataset split.
struct TrainingSet {
  const Dataset* data = nullptr;
  std::vector<std::size_t> items;  // dataset indices
  std::vector<Mat> ling;           // aligned with items
  std::vector<VarianceTargets> targets;
  std::vector<std::vector<std::size_t>> same_speaker;  // positions in `items`

  TrainingSet(const Dataset& ds, const AcousticModel& backbone, const std::string& split = "train")
      : data(&ds), items(ds.indices(split)) {
    if (items.empty()) fail(ErrorCode::kInsufficientData, "no utterances in split '" + split + "'");
    std::map<std::string, std::vector<std::size_t>> by_spk;
    for (std::size_t k = 0; k < items.size(); ++k) {
      const auto& rec = ds.manifest.records[items[k]];
      ling.push_back(backbone.linguistic().featurize(rec.tokens));
      targets.push_back(variance_targets(ds.mels[items[k]], rec.durations));
      by_spk[rec.speaker_id].push_back(k);
    }
    for (std::size_t k = 0; k < items.size(); ++k) {
      same_speaker.push_back(by_spk[ds.manifest.records[items[k]].speaker_id]);
    }
  }

  const Mat& mel(std::size_t k) const { return data->mels[items[k]]; }
  const UtteranceRecord& record(std::size_t k) const { return data->manifest.records[items[k]]; }
};

namespace detail {

struct Batch {
  std::vector<std::size_t> targets;     // positions in the training set
  std::vector<std::size_t> references;  // same-speaker positions
};

inline Batch sample_batch(const TrainingSet& ts, int batch_size, Rng& rng) {
  Batch b;
  for (int i = 0; i < batch_size; ++i) {
    const std::size_t t = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(ts.items.size()) - 1));
    const auto& pool = ts.same_speaker[t];
    b.targets.push_back(t);
    b.references.push_back(pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))]);
  }
  return b;
}

/// Equal-length random crops of the reference feature stacks.
inline std::vector<SSLFeatureStack> reference_crops(const TtsModel& model, const TrainingSet& ts, const Batch& b,
                                                    int crop_frames, Rng& rng) {
  Index len = crop_frames;
  for (std::size_t r : b.references) len = std::min(len, ts.mel(r).rows());
  std::vector<SSLFeatureStack> out;
  for (std::size_t r : b.references) {
    const Mat& mel = ts.mel(r);
    const Index start = rng.uniform_int(0, static_cast<int>(mel.rows() - len));
    // One frame of context on each side keeps the crop identical to the
    // corresponding slice of the full-utterance stack.
    const Index lo = std::max<Index>(0, start - 1), hi = std::min<Index>(mel.rows(), start + len + 1);
    SSLFeatureStack s = model.frontend().extract(mel.middleRows(lo, hi - lo));
    out.push_back(crop_stack(s, start - lo, len));
  }
  return out;
}

inline void collect_items(const TrainingSet& ts, const Batch& b, std::vector<BackboneItem>& items,
                          std::vector<const Mat*>& mels, Mat& labels) {
  labels.resize(static_cast<Index>(b.targets.size()), kNumDims);
  for (std::size_t i = 0; i < b.targets.size(); ++i) {
    const std::size_t t = b.targets[i];
    items.push_back({&ts.ling[t], &ts.targets[t]});
    mels.push_back(&ts.mel(t));
    labels.row(static_cast<Index>(i)) = ts.record(t).label.row();
  }
}

}  // namespace detail

/// Reference latents for every training utterance, computed in inference
/// mode with the (frozen) encoder.
inline Mat cache_latents(const TtsModel& model, const TrainingSet& ts) {
  Mat x(static_cast<Index>(ts.items.size()), model.options().encoder.embed_dim);
  for (std::size_t k = 0; k < ts.items.size(); ++k) x.row(static_cast<Index>(k)) = model.latent(ts.mel(k));
  return x;
}

inline void init_output_biases(TtsModel& model, const TrainingSet& ts) {
  Eigen::RowVectorXd mel = Eigen::RowVectorXd::Zero(kNumMels);
  double frames = 0.0, tokens = 0.0, log_dur = 0.0, pitch = 0.0, energy = 0.0;
  for (std::size_t k = 0; k < ts.items.size(); ++k) {
    mel += ts.mel(k).colwise().sum();
    frames += static_cast<double>(ts.mel(k).rows());
    const VarianceTargets& vt = ts.targets[k];
    for (std::size_t i = 0; i < vt.durations.size(); ++i) {
      log_dur += std::log(static_cast<double>(vt.durations[i]));
      pitch += vt.pitch[i];
      energy += vt.energy[i];
    }
    tokens += static_cast<double>(vt.durations.size());
  }
  model.mutable_backbone().init_output_biases(mel / frames, log_dur / tokens, pitch / tokens, energy / tokens);
}

/// Runs one training stage. Parameters outside plan.trainable_namespaces are
/// never written.
inline TrainReport train_stage(TtsModel& model, const StagePlan& plan, const Dataset& data,
                               const std::function<void(const StepMetrics&)>& on_step = {}) {
  if (plan.stage != Stage::kPretrain && !model.stage_done(Stage::kPretrain)) {
    fail(ErrorCode::kStageOrderViolation, stage_name(plan.stage) + " requires a completed pretrain stage");
  }
  if (plan.steps < 0 || plan.batch_size < 1) fail(ErrorCode::kInvalidArgument, "bad stage plan");
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  report.stage = plan.stage;
  if (plan.steps == 0) return report;

  // The control module always starts from the stage seed, so rerunning the
  // stage on a saved model reproduces the same result.
  if (plan.stage == Stage::kControl) model.reinit_namespace(kNsControl, plan.seed);
  nn::ParamStore& store = model.params();
  store.set_trainable(plan.trainable_namespaces);
  store.zero_grad();
  std::vector<std::string> gen_ns;
  for (const auto& ns : plan.trainable_namespaces) {
    if (ns != kNsDiscriminator) gen_ns.push_back(ns);
  }
  nn::Adam gen_opt(store, {}, gen_ns);
  nn::Adam disc_opt(store, {0.5, 0.9, 1e-8, 1.0}, {kNsDiscriminator});
  const nn::NoamSchedule noam{static_cast<double>(model.options().backbone.hidden), static_cast<double>(plan.warmup),
                              plan.lr};

  const TrainingSet ts(data, model.backbone());
  if (plan.stage == Stage::kPretrain && !model.stage_done(Stage::kPretrain)) init_output_biases(model, ts);
  const bool control_stage = plan.stage == Stage::kControl;
  const bool gan_stage = plan.stage == Stage::kGanRefine;
  const bool use_gan_loss = gan_stage || (control_stage && model.stage_done(Stage::kGanRefine) && plan.gan_weight > 0);
  Mat latents;
  if (control_stage) latents = cache_latents(model, ts);

  for (long step = 1; step <= plan.steps; ++step) {
    Rng rng(Rng::derive(plan.seed, static_cast<std::uint64_t>(step)));
    const detail::Batch batch = detail::sample_batch(ts, plan.batch_size, rng);
    std::vector<BackboneItem> items;
    std::vector<const Mat*> mels;
    Mat labels;
    detail::collect_items(ts, batch, items, mels, labels);

    StepMetrics m;
    m.step = step;
    m.lr = plan.optimizer == OptimizerKind::kAdamNoam ? noam(step) : plan.lr;
    Mat fake;
    std::vector<Index> frame_lengths;
    {
      ag::Graph g;
      Var e;
      Var adv_loss;
      if (control_stage) {
        Mat x(static_cast<Index>(batch.references.size()), latents.cols());
        for (std::size_t i = 0; i < batch.references.size(); ++i) {
          x.row(static_cast<Index>(i)) = latents.row(static_cast<Index>(batch.references[i]));
        }
        const auto cond = model.control().condition(g, g.constant(std::move(x)), labels, Mode::kTrain, &rng);
        e = model.stl()(g, cond.h).embedding;
        if (cond.adv_pred.valid()) adv_loss = ag::mse(cond.adv_pred, g.constant(centred_impressions(labels)));
      } else {
        const auto crops = detail::reference_crops(model, ts, batch, plan.crop_frames, rng);
        std::vector<const SSLFeatureStack*> ptrs;
        for (const auto& c : crops) ptrs.push_back(&c);
        e = model.stl()(g, model.encoder().encode(g, ptrs)).embedding;
      }
      const BackboneLosses l = model.backbone().train_losses(g, items, e, mels);
      Var total = l.total;
      if (adv_loss.valid()) {
        total = control_loss(total, adv_loss, model.control().config());
        m.adversary = adv_loss.value()(0, 0);
      }
      if (use_gan_loss) {
        Var scores = model.discriminator()(g, l.mel_pred, l.frame_lengths);
        Var g_loss = ag::mean_all(ag::square(ag::add_scalar(scores, -1.0)));
        m.gan_generator = g_loss.value()(0, 0);
        total = ag::add(total, ag::scale(g_loss, plan.gan_weight));
        fake = l.mel_pred.value();
        frame_lengths = l.frame_lengths;
      }
      m.mel = l.mel.value()(0, 0);
      m.duration = l.duration.value()(0, 0);
      m.pitch = l.pitch.value()(0, 0);
      m.energy = l.energy.value()(0, 0);
      m.total = total.value()(0, 0);
      g.backward(total);
    }
    // The discriminator is only ever updated in its own stage; gradients the
    // generator pass left on it are discarded.
    for (nn::Parameter* p : store.with_prefix(kNsDiscriminator + "/")) p->grad.setZero();
    gen_opt.step(m.lr);
    store.zero_grad();

    if (gan_stage) {
      Mat real(fake.rows(), fake.cols());
      Index r = 0;
      for (const Mat* mel : mels) {
        real.middleRows(r, mel->rows()) = *mel;
        r += mel->rows();
      }
      ag::Graph g;
      Var d_real = model.discriminator()(g, g.constant(std::move(real)), frame_lengths);
      Var d_fake = model.discriminator()(g, g.constant(std::move(fake)), frame_lengths);
      Var loss = ag::add(ag::mean_all(ag::square(ag::add_scalar(d_real, -1.0))), ag::mean_all(ag::square(d_fake)));
      m.gan_discriminator = loss.value()(0, 0);
      g.backward(loss);
      disc_opt.step(plan.lr);
      store.zero_grad();
    }
    if (on_step) on_step(m);
    report.steps.push_back(m);
  }
  store.set_trainable({});
  model.mark_stage_done(plan.stage, plan.steps, plan.seed);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace voximp
