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

// Synthetic oracle corpus.
//
// Every utterance is generated by a known linear map so that the impression
// carried by a mel spectrogram can be recovered exactly:
//
//   mel[t] = template + sum_{d in A..J} (factor_d - 4) * basis_d
//            + content[token(t)] + N(0, noise_sigma^2)
//
// Token durations shrink with the speaker's K factor (speaking rate); the
// impression dims A..J never influence timing. The impression basis, the
// low-rank speaker subspace and the content subspace are mutually
// orthogonal blocks of one seeded orthonormal frame of R^80.

#include <Eigen/QR>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "voximp/ag/graph.hpp"
#include "voximp/error.hpp"
#include "voximp/impression.hpp"
#include "voximp/rng.hpp"

namespace voximp {

using ag::Index;
using ag::Mat;

inline constexpr int kNumMels = 80;
inline constexpr double kFrameShiftMs = 10.0;

/// Labels are stored with six decimals; generated values are rounded the
/// same way so a corpus read back from disk equals the one in memory.
inline double round_to_manifest(double v) { return std::stod(format_fixed6(v)); }

struct MelSpectrogram {
  Mat frames;  // T x 80, log-magnitude
  double frame_shift_ms = kFrameShiftMs;

  Index num_frames() const { return frames.rows(); }
};

struct SyntheticSpeaker {
  std::string speaker_id;
  Eigen::RowVectorXd spectral_template;  // 80
  ImpressionVector factors;              // ground truth; A..J in [1.5, 6.5], K in [-2, 2]
  char gender_tag = 'f';                 // 'f' when B >= 4, else 'm'
};

struct SyntheticUtterance {
  std::string utt_id;
  std::string speaker_id;
  std::vector<int> token_ids;
  std::vector<int> durations;
  MelSpectrogram mel;
  double moras_per_second = 0.0;
  ImpressionVector label;
};

struct GeneratorOptions {
  int vocab_size = 40;
  int speaker_rank = 4;
  double template_scale = 1.5;
  double content_scale = 1.0;
  double rate_coefficient = 0.15;  // duration *= exp(-rate_coefficient * K)
  int min_base_duration = 4;
  int max_base_duration = 8;
  std::uint64_t basis_seed = 0x5eedba515ULL;
};

class OracleGenerator {
 public:
  explicit OracleGenerator(GeneratorOptions opt = {}) : opt_(opt) {
    if (kNumRatedDims + opt_.speaker_rank >= kNumMels) {
      fail(ErrorCode::kInvalidArgument, "speaker rank too large for 80 mel bins");
    }
    Rng rng(opt_.basis_seed);
    Eigen::MatrixXd gauss(kNumMels, kNumMels);
    for (Index i = 0; i < gauss.size(); ++i) gauss.data()[i] = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(kNumMels, kNumMels);
    // Columns of q are orthonormal; use them as rows of the bases.
    impression_basis_ = q.leftCols(kNumRatedDims).transpose();
    speaker_basis_ = q.middleCols(kNumRatedDims, opt_.speaker_rank).transpose();
    const Index content_rank = kNumMels - kNumRatedDims - opt_.speaker_rank;
    Eigen::MatrixXd content_frame = q.rightCols(content_rank).transpose();

    content_.resize(opt_.vocab_size, kNumMels);
    base_durations_.resize(static_cast<std::size_t>(opt_.vocab_size));
    for (int v = 0; v < opt_.vocab_size; ++v) {
      Eigen::RowVectorXd coef(content_rank);
      for (Index j = 0; j < content_rank; ++j) coef(j) = rng.normal();
      coef *= opt_.content_scale * std::sqrt(static_cast<double>(kNumMels) / content_rank);
      content_.row(v) = coef * content_frame;
      base_durations_[static_cast<std::size_t>(v)] =
          rng.uniform_int(opt_.min_base_duration, opt_.max_base_duration);
    }
    mean_template_.resize(kNumMels);
    for (int k = 0; k < kNumMels; ++k) {
      mean_template_(k) = -2.0 - 3.0 * static_cast<double>(k) / kNumMels;
    }
  }

  const GeneratorOptions& options() const { return opt_; }
  /// 10 x 80, rows orthonormal, row d is the direction of impression dim d.
  const Mat& impression_basis() const { return impression_basis_; }
  const Mat& speaker_basis() const { return speaker_basis_; }
  const Mat& content_table() const { return content_; }
  int base_duration(int token) const { return base_durations_.at(static_cast<std::size_t>(token)); }

  SyntheticSpeaker make_speaker(std::uint64_t seed) const {
    Rng rng(Rng::derive(seed, 0x5bea4e7ULL));
    SyntheticSpeaker sp;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "spk%06llu", static_cast<unsigned long long>(seed));
    sp.speaker_id = buf;
    sp.spectral_template = mean_template_;
    for (int j = 0; j < opt_.speaker_rank; ++j) {
      sp.spectral_template += rng.normal(0.0, opt_.template_scale) * speaker_basis_.row(j);
    }
    std::array<double, kNumDims> f{};
    for (int d = 0; d < kNumRatedDims; ++d) f[d] = round_to_manifest(rng.uniform(1.5, 6.5));
    f[index_of(Dim::K)] = round_to_manifest(rng.uniform(-2.0, 2.0));
    sp.factors = ImpressionVector(f);
    sp.gender_tag = sp.factors[Dim::B] >= 4.0 ? 'f' : 'm';
    return sp;
  }

  /// Per-speaker offset added to every frame: template + impression terms.
  Eigen::RowVectorXd speaker_offset(const SyntheticSpeaker& sp) const {
    Eigen::RowVectorXd off = sp.spectral_template;
    for (int d = 0; d < kNumRatedDims; ++d) {
      off += (sp.factors.at(d) - 4.0) * impression_basis_.row(d);
    }
    return off;
  }

  std::vector<int> durations_for(const SyntheticSpeaker& sp, const std::vector<int>& tokens,
                                 Rng& rng) const {
    const double rate = std::exp(-opt_.rate_coefficient * sp.factors[Dim::K]);
    std::vector<int> dur;
    dur.reserve(tokens.size());
    for (int tok : tokens) {
      const int jitter = rng.uniform_int(-1, 1);
      const double d = static_cast<double>(base_duration(tok) + jitter) * rate;
      dur.push_back(std::max(1, static_cast<int>(std::lround(d))));
    }
    return dur;
  }

  SyntheticUtterance render_utterance(const SyntheticSpeaker& sp, const std::vector<int>& token_ids,
                                      double noise_sigma, std::uint64_t seed) const {
    if (token_ids.empty()) fail(ErrorCode::kEmptyContent, "render_utterance: no tokens");
    if (!(noise_sigma >= 0.0)) fail(ErrorCode::kInvalidArgument, "noise_sigma must be >= 0");
    for (int tok : token_ids) {
      if (tok < 0 || tok >= opt_.vocab_size) fail(ErrorCode::kInvalidArgument, "token id out of range");
    }
    Rng rng(seed);
    SyntheticUtterance u;
    u.speaker_id = sp.speaker_id;
    u.token_ids = token_ids;
    u.durations = durations_for(sp, token_ids, rng);
    Index frames = 0;
    for (int d : u.durations) frames += d;
    const Eigen::RowVectorXd offset = speaker_offset(sp);
    u.mel.frames.resize(frames, kNumMels);
    Index t = 0;
    for (std::size_t i = 0; i < token_ids.size(); ++i) {
      for (int k = 0; k < u.durations[i]; ++k, ++t) {
        u.mel.frames.row(t) = offset + content_.row(token_ids[i]);
        if (noise_sigma > 0.0) {
          for (int m = 0; m < kNumMels; ++m) u.mel.frames(t, m) += rng.normal(0.0, noise_sigma);
        }
      }
    }
    u.moras_per_second = static_cast<double>(token_ids.size()) /
                         (static_cast<double>(frames) * kFrameShiftMs / 1000.0);
    u.label = sp.factors;
    return u;
  }

  std::vector<int> random_tokens(Rng& rng, int min_len, int max_len) const {
    const int n = rng.uniform_int(min_len, max_len);
    std::vector<int> toks(static_cast<std::size_t>(n));
    for (int& t : toks) t = rng.uniform_int(0, opt_.vocab_size - 1);
    return toks;
  }

 private:
  GeneratorOptions opt_;
  Mat impression_basis_;
  Mat speaker_basis_;
  Mat content_;
  std::vector<int> base_durations_;
  Eigen::RowVectorXd mean_template_;
};

/// Token-level pitch and energy proxies computed from a mel and durations:
/// energy is the mean log-magnitude of the token's frames, pitch the mean
/// spectral tilt (low-band mean minus high-band mean).
struct VarianceTargets {
  std::vector<int> durations;
  std::vector<double> pitch;
  std::vector<double> energy;
};

inline VarianceTargets variance_targets(const Mat& mel, const std::vector<int>& durations) {
  VarianceTargets vt;
  vt.durations = durations;
  Index t = 0;
  for (int d : durations) {
    if (d <= 0 || t + d > mel.rows()) fail(ErrorCode::kShapeError, "durations do not match mel");
    auto block = mel.middleRows(t, d);
    vt.energy.push_back(block.mean());
    vt.pitch.push_back(block.leftCols(20).mean() - block.rightCols(20).mean());
    t += d;
  }
  if (t != mel.rows()) fail(ErrorCode::kShapeError, "durations do not sum to mel frames");
  return vt;
}

// ---- corpus manifest ----------------------------------------------------------

struct UtteranceRecord {
  std::string utt_id;
  std::string speaker_id;
  std::string split;
  std::string mel_path;  // relative to the manifest directory
  std::vector<int> tokens;
  std::vector<int> durations;
  double moras_per_second = 0.0;
  ImpressionVector label;
  char gender_tag = 'f';
};

struct Manifest {
  std::filesystem::path root;  // directory that mel_path is relative to
  std::vector<UtteranceRecord> records;

  std::vector<const UtteranceRecord*> split(const std::string& name) const {
    std::vector<const UtteranceRecord*> out;
    for (const auto& r : records) {
      if (r.split == name) out.push_back(&r);
    }
    return out;
  }
  std::set<std::string> speakers(const std::string& split_name) const {
    std::set<std::string> out;
    for (const auto& r : records) {
      if (r.split == split_name) out.insert(r.speaker_id);
    }
    return out;
  }
};

inline nlohmann::ordered_json record_to_json(const UtteranceRecord& r) {
  nlohmann::ordered_json j;
  j["utt_id"] = r.utt_id;
  j["speaker_id"] = r.speaker_id;
  j["split"] = r.split;
  j["mel_path"] = r.mel_path;
  j["tokens"] = r.tokens;
  j["durations"] = r.durations;
  j["moras_per_second"] = r.moras_per_second;
  j["gender"] = std::string(1, r.gender_tag);
  nlohmann::ordered_json label;
  for (int d = 0; d < kNumDims; ++d) {
    label[label_string(dim_at(d))] = std::round(r.label.at(d) * 1e6) / 1e6;
  }
  j["label"] = label;
  return j;
}

inline UtteranceRecord record_from_json(const nlohmann::json& j) {
  UtteranceRecord r;
  r.utt_id = j.at("utt_id").get<std::string>();
  r.speaker_id = j.at("speaker_id").get<std::string>();
  r.split = j.at("split").get<std::string>();
  r.mel_path = j.at("mel_path").get<std::string>();
  r.tokens = j.at("tokens").get<std::vector<int>>();
  r.durations = j.value("durations", std::vector<int>{});
  r.moras_per_second = j.at("moras_per_second").get<double>();
  r.gender_tag = j.value("gender", std::string("f")).at(0);
  r.label = vector_from_json(j.at("label"));
  return r;
}

inline void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot write manifest " + path.string());
  for (const auto& r : m.records) out << record_to_json(r).dump() << '\n';
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, "cannot open manifest " + path.string());
  Manifest m;
  m.root = path.parent_path();
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      m.records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kIoError, "bad manifest line in " + path.string() + ": " + e.what());
    }
  }
  return m;
}

/// Raw little-endian float32 matrix plus a JSON sidecar with the shape.
inline void write_mel(const std::filesystem::path& path, const MelSpectrogram& mel) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot write mel " + path.string());
  std::vector<float> buf(static_cast<std::size_t>(mel.frames.size()));
  for (Index i = 0; i < mel.frames.size(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(mel.frames.data()[i]);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  nlohmann::ordered_json side;
  side["shape"] = {mel.frames.rows(), mel.frames.cols()};
  side["dtype"] = "float32";
  side["frame_shift_ms"] = mel.frame_shift_ms;
  std::ofstream sc(std::filesystem::path(path).replace_extension(".json"), std::ios::trunc);
  sc << side.dump() << '\n';
}

inline MelSpectrogram read_mel(const std::filesystem::path& path) {
  std::ifstream sc(std::filesystem::path(path).replace_extension(".json"));
  if (!sc) fail(ErrorCode::kIoError, "missing mel sidecar for " + path.string());
  nlohmann::json side = nlohmann::json::parse(sc);
  const auto shape = side.at("shape").get<std::vector<Index>>();
  if (shape.size() != 2) fail(ErrorCode::kIoError, "bad mel shape in sidecar " + path.string());
  if (side.at("dtype").get<std::string>() != "float32") fail(ErrorCode::kIoError, "mel dtype must be float32");
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot open mel " + path.string());
  std::vector<float> buf(static_cast<std::size_t>(shape[0] * shape[1]));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!in) fail(ErrorCode::kIoError, "truncated mel " + path.string());
  MelSpectrogram mel;
  mel.frame_shift_ms = side.value("frame_shift_ms", kFrameShiftMs);
  mel.frames.resize(shape[0], shape[1]);
  for (std::size_t i = 0; i < buf.size(); ++i) mel.frames.data()[i] = buf[i];
  return mel;
}

// ---- corpus construction --------------------------------------------------------

struct CorpusOptions {
  int n_speakers = 40;
  int utts_per_speaker = 50;
  std::array<double, 3> split_ratios = {0.8, 0.1, 0.1};  // train, val, test
  double noise_sigma = 0.1;
  int min_tokens = 12;
  int max_tokens = 20;
  std::uint64_t seed = 0;
};

inline const std::array<std::string, 3>& split_names() {
  static const std::array<std::string, 3> names = {"train", "val", "test"};
  return names;
}

/// Speaker counts per split. Every split with a positive ratio gets at
/// least one speaker.
inline std::array<int, 3> split_counts(int n_speakers, const std::array<double, 3>& ratios) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) fail(ErrorCode::kInvalidArgument, "split ratios must be >= 0");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) fail(ErrorCode::kInvalidArgument, "split ratios must sum to 1");
  if (n_speakers < 3) fail(ErrorCode::kInsufficientSpeakers, "need at least 3 speakers");
  std::array<int, 3> counts{};
  counts[1] = static_cast<int>(std::lround(n_speakers * ratios[1]));
  counts[2] = static_cast<int>(std::lround(n_speakers * ratios[2]));
  counts[0] = n_speakers - counts[1] - counts[2];
  for (int s = 0; s < 3; ++s) {
    if (ratios[s] > 0.0 && counts[s] < 1) {
      fail(ErrorCode::kInsufficientSpeakers,
           std::to_string(n_speakers) + " speakers cannot populate split " + split_names()[s]);
    }
  }
  return counts;
}

struct BuiltCorpus {
  Manifest manifest;
  std::vector<SyntheticSpeaker> speakers;
  std::vector<Mat> mels;  // aligned with manifest.records, double precision
};

/// Generates speakers and utterances, assigns disjoint speaker splits and
/// replaces each label's K with the corpus-wide standardised speech rate.
/// Nothing is written to disk; see save_corpus.
inline BuiltCorpus build_corpus(const OracleGenerator& gen, const CorpusOptions& opt) {
  const auto counts = split_counts(opt.n_speakers, opt.split_ratios);
  if (opt.utts_per_speaker < 1) fail(ErrorCode::kInvalidArgument, "utts_per_speaker must be >= 1");

  // Deterministic speaker-to-split assignment by a seeded shuffle.
  std::vector<int> order(static_cast<std::size_t>(opt.n_speakers));
  for (int i = 0; i < opt.n_speakers; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng shuffle_rng(Rng::derive(opt.seed, 0x5b117ULL));
  std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
  std::vector<int> split_of(static_cast<std::size_t>(opt.n_speakers));
  {
    int at = 0;
    for (int s = 0; s < 3; ++s) {
      for (int k = 0; k < counts[s]; ++k) split_of[static_cast<std::size_t>(order[static_cast<std::size_t>(at++)])] = s;
    }
  }

  BuiltCorpus out;
  std::vector<double> rates;
  for (int s = 0; s < opt.n_speakers; ++s) {
    SyntheticSpeaker sp = gen.make_speaker(Rng::derive(opt.seed, static_cast<std::uint64_t>(s)));
    char sid[32];
    std::snprintf(sid, sizeof(sid), "spk%03d", s);
    sp.speaker_id = sid;
    for (int u = 0; u < opt.utts_per_speaker; ++u) {
      const std::uint64_t useed =
          Rng::derive(opt.seed, 0x100000ULL + static_cast<std::uint64_t>(s) * 100003ULL + static_cast<std::uint64_t>(u));
      Rng tok_rng(useed);
      auto tokens = gen.random_tokens(tok_rng, opt.min_tokens, opt.max_tokens);
      SyntheticUtterance utt = gen.render_utterance(sp, tokens, opt.noise_sigma, Rng::derive(useed, 1));
      char uid[48];
      std::snprintf(uid, sizeof(uid), "%s_u%03d", sid, u);
      UtteranceRecord rec;
      rec.utt_id = uid;
      rec.speaker_id = sp.speaker_id;
      rec.split = split_names()[static_cast<std::size_t>(split_of[static_cast<std::size_t>(s)])];
      rec.mel_path = std::string("mels/") + uid + ".f32";
      rec.tokens = utt.token_ids;
      rec.durations = utt.durations;
      rec.moras_per_second = std::round(utt.moras_per_second * 1e9) / 1e9;
      rec.label = utt.label;
      rec.gender_tag = sp.gender_tag;
      rates.push_back(rec.moras_per_second);
      out.manifest.records.push_back(std::move(rec));
      // Round through float32 so in-memory and on-disk corpora are identical.
      out.mels.push_back(utt.mel.frames.cast<float>().cast<double>());
    }
    out.speakers.push_back(std::move(sp));
  }
  if (rates.size() >= 2) {
    const auto z = standardize_speech_rates(rates);
    for (std::size_t i = 0; i < z.size(); ++i) out.manifest.records[i].label.set(Dim::K, round_to_manifest(z[i]));
  }
  return out;
}

inline void save_corpus(const std::filesystem::path& dir, BuiltCorpus& corpus) {
  corpus.manifest.root = dir;
  for (std::size_t i = 0; i < corpus.manifest.records.size(); ++i) {
    MelSpectrogram mel;
    mel.frames = corpus.mels[i];
    write_mel(dir / corpus.manifest.records[i].mel_path, mel);
  }
  write_manifest(dir / "manifest.jsonl", corpus.manifest);
}

/// A manifest with its mels loaded into memory.
struct Dataset {
  Manifest manifest;
  std::vector<Mat> mels;

  static Dataset load(const std::filesystem::path& manifest_path) {
    Dataset ds;
    ds.manifest = read_manifest(manifest_path);
    ds.mels.reserve(ds.manifest.records.size());
    for (const auto& r : ds.manifest.records) {
      ds.mels.push_back(read_mel(ds.manifest.root / r.mel_path).frames);
    }
    return ds;
  }

  static Dataset from_built(const BuiltCorpus& c) { return Dataset{c.manifest, c.mels}; }

  std::vector<std::size_t> indices(const std::string& split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
      if (manifest.records[i].split == split) out.push_back(i);
    }
    return out;
  }

  std::map<std::string, std::vector<std::size_t>> by_speaker(const std::string& split) const {
    std::map<std::string, std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
      if (split.empty() || manifest.records[i].split == split) {
        out[manifest.records[i].speaker_id].push_back(i);
      }
    }
    return out;
  }
};

}  // namespace voximp
