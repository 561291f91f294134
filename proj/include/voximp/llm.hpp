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

// Free-form impression descriptions to impression vectors through a chat
// model: prompt construction, response parsing with range clamps, and a
// retrying driver over an abstract client.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "voximp/error.hpp"
#include "voximp/impression.hpp"

namespace voximp::llm {

struct PromptTemplate {
  std::string task_description =
      "You adjust voice impressions for a text-to-speech system. A voice impression is described by "
      "eleven scores, one per dimension listed below. Given the current scores of a voice and a "
      "description of the desired impression, return new scores that realise the description while "
      "changing the voice as little as necessary.";
  std::string instructions =
      "Dimensions A to J are rated on a 7-point scale: 1 means the left word of the pair applies "
      "strongly, 7 means the right word applies strongly and 4 is neutral. Dimension K is a z-score "
      "of speaking rate: 0 is average, negative is slower, positive is faster, usually between -3 and 3.\n"
      "{definitions}\n"
      "Current scores of the voice before modulation:\n"
      "{scores}\n"
      "Answer with a single JSON object and nothing else, with exactly the keys \"A\" to \"K\" and "
      "numeric values, for example {\"A\": 4.0, \"B\": 4.0, ..., \"K\": 0.0}.";
  std::string target_spec = "{target}";
};

inline void to_json(nlohmann::json& j, const PromptTemplate& t) {
  j = {{"task_description", t.task_description}, {"instructions", t.instructions}, {"target_spec", t.target_spec}};
}
inline void from_json(const nlohmann::json& j, PromptTemplate& t) {
  t.task_description = j.at("task_description").get<std::string>();
  t.instructions = j.at("instructions").get<std::string>();
  t.target_spec = j.at("target_spec").get<std::string>();
}

inline constexpr std::string_view kTaskHeading = "### Task";
inline constexpr std::string_view kInstructionsHeading = "### Instructions";
inline constexpr std::string_view kTargetHeading = "### Target";

inline std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
  return s;
}

/// "A) High–Low pitched" style lines, one per dimension.
inline std::string dimension_definitions() {
  std::string out;
  for (const auto& d : kImpressionDims) {
    out += std::string(1, d.label) + ") " + std::string(d.name_pair) +
           (d.scale == Scale::kLikert7 ? " (1 to 7)" : " (z-score)") + "\n";
  }
  out.pop_back();
  return out;
}

inline std::string score_lines(const ImpressionVector& v) {
  std::string out;
  char buf[64];
  for (int d = 0; d < kNumDims; ++d) {
    std::snprintf(buf, sizeof(buf), "- %c: %.1f\n", 'A' + d, v.at(d));
    out += buf;
  }
  out.pop_back();
  return out;
}

/// Task description, instructions and target specification, in that order.
inline std::string build_prompt(const PromptTemplate& tpl, const ImpressionVector& current_v,
                                const std::string& target_desc) {
  if (target_desc.find_first_not_of(" \t\r\n") == std::string::npos) {
    fail(ErrorCode::kEmptyTarget, "target description is empty");
  }
  std::string instr = replace_all(tpl.instructions, "{definitions}", dimension_definitions());
  instr = replace_all(instr, "{scores}", score_lines(current_v));
  return std::string(kTaskHeading) + "\n" + tpl.task_description + "\n\n" + std::string(kInstructionsHeading) + "\n" +
         instr + "\n\n" + std::string(kTargetHeading) + "\n" + replace_all(tpl.target_spec, "{target}", target_desc);
}

// ---- parsing ---------------------------------------------------------------------

inline constexpr double kLikertMin = 1.0, kLikertMax = 7.0;
inline constexpr double kRateMin = -3.0, kRateMax = 3.0;

struct ParsedVector {
  ImpressionVector vector;
  std::vector<Dim> clamped;
};

/// Byte ranges of balanced {...} spans, skipping braces inside strings.
inline std::vector<std::pair<std::size_t, std::size_t>> brace_spans(const std::string& s) {
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  for (std::size_t start = s.find('{'); start != std::string::npos; start = s.find('{', start + 1)) {
    int depth = 0;
    bool in_str = false, esc = false;
    for (std::size_t i = start; i < s.size(); ++i) {
      const char c = s[i];
      if (in_str) {
        if (esc) esc = false;
        else if (c == '\\') esc = true;
        else if (c == '"') in_str = false;
        continue;
      }
      if (c == '"') in_str = true;
      else if (c == '{') ++depth;
      else if (c == '}' && --depth == 0) {
        spans.emplace_back(start, i + 1);
        break;
      }
    }
  }
  return spans;
}

/// First JSON object in `response` that carries any of the keys A..K.
/// A..J are clamped to [1, 7] and K to [-3, 3].
inline ParsedVector parse_vector(const std::string& response) {
  for (const auto& [b, e] : brace_spans(response)) {
    const auto j = nlohmann::json::parse(response.begin() + static_cast<std::ptrdiff_t>(b),
                                         response.begin() + static_cast<std::ptrdiff_t>(e), nullptr, false);
    if (j.is_discarded() || !j.is_object()) continue;
    bool any = false;
    for (int d = 0; d < kNumDims; ++d) any = any || j.contains(std::string(1, static_cast<char>('A' + d)));
    if (!any) continue;
    ParsedVector out;
    std::array<double, kNumDims> s{};
    for (int d = 0; d < kNumDims; ++d) {
      const std::string key(1, static_cast<char>('A' + d));
      if (!j.contains(key)) fail(ErrorCode::kMissingDimension, key);
      if (!j.at(key).is_number()) fail(ErrorCode::kMalformedResponse, "value of " + key + " is not a number");
      const double raw = j.at(key).get<double>();
      const double lo = d < kNumRatedDims ? kLikertMin : kRateMin, hi = d < kNumRatedDims ? kLikertMax : kRateMax;
      s[static_cast<std::size_t>(d)] = std::clamp(raw, lo, hi);
      if (s[static_cast<std::size_t>(d)] != raw) out.clamped.push_back(dim_at(d));
    }
    out.vector = ImpressionVector(s);
    return out;
  }
  fail(ErrorCode::kMalformedResponse, "no JSON object with impression keys found");
}

// ---- clients ---------------------------------------------------------------------

struct LlmClientConfig {
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model = "gpt-4o";
  double timeout_seconds = 60.0;
  int max_retries = 2;
  double temperature = 0.0;
  std::string api_key_env = "OPENAI_API_KEY";
};

inline void to_json(nlohmann::json& j, const LlmClientConfig& c) {
  j = {{"endpoint", c.endpoint},       {"model", c.model},
       {"timeout_seconds", c.timeout_seconds}, {"max_retries", c.max_retries},
       {"temperature", c.temperature}, {"api_key_env", c.api_key_env}};
}
inline void from_json(const nlohmann::json& j, LlmClientConfig& c) {
  c.endpoint = j.at("endpoint").get<std::string>();
  c.model = j.at("model").get<std::string>();
  c.timeout_seconds = j.at("timeout_seconds").get<double>();
  c.max_retries = j.at("max_retries").get<int>();
  c.temperature = j.at("temperature").get<double>();
  c.api_key_env = j.at("api_key_env").get<std::string>();
}

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const std::string& prompt) = 0;
  virtual bool uses_network() const = 0;
};

/// Replays scripted responses in order, repeating the last one; records
/// every prompt it receives.
class StubClient final : public LlmClient {
 public:
  explicit StubClient(std::vector<std::string> responses) : responses_(std::move(responses)) {
    if (responses_.empty()) fail(ErrorCode::kInvalidArgument, "stub client needs at least one response");
  }

  std::string complete(const std::string& prompt) override {
    prompts_.push_back(prompt);
    const std::size_t i = std::min(next_++, responses_.size() - 1);
    return responses_[i];
  }
  bool uses_network() const override { return false; }

  const std::vector<std::string>& prompts() const { return prompts_; }
  std::size_t calls() const { return prompts_.size(); }

 private:
  std::vector<std::string> responses_;
  std::vector<std::string> prompts_;
  std::size_t next_ = 0;
};

/// Deterministic offline stand-in: reads the current scores and the target
/// from the prompt and shifts dimensions named by a small keyword lexicon.
class OfflineClient final : public LlmClient {
 public:
  std::string complete(const std::string& prompt) override {
    ImpressionVector v = ImpressionVector::constant(4.0);
    const std::size_t scores_at = prompt.find("- A: ");
    if (scores_at != std::string::npos) {
      for (int d = 0; d < kNumDims; ++d) {
        const std::string key = std::string("- ") + static_cast<char>('A' + d) + ": ";
        const std::size_t p = prompt.find(key, scores_at);
        if (p != std::string::npos) v.set(dim_at(d), std::stod(prompt.substr(p + key.size(), 16)));
      }
    }
    std::string target;
    const std::size_t t = prompt.rfind(kTargetHeading);
    if (t != std::string::npos) target = prompt.substr(t + kTargetHeading.size());
    std::set<std::string> words;
    std::string w;
    for (char c : target + " ") {
      if (std::isalpha(static_cast<unsigned char>(c))) {
        w += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      } else if (!w.empty()) {
        words.insert(w);
        w.clear();
      }
    }
    for (const auto& [word, shifts] : lexicon()) {
      if (words.count(word) != 0) v = modulate(v, shifts);
    }
    nlohmann::ordered_json j;
    for (int d = 0; d < kNumDims; ++d) j[std::string(1, static_cast<char>('A' + d))] = std::round(v.at(d) * 10.0) / 10.0;
    return j.dump();
  }
  bool uses_network() const override { return false; }

  static const std::vector<std::pair<std::string, Deltas>>& lexicon() {
    static const std::vector<std::pair<std::string, Deltas>> words = {
        {"sleepy", {{Dim::D, -1.5}, {Dim::E, 1.5}, {Dim::H, 1.5}, {Dim::I, -1.0}, {Dim::K, -1.0}}},
        {"urgent", {{Dim::D, 2.0}, {Dim::E, -1.5}, {Dim::H, -1.5}, {Dim::K, 1.5}}},
        {"bright", {{Dim::I, 2.0}}},
        {"dark", {{Dim::I, -2.0}}},
        {"warm", {{Dim::J, 2.0}}},
        {"cold", {{Dim::J, -2.0}}},
        {"calm", {{Dim::D, -2.0}, {Dim::H, 1.0}}},
        {"powerful", {{Dim::E, -2.0}}},
        {"weak", {{Dim::E, 2.0}}},
        {"young", {{Dim::F, -2.0}}},
        {"old", {{Dim::F, 2.0}}},
        {"fast", {{Dim::K, 1.5}}},
        {"slow", {{Dim::K, -1.5}}},
    };
    return words;
  }
};

// ---- mapping driver --------------------------------------------------------------

inline constexpr std::string_view kFormatReminder =
    "\n\nYour previous answer could not be used. Reply with only one JSON object with numeric keys "
    "\"A\" to \"K\".";

struct MappingTrace {
  std::string prompt;
  std::vector<std::string> responses;  // one per attempt
  std::string raw_response;            // last response
  std::vector<Dim> clamped;
  int attempts = 0;
};

struct MappingResult {
  ImpressionVector vector;
  MappingTrace trace;
};

/// build_prompt, then call and parse. Unusable responses (no object, or an
/// object with a missing dimension) are retried up to max_retries times with
/// a format reminder appended.
inline MappingResult map_impression(LlmClient& client, const PromptTemplate& tpl, const ImpressionVector& current_v,
                                    const std::string& target_desc, int max_retries) {
  if (max_retries < 0) fail(ErrorCode::kInvalidArgument, "max_retries must be >= 0");
  MappingResult out;
  out.trace.prompt = build_prompt(tpl, current_v, target_desc);
  std::string last_error;
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    const std::string prompt = attempt == 0 ? out.trace.prompt : out.trace.prompt + std::string(kFormatReminder);
    out.trace.raw_response = client.complete(prompt);
    out.trace.responses.push_back(out.trace.raw_response);
    out.trace.attempts = attempt + 1;
    try {
      ParsedVector p = parse_vector(out.trace.raw_response);
      out.vector = p.vector;
      out.trace.clamped = std::move(p.clamped);
      return out;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kMalformedResponse && e.code() != ErrorCode::kMissingDimension) throw;
      last_error = e.what();
    }
  }
  fail(ErrorCode::kMappingFailed, "after " + std::to_string(out.trace.attempts) + " attempts (" + last_error +
                                      "); last response: " + out.trace.raw_response);
}

inline nlohmann::ordered_json trace_to_json(const MappingResult& r) {
  nlohmann::ordered_json j;
  j["prompt"] = r.trace.prompt;
  j["responses"] = r.trace.responses;
  j["raw_response"] = r.trace.raw_response;
  std::vector<std::string> clamped;
  for (Dim d : r.trace.clamped) clamped.push_back(label_string(d));
  j["clamped"] = clamped;
  j["attempts"] = r.trace.attempts;
  j["scores"] = nlohmann::ordered_json::parse(scores_json(r.vector));
  return j;
}

}  // namespace voximp::llm
