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

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>

#include "test_util.hpp"
#include "voximp/config.hpp"

#ifndef VOXIMP_CLI_PATH
#error "VOXIMP_CLI_PATH must point at the voximp executable"
#endif

namespace voximp {
namespace {

using testing::expect_error;

struct Result {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr folded into stdout.
Result run_cli(const std::string& args) {
  Result r;
  const std::string cmd = std::string(VOXIMP_CLI_PATH) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  if (p == nullptr) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof(buf), p) != nullptr) r.out += buf;
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

TEST(RunConfig, DefaultsAndStrictMerge) {
  const RunConfig d = config_from_json(nlohmann::json::object());
  EXPECT_EQ(d.corpus.n_speakers, 40);
  EXPECT_EQ(d.corpus.utts_per_speaker, 50);
  EXPECT_EQ(d.pretrain.steps, 2000);
  EXPECT_EQ(d.gan_refine.steps, 0);
  EXPECT_EQ(d.control.steps, 1000);
  EXPECT_EQ(d.estimator.epochs, 30);
  const RunConfig c = config_from_json({{"seed", 5}, {"corpus", {{"n_speakers", 12}}}, {"stages", {{"control", {{"lr", 2e-3}}}}}});
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.corpus.n_speakers, 12);
  EXPECT_EQ(c.corpus.utts_per_speaker, 50);
  EXPECT_DOUBLE_EQ(c.plan(Stage::kControl).lr, 2e-3);
  EXPECT_EQ(c.plan(Stage::kControl).trainable_namespaces, (std::vector<std::string>{kNsControl}));
  expect_error(ErrorCode::kConfigError, [] { config_from_json({{"sed", 1}}); });
  expect_error(ErrorCode::kConfigError, [] { config_from_json({{"corpus", {{"n_speaker", 1}}}}); });
  expect_error(ErrorCode::kConfigError, [] { config_from_json({{"corpus", {{"n_speakers", "many"}}}}); });
  expect_error(ErrorCode::kConfigError, [] { config_from_json({{"preset", "huge"}}); });
  expect_error(ErrorCode::kConfigError, [] { config_from_json(nlohmann::json::array()); });
}

TEST(RunConfig, TextRoundTripAndDerivedSeeds) {
  RunConfig c;
  c.seed = 3;
  c.corpus.noise_sigma = 0.2;
  const RunConfig back = config_from_json(nlohmann::json::parse(config_text(c)));
  EXPECT_EQ(config_text(back), config_text(c));
  EXPECT_EQ(back.plan(Stage::kPretrain).seed, c.plan(Stage::kPretrain).seed);
  EXPECT_NE(c.plan(Stage::kPretrain).seed, c.plan(Stage::kControl).seed);
  RunConfig other = c;
  other.seed = 4;
  EXPECT_NE(other.estimator_options().seed, c.estimator_options().seed);
  EXPECT_EQ(c.corpus_options().seed, 3u);
}

TEST(RunConfig, FullPreset) {
  const RunConfig c = config_from_json({{"preset", "full"}});
  EXPECT_EQ(c.plan(Stage::kPretrain).steps, 200000);
  EXPECT_EQ(c.plan(Stage::kGanRefine).steps, 200000);
  EXPECT_EQ(c.plan(Stage::kControl).steps, 50000);
  EXPECT_EQ(c.model.control.proj_dim, 32);
}

TEST(Cli, HelpListsEverySubcommand) {
  const Result r = run_cli("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* sub : {"gen-corpus", "train-backbone", "train-control", "train-estimator", "label", "synth",
                          "sweep1d", "sweep2d", "simeval", "map-impression", "correlations"}) {
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
  }
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli("").code, 2);
  EXPECT_EQ(run_cli("no-such-command").code, 2);
  EXPECT_EQ(run_cli("gen-corpus --no-such-flag").code, 2);
  EXPECT_EQ(run_cli("synth --tokens 1,2").code, 2);
}

class CliRun : public ::testing::Test {
 protected:
  testing::TempDir dir{"cli"};
  std::string config_path;

  void SetUp() override {
    config_path = (dir.path() / "c.json").string();
    std::ofstream(config_path) << R"({"corpus": {"n_speakers": 20, "utts_per_speaker": 3},
      "stages": {"pretrain": {"steps": 3}, "control": {"steps": 2}},
      "estimator": {"epochs": 1}, "eval": {"n_utts": 1, "deltas": [-1, 0, 1]}})";
  }
  std::string flags() const { return "--config " + config_path + " --work-dir " + (dir.path() / "run").string(); }
};

TEST_F(CliRun, GenCorpusIsDeterministic) {
  const Result a = run_cli("gen-corpus " + flags());
  ASSERT_EQ(a.code, 0) << a.out;
  const Result b = run_cli("gen-corpus " + flags());
  ASSERT_EQ(b.code, 0) << b.out;
  const auto hash = [](const std::string& s) { return s.substr(s.find("manifest_hash")); };
  EXPECT_EQ(hash(a.out), hash(b.out));
  const Result c = run_cli("gen-corpus " + flags() + " --seed 1");
  EXPECT_NE(hash(a.out), hash(c.out));
}

TEST_F(CliRun, StageOrderAndMissingInputsExitOne) {
  Result r = run_cli("train-backbone " + flags());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("voximp: error code=IoError message="), std::string::npos) << r.out;
  ASSERT_EQ(run_cli("gen-corpus " + flags()).code, 0);
  r = run_cli("train-control " + flags());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("error code=StageOrderViolation"), std::string::npos) << r.out;
  r = run_cli("gen-corpus --config " + (dir.path() / "missing.json").string());
  EXPECT_EQ(r.code, 1);
}

TEST_F(CliRun, WiringThroughSweep) {
  ASSERT_EQ(run_cli("gen-corpus " + flags()).code, 0);
  Result r = run_cli("train-backbone " + flags());
  ASSERT_EQ(r.code, 0) << r.out;
  r = run_cli("train-control " + flags());
  ASSERT_EQ(r.code, 0) << r.out;
  r = run_cli("train-estimator " + flags());
  ASSERT_EQ(r.code, 0) << r.out;
  r = run_cli("sweep1d --dim I " + flags());
  ASSERT_EQ(r.code, 0) << r.out;
  std::size_t csvs = 0, pngs = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir.path() / "run" / "reports")) {
    csvs += e.path().filename() == "sweep_I.csv";
    pngs += e.path().filename() == "sweep_I.png";
  }
  EXPECT_EQ(csvs, 2u);
  EXPECT_EQ(pngs, 2u);
}

TEST_F(CliRun, MapImpressionOffline) {
  const Result r = run_cli("map-impression --offline --target sleepy --out " + (dir.path() / "trace.json").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("\"K\""), std::string::npos);
  std::ifstream in(dir.path() / "trace.json");
  const auto trace = nlohmann::json::parse(in);
  EXPECT_EQ(trace.at("attempts"), 1);
  EXPECT_EQ(run_cli("map-impression --offline --target ' '").code, 1);
}

}  // namespace
}  // namespace voximp
