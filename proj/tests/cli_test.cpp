#include <array>
#include <cstdio>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "graad/io.hpp"
#include "test_util.hpp"

namespace {

using nlohmann::json;
using graad::testing::TempDir;

struct Result {
  int status = 0;
  std::string out, err;
};

Result run(const std::string& args, const TempDir& dir, const std::string& env = "") {
  const auto err_path = dir / "stderr.txt";
  const std::string cmd = env + " " GRAAD_CLI " " + args + " 2>" + err_path.string();
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  std::array<char, 4096> buf{};
  std::size_t got;
  while ((got = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), got);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.err = graad::read_file(err_path);
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir();
    graad::write_file(*dir_ / "tiny.json",
                      json{{"data.n", 200},
                           {"encoder.dim", 8},
                           {"encoder.ffn_dim", 16},
                           {"encoder.layers", 1},
                           {"train.epochs", 2},
                           {"poison.triggers", "tq"}}
                          .dump());
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  std::string base(const std::string& run) const {
    return "--config " + (*dir_ / "tiny.json").string() + " --run-dir " + (*dir_ / run).string();
  }

  // gen-data, train, calibrate in a fresh run dir.
  void prepare(const std::string& run, const std::string& extra = "") {
    for (const char* cmd : {"gen-data", "train", "calibrate"}) {
      const Result r = run_cmd(std::string(cmd) + " " + base(run) + " " + extra);
      ASSERT_EQ(r.status, 0) << cmd << ": " << r.err;
    }
  }

  Result run_cmd(const std::string& args, const std::string& env = "") const {
    return run(args, *dir_, env);
  }

  static TempDir* dir_;
};

TempDir* CliTest::dir_ = nullptr;

TEST_F(CliTest, FullPipelineWritesArtifacts) {
  prepare("a");
  for (const char* cmd : {"defend", "evaluate", "ablate"}) {
    const Result r = run_cmd(std::string(cmd) + " " + base("a"));
    ASSERT_EQ(r.status, 0) << cmd << ": " << r.err;
    EXPECT_TRUE(json::accept(r.out)) << r.out;
  }
  for (const char* f : {"data/train.tsv", "data/val.tsv", "data/test.tsv", "model.ckpt", "vocab.txt",
                        "metrics.jsonl", "train_meta.json", "calibration.json", "report.json",
                        "verdicts.jsonl", "evaluation.json", "distributions.csv", "ablation.json"}) {
    EXPECT_TRUE(std::filesystem::exists(*dir_ / "a" / f)) << f;
  }
  const json report = json::parse(graad::read_file(*dir_ / "a" / "report.json"));
  EXPECT_TRUE(report.at("wall_clock_seconds").is_null());
  EXPECT_EQ(report.at("seeds").at("master"), 1u);
  const json ablation = json::parse(graad::read_file(*dir_ / "a" / "ablation.json"));
  EXPECT_EQ(ablation.at("rows").size(), 3u);

  const json meta = json::parse(graad::read_file(*dir_ / "a" / "train_meta.json"));
  EXPECT_EQ(meta.at("poison").at("triggers"), json::array({"tq"}));
  EXPECT_EQ(meta.at("model_checksum"), json::parse(graad::read_file(*dir_ / "a" / "calibration.json"))
                                           .at("model_checksum"));
}

TEST_F(CliTest, RerunIsByteIdentical) {
  prepare("b1", "--jobs 1");
  prepare("b2", "--jobs 3");
  for (const char* cmd : {"defend", "evaluate"}) {
    ASSERT_EQ(run_cmd(std::string(cmd) + " " + base("b1")).status, 0);
    ASSERT_EQ(run_cmd(std::string(cmd) + " " + base("b2") + " --jobs 3").status, 0);
  }
  for (const char* f : {"data/train.tsv", "model.ckpt", "metrics.jsonl", "calibration.json",
                        "verdicts.jsonl", "distributions.csv"}) {
    EXPECT_EQ(graad::read_file(*dir_ / "b1" / f), graad::read_file(*dir_ / "b2" / f)) << f;
  }
}

TEST_F(CliTest, ExplainAndSingleTextDefense) {
  prepare("c");
  Result r = run_cmd("explain " + base("c") + " --text 'one tq two'");
  ASSERT_EQ(r.status, 0) << r.err;
  const json ex = json::parse(r.out);
  EXPECT_TRUE(ex.contains("tau"));
  r = run_cmd("defend " + base("c") + " --text 'one tq two'");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_TRUE(json::parse(r.out).contains("flagged"));
}

TEST_F(CliTest, ErrorsAreJsonOnStderr) {
  Result r = run_cmd("train " + base("missing"));
  EXPECT_NE(r.status, 0);
  EXPECT_TRUE(r.out.empty());
  EXPECT_EQ(json::parse(r.err).at("error"), "io");

  r = run_cmd("calibrate " + base("missing"));
  EXPECT_EQ(json::parse(r.err).at("error"), "precondition");

  r = run_cmd("evaluate --mode nope");
  EXPECT_EQ(r.status, 2);
  EXPECT_EQ(json::parse(r.err).at("error"), "usage");

  r = run_cmd("explain " + base("missing"));
  EXPECT_EQ(r.status, 2);

  r = run_cmd("gen-data " + base("bad") + " --percentile 0");
  EXPECT_NE(r.status, 0);
  EXPECT_EQ(json::parse(r.err).at("error"), "precondition");
}

TEST_F(CliTest, RefusesMismatchedArtifacts) {
  prepare("d");
  Result r = run_cmd("defend " + base("d") + " --percentile 90");
  EXPECT_EQ(json::parse(r.err).at("error"), "precondition");

  r = run_cmd("evaluate " + base("d") + " --seed 77");
  EXPECT_EQ(json::parse(r.err).at("error"), "checksum");

  const auto ckpt = *dir_ / "d" / "model.ckpt";
  const std::string good = graad::read_file(ckpt);
  std::string bad = good;
  bad[bad.size() - 1] ^= 1;
  graad::write_file(ckpt, bad);
  r = run_cmd("defend " + base("d"));
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(json::parse(r.err).at("error"), "checksum");
  graad::write_file(ckpt, good);
  EXPECT_EQ(run_cmd("defend " + base("d")).status, 0);
}

TEST_F(CliTest, RunDirFromEnvironment) {
  prepare("e");
  const std::string cfg = "--config " + (*dir_ / "tiny.json").string();
  const Result r = run_cmd("explain " + cfg + " --text 'a tq b'", "GRAAD_RUN_DIR=" + (*dir_ / "e").string());
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(*dir_ / "e" / "calibration.json"));
}

}  // namespace
