#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "commands.hpp"
#include "loopflow/store_io.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = loopflow::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// One small corpus pushed through synth, ingest, detect and repair once for
// the whole suite.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("loopflow_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
    std::ofstream(dir_ / "spec.json") << R"({"n_mainline": 3, "ramps": [{"direction": "A", "kind": "exit", "closing": 2}],
      "weeks": 2, "seed": 4, "anomalies": {"missing_blocks": 3, "zero_blocks": 3, "high_cells": 4}})";
    ok_ = run({"synth", "generate", "--spec", p("spec.json"), "--out", p("synth")}).code == 0 &&
          run({"ingest", "--topology", p("synth/topology.json"), "--records", p("synth/records.csv"), "--out", p("ingest")}).code == 0 &&
          run({"detect", "--store", p("ingest/store.lfs"), "--topology", p("synth/topology.json"), "--out", p("detect")}).code == 0 &&
          run({"repair", "--store", p("detect/store.lfs"), "--method", "m1", "--out", p("repair")}).code == 0;
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string p(const std::string& rel) { return (dir_ / rel).string(); }

  static fs::path dir_;
  static bool ok_;
};

fs::path Pipeline::dir_;
bool Pipeline::ok_ = false;

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({"train", "--help"}).code, 0);
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"ingest", "--bogus", "1"}).code, 1);
  EXPECT_EQ(run({"repair", "--method", "m3"}).code, 1);
  const auto r = run({"ingest", "--records", "x.csv"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--topology"), std::string::npos);
}

TEST(Cli, MissingInputFileIsADataError) {
  EXPECT_EQ(run({"ingest", "--topology", "/nonexistent/topo.json", "--records", "/nonexistent/r.csv"}).code, 2);
}

TEST_F(Pipeline, StagesProduceTheirFiles) {
  ASSERT_TRUE(ok_);
  for (const char* f : {"synth/topology.json", "synth/records.csv", "synth/clean_records.csv", "synth/mask.csv", "ingest/store.lfs",
                        "detect/store.lfs", "detect/anomalies.csv", "repair/store.lfs"}) {
    EXPECT_TRUE(fs::exists(dir_ / f)) << f;
  }
  const auto repaired = loopflow::load_store(p("repair/store.lfs"));
  EXPECT_EQ(repaired.stage(), loopflow::Stage::repaired);
}

TEST_F(Pipeline, StagesMustRunInOrder) {
  ASSERT_TRUE(ok_);
  EXPECT_EQ(run({"repair", "--store", p("ingest/store.lfs"), "--out", p("bad")}).code, 1);
}

TEST_F(Pipeline, TrainNeedsAnExplicitSeed) {
  ASSERT_TRUE(ok_);
  const auto r = run({"train", "--store", p("repair/store.lfs"), "--model", "dpp", "--out", p("noseed")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("seed"), std::string::npos);
}

TEST_F(Pipeline, FlagBeatsConfigBeatsDefault) {
  ASSERT_TRUE(ok_);
  std::ofstream(dir_ / "cfg.json") << R"({"model": {"kind": "lstm", "R": 5, "P": 2, "features": "fs"}})";
  auto R_of = [&](const std::string& out) { return nlohmann::json::parse(slurp(dir_ / out / "dataset.json")).at("R").get<int>(); };
  ASSERT_EQ(run({"dataset", "--store", p("repair/store.lfs"), "--out", p("ds_default")}).code, 0);
  ASSERT_EQ(run({"dataset", "--store", p("repair/store.lfs"), "--config", p("cfg.json"), "--out", p("ds_config")}).code, 0);
  ASSERT_EQ(run({"dataset", "--store", p("repair/store.lfs"), "--config", p("cfg.json"), "--R", "7", "--out", p("ds_flag")}).code, 0);
  EXPECT_EQ(R_of("ds_default"), 10);
  EXPECT_EQ(R_of("ds_config"), 5);
  EXPECT_EQ(R_of("ds_flag"), 7);
  EXPECT_EQ(nlohmann::json::parse(slurp(dir_ / "ds_flag" / "dataset.json")).at("features"), "fs");
}

TEST_F(Pipeline, UnknownConfigKeyIsAUsageError) {
  ASSERT_TRUE(ok_);
  std::ofstream(dir_ / "typo.json") << R"({"modle": {}})";
  EXPECT_EQ(run({"dataset", "--store", p("repair/store.lfs"), "--config", p("typo.json"), "--out", p("typo")}).code, 1);
}

TEST_F(Pipeline, TrainPredictEvaluateReport) {
  ASSERT_TRUE(ok_);
  ASSERT_EQ(run({"train", "--store", p("repair/store.lfs"), "--model", "dpp", "--R", "4", "--seed", "1", "--out", p("dpp")}).code, 0);
  ASSERT_EQ(run({"train", "--store", p("repair/store.lfs"), "--model", "bpnn", "--R", "4", "--hidden", "8", "--epochs", "2",
                 "--seed", "1", "--out", p("bpnn")}).code,
            0);
  EXPECT_TRUE(fs::exists(dir_ / "bpnn/history.csv"));
  ASSERT_EQ(run({"predict", "--store", p("repair/store.lfs"), "--model-file", p("dpp/model.json"), "--out", p("pred")}).code, 0);
  EXPECT_NE(slurp(dir_ / "pred/predictions.csv").find("station_id,timestamp,P,observed,predicted,residual"), std::string::npos);
  const auto ev = run({"evaluate", "--store", p("repair/store.lfs"), "--model-file", p("dpp/model.json"), p("bpnn/model.json"),
                       "--out", p("eval")});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto reports = slurp(dir_ / "eval/reports.csv");
  EXPECT_EQ(reports.rfind("model,features,R,P,repetitions,points,rmse,mae,smape\n", 0), 0u);
  EXPECT_NE(reports.find("\ndpp,f,4,1,"), std::string::npos);
  EXPECT_NE(reports.find("\nbpnn,f,4,1,"), std::string::npos);
  ASSERT_EQ(run({"report", "--reports", p("eval/reports.csv"), "--out", p("report")}).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "report/summary.csv"));
}

TEST_F(Pipeline, RepairEvaluationAgainstTheMask) {
  ASSERT_TRUE(ok_);
  const auto r = run({"repair-eval", "--store", p("detect/store.lfs"), "--mask", p("synth/mask.csv"), "--out", p("reval")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "reval/repair_eval.csv"));
}

TEST_F(Pipeline, ProfilesAndCongestion) {
  ASSERT_TRUE(ok_);
  ASSERT_EQ(run({"profile", "--store", p("repair/store.lfs"), "--topology", p("synth/topology.json"), "--out", p("prof")}).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "prof/profiles.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "prof/congestion.csv"));
}
