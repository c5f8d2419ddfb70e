// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "dfm/experiment.hpp"

namespace dfm {
namespace {

namespace fs = std::filesystem;

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("dfm_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                      "_" + name);
}

TEST(ExperimentConfig, JsonRoundTripAndDefaults) {
  ExperimentConfig c;
  c.pipeline = "cache-bench";
  c.seed = 42;
  c.taus = {0.5, 0.75};
  c.bench.repeats = 1;
  c.outputs.report = "r.json";
  EXPECT_EQ(nlohmann::json(c).get<ExperimentConfig>(), c);
  EXPECT_EQ(nlohmann::json::object().get<ExperimentConfig>(), ExperimentConfig{});
}

TEST(ExperimentConfig, ValidationErrors) {
  EXPECT_THROW(nlohmann::json({{"pipeline", "nope"}}).get<ExperimentConfig>(), ConfigError);
  ExperimentConfig c;
  c.taus = {};
  c.pipeline = "cache-bench";
  EXPECT_THROW(validate(c), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/dfm.json"), ConfigError);
  const auto p = temp_file("bad.json");
  std::ofstream(p) << "{ not json";
  EXPECT_THROW(load_config(p), ConfigError);
  fs::remove(p);
}

TEST(ExperimentConfig, ShippedConfigsLoad) {
  for (const auto& e : fs::directory_iterator(DFM_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    EXPECT_NO_THROW(validate(load_config(e.path()))) << e.path();
  }
}

TEST(ConfigHash, StableAndSensitive) {
  ExperimentConfig a, b;
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b.sampler.steps += 1;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(MetricReport, RejectsNonFiniteAndRoundTrips) {
  MetricReport r;
  r.pipeline = "path-check";
  r.seed = 3;
  r.timestamp = "2026-01-01T00:00:00Z";
  r.set("a", 1.5);
  r.set_timing("ms", 2.0);
  EXPECT_THROW(r.set("b", std::nan("")), DomainError);
  EXPECT_THROW(r.set_timing("c", INFINITY), DomainError);
  EXPECT_EQ(r.at("a"), 1.5);
  EXPECT_THROW(r.at("zzz"), std::exception);

  const auto p = temp_file("report.json");
  write_report(p, r);
  const auto back = read_report(p);
  fs::remove(p);
  EXPECT_EQ(back.metrics, r.metrics);
  EXPECT_EQ(back.timing, r.timing);
  EXPECT_EQ(back.timestamp, r.timestamp);

  MetricReport other = r;
  other.timestamp = "later";
  other.timing["ms"] = 99.0;
  EXPECT_EQ(deterministic_dump(other), deterministic_dump(r));
  other.metrics["a"] = 1.25;
  EXPECT_NE(deterministic_dump(other), deterministic_dump(r));
}

TEST(Thresholds, ReportsViolationsAndMissingMetrics) {
  MetricReport r;
  r.pipeline = "oracle-sampling";
  auto v = check_thresholds(r);
  ASSERT_FALSE(v.empty());
  EXPECT_NE(v[0].find("missing"), std::string::npos);
  r.set("tv_to_target", 0.2);
  v = check_thresholds(r);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_NE(v[0].find("tv_to_target"), std::string::npos);
  r.set("tv_to_target", 0.01);
  EXPECT_TRUE(check_thresholds(r).empty());
}

TEST(RunExperiment, PathCheckIsDeterministic) {
  ExperimentConfig c;
  c.pipeline = "path-check";
  c.path_draws = 2000;
  c.schedule.vocab_size = 6;
  const auto a = run_experiment(c);
  const auto b = run_experiment(c);
  EXPECT_EQ(deterministic_dump(a), deterministic_dump(b));
  EXPECT_LT(a.at("max_sum_error_metric"), 1e-9);
  EXPECT_EQ(a.at("rate_negative"), 0.0);
  EXPECT_EQ(a.config_hash, config_hash(c));
  EXPECT_FALSE(a.timestamp.empty());
}

TEST(RunExperiment, OracleSamplingWritesOutputs) {
  ExperimentConfig c;
  c.pipeline = "oracle-sampling";
  c.samples = 50;
  c.sampler.steps = 16;
  c.outputs.report = temp_file("os_report.json").string();
  c.outputs.traces = temp_file("os_trace.jsonl").string();
  const auto r = run_experiment(c);
  EXPECT_TRUE(fs::exists(c.outputs.report));
  EXPECT_TRUE(fs::exists(c.outputs.traces));
  EXPECT_EQ(deterministic_dump(read_report(c.outputs.report)), deterministic_dump(r));
  EXPECT_GE(r.at("tv_to_target"), 0.0);
  fs::remove(c.outputs.report);
  fs::remove(c.outputs.traces);
}

TEST(RunExperiment, StageErrorNamesTheStage) {
  ExperimentConfig c;
  c.pipeline = "train-and-sample";
  c.model_checkpoint = "/nonexistent/model.ckpt";
  try {
    run_experiment(c);
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_FALSE(e.stage.empty());
  }
}

}  // namespace
}  // namespace dfm
