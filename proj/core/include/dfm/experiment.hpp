// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfm/cache.hpp"
#include "dfm/corpus.hpp"
#include "dfm/sampler.hpp"
#include "dfm/schedule.hpp"
#include "dfm/tokenizer.hpp"
#include "dfm/training.hpp"
#include "dfm/transformer.hpp"

namespace dfm {

/// Raised by run_experiment; names the stage that failed.
struct StageError : std::runtime_error {
  StageError(std::string stage_name, const std::string& what)
      : std::runtime_error("stage '" + stage_name + "' failed: " + what), stage(std::move(stage_name)) {}
  std::string stage;
};

struct CacheBenchSpec {
  std::size_t response_length = 256;
  std::size_t width = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  /// Timed generations per variant; the fastest run is reported.
  std::size_t repeats = 3;
  /// Generations per variant for the output-drift estimate.
  std::size_t drift_samples = 500;

  friend bool operator==(const CacheBenchSpec&, const CacheBenchSpec&) = default;
};

struct OutputPaths {
  std::string report;
  std::string traces;
  std::string checkpoint;
  std::string loss_csv;

  friend bool operator==(const OutputPaths&, const OutputPaths&) = default;
};

/// Everything one run needs. Sub-config seeds are ignored by run_experiment:
/// all randomness is derived from `seed` through named streams
/// (corpus, init, train, sample, tokenizer, ...).
struct ExperimentConfig {
  /// path-check | oracle-sampling | train-and-sample | cache-bench | retrieval
  std::string pipeline = "oracle-sampling";
  std::uint64_t seed = 1;
  ScheduleSpec schedule;
  CorpusSpec corpus;
  ArchitectureConfig model;
  /// Optional trained denoiser to load instead of training.
  std::string model_checkpoint;
  TrainingConfig training;
  SamplerConfig sampler;
  CacheConfig cache;
  std::vector<double> taus{0.9, 0.95, 0.99};
  CacheBenchSpec bench;
  TokenizerConfig tokenizer;
  RetrievalSpec retrieval;
  std::size_t retrieval_train_pairs = 400;
  std::size_t tokenizer_corpus = 2000;
  /// Generations per sampling stage.
  std::size_t samples = 1000;
  /// Noised draws for model-vs-oracle loss comparison.
  std::size_t eval_draws = 2000;
  /// Draws per (t, x1) cell in the path check.
  std::size_t path_draws = 100000;
  /// Also sample at 2N steps and report the TV change.
  bool check_step_doubling = false;
  OutputPaths outputs;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

void to_json(nlohmann::json& j, const CacheBenchSpec& s);
void from_json(const nlohmann::json& j, CacheBenchSpec& s);
void to_json(nlohmann::json& j, const OutputPaths& p);
void from_json(const nlohmann::json& j, OutputPaths& p);
void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Missing keys take defaults; unknown pipeline names raise ConfigError.
void from_json(const nlohmann::json& j, ExperimentConfig& c);

ExperimentConfig load_config(const std::filesystem::path& path);
void validate(const ExperimentConfig& config);

/// FNV-1a over the canonical JSON serialization, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

struct MetricReport {
  std::string pipeline;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string timestamp;
  nlohmann::json config;
  /// Deterministic given config and seed.
  std::map<std::string, double> metrics;
  /// Wall-clock measurements; excluded from reproducibility comparisons.
  std::map<std::string, double> timing;

  /// Throws DomainError on a non-finite value.
  void set(const std::string& name, double value);
  void set_timing(const std::string& name, double value);
  double at(const std::string& name) const;
};

nlohmann::json to_json(const MetricReport& report);
MetricReport report_from_json(const nlohmann::json& j);
void write_report(const std::filesystem::path& path, const MetricReport& report);
MetricReport read_report(const std::filesystem::path& path);

/// The report minus timestamp and timing: the part that must reproduce
/// byte-for-byte.
std::string deterministic_dump(const MetricReport& report);

/// Runs the named pipeline and writes outputs named in config.outputs.
MetricReport run_experiment(const ExperimentConfig& config);

struct Threshold {
  std::string metric;
  /// "<", "<=", ">" or "==".
  std::string op;
  double value = 0.0;
  /// Looks in the timing section instead of metrics.
  bool timing = false;
};

/// Acceptance thresholds that apply to a pipeline's report.
std::vector<Threshold> acceptance_thresholds(const MetricReport& report);

/// Human-readable violations (empty when every threshold holds).
std::vector<std::string> check_thresholds(const MetricReport& report);

}  // namespace dfm
