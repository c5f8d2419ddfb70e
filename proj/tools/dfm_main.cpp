// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dfm/checkpoint.hpp"
#include "dfm/experiment.hpp"
#include "dfm/rng.hpp"

namespace {

constexpr int kThresholdExit = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool assert_thresholds = false;
};

void add_common(CLI::App* cmd, Common& c, bool config_required = true) {
  auto* opt = cmd->add_option("--config", c.config, "experiment config (JSON)");
  if (config_required) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "root seed (overrides the config)");
  cmd->add_flag("--assert", c.assert_thresholds, "exit nonzero on an acceptance-threshold violation");
}

dfm::ExperimentConfig load(const Common& c, const std::string& pipeline) {
  dfm::ExperimentConfig cfg = c.config.empty() ? dfm::ExperimentConfig{} : dfm::load_config(c.config);
  if (!pipeline.empty()) cfg.pipeline = pipeline;
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

int print_violations(const dfm::MetricReport& report, bool enforce) {
  const auto violations = dfm::check_thresholds(report);
  for (const auto& v : violations) std::cerr << "threshold: " << v << '\n';
  return enforce && !violations.empty() ? kThresholdExit : 0;
}

int finish(const dfm::MetricReport& report, const Common& c) {
  if (c.out.empty()) std::cout << dfm::to_json(report).dump(2) << '\n';
  else std::cerr << "report written to " << c.out << '\n';
  return print_violations(report, c.assert_thresholds);
}

std::vector<double> parse_taus(const std::string& text) {
  std::vector<double> taus;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (used != item.size()) throw dfm::ConfigError("bad tau value: " + item);
    taus.push_back(v);
  }
  if (taus.empty()) throw dfm::ConfigError("--taus is empty");
  return taus;
}

std::vector<dfm::Point2> read_points_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw dfm::ConfigError("cannot open points: " + path);
  std::vector<dfm::Point2> pts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    dfm::Point2 p;
    char comma = 0;
    std::istringstream ls(line);
    if (!(ls >> p.x >> comma >> p.y) || comma != ',') {
      if (lineno == 1) continue;  // header
      throw dfm::ConfigError(path + ":" + std::to_string(lineno) + ": expected x,y");
    }
    pts.push_back(p);
  }
  return pts;
}

int summarize(const std::vector<std::string>& paths, bool enforce) {
  int rc = 0;
  for (const auto& path : paths) {
    const auto report = dfm::read_report(path);
    std::printf("%s  pipeline=%s seed=%llu config=%s\n", path.c_str(), report.pipeline.c_str(),
                static_cast<unsigned long long>(report.seed), report.config_hash.c_str());
    for (const auto& [k, v] : report.metrics) std::printf("  %-40s %.6g\n", k.c_str(), v);
    for (const auto& [k, v] : report.timing) std::printf("  %-40s %.6g  (timing)\n", k.c_str(), v);
    const auto violations = dfm::check_thresholds(report);
    for (const auto& th : dfm::acceptance_thresholds(report)) {
      const bool bad = std::any_of(violations.begin(), violations.end(),
                                   [&](const std::string& s) { return s.rfind(th.metric, 0) == 0; });
      std::printf("  [%s] %s %s %g\n", bad ? "FAIL" : "pass", th.metric.c_str(), th.op.c_str(), th.value);
    }
    if (!violations.empty()) rc = kThresholdExit;
  }
  return enforce ? rc : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete flow matching desk-scale toolkit"};
  app.require_subcommand(1);

  // paths check
  Common paths_opts;
  auto* paths = app.add_subcommand("paths", "probability path utilities")->require_subcommand(1);
  auto* paths_check = paths->add_subcommand("check", "normalization, sampling and velocity checks");
  add_common(paths_check, paths_opts, false);
  paths_check->add_option("--out", paths_opts.out, "report path");

  // sample run
  Common sample_opts;
  std::string trace_path;
  auto* sample = app.add_subcommand("sample", "generation")->require_subcommand(1);
  auto* sample_run = sample->add_subcommand("run", "sample from the oracle or a trained model");
  add_common(sample_run, sample_opts);
  sample_run->add_option("--trace", trace_path, "JSON-lines trace of the first generation");
  sample_run->add_option("--out", sample_opts.out, "report path");

  // train denoiser
  Common train_opts;
  std::string loss_csv;
  auto* train = app.add_subcommand("train", "training")->require_subcommand(1);
  auto* train_denoiser = train->add_subcommand("denoiser", "train a denoiser and evaluate it");
  add_common(train_denoiser, train_opts);
  train_denoiser->add_option("--out", train_opts.out, "checkpoint path")->required();
  train_denoiser->add_option("--csv", loss_csv, "training curve CSV");
  std::string train_report;
  train_denoiser->add_option("--report", train_report, "report path");

  // quantize fit | encode
  Common quant_opts;
  std::string points_in, tokenizer_ckpt;
  auto* quantize = app.add_subcommand("quantize", "multi-codebook tokenizer")->require_subcommand(1);
  auto* quant_fit = quantize->add_subcommand("fit", "fit the toy-modality tokenizer");
  add_common(quant_fit, quant_opts, false);
  quant_fit->add_option("--in", points_in, "points CSV (x,y); default: sampled mixture corpus");
  quant_fit->add_option("--out", quant_opts.out, "tokenizer checkpoint")->required();
  auto* quant_encode = quantize->add_subcommand("encode", "encode points to sub-codebook indices");
  std::string encode_in, encode_out;
  quant_encode->add_option("--in", encode_in, "points CSV (x,y)")->required()->check(CLI::ExistingFile);
  quant_encode->add_option("--out", encode_out, "tokens JSON-lines")->required();
  quant_encode->add_option("--tokenizer", tokenizer_ckpt, "tokenizer checkpoint")
      ->required()
      ->check(CLI::ExistingFile);

  // bench cache
  Common bench_opts;
  std::string taus_text;
  auto* bench = app.add_subcommand("bench", "benchmarks")->require_subcommand(1);
  auto* bench_cache = bench->add_subcommand("cache", "adaptive cache speed and drift");
  add_common(bench_cache, bench_opts);
  bench_cache->add_option("--taus", taus_text, "comma-separated thresholds, e.g. 0.9,0.95,0.99");
  bench_cache->add_option("--out", bench_opts.out, "report path");

  // retrieve eval
  Common retrieve_opts;
  auto* retrieve = app.add_subcommand("retrieve", "retrieval")->require_subcommand(1);
  auto* retrieve_eval = retrieve->add_subcommand("eval", "EOS-feature MRR on the paired corpus");
  add_common(retrieve_eval, retrieve_opts);
  retrieve_eval->add_option("--out", retrieve_opts.out, "report path");

  // report summarize
  std::vector<std::string> report_paths;
  bool report_assert = false;
  auto* report = app.add_subcommand("report", "reports")->require_subcommand(1);
  auto* report_sum = report->add_subcommand("summarize", "print metrics and threshold status");
  report_sum->add_option("reports", report_paths, "report JSON files")->required()->check(CLI::ExistingFile);
  report_sum->add_flag("--assert", report_assert, "exit nonzero on any violation");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*paths_check) {
      auto cfg = load(paths_opts, "path-check");
      cfg.outputs.report = paths_opts.out;
      return finish(dfm::run_experiment(cfg), paths_opts);
    }
    if (*sample_run) {
      auto cfg = load(sample_opts, "");
      if (cfg.pipeline != "train-and-sample") cfg.pipeline = "oracle-sampling";
      cfg.outputs.traces = trace_path;
      cfg.outputs.report = sample_opts.out;
      return finish(dfm::run_experiment(cfg), sample_opts);
    }
    if (*train_denoiser) {
      auto cfg = load(train_opts, "train-and-sample");
      cfg.outputs.checkpoint = train_opts.out;
      cfg.outputs.loss_csv = loss_csv;
      cfg.outputs.report = train_report;
      cfg.model_checkpoint.clear();
      const auto rep = dfm::run_experiment(cfg);
      Common shown = train_opts;
      shown.out = train_report;
      return finish(rep, shown);
    }
    if (*quant_fit) {
      auto cfg = load(quant_opts, "");
      std::vector<dfm::Point2> pts;
      if (!points_in.empty()) {
        pts = read_points_csv(points_in);
      } else {
        std::mt19937_64 rng(dfm::derive_seed(cfg.seed, "corpus"));
        pts = dfm::gaussian_mixture(cfg.tokenizer_corpus, cfg.retrieval.classes, cfg.retrieval.radius,
                                    cfg.retrieval.stddev, rng);
      }
      auto tcfg = cfg.tokenizer;
      tcfg.seed = dfm::derive_seed(cfg.seed, "tokenizer");
      const auto tok = dfm::fit_toy_modality(pts, tcfg);
      dfm::write_checkpoint(quant_opts.out, dfm::to_checkpoint(tok));
      std::mt19937_64 km_rng(dfm::derive_seed(cfg.seed, "kmeans"));
      const double km = dfm::kmeans(dfm::to_matrix(pts), tcfg.codes_per_book, km_rng).mse;
      std::cout << nlohmann::json{{"points", pts.size()},
                                  {"reconstruction_mse", tok.reconstruction_mse(pts)},
                                  {"kmeans_mse", km},
                                  {"checkpoint", quant_opts.out}}
                       .dump(2)
                << '\n';
      return 0;
    }
    if (*quant_encode) {
      const auto tok = dfm::tokenizer_from_checkpoint(dfm::read_checkpoint(tokenizer_ckpt));
      const auto pts = read_points_csv(encode_in);
      std::ofstream os(encode_out);
      if (!os) throw dfm::ConfigError("cannot open output: " + encode_out);
      for (const auto& p : pts) {
        const auto code = tok.tokenize(p);
        os << nlohmann::json{{"x", p.x}, {"y", p.y}, {"indices", code.indices}}.dump() << '\n';
      }
      std::cerr << "encoded " << pts.size() << " points\n";
      return 0;
    }
    if (*bench_cache) {
      auto cfg = load(bench_opts, "cache-bench");
      if (!taus_text.empty()) cfg.taus = parse_taus(taus_text);
      cfg.outputs.report = bench_opts.out;
      return finish(dfm::run_experiment(cfg), bench_opts);
    }
    if (*retrieve_eval) {
      auto cfg = load(retrieve_opts, "retrieval");
      cfg.outputs.report = retrieve_opts.out;
      return finish(dfm::run_experiment(cfg), retrieve_opts);
    }
    if (*report_sum) return summarize(report_paths, report_assert);
  } catch (const dfm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
