// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dfm/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "dfm/checkpoint.hpp"
#include "dfm/denoiser.hpp"
#include "dfm/metrics.hpp"
#include "dfm/quantizer.hpp"
#include "dfm/rng.hpp"
#include "dfm/velocity.hpp"

namespace dfm {
namespace {

const std::set<std::string> kPipelines = {"path-check", "oracle-sampling", "train-and-sample",
                                          "cache-bench", "retrieval"};

template <typename F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

std::string tau_key(double tau) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "tau_%g", tau);
  return buf;
}

CacheConfig with_tau(CacheConfig c, double tau) {
  c.tau = tau;
  c.audit = false;
  return c;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Passes predictions through and keeps a copy of every logits matrix.
class RecordingDenoiser final : public Denoiser {
 public:
  explicit RecordingDenoiser(Denoiser& inner) : inner_(inner) {}
  DenoiserOutput predict(const TokenSequence& x_t, double t, bool dropped) override {
    auto out = inner_.predict(x_t, t, dropped);
    logits.push_back(out.logits);
    return out;
  }
  std::size_t vocab_size() const override { return inner_.vocab_size(); }
  void begin_generation() override { inner_.begin_generation(); }
  CacheCounters cache_counters() const override { return inner_.cache_counters(); }

  std::vector<Matrix> logits;

 private:
  Denoiser& inner_;
};

TokenSequence prompt_for(const TextCorpus& corpus, const CorpusSpec& spec) {
  return TokenSequence::prompt(corpus.instruction, corpus.layout.count(Segment::Response),
                               spec.first_content);
}

std::vector<std::vector<TokenId>> sample_many(Denoiser& denoiser, const TokenSequence& prompt,
                                              const SamplerConfig& config,
                                              const PathSchedule& schedule, std::uint64_t root,
                                              std::size_t n, GenerationTrace* first_trace = nullptr) {
  std::vector<std::vector<TokenId>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = generate(denoiser, prompt, config, schedule, mix64(root + i));
    if (i == 0 && first_trace) *first_trace = r.trace;
    out.push_back(std::move(r.sequence.tokens));
  }
  return out;
}

void write_trace(const std::string& path, const GenerationTrace& trace) {
  if (path.empty()) return;
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open trace output: " + path);
  write_trace_jsonl(os, trace);
}

ArchitectureConfig text_architecture(const ExperimentConfig& cfg, const TextCorpus& corpus) {
  ArchitectureConfig arch = cfg.model;
  if (arch.vocab_size != cfg.schedule.vocab_size) {
    throw ConfigError("model.vocab_size differs from schedule.K");
  }
  if (arch.max_length < corpus.layout.size()) {
    throw ConfigError("model.max_length is shorter than the corpus sequences");
  }
  return arch;
}

TrainableDenoiser obtain_model(const ExperimentConfig& cfg, const TextCorpus& corpus,
                               const PathSchedule& schedule, MetricReport& report) {
  if (!cfg.model_checkpoint.empty()) {
    return stage("load-model", [&] { return denoiser_from_checkpoint(read_checkpoint(cfg.model_checkpoint)); });
  }
  const auto arch = text_architecture(cfg, corpus);
  TrainableDenoiser model(arch, derive_seed(cfg.seed, "init"));
  stage("train", [&] {
    TrainingConfig tc = cfg.training;
    tc.seed = derive_seed(cfg.seed, "train");
    Trainer trainer(model, schedule, tc);
    std::ofstream csv;
    if (!cfg.outputs.loss_csv.empty()) {
      csv.open(cfg.outputs.loss_csv);
      if (!csv) throw ConfigError("cannot open loss CSV: " + cfg.outputs.loss_csv);
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto log = trainer.fit(corpus.data, csv.is_open() ? &csv : nullptr);
    report.set_timing("train_ms", std::chrono::duration<double, std::milli>(
                                      std::chrono::steady_clock::now() - t0).count());
    const std::size_t tail = std::min<std::size_t>(50, log.size());
    double ce = 0.0;
    for (std::size_t i = log.size() - tail; i < log.size(); ++i) ce += log[i].l_ce;
    report.set("final_train_ce", tail ? ce / static_cast<double>(tail) : 0.0);
    report.set("optimizer_steps", static_cast<double>(trainer.optimizer_steps()));
    report.set("drop_fraction", trainer.examples_seen() == 0
                                    ? 0.0
                                    : static_cast<double>(trainer.dropped_conditions()) /
                                          static_cast<double>(trainer.examples_seen()));
  });
  if (!cfg.outputs.checkpoint.empty()) {
    stage("save-model", [&] { write_checkpoint(cfg.outputs.checkpoint, to_checkpoint(model)); });
  }
  return model;
}

// ---------------------------------------------------------------- pipelines

void run_path_check(const ExperimentConfig& cfg, MetricReport& report) {
  const Vocabulary vocab = stage("vocabulary", [&] { return make_vocabulary(cfg.schedule); });
  const std::size_t k = vocab.size();
  const auto metric = PathSchedule::metric(vocab, cfg.schedule.c, cfg.schedule.a);
  const auto mixture = PathSchedule::mixture(k);

  stage("normalization", [&] {
    double err_mix = 0.0, err_met = 0.0;
    for (int i = 0; i <= 100; ++i) {
      const double t = i / 100.0;
      for (TokenId x1 = 0; x1 < k; ++x1) {
        for (const auto* s : {&mixture, &metric}) {
          const auto row = conditional_distribution(*s, x1, t);
          double sum = 0.0;
          for (double p : row) sum += p;
          double& err = s == &mixture ? err_mix : err_met;
          err = std::max(err, std::abs(sum - 1.0));
        }
      }
    }
    report.set("max_sum_error_mixture", err_mix);
    report.set("max_sum_error_metric", err_met);
  });

  stage("sampling", [&] {
    std::mt19937_64 rng(derive_seed(cfg.seed, "paths"));
    double worst = 0.0;
    constexpr std::size_t kWidth = 1000;
    const std::size_t rows = std::max<std::size_t>(1, cfg.path_draws / kWidth);
    const TokenId x1 = static_cast<TokenId>(k / 2);
    for (double t : {0.25, 0.5, 0.75}) {
      for (const auto* s : {&mixture, &metric}) {
        const auto x1_seq = TokenSequence::response_only(std::vector<TokenId>(kWidth, x1));
        std::vector<double> hist(k, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
          const auto x = sample_conditional(*s, x1_seq, t, rng);
          for (TokenId tok : x.tokens) hist[tok] += 1.0;
        }
        for (double& h : hist) h /= static_cast<double>(rows * kWidth);
        worst = std::max(worst, tv_distance(hist, conditional_distribution(*s, x1, t)));
      }
    }
    report.set("max_sampling_tv", worst);
    report.set("sampling_draws_per_cell", static_cast<double>(rows * kWidth));
  });

  stage("velocity", [&] {
    double negative = 0.0, nonclose = 0.0, checked = 0.0;
    for (int i = 1; i < 20; ++i) {
      const double t = i / 20.0;
      for (TokenId x1 = 0; x1 < k; ++x1) {
        for (TokenId z = 0; z < k; ++z) {
          for (TokenId x = 0; x < k; ++x) {
            if (x == z) continue;
            const double r = kop_rate(metric, x, z, x1, t);
            checked += 1.0;
            if (r < 0.0 || !std::isfinite(r)) negative += 1.0;
            if (metric.distance(x, x1) >= metric.distance(z, x1) && r != 0.0) nonclose += 1.0;
          }
        }
      }
    }
    double worst = 0.0;
    for (int i = 5; i <= 95; ++i) {
      const double t = i / 100.0;
      const double h = 1e-6;
      const double fd = (beta_at(metric, t + h).value - beta_at(metric, t - h).value) / (2.0 * h);
      const double exact = beta_rate(metric, t);
      worst = std::max(worst, std::abs(fd - exact) / std::abs(exact));
    }
    report.set("rate_checks", checked);
    report.set("rate_negative", negative);
    report.set("rate_nonclose_nonzero", nonclose);
    report.set("beta_rate_max_rel_error", worst);
  });
}

void run_oracle_sampling(const ExperimentConfig& cfg, MetricReport& report) {
  const auto vocab = stage("vocabulary", [&] { return make_vocabulary(cfg.schedule); });
  const auto schedule = stage("schedule", [&] { return make_schedule(cfg.schedule, vocab); });
  std::mt19937_64 rng(derive_seed(cfg.seed, "corpus"));
  const auto corpus = stage("corpus", [&] { return make_text_corpus(cfg.corpus, rng); });
  OracleDenoiser oracle(corpus.target, schedule);
  const auto prompt = prompt_for(corpus, cfg.corpus);
  report.set("support_size", static_cast<double>(corpus.target.support.size()));

  stage("sample", [&] {
    SamplerConfig sc = cfg.sampler;
    sc.trace_sequences = false;
    GenerationTrace trace;
    const auto t0 = std::chrono::steady_clock::now();
    const auto samples = sample_many(oracle, prompt, sc, schedule, derive_seed(cfg.seed, "sample"),
                                     cfg.samples, &trace);
    report.set_timing("sample_ms", std::chrono::duration<double, std::milli>(
                                       std::chrono::steady_clock::now() - t0).count());
    write_trace(cfg.outputs.traces, trace);
    const double tv = tv_to_target(corpus.target, samples);
    report.set("tv_to_target", tv);
    report.set("other_mass", empirical_on_support(corpus.target, samples).back());
    if (cfg.check_step_doubling) {
      sc.steps *= 2;
      const auto doubled = sample_many(oracle, prompt, sc, schedule,
                                       derive_seed(cfg.seed, "sample-2n"), cfg.samples);
      const double tv2 = tv_to_target(corpus.target, doubled);
      report.set("tv_to_target_2n", tv2);
      report.set("tv_doubling_increase", tv2 - tv);
    }
  });
}

void run_train_and_sample(const ExperimentConfig& cfg, MetricReport& report) {
  const auto vocab = stage("vocabulary", [&] { return make_vocabulary(cfg.schedule); });
  const auto schedule = stage("schedule", [&] { return make_schedule(cfg.schedule, vocab); });
  std::mt19937_64 rng(derive_seed(cfg.seed, "corpus"));
  const auto corpus = stage("corpus", [&] { return make_text_corpus(cfg.corpus, rng); });
  auto model = obtain_model(cfg, corpus, schedule, report);

  stage("evaluate", [&] {
    const auto cmp = compare_to_oracle(model, corpus.target, corpus.layout, schedule,
                                       cfg.eval_draws, derive_seed(cfg.seed, "eval"));
    report.set("sampled_ce", cmp.sampled_ce);
    report.set("model_cross_entropy", cmp.cross_entropy);
    report.set("oracle_entropy", cmp.oracle_entropy);
    report.set("excess_ce", cmp.excess());
  });
  stage("sample", [&] {
    SamplerConfig sc = cfg.sampler;
    sc.trace_sequences = false;
    GenerationTrace trace;
    const auto samples = sample_many(model, prompt_for(corpus, cfg.corpus), sc, schedule,
                                     derive_seed(cfg.seed, "sample"), cfg.samples, &trace);
    write_trace(cfg.outputs.traces, trace);
    report.set("tv_to_target", tv_to_target(corpus.target, samples));
    report.set("other_mass", empirical_on_support(corpus.target, samples).back());
  });
}

void run_cache_bench(const ExperimentConfig& cfg, MetricReport& report) {
  const auto vocab = stage("vocabulary", [&] { return make_vocabulary(cfg.schedule); });
  const auto schedule = stage("schedule", [&] { return make_schedule(cfg.schedule, vocab); });
  std::mt19937_64 rng(derive_seed(cfg.seed, "corpus"));
  const auto corpus = stage("corpus", [&] { return make_text_corpus(cfg.corpus, rng); });

  // Speed: a seeded model at benchmark size.
  stage("speed", [&] {
    ArchitectureConfig arch = cfg.model;
    arch.vocab_size = schedule.vocab_size();
    arch.width = cfg.bench.width;
    arch.layers = cfg.bench.layers;
    arch.heads = cfg.bench.heads;
    arch.max_length = corpus.instruction.size() + cfg.bench.response_length;
    const TrainableDenoiser model(arch, derive_seed(cfg.seed, "bench-init"));
    const auto prompt = TokenSequence::prompt(corpus.instruction, cfg.bench.response_length,
                                              cfg.corpus.first_content);
    SamplerConfig sc = cfg.sampler;
    sc.trace_sequences = false;
    const std::uint64_t seed = derive_seed(cfg.seed, "bench-sample");
    const std::size_t repeats = std::max<std::size_t>(1, cfg.bench.repeats);

    auto timed = [&](Denoiser& d, GenerationResult& last) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t r = 0; r < repeats; ++r) {
        last = generate(d, prompt, sc, schedule, seed);
        best = std::min(best, last.trace.total_ms());
      }
      return best;
    };

    TrainableDenoiser& plain = const_cast<TrainableDenoiser&>(model);
    GenerationResult base;
    const double base_ms = timed(plain, base);
    report.set_timing("uncached_ms", base_ms);

    // Keystone: forced recompute must reproduce every logits matrix bit for bit.
    RecordingDenoiser rec_plain(plain);
    const auto a = generate(rec_plain, prompt, sc, schedule, seed);
    CachedDenoiser forced(model, with_tau(cfg.cache, 2.0));
    RecordingDenoiser rec_forced(forced);
    const auto b = generate(rec_forced, prompt, sc, schedule, seed);
    const bool identical = rec_plain.logits == rec_forced.logits && a.sequence == b.sequence;
    report.set("forced_recompute_bit_identical", identical ? 1.0 : 0.0);
    report.set("forced_recompute_steps_compared", static_cast<double>(rec_plain.logits.size()));

    for (double tau : cfg.taus) {
      CachedDenoiser cached(model, with_tau(cfg.cache, tau));
      GenerationResult res;
      const double ms = timed(cached, res);
      const auto rep = speedup_report(base.trace, res.trace);
      report.set(tau_key(tau) + ".recompute_fraction", rep.recompute_fraction);
      report.set_timing(tau_key(tau) + ".cached_ms", ms);
      report.set_timing(tau_key(tau) + ".speedup_ratio", base_ms / ms);
    }
    report.set_timing("reference_speedup", SpeedupReport{}.reference_ratio);
  });

  // Drift: output distribution of a trained model with and without caching.
  if (cfg.bench.drift_samples == 0) return;
  auto model = obtain_model(cfg, corpus, schedule, report);
  stage("drift", [&] {
    SamplerConfig sc = cfg.sampler;
    sc.trace_sequences = false;
    const auto prompt = prompt_for(corpus, cfg.corpus);
    const std::uint64_t seed = derive_seed(cfg.seed, "drift-sample");
    const auto base = sample_many(model, prompt, sc, schedule, seed, cfg.bench.drift_samples);
    report.set("uncached.tv_to_target", tv_to_target(corpus.target, base));
    for (double tau : cfg.taus) {
      CachedDenoiser cached(model, with_tau(cfg.cache, tau));
      const auto samples = sample_many(cached, prompt, sc, schedule, seed, cfg.bench.drift_samples);
      report.set(tau_key(tau) + ".tv_drift", tv_between_samples(base, samples));
      report.set(tau_key(tau) + ".tv_to_target", tv_to_target(corpus.target, samples));
    }
  });
}

void run_retrieval(const ExperimentConfig& cfg, MetricReport& report) {
  const RetrievalTokens tokens{cfg.retrieval.classes};
  TokenizerConfig tcfg = cfg.tokenizer;
  tcfg.seed = derive_seed(cfg.seed, "tokenizer");

  std::mt19937_64 data_rng(derive_seed(cfg.seed, "corpus"));
  auto tokenizer = stage("tokenizer", [&] {
    const auto points = gaussian_mixture(cfg.tokenizer_corpus, cfg.retrieval.classes,
                                         cfg.retrieval.radius, cfg.retrieval.stddev, data_rng);
    auto tok = fit_toy_modality(points, tcfg);
    report.set("tokenizer_mse", tok.reconstruction_mse(points));
    std::mt19937_64 km_rng(derive_seed(cfg.seed, "kmeans"));
    report.set("kmeans_mse", kmeans(to_matrix(points), tcfg.codes_per_book, km_rng).mse);
    return tok;
  });
  const TokenLayout layout(tokens.signal_first(),
                           std::vector<std::size_t>(tcfg.sub_codebooks, tcfg.codes_per_book));

  ScheduleSpec sspec = cfg.schedule;
  sspec.vocab_size = tokens.signal_first() + layout.total();
  sspec.pad_id = tokens.pad;
  sspec.eos_id = tokens.eos;
  const auto vocab = make_vocabulary(sspec);
  const auto schedule = make_schedule(sspec, vocab);

  ArchitectureConfig arch = cfg.model;
  arch.vocab_size = sspec.vocab_size;
  arch.max_length = std::max<std::size_t>(arch.max_length, tcfg.sub_codebooks + 2);
  arch.signal_first_id = tokens.signal_first();
  arch.signal_dim = tcfg.embed_dim;
  arch.condition_drop_id = tokens.pad;
  TrainableDenoiser model(arch, derive_seed(cfg.seed, "init"));

  stage("train", [&] {
    RetrievalSpec train_spec = cfg.retrieval;
    train_spec.pairs = cfg.retrieval_train_pairs;
    const auto pairs = make_paired_retrieval_corpus(train_spec, tokenizer, layout, tokens, data_rng);
    Dataset data;
    for (const auto& p : pairs) {
      data.examples.push_back({p.text, "text", {}, 0});
      data.examples.push_back({p.signal, "signal", {p.point}, 0});
    }
    TrainingConfig tc = cfg.training;
    tc.seed = derive_seed(cfg.seed, "train");
    Trainer trainer(model, schedule, tc);
    trainer.attach_tokenizer(&tokenizer, layout);
    std::ofstream csv;
    if (!cfg.outputs.loss_csv.empty()) csv.open(cfg.outputs.loss_csv);
    const auto log = trainer.fit(data, csv.is_open() ? &csv : nullptr);
    report.set("optimizer_steps", static_cast<double>(trainer.optimizer_steps()));
    report.set("lambda_ce", trainer.coefficients()[0]);
    report.set("lambda_rec_sig", trainer.coefficients()[1]);
    report.set("lambda_rec_aux", trainer.coefficients()[2]);
    model.set_signal_codebook(layout.representative_rows(tokenizer.codebook()));
  });

  stage("evaluate", [&] {
    std::mt19937_64 eval_rng(derive_seed(cfg.seed, "retrieval-eval"));
    const auto pairs = make_paired_retrieval_corpus(cfg.retrieval, tokenizer, layout, tokens, eval_rng);
    Matrix text, signal;
    std::vector<std::size_t> ids(pairs.size()), classes(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto ft = model.retrieval_feature(strip_after_eos(pairs[i].text, tokens.eos), tokens.eos);
      const auto fs = model.retrieval_feature(strip_after_eos(pairs[i].signal, tokens.eos), tokens.eos);
      if (i == 0) {
        text.resize(pairs.size(), ft.size());
        signal.resize(pairs.size(), fs.size());
      }
      std::copy(ft.begin(), ft.end(), text.row(i).begin());
      std::copy(fs.begin(), fs.end(), signal.row(i).begin());
      ids[i] = i;
      classes[i] = pairs[i].label;
    }
    const double mrr = mean_reciprocal_rank(text, signal, ids, ids);
    const double base = random_mrr_baseline(ids, ids);
    report.set("pairs", static_cast<double>(pairs.size()));
    report.set("mrr", mrr);
    report.set("random_mrr", base);
    report.set("mrr_ratio", mrr / base);
    report.set("class_mrr", mean_reciprocal_rank(text, signal, classes, classes));
    report.set("class_random_mrr", random_mrr_baseline(classes, classes));
  });
}

}  // namespace

// ---------------------------------------------------------------- config I/O

void to_json(nlohmann::json& j, const CacheBenchSpec& s) {
  j = {{"response_length", s.response_length}, {"width", s.width},   {"layers", s.layers},
       {"heads", s.heads},                     {"repeats", s.repeats}, {"drift_samples", s.drift_samples}};
}

void from_json(const nlohmann::json& j, CacheBenchSpec& s) {
  CacheBenchSpec d;
  d.response_length = j.value("response_length", d.response_length);
  d.width = j.value("width", d.width);
  d.layers = j.value("layers", d.layers);
  d.heads = j.value("heads", d.heads);
  d.repeats = j.value("repeats", d.repeats);
  d.drift_samples = j.value("drift_samples", d.drift_samples);
  s = d;
}

void to_json(nlohmann::json& j, const OutputPaths& p) {
  j = {{"report", p.report}, {"traces", p.traces}, {"checkpoint", p.checkpoint}, {"loss_csv", p.loss_csv}};
}

void from_json(const nlohmann::json& j, OutputPaths& p) {
  OutputPaths d;
  d.report = j.value("report", d.report);
  d.traces = j.value("traces", d.traces);
  d.checkpoint = j.value("checkpoint", d.checkpoint);
  d.loss_csv = j.value("loss_csv", d.loss_csv);
  p = d;
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"pipeline", c.pipeline},
       {"seed", c.seed},
       {"schedule", c.schedule},
       {"corpus", c.corpus},
       {"model", c.model},
       {"model_checkpoint", c.model_checkpoint},
       {"training", c.training},
       {"sampler", c.sampler},
       {"cache", c.cache},
       {"taus", c.taus},
       {"bench", c.bench},
       {"tokenizer", c.tokenizer},
       {"retrieval", c.retrieval},
       {"retrieval_train_pairs", c.retrieval_train_pairs},
       {"tokenizer_corpus", c.tokenizer_corpus},
       {"samples", c.samples},
       {"eval_draws", c.eval_draws},
       {"path_draws", c.path_draws},
       {"check_step_doubling", c.check_step_doubling},
       {"outputs", c.outputs}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  ExperimentConfig d;
  d.pipeline = j.value("pipeline", d.pipeline);
  d.seed = j.value("seed", d.seed);
  if (j.contains("schedule")) d.schedule = j.at("schedule").get<ScheduleSpec>();
  if (j.contains("corpus")) d.corpus = j.at("corpus").get<CorpusSpec>();
  if (j.contains("model")) d.model = j.at("model").get<ArchitectureConfig>();
  d.model_checkpoint = j.value("model_checkpoint", d.model_checkpoint);
  if (j.contains("training")) d.training = j.at("training").get<TrainingConfig>();
  if (j.contains("sampler")) d.sampler = j.at("sampler").get<SamplerConfig>();
  if (j.contains("cache")) d.cache = j.at("cache").get<CacheConfig>();
  if (j.contains("taus")) d.taus = j.at("taus").get<std::vector<double>>();
  if (j.contains("bench")) d.bench = j.at("bench").get<CacheBenchSpec>();
  if (j.contains("tokenizer")) d.tokenizer = j.at("tokenizer").get<TokenizerConfig>();
  if (j.contains("retrieval")) d.retrieval = j.at("retrieval").get<RetrievalSpec>();
  d.retrieval_train_pairs = j.value("retrieval_train_pairs", d.retrieval_train_pairs);
  d.tokenizer_corpus = j.value("tokenizer_corpus", d.tokenizer_corpus);
  d.samples = j.value("samples", d.samples);
  d.eval_draws = j.value("eval_draws", d.eval_draws);
  d.path_draws = j.value("path_draws", d.path_draws);
  d.check_step_doubling = j.value("check_step_doubling", d.check_step_doubling);
  if (j.contains("outputs")) d.outputs = j.at("outputs").get<OutputPaths>();
  validate(d);
  c = std::move(d);
}

void validate(const ExperimentConfig& c) {
  if (!kPipelines.contains(c.pipeline)) throw ConfigError("unknown pipeline: " + c.pipeline);
  c.sampler.validate();
  if (c.pipeline == "cache-bench" && c.taus.empty()) throw ConfigError("cache-bench needs at least one tau");
  for (double tau : c.taus) {
    if (!(tau >= 0.0)) throw ConfigError("cache taus must be nonnegative");
  }
  if (c.cache.similarity_layer != 0) throw ConfigError("only similarity_layer 0 is supported");
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  try {
    return j.get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid config " + path.string() + ": " + e.what());
  }
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string text = nlohmann::json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------- reports

void MetricReport::set(const std::string& name, double value) {
  if (!std::isfinite(value)) throw DomainError("metric '" + name + "' is not finite");
  metrics[name] = value;
}

void MetricReport::set_timing(const std::string& name, double value) {
  if (!std::isfinite(value)) throw DomainError("timing '" + name + "' is not finite");
  timing[name] = value;
}

double MetricReport::at(const std::string& name) const {
  auto it = metrics.find(name);
  if (it == metrics.end()) throw DomainError("report has no metric '" + name + "'");
  return it->second;
}

nlohmann::json to_json(const MetricReport& r) {
  return {{"pipeline", r.pipeline}, {"seed", r.seed},     {"config_hash", r.config_hash},
          {"timestamp", r.timestamp}, {"config", r.config}, {"metrics", r.metrics},
          {"timing", r.timing}};
}

MetricReport report_from_json(const nlohmann::json& j) {
  MetricReport r;
  r.pipeline = j.at("pipeline").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.timestamp = j.value("timestamp", std::string());
  r.config = j.value("config", nlohmann::json::object());
  r.metrics = j.at("metrics").get<std::map<std::string, double>>();
  r.timing = j.value("timing", std::map<std::string, double>{});
  return r;
}

void write_report(const std::filesystem::path& path, const MetricReport& report) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open report output: " + path.string());
  os << to_json(report).dump(2) << '\n';
}

MetricReport read_report(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open report: " + path.string());
  nlohmann::json j;
  is >> j;
  return report_from_json(j);
}

std::string deterministic_dump(const MetricReport& report) {
  auto j = to_json(report);
  j.erase("timestamp");
  j.erase("timing");
  return j.dump(2);
}

MetricReport run_experiment(const ExperimentConfig& config) {
  validate(config);
  MetricReport report;
  report.pipeline = config.pipeline;
  report.seed = config.seed;
  report.config_hash = config_hash(config);
  report.config = config;
  report.timestamp = utc_timestamp();

  if (config.pipeline == "path-check") {
    run_path_check(config, report);
  } else if (config.pipeline == "oracle-sampling") {
    run_oracle_sampling(config, report);
  } else if (config.pipeline == "train-and-sample") {
    run_train_and_sample(config, report);
  } else if (config.pipeline == "cache-bench") {
    run_cache_bench(config, report);
  } else {
    run_retrieval(config, report);
  }
  if (!config.outputs.report.empty()) {
    stage("write-report", [&] { write_report(config.outputs.report, report); });
  }
  return report;
}

// ---------------------------------------------------------------- thresholds

std::vector<Threshold> acceptance_thresholds(const MetricReport& report) {
  std::vector<Threshold> t;
  const auto& p = report.pipeline;
  if (p == "path-check") {
    t = {{"max_sum_error_mixture", "<=", 1e-9},
         {"max_sum_error_metric", "<=", 1e-9},
         {"max_sampling_tv", "<", 0.02},
         {"rate_negative", "==", 0.0},
         {"rate_nonclose_nonzero", "==", 0.0},
         {"beta_rate_max_rel_error", "<", 1e-5}};
  } else if (p == "oracle-sampling") {
    t = {{"tv_to_target", "<", 0.05}};
    if (report.metrics.contains("tv_doubling_increase")) t.push_back({"tv_doubling_increase", "<=", 0.01});
  } else if (p == "train-and-sample") {
    t = {{"excess_ce", "<", 0.1}, {"tv_to_target", "<", 0.15}};
  } else if (p == "cache-bench") {
    t = {{"forced_recompute_bit_identical", "==", 1.0}};
    const std::string key = tau_key(0.95);
    if (report.metrics.contains(key + ".recompute_fraction")) {
      t.push_back({key + ".recompute_fraction", "<", 1.0});
      t.push_back({key + ".speedup_ratio", ">", 1.0, true});
    }
  } else if (p == "retrieval") {
    t = {{"mrr_ratio", ">", 3.0}};
  }
  return t;
}

std::vector<std::string> check_thresholds(const MetricReport& report) {
  std::vector<std::string> violations;
  for (const auto& th : acceptance_thresholds(report)) {
    const auto& section = th.timing ? report.timing : report.metrics;
    auto it = section.find(th.metric);
    if (it == section.end()) {
      violations.push_back(th.metric + ": missing from report");
      continue;
    }
    const double v = it->second;
    bool ok = false;
    if (th.op == "<") ok = v < th.value;
    else if (th.op == "<=") ok = v <= th.value;
    else if (th.op == ">") ok = v > th.value;
    else if (th.op == "==") ok = v == th.value;
    if (!ok) {
      std::ostringstream os;
      os << th.metric << " = " << v << " violates " << th.op << ' ' << th.value;
      violations.push_back(os.str());
    }
  }
  return violations;
}

}  // namespace dfm
