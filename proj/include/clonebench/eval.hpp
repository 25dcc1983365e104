#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "clonebench/archive.hpp"
#include "clonebench/envsim.hpp"
#include "clonebench/parallel.hpp"
#include "clonebench/policy.hpp"
#include "clonebench/preprocess.hpp"
#include "clonebench/trainer.hpp"

namespace clonebench {

// Percentage of the human score: 0% is the random-agent baseline, 100% the
// demonstrators' mean. May go negative or past 100.
inline double human_normalized(double score, double random_mean, double human_mean) {
  if (human_mean == random_mean)
    throw std::invalid_argument("human_normalized: human and random means coincide");
  return 100.0 * (score - random_mean) / (human_mean - random_mean);
}

inline double delay_ms(DelayOffset d, double fps) {
  if (!(fps > 0.0)) throw std::invalid_argument("delay_ms: fps must be positive");
  return 1000.0 * static_cast<double>(d.frames) / fps;
}

// ---------------------------------------------------------------------------
// Rollout evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
  std::vector<double> scores; // one per episode, seed order
  double mean = 0.0;
  double stdev = 0.0;
};

inline EvalResult summarize(std::vector<double> scores) {
  EvalResult r;
  r.scores = std::move(scores);
  if (r.scores.empty()) return r;
  double sum = 0.0;
  for (double s : r.scores) sum += s;
  r.mean = sum / static_cast<double>(r.scores.size());
  double sq = 0.0;
  for (double s : r.scores) sq += (s - r.mean) * (s - r.mean);
  r.stdev = r.scores.size() > 1 ? std::sqrt(sq / static_cast<double>(r.scores.size() - 1)) : 0.0;
  return r;
}

// Seed i drives both the environment and the agent's sampling rng; episodes
// run in parallel and land in seed order, so the result is a deterministic
// function of the seed list.
inline EvalResult run_evaluation(const PolicyModel& model, const EnvConfig& env_config,
                                 int max_frames, const std::vector<uint64_t>& seeds,
                                 bool greedy = false, bool flicker = false) {
  auto check = make_env(env_config);
  if (!(check->action_space() == model.arch.space))
    throw std::invalid_argument("model action space does not match the environment");

  std::vector<double> scores(seeds.size(), 0.0);
  parallel_for(seeds.size(), [&](size_t i) {
    EnvConfig cfg = env_config;
    cfg.seed = seeds[i];
    if (max_frames > 0 && (cfg.max_ticks <= 0 || max_frames < cfg.max_ticks))
      cfg.max_ticks = max_frames;
    auto env = make_env(cfg);
    Agent agent(model, seeds[i] ^ 0xA3C59AC2E193F8D7ULL, greedy, flicker);
    env->reset();
    Observation obs = env->render();
    while (!env->done()) {
      env->step(agent.act(obs));
      if (!env->done()) obs = env->render();
    }
    scores[i] = env->score();
  });
  return summarize(std::move(scores));
}

inline std::vector<uint64_t> consecutive_seeds(uint64_t base, int n) {
  std::vector<uint64_t> seeds(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) seeds[static_cast<size_t>(i)] = base + static_cast<uint64_t>(i);
  return seeds;
}

// Random-agent baseline over the same protocol; used to freeze 0% scores.
inline EvalResult run_random_baseline(const EnvConfig& env_config, int max_frames,
                                      const std::vector<uint64_t>& seeds) {
  auto probe = make_env(env_config);
  const ActionSpace space = probe->action_space();
  std::vector<double> scores(seeds.size(), 0.0);
  parallel_for(seeds.size(), [&](size_t i) {
    EnvConfig cfg = env_config;
    cfg.seed = seeds[i];
    if (max_frames > 0 && (cfg.max_ticks <= 0 || max_frames < cfg.max_ticks))
      cfg.max_ticks = max_frames;
    auto env = make_env(cfg);
    Rng64 rng(seeds[i] ^ 0x9D2C5680CA876231ULL);
    env->reset();
    while (!env->done()) env->step(random_agent(space, rng));
    scores[i] = env->score();
  });
  return summarize(std::move(scores));
}

// ---------------------------------------------------------------------------
// The paper evaluation protocol: 3 training seeds x the last 3 epochs
// ---------------------------------------------------------------------------

struct ProtocolCell {
  uint64_t train_seed = 0;
  int epoch = 0;
  EvalResult eval;
};

struct ProtocolResult {
  double reported = 0.0; // mean over all cells' means
  std::vector<ProtocolCell> cells;

  std::vector<double> seed_means() const {
    std::vector<double> out;
    double acc = 0.0;
    int count = 0;
    for (size_t i = 0; i < cells.size(); ++i) {
      acc += cells[i].eval.mean;
      ++count;
      const bool last_of_seed = i + 1 == cells.size() || cells[i + 1].train_seed != cells[i].train_seed;
      if (last_of_seed) {
        out.push_back(acc / count);
        acc = 0.0;
        count = 0;
      }
    }
    return out;
  }
};

// train_fn(seed) -> per-epoch checkpoints; eval_fn(checkpoint) -> EvalResult.
// Runs n_seeds trainings on consecutive seeds, evaluates the last
// last_epochs checkpoints of each, and reports the mean of all cell means.
// last_epochs = 1 is the "final model only" variant.
template <typename TrainFn, typename EvalFn>
ProtocolResult protocol_evaluate(TrainFn&& train_fn, EvalFn&& eval_fn, uint64_t seed_base,
                                 int n_seeds = 3, int last_epochs = 3) {
  if (n_seeds < 1 || last_epochs < 1)
    throw std::invalid_argument("protocol_evaluate: seeds and epochs must be at least 1");
  ProtocolResult result;
  double total = 0.0;
  for (int s = 0; s < n_seeds; ++s) {
    const uint64_t seed = seed_base + static_cast<uint64_t>(s);
    std::vector<ModelCheckpoint> checkpoints = train_fn(seed);
    if (static_cast<int>(checkpoints.size()) < last_epochs)
      throw std::invalid_argument("protocol_evaluate: training produced fewer epochs than needed");
    for (size_t c = checkpoints.size() - static_cast<size_t>(last_epochs); c < checkpoints.size(); ++c) {
      ProtocolCell cell;
      cell.train_seed = seed;
      cell.epoch = checkpoints[c].epoch;
      cell.eval = eval_fn(checkpoints[c]);
      total += cell.eval.mean;
      result.cells.push_back(std::move(cell));
    }
  }
  result.reported = total / static_cast<double>(result.cells.size());
  return result;
}

// Trains on the dataset (config.seed replaced per protocol seed) and
// evaluates each kept checkpoint by rollout.
struct EvalSpec {
  EnvConfig env;
  int episodes = 10;
  int max_frames = 0; // 0 = env default
  uint64_t seed_base = 9000;
  bool greedy = false;
  bool flicker = false;
};

inline ProtocolResult protocol_evaluate_dataset(const Dataset& dataset, const TrainConfig& config,
                                                const EvalSpec& spec, int n_seeds = 3,
                                                int last_epochs = 3) {
  return protocol_evaluate(
      [&](uint64_t seed) {
        TrainConfig c = config;
        c.seed = seed;
        return train(dataset, c).checkpoints;
      },
      [&](const ModelCheckpoint& ckpt) {
        return run_evaluation(ckpt.to_model(), spec.env, spec.max_frames,
                              consecutive_seeds(spec.seed_base, spec.episodes), spec.greedy,
                              spec.flicker);
      },
      config.seed, n_seeds, last_epochs);
}

// ---------------------------------------------------------------------------
// Bootstrap intervals over seed-level means
// ---------------------------------------------------------------------------

struct Interval {
  double lo = 0.0, hi = 0.0;
  bool overlaps(const Interval& o) const { return lo <= o.hi && o.lo <= hi; }
};

// Percentile bootstrap of the mean; deterministic via the seeded generator.
inline Interval bootstrap_mean_ci(const std::vector<double>& values, double confidence = 0.95,
                                  int resamples = 10000, uint64_t seed = 0xB007) {
  if (values.empty()) throw std::invalid_argument("bootstrap of an empty sample");
  Rng64 rng(seed);
  std::vector<double> means(static_cast<size_t>(resamples));
  for (int r = 0; r < resamples; ++r) {
    double acc = 0.0;
    for (size_t i = 0; i < values.size(); ++i)
      acc += values[rng.next_below(values.size())];
    means[static_cast<size_t>(r)] = acc / static_cast<double>(values.size());
  }
  std::sort(means.begin(), means.end());
  const double alpha = (1.0 - confidence) / 2.0;
  auto pick = [&](double q) {
    long rank = static_cast<long>(std::ceil(q * resamples));
    rank = std::clamp(rank, 1L, static_cast<long>(resamples));
    return means[static_cast<size_t>(rank - 1)];
  };
  return {pick(alpha), pick(1.0 - alpha)};
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

struct ExperimentPoint {
  std::string condition;
  ProtocolResult result;
};

// Re-pairs the dataset at each delay and runs the full protocol per point.
inline std::vector<ExperimentPoint> experiment_delay_sweep(const Dataset& dataset,
                                                           const std::vector<int>& delays,
                                                           const TrainConfig& config,
                                                           const EvalSpec& spec, int n_seeds = 3,
                                                           int last_epochs = 3) {
  std::vector<ExperimentPoint> out;
  for (int d : delays) {
    TrainConfig c = config;
    c.delay = DelayOffset{d};
    ExperimentPoint p;
    p.condition = "delay=" + std::to_string(d);
    p.result = protocol_evaluate_dataset(dataset, c, spec, n_seeds, last_epochs);
    out.push_back(std::move(p));
  }
  return out;
}

// Score-filters the dataset at each keep fraction and runs the protocol.
inline std::vector<ExperimentPoint> experiment_quality_filter(const Dataset& dataset,
                                                              const std::vector<double>& fractions,
                                                              const TrainConfig& config,
                                                              const EvalSpec& spec, int n_seeds = 3,
                                                              int last_epochs = 3) {
  std::vector<ExperimentPoint> out;
  for (double f : fractions) {
    Dataset subset = filter_top_percentile(dataset, f);
    if (subset.episodes.empty())
      throw std::invalid_argument("quality filter left no episodes at fraction " +
                                  format_double(f));
    ExperimentPoint p;
    p.condition = "fraction=" + format_double(f);
    p.result = protocol_evaluate_dataset(subset, config, spec, n_seeds, last_epochs);
    out.push_back(std::move(p));
  }
  return out;
}

// condition,seed,epoch,episode,score; one row per evaluated episode.
inline void write_experiment_csv(const std::vector<ExperimentPoint>& points,
                                 const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "condition,seed,epoch,episode,score\n";
  for (const auto& p : points)
    for (const auto& cell : p.result.cells)
      for (size_t e = 0; e < cell.eval.scores.size(); ++e)
        f << p.condition << ',' << cell.train_seed << ',' << cell.epoch << ',' << e << ','
          << format_double(cell.eval.scores[e]) << '\n';
}

// Summary block mirroring the results-table columns.
inline std::string summary_report(const std::string& condition, double random_mean,
                                  double human_mean, double bc_score) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "%-24s random %10.2f  human %10.2f  bc %10.2f  normalized %7.2f%%", condition.c_str(),
                random_mean, human_mean, bc_score,
                human_normalized(bc_score, random_mean, human_mean));
  return buf;
}

} // namespace clonebench
