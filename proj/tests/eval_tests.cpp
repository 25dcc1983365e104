#include "doctest.h"

#include <cmath>

#include "clonebench/eval.hpp"

#include "test_util.hpp"

using namespace clonebench;

TEST_CASE("human-normalized scoring") {
  SUBCASE("published results-table triple lands just above 5%") {
    const double pct = human_normalized(811.7, 173.3, 12902.5);
    CHECK(pct > 4.9);
    CHECK(pct < 5.1);
    CHECK(pct == doctest::Approx(5.01524).epsilon(1e-4));
  }
  SUBCASE("anchors: human mean is 100, random mean is 0") {
    CHECK(human_normalized(12902.5, 173.3, 12902.5) == doctest::Approx(100.0));
    CHECK(human_normalized(173.3, 173.3, 12902.5) == doctest::Approx(0.0));
  }
  SUBCASE("scores outside the anchors are allowed") {
    CHECK(human_normalized(50.0, 100.0, 200.0) < 0.0);
    CHECK(human_normalized(300.0, 100.0, 200.0) > 100.0);
  }
  SUBCASE("degenerate denominator is an error") {
    CHECK_THROWS_AS(human_normalized(1.0, 5.0, 5.0), std::invalid_argument);
  }
  SUBCASE("affine invariance (property)") {
    Rng64 rng(3);
    for (int t = 0; t < 200; ++t) {
      const double s = rng.next_range(-100, 100);
      const double r = rng.next_range(-100, 100);
      const double h = r + rng.next_range(0.1, 100);
      const double a = rng.next_range(0.01, 10);
      const double b = rng.next_range(-50, 50);
      const double base = human_normalized(s, r, h);
      const double mapped = human_normalized(a * s + b, a * r + b, a * h + b);
      CHECK(mapped == doctest::Approx(base).epsilon(1e-9));
    }
  }
}

TEST_CASE("frame-to-millisecond delay conversion") {
  CHECK(delay_ms(DelayOffset{5}, 60.0) == doctest::Approx(83.3333).epsilon(1e-4));
  CHECK(delay_ms(DelayOffset{2}, 60.0) == doctest::Approx(33.3333).epsilon(1e-4));
  CHECK(delay_ms(DelayOffset{2}, 17.5) == doctest::Approx(114.2857).epsilon(1e-4));
  CHECK(delay_ms(DelayOffset{-3}, 60.0) == doctest::Approx(-50.0));
  CHECK_THROWS_AS(delay_ms(DelayOffset{1}, 0.0), std::invalid_argument);
}

namespace {

PolicyModel untrained_dodger_model(uint64_t seed) {
  ModelArch arch = build_nature_cnn(3, 84, 84, ActionSpace{{{"move", 3}}});
  PolicyModel m(arch);
  Rng64 rng(seed);
  init_weights(m, rng);
  return m;
}

} // namespace

TEST_CASE("run_evaluation") {
  EnvConfig cfg;
  cfg.max_ticks = 80;
  PolicyModel model = untrained_dodger_model(4);

  SUBCASE("a fixed seed list reproduces scores exactly") {
    const auto seeds = consecutive_seeds(100, 6);
    EvalResult a = run_evaluation(model, cfg, 0, seeds);
    EvalResult b = run_evaluation(model, cfg, 0, seeds);
    CHECK(a.scores == b.scores);
    CHECK(a.mean == b.mean);
  }
  SUBCASE("one episode, one seed") {
    EvalResult r = run_evaluation(model, cfg, 0, {42});
    CHECK(r.scores.size() == 1);
    CHECK(r.mean == r.scores[0]);
    CHECK(r.stdev == 0.0);
  }
  SUBCASE("max_frames 1 caps every episode at one tick's delta") {
    EvalResult r = run_evaluation(model, cfg, 1, consecutive_seeds(0, 20));
    for (double s : r.scores) CHECK(s == 1.0); // tick one of dodger is always safe
  }
  SUBCASE("mismatched action space is an error") {
    EnvConfig collector;
    collector.game_id = "collector";
    CHECK_THROWS_AS(run_evaluation(model, collector, 0, {1}), std::invalid_argument);
  }
}

TEST_CASE("random-agent baseline sits inside the frozen oracle interval") {
  // Oracle: 100000 random-agent episodes on dodger at density 0.3 gave
  // mean 22.332 (std 2.777); a 100-seed mean lies within 5 sigma/sqrt(100).
  EnvConfig cfg;
  EvalResult r = run_random_baseline(cfg, 0, consecutive_seeds(0, 100));
  CHECK(r.mean > 20.9);
  CHECK(r.mean < 23.8);
}

TEST_CASE("untrained model scores near the random baseline") {
  // near-uniform softmax at init: the normalized score hovers around 0%
  EnvConfig cfg;
  PolicyModel model = untrained_dodger_model(7);
  EvalResult r = run_evaluation(model, cfg, 0, consecutive_seeds(500, 50));
  const double pct = human_normalized(r.mean, 22.332, 600.0);
  CHECK(std::abs(pct) < 10.0);
}

TEST_CASE("protocol_evaluate") {
  SUBCASE("a trainer stub returning fixed-score models reports that score") {
    auto train_stub = [](uint64_t) {
      std::vector<ModelCheckpoint> c(5);
      for (int i = 0; i < 5; ++i) c[static_cast<size_t>(i)].epoch = i + 1;
      return c;
    };
    auto eval_stub = [](const ModelCheckpoint&) { return summarize({7.5}); };
    ProtocolResult r = protocol_evaluate(train_stub, eval_stub, 1, 3, 3);
    CHECK(r.reported == doctest::Approx(7.5));
    CHECK(r.cells.size() == 9);
  }
  SUBCASE("per-epoch scores 1,2,3 average to 2") {
    auto train_stub = [](uint64_t) {
      std::vector<ModelCheckpoint> c(3);
      for (int i = 0; i < 3; ++i) c[static_cast<size_t>(i)].epoch = i + 1;
      return c;
    };
    auto eval_stub = [](const ModelCheckpoint& ckpt) {
      return summarize({static_cast<double>(ckpt.epoch)});
    };
    ProtocolResult r = protocol_evaluate(train_stub, eval_stub, 1, 3, 3);
    CHECK(r.reported == doctest::Approx(2.0));
  }
  SUBCASE("matrix shape is seeds x last-epochs and uses the last checkpoints") {
    auto train_stub = [](uint64_t) {
      std::vector<ModelCheckpoint> c(10);
      for (int i = 0; i < 10; ++i) c[static_cast<size_t>(i)].epoch = i + 1;
      return c;
    };
    auto eval_stub = [](const ModelCheckpoint& ckpt) {
      return summarize({static_cast<double>(ckpt.epoch)});
    };
    ProtocolResult r = protocol_evaluate(train_stub, eval_stub, 5, 3, 3);
    REQUIRE(r.cells.size() == 9);
    for (const auto& cell : r.cells) CHECK(cell.epoch >= 8); // epochs 8, 9, 10
    CHECK(r.cells[0].train_seed == 5);
    CHECK(r.cells[8].train_seed == 7);
    // reported equals the mean of the matrix (self-consistency)
    double acc = 0;
    for (const auto& cell : r.cells) acc += cell.eval.mean;
    CHECK(r.reported == doctest::Approx(acc / 9.0));
    // final-model-only variant
    ProtocolResult fin = protocol_evaluate(train_stub, eval_stub, 5, 3, 1);
    CHECK(fin.cells.size() == 3);
    for (const auto& cell : fin.cells) CHECK(cell.epoch == 10);
  }
  SUBCASE("seed means group the matrix by training seed") {
    auto train_stub = [](uint64_t) {
      std::vector<ModelCheckpoint> c(3);
      for (int i = 0; i < 3; ++i) c[static_cast<size_t>(i)].epoch = i + 1;
      return c;
    };
    auto eval_stub = [](const ModelCheckpoint& ckpt) {
      return summarize({static_cast<double>(ckpt.epoch)});
    };
    ProtocolResult r = protocol_evaluate(train_stub, eval_stub, 0, 3, 3);
    auto means = r.seed_means();
    REQUIRE(means.size() == 3);
    for (double m : means) CHECK(m == doctest::Approx(2.0));
  }
  SUBCASE("too few epochs for the protocol is an error") {
    auto train_stub = [](uint64_t) { return std::vector<ModelCheckpoint>(2); };
    auto eval_stub = [](const ModelCheckpoint&) { return summarize({0.0}); };
    CHECK_THROWS_AS(protocol_evaluate(train_stub, eval_stub, 1, 3, 3), std::invalid_argument);
  }
}

TEST_CASE("bootstrap intervals") {
  SUBCASE("constant sample collapses to a point") {
    Interval ci = bootstrap_mean_ci({5.0, 5.0, 5.0});
    CHECK(ci.lo == 5.0);
    CHECK(ci.hi == 5.0);
  }
  SUBCASE("interval brackets the sample mean") {
    Interval ci = bootstrap_mean_ci({1.0, 2.0, 3.0, 4.0});
    CHECK(ci.lo <= 2.5);
    CHECK(ci.hi >= 2.5);
    CHECK(ci.lo >= 1.0);
    CHECK(ci.hi <= 4.0);
  }
  SUBCASE("well-separated samples give non-overlapping intervals") {
    Interval lo = bootstrap_mean_ci({1.0, 1.1, 0.9});
    Interval hi = bootstrap_mean_ci({9.0, 9.1, 8.9});
    CHECK_FALSE(lo.overlaps(hi));
    CHECK(lo.overlaps(lo));
  }
  SUBCASE("deterministic for a fixed seed") {
    Interval a = bootstrap_mean_ci({1.0, 5.0, 3.0}, 0.95, 5000, 77);
    Interval b = bootstrap_mean_ci({1.0, 5.0, 3.0}, 0.95, 5000, 77);
    CHECK(a.lo == b.lo);
    CHECK(a.hi == b.hi);
  }
}

TEST_CASE("experiments emit one protocol run per condition plus CSV rows") {
  testutil::TempDir tmp("experiment");
  // tiny real pipeline: a few short expert episodes, one seed, final epoch
  EnvConfig cfg;
  cfg.max_ticks = 60;
  Dataset ds = record_expert_dataset(cfg, 3, 0, 0.0, 300, "expert");

  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 32;
  tc.seed = 11;
  EvalSpec spec;
  spec.env = cfg;
  spec.episodes = 2;
  spec.max_frames = 60;

  auto points = experiment_delay_sweep(ds, {0}, tc, spec, 1, 1);
  REQUIRE(points.size() == 1);
  CHECK(points[0].condition == "delay=0");
  CHECK(points[0].result.cells.size() == 1);
  CHECK(points[0].result.cells[0].eval.scores.size() == 2);

  const auto csv = tmp.path / "sweep.csv";
  write_experiment_csv(points, csv);
  std::ifstream f(csv);
  std::string line;
  std::getline(f, line);
  CHECK(line == "condition,seed,epoch,episode,score");
  int rows = 0;
  while (std::getline(f, line)) ++rows;
  CHECK(rows == 2);

  SUBCASE("quality filter rejects fractions that empty the dataset") {
    CHECK_THROWS_AS(experiment_quality_filter(ds, {0.0}, tc, spec, 1, 1), std::invalid_argument);
  }
}

TEST_CASE("summary report mirrors the results-table columns") {
  const std::string line = summary_report("dodger", 22.3, 600.0, 450.0);
  CHECK(line.find("random") != std::string::npos);
  CHECK(line.find("human") != std::string::npos);
  CHECK(line.find("normalized") != std::string::npos);
  CHECK(line.find("74.0") != std::string::npos); // 100*(450-22.3)/577.7
}
