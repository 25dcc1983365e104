#include "doctest.h"

#include "clonebench/archive.hpp"
#include "clonebench/envsim.hpp"

#include "test_util.hpp"

using namespace clonebench;

TEST_CASE("environment determinism") {
  SUBCASE("same seed gives the identical initial observation") {
    EnvConfig cfg;
    cfg.seed = 5;
    auto a = make_env(cfg);
    auto b = make_env(cfg);
    a->reset();
    b->reset();
    CHECK(a->render() == b->render());
  }
  SUBCASE("same seed and action sequence give the identical trajectory") {
    EnvConfig cfg;
    cfg.seed = 11;
    cfg.max_ticks = 60;
    for (const char* game : {"dodger", "collector"}) {
      cfg.game_id = game;
      auto a = make_env(cfg);
      auto b = make_env(cfg);
      a->reset();
      b->reset();
      const ActionSpace space = a->action_space();
      Rng64 action_rng(9);
      while (!a->done()) {
        Action act = random_agent(space, action_rng);
        StepResult ra = a->step(act);
        StepResult rb = b->step(act);
        CHECK(a->render() == b->render());
        CHECK(ra.score_delta == rb.score_delta);
        CHECK(ra.done == rb.done);
      }
      CHECK(a->score() == b->score());
    }
  }
  SUBCASE("different seeds give different obstacle schedules") {
    EnvConfig a_cfg;
    a_cfg.seed = 1;
    EnvConfig b_cfg;
    b_cfg.seed = 2;
    auto a = make_env(a_cfg);
    auto b = make_env(b_cfg);
    a->reset();
    b->reset();
    bool diverged = false;
    const Action stay({1});
    for (int t = 0; t < 30 && !diverged; ++t) {
      a->step(stay);
      b->step(stay);
      if (!(a->render() == b->render())) diverged = true;
    }
    CHECK(diverged);
  }
  SUBCASE("unknown game id is an error") {
    EnvConfig cfg;
    cfg.game_id = "pinball";
    CHECK_THROWS_AS(make_env(cfg), std::invalid_argument);
  }
}

TEST_CASE("dodger rules") {
  SUBCASE("render is 84x84 (21 cells at 4 px)") {
    EnvConfig cfg;
    auto env = make_env(cfg);
    env->reset();
    Observation obs = env->render();
    CHECK(obs.width == 84);
    CHECK(obs.height == 84);
  }
  SUBCASE("agent cell carries the fixed agent colour") {
    EnvConfig cfg;
    auto env = make_env(cfg);
    env->reset();
    Observation obs = env->render();
    // centre column 10, bottom row 20, 4 px cells
    const uint8_t* px = obs.at(10 * 4 + 1, 20 * 4 + 1);
    CHECK(px[0] == 60);
    CHECK(px[1] == 220);
    CHECK(px[2] == 90);
  }
  SUBCASE("surviving a tick scores one point") {
    EnvConfig cfg;
    cfg.seed = 3;
    auto env = make_env(cfg);
    env->reset();
    StepResult r = env->step(Action({1}));
    CHECK(r.score_delta == 1.0);
    CHECK_FALSE(r.done);
  }
  SUBCASE("density 1.0 kills any policy exactly when the wall lands") {
    EnvConfig cfg;
    cfg.seed = 13;
    cfg.obstacle_density = 1.0;
    auto env = make_env(cfg);
    env->reset();
    int ticks = 0;
    while (!env->done()) {
      env->step(Action({1}));
      ++ticks;
    }
    // spawns of tick 1 reach the bottom row on tick 21
    CHECK(ticks == 21);
    CHECK(env->score() == 20.0);
  }
  SUBCASE("invalid action is rejected") {
    EnvConfig cfg;
    auto env = make_env(cfg);
    env->reset();
    CHECK_THROWS_AS(env->step(Action({3})), std::invalid_argument);
    CHECK_THROWS_AS(env->step(Action({0, 0})), std::invalid_argument);
  }
  SUBCASE("max_ticks truncates with the survival point granted") {
    EnvConfig cfg;
    cfg.seed = 21;
    cfg.max_ticks = 15;
    cfg.obstacle_density = 0.0;
    auto env = make_env(cfg);
    env->reset();
    while (!env->done()) env->step(Action({1}));
    CHECK(env->tick() == 15);
    CHECK(env->score() == 15.0);
  }
}

TEST_CASE("collector rules") {
  EnvConfig cfg;
  cfg.game_id = "collector";
  cfg.seed = 4;

  SUBCASE("render is 80x80 (20 cells at 4 px)") {
    auto env = make_env(cfg);
    env->reset();
    Observation obs = env->render();
    CHECK(obs.width == 80);
    CHECK(obs.height == 80);
  }
  SUBCASE("expert collects all pellets for the full 150 score") {
    auto env = make_env(cfg);
    ScriptedExpert expert(*env, 0);
    auto result = run_rollout(*env, [&](const Observation&) { return expert.next(); }, false);
    CHECK(result.score == 150.0); // 15 pellets, +10 each
    CHECK(result.ticks < 500);    // ends on collection, not truncation
  }
  SUBCASE("opposing buttons cancel") {
    auto env = make_env(cfg);
    env->reset();
    Observation before = env->render();
    env->step(Action({1, 1, 1, 1})); // all four pressed
    CHECK(env->render() == before);  // nothing moved, nothing collected
  }
  SUBCASE("pellet pickup pays ten and removes the pellet") {
    auto env = make_env(cfg);
    env->reset();
    ScriptedExpert expert(*env, 0);
    double collected = 0.0;
    int pickups = 0;
    while (!env->done() && pickups == 0) {
      StepResult r = env->step(expert.next());
      if (r.score_delta > 0) {
        CHECK(r.score_delta == 10.0);
        ++pickups;
        collected = env->score();
      }
    }
    CHECK(pickups == 1);
    CHECK(collected == 10.0);
    // stepping back onto the same cell cannot pay again: total is monotone
    // by +10 per remaining pellet, checked by the full-run subcase
  }
}

TEST_CASE("scripted expert") {
  SUBCASE("delay 0 matches the instantaneous greedy policy") {
    EnvConfig cfg;
    cfg.seed = 31;
    cfg.max_ticks = 50;
    auto env = make_env(cfg);
    env->reset();
    ScriptedExpert expert(*env, 0);
    while (!env->done()) {
      const Action greedy = env->expert_action();
      const Action emitted = expert.next();
      CHECK(emitted == greedy);
      env->step(emitted);
    }
  }
  SUBCASE("delay 3 emits the action computed three ticks earlier") {
    EnvConfig cfg;
    cfg.seed = 32;
    cfg.max_ticks = 60;
    auto env = make_env(cfg);
    env->reset();
    ScriptedExpert expert(*env, 3);
    std::vector<Action> computed, emitted;
    while (!env->done()) {
      computed.push_back(env->expert_action());
      Action a = expert.next();
      emitted.push_back(a);
      env->step(a);
    }
    const Action noop = Action({DodgerEnv::NOOP});
    for (size_t t = 0; t < emitted.size(); ++t) {
      if (t < 3)
        CHECK(emitted[t] == noop);
      else
        CHECK(emitted[t] == computed[t - 3]);
    }
  }
  SUBCASE("delay-0 expert survives the full 1000 ticks at density 0.3") {
    for (const uint64_t seed : {101u, 202u, 303u}) {
      EnvConfig cfg;
      cfg.seed = seed;
      auto env = make_env(cfg);
      ScriptedExpert expert(*env, 0);
      auto result = run_rollout(*env, [&](const Observation&) { return expert.next(); }, false);
      CHECK(result.score == 1000.0);
    }
  }
  SUBCASE("reflex delay hurts the demonstrator too (100 seeds)") {
    double sum0 = 0.0, sum5 = 0.0;
    for (uint64_t seed = 0; seed < 100; ++seed) {
      EnvConfig cfg;
      cfg.seed = seed;
      cfg.max_ticks = 300;
      {
        auto env = make_env(cfg);
        ScriptedExpert expert(*env, 0);
        sum0 += run_rollout(*env, [&](const Observation&) { return expert.next(); }, false).score;
      }
      {
        auto env = make_env(cfg);
        ScriptedExpert expert(*env, 5);
        sum5 += run_rollout(*env, [&](const Observation&) { return expert.next(); }, false).score;
      }
    }
    CHECK(sum0 >= sum5);
    MESSAGE("expert mean score, delay 0: ", sum0 / 100.0, ", delay 5: ", sum5 / 100.0);
  }
}

TEST_CASE("random agent") {
  SUBCASE("uniform over an 18-way variable (1e5 draws, 3 sigma)") {
    ActionSpace space = ActionSpace::multi_class(18);
    Rng64 rng(6);
    const int n = 100000;
    std::vector<int> counts(18, 0);
    for (int i = 0; i < n; ++i) ++counts[random_agent(space, rng).indices[0]];
    const double p = 1.0 / 18.0;
    const double sigma = std::sqrt(p * (1 - p) * n);
    for (int c : counts) CHECK(std::abs(c - n * p) < 3.0 * sigma);
  }
  SUBCASE("a degenerate one-option variable always yields zero") {
    ActionSpace space{{{"noop", 1}}};
    Rng64 rng(7);
    for (int i = 0; i < 100; ++i) CHECK(random_agent(space, rng).indices[0] == 0);
  }
  SUBCASE("seeded sequences reproduce") {
    ActionSpace space = ActionSpace::buttons({"a", "b"});
    Rng64 r1(8), r2(8);
    for (int i = 0; i < 100; ++i) CHECK(random_agent(space, r1) == random_agent(space, r2));
  }
}

TEST_CASE("expert rollouts are trainable datasets on disk") {
  testutil::TempDir tmp("rollout");
  EnvConfig cfg;
  cfg.seed = 77;
  cfg.max_ticks = 40;
  Dataset ds = record_expert_dataset(cfg, 3, 0, 0.0, 500, "expert");
  REQUIRE(ds.episodes.size() == 3);
  for (const auto& ep : ds.episodes) {
    CHECK(validate_episode(ep).empty());
    CHECK(ep.meta.game_id == "dodger");
    CHECK(ep.meta.fps == 17.5);
    CHECK(ep.length() == 40); // expert survives to truncation
    CHECK(ep.meta.final_score == 40.0);
  }
  // same format as any episode archive
  write_dataset(ds, tmp.path / "data");
  Dataset back = read_dataset(tmp.path / "data");
  CHECK(back.episodes[1] == ds.episodes[1]);
  // distinct seeds per episode: schedules differ
  CHECK_FALSE(ds.episodes[0].frames[30] == ds.episodes[1].frames[30]);
}

TEST_CASE("action-noise corruption lowers scores") {
  EnvConfig cfg;
  cfg.seed = 88;
  cfg.max_ticks = 400;
  Dataset clean = record_expert_dataset(cfg, 5, 0, 0.0, 600, "expert");
  Dataset noisy = record_expert_dataset(cfg, 5, 0, 0.6, 600, "noisy");
  const double clean_mean = dataset_stats(clean).mean_score;
  const double noisy_mean = dataset_stats(noisy).mean_score;
  CHECK(noisy_mean < clean_mean);
  MESSAGE("clean ", clean_mean, " noisy ", noisy_mean);
}
