// clonebench: record, curate, train and evaluate behavioural-cloning agents
// on the bundled toy games, or serve those games over the wire protocol.

#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "clonebench/clonebench.hpp"

namespace fs = std::filesystem;
using namespace clonebench;

namespace {

struct EnvFlags {
  std::string game = "dodger";
  uint64_t seed = 0;
  double tick_rate = 17.5;
  int max_ticks = 0;
  double density = 0.3;
  int pellets = 15;

  void attach(CLI::App* cmd, bool with_seed = true) {
    cmd->add_option("--game", game, "Game id: dodger or collector")->capture_default_str();
    if (with_seed) cmd->add_option("--seed", seed, "Environment seed")->capture_default_str();
    cmd->add_option("--tick-rate", tick_rate, "Ticks per second")->capture_default_str();
    cmd->add_option("--max-ticks", max_ticks, "Episode tick cap (0 = game default)")
        ->capture_default_str();
    cmd->add_option("--density", density, "Dodger obstacle spawn probability")
        ->capture_default_str();
    cmd->add_option("--pellets", pellets, "Collector pellet count")->capture_default_str();
  }
  EnvConfig to_config() const {
    EnvConfig cfg;
    cfg.game_id = game;
    cfg.seed = seed;
    cfg.tick_rate = tick_rate;
    cfg.max_ticks = max_ticks;
    cfg.obstacle_density = density;
    cfg.pellet_count = pellets;
    return cfg;
  }
};

void echo_config(const fs::path& dir, const std::vector<std::pair<std::string, std::string>>& kv) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  kv_write(dir / "config.echo", kv);
}

std::vector<std::pair<std::string, std::string>> snapshot_to_entries(const KvMap& m) {
  return {m.begin(), m.end()};
}

uint16_t parse_endpoint_port(const std::string& ep, std::string& host) {
  const auto colon = ep.rfind(':');
  if (colon == std::string::npos) {
    host = "127.0.0.1";
    return static_cast<uint16_t>(std::stoi(ep));
  }
  host = ep.substr(0, colon);
  return static_cast<uint16_t>(std::stoi(ep.substr(colon + 1)));
}

int run(int argc, char** argv) {
  CLI::App app{"behavioural cloning benchmark toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value file mirroring the train/env options");
  app.allow_config_extras(CLI::config_extras_mode::ignore_all);

  // ---- serve-env ----
  auto* serve = app.add_subcommand("serve-env", "Run a game over the wire at its tick rate");
  EnvFlags serve_env_flags;
  serve_env_flags.attach(serve);
  uint16_t listen_port = 0;
  int serve_episodes = 1;
  bool serve_sync = false, serve_expert = false;
  int serve_expert_delay = 0;
  double serve_noise = 0.0;
  serve->add_option("--listen", listen_port, "TCP port (0 = ephemeral, printed)")->required();
  serve->add_option("--episodes", serve_episodes, "Episodes to serve")->capture_default_str();
  serve->add_flag("--sync", serve_sync, "Wait for one EMULATE per frame (deterministic)");
  serve->add_flag("--expert", serve_expert, "Play the built-in scripted expert (for recording)");
  serve->add_option("--expert-delay", serve_expert_delay, "Expert reaction delay in ticks")
      ->capture_default_str();
  serve->add_option("--expert-noise", serve_noise, "Expert action-noise probability")
      ->capture_default_str();

  // ---- record ----
  auto* record = app.add_subcommand("record", "Archive the (frame, input) stream of a session");
  std::string record_connect, record_out, record_game = "unknown", record_player = "recorded";
  bool record_stamp = false;
  record->add_option("--connect", record_connect, "host:port of the session")->required();
  record->add_option("--out", record_out, "Output dataset directory")->required();
  record->add_option("--game-id", record_game, "Game id for the archive metadata")
      ->capture_default_str();
  record->add_option("--player-id", record_player, "Player id for the archive metadata")
      ->capture_default_str();
  record->add_flag("--stamp", record_stamp, "Stamp archives with the wall-clock time");

  // ---- stats ----
  auto* stats = app.add_subcommand("stats", "Dataset statistics");
  std::string stats_data;
  stats->add_option("--data", stats_data, "Dataset directory")->required();

  // ---- filter ----
  auto* filter = app.add_subcommand("filter", "Keep the top fraction of episodes by score");
  std::string filter_data, filter_out;
  double keep_fraction = 1.0;
  filter->add_option("--data", filter_data, "Dataset directory")->required();
  filter->add_option("--keep-fraction", keep_fraction, "Fraction in (0, 1]")->required();
  filter->add_option("--out", filter_out, "Output dataset directory")->required();

  // ---- shift ----
  auto* shift = app.add_subcommand("shift", "Re-pair frames with delayed actions");
  std::string shift_data, shift_out;
  int shift_delay = 0;
  shift->add_option("--data", shift_data, "Dataset directory")->required();
  shift->add_option("--delay", shift_delay, "Signed frame offset d")->required();
  shift->add_option("--out", shift_out, "Output dataset directory")->required();

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "Behavioural cloning on a dataset");
  std::string train_data, train_out;
  TrainConfig tc;
  int resize_w = 0, resize_h = 0;
  bool flicker = false;
  train_cmd->add_option("--data", train_data, "Dataset directory")->required();
  train_cmd->add_option("--out", train_out, "Output directory for checkpoints")->required();
  train_cmd->add_option("--epochs", tc.epochs)->capture_default_str();
  train_cmd->add_option("--batch-size", tc.batch_size)->capture_default_str();
  train_cmd->add_option("--lr", tc.learning_rate)->capture_default_str();
  train_cmd->add_option("--l2", tc.l2_weight)->capture_default_str();
  train_cmd->add_option("--delay", tc.delay.frames)->capture_default_str();
  train_cmd->add_option("--seed", tc.seed)->capture_default_str();
  train_cmd->add_option("--resize-width", resize_w, "Resize frames before training")
      ->capture_default_str();
  train_cmd->add_option("--resize-height", resize_h)->capture_default_str();
  train_cmd->add_flag("--flicker", flicker, "Merge each frame with its predecessor (max)");

  // ---- play ----
  auto* play = app.add_subcommand("play", "Drive a trained model against a served game");
  std::string play_model, play_connect;
  bool play_greedy = false, play_flicker = false;
  uint64_t play_seed = 1;
  play->add_option("--model", play_model, "Checkpoint file")->required();
  play->add_option("--connect", play_connect, "host:port of the server")->required();
  play->add_flag("--greedy", play_greedy, "Argmax instead of sampling");
  play->add_flag("--flicker", play_flicker, "Flicker-merge consecutive frames");
  play->add_option("--seed", play_seed, "Sampling seed")->capture_default_str();

  // ---- evaluate ----
  auto* eval_cmd = app.add_subcommand("evaluate", "Roll out a model in-process");
  EnvFlags eval_env;
  eval_env.attach(eval_cmd, false); // per-episode seeds come from --seeds
  std::string eval_model, eval_csv;
  int eval_episodes = 100, eval_max_frames = 0;
  uint64_t eval_seeds = 9000;
  bool eval_greedy = false, eval_flicker = false;
  double norm_random = 0.0, norm_human = 0.0;
  eval_cmd->add_option("--model", eval_model, "Checkpoint file")->required();
  eval_cmd->add_option("--episodes", eval_episodes)->capture_default_str();
  eval_cmd->add_option("--max-frames", eval_max_frames, "Frame cap per episode (0 = env default)")
      ->capture_default_str();
  eval_cmd->add_option("--seeds", eval_seeds, "Base seed; episode i uses seeds+i")
      ->capture_default_str();
  eval_cmd->add_flag("--greedy", eval_greedy);
  eval_cmd->add_flag("--flicker", eval_flicker);
  eval_cmd->add_option("--random-mean", norm_random, "Random-agent baseline for normalization");
  eval_cmd->add_option("--human-mean", norm_human, "Human/demonstrator mean for normalization");
  eval_cmd->add_option("--csv", eval_csv, "Write per-episode scores to this CSV");

  // ---- baseline ----
  auto* baseline = app.add_subcommand("baseline", "Random-agent baseline for a game");
  EnvFlags base_env;
  base_env.attach(baseline, false); // per-episode seeds come from --base-seed
  int base_episodes = 100000;
  uint64_t base_seed = 1000000;
  int base_max_frames = 0;
  baseline->add_option("--episodes", base_episodes)->capture_default_str();
  baseline->add_option("--base-seed", base_seed)->capture_default_str();
  baseline->add_option("--max-frames", base_max_frames)->capture_default_str();

  // ---- rollout ----
  auto* rollout = app.add_subcommand("rollout", "Record scripted-expert demonstrations in-process");
  EnvFlags roll_env;
  roll_env.attach(rollout);
  std::string roll_out;
  int roll_episodes = 10, roll_delay = 0;
  double roll_noise = 0.0;
  uint64_t roll_base_seed = 0;
  std::string roll_player = "expert";
  rollout->add_option("--out", roll_out, "Output dataset directory")->required();
  rollout->add_option("--episodes", roll_episodes)->capture_default_str();
  rollout->add_option("--expert-delay", roll_delay, "Reaction delay in ticks")
      ->capture_default_str();
  rollout->add_option("--noise", roll_noise, "Action-noise probability")->capture_default_str();
  rollout->add_option("--base-seed", roll_base_seed, "Episode e runs on base-seed+e")
      ->capture_default_str();
  rollout->add_option("--player-id", roll_player)->capture_default_str();

  // ---- experiment ----
  auto* experiment = app.add_subcommand("experiment", "The delay and data-quality experiments");
  experiment->require_subcommand(1);
  EnvFlags exp_env;
  std::string exp_data, exp_out;
  TrainConfig exp_tc;
  int exp_eval_episodes = 10, exp_eval_max_frames = 0, exp_seeds = 3, exp_last = 3;
  uint64_t exp_eval_seed = 9000;
  auto add_common = [&](CLI::App* sub) {
    exp_env.attach(sub, false); // rollout seeds come from --eval-seed
    sub->add_option("--data", exp_data, "Dataset directory")->required();
    sub->add_option("--out", exp_out, "Output CSV path")->required();
    sub->add_option("--epochs", exp_tc.epochs)->capture_default_str();
    sub->add_option("--batch-size", exp_tc.batch_size)->capture_default_str();
    sub->add_option("--lr", exp_tc.learning_rate)->capture_default_str();
    sub->add_option("--l2", exp_tc.l2_weight)->capture_default_str();
    sub->add_option("--seed", exp_tc.seed)->capture_default_str();
    sub->add_option("--train-seeds", exp_seeds, "Training seeds per condition")
        ->capture_default_str();
    sub->add_option("--last-epochs", exp_last, "Checkpoints kept per seed (1 = final only)")
        ->capture_default_str();
    sub->add_option("--eval-episodes", exp_eval_episodes)->capture_default_str();
    sub->add_option("--eval-max-frames", exp_eval_max_frames)->capture_default_str();
    sub->add_option("--eval-seed", exp_eval_seed)->capture_default_str();
  };
  auto* sweep = experiment->add_subcommand("delay-sweep", "Score per training action-delay");
  std::vector<int> sweep_delays{-2, 0, 2, 3, 5};
  add_common(sweep);
  sweep->add_option("--delays", sweep_delays, "Delays to sweep")->capture_default_str();
  auto* quality = experiment->add_subcommand("quality-filter", "Score per keep-fraction");
  std::vector<double> quality_fractions{0.2, 1.0};
  add_common(quality);
  quality->add_option("--fractions", quality_fractions, "Keep fractions")->capture_default_str();

  // ---- gradcheck ----
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Verify gradients by finite differences");
  uint64_t gc_seed = 1;
  double gc_eps = 1e-3, gc_tol = 1e-4;
  size_t gc_coords = 600;
  gradcheck_cmd->add_option("--seed", gc_seed)->capture_default_str();
  gradcheck_cmd->add_option("--eps", gc_eps, "Central-difference step")->capture_default_str();
  gradcheck_cmd->add_option("--tolerance", gc_tol)->capture_default_str();
  gradcheck_cmd->add_option("--coords", gc_coords, "Sampled coordinates per large layer")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1; // usage error
  }

  if (serve->parsed()) {
    EnvConfig cfg = serve_env_flags.to_config();
    TcpListener listener(listen_port);
    std::printf("listening on 127.0.0.1:%u\n", listener.port());
    std::fflush(stdout);
    Connection conn(listener.accept());
    ServeOptions opt;
    opt.episodes = serve_episodes;
    opt.synchronous = serve_sync;
    opt.expert = serve_expert;
    opt.expert_delay = serve_expert_delay;
    opt.expert_noise = serve_noise;
    ServeReport rep = serve_env(cfg, conn, opt);
    std::printf("served %d episodes, %ld ticks\n", rep.episodes, rep.ticks);
    if (!opt.synchronous)
      std::printf("tick interval %.1f us, jitter mean %.1f us, max %.1f us\n", rep.interval_us,
                  rep.mean_abs_jitter_us, rep.max_abs_jitter_us);
    if (rep.client_disconnected) std::printf("client disconnected early\n");
    return 0;
  }

  if (record->parsed()) {
    std::string host;
    const uint16_t port = parse_endpoint_port(record_connect, host);
    Connection conn(TcpStream::connect(host, port));
    RecordOptions opt;
    opt.out_dir = record_out;
    opt.game_id = record_game;
    opt.player_id = record_player;
    if (record_stamp) opt.recorded_at = static_cast<int64_t>(::time(nullptr));
    RecordReport rep = record_session(conn, opt);
    for (const auto& w : rep.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    std::printf("recorded %zu episodes under %s\n", rep.archives.size(), record_out.c_str());
    return 0;
  }

  if (stats->parsed()) {
    Dataset ds = read_dataset(stats_data);
    DatasetStats st = dataset_stats(ds);
    std::printf("episodes        %zu\n", st.episode_count);
    std::printf("total_samples   %zu\n", st.total_samples);
    std::printf("score_min       %g\n", st.min_score);
    std::printf("score_mean      %g\n", st.mean_score);
    std::printf("score_median    %g\n", st.median_score);
    std::printf("score_p95       %g\n", st.p95_score);
    std::printf("score_max       %g\n", st.max_score);
    for (const auto& [player, p] : st.per_player)
      std::printf("player %-12s episodes %zu samples %zu mean_score %g\n", player.c_str(),
                  p.episodes, p.samples, p.mean_score);
    return 0;
  }

  if (filter->parsed()) {
    Dataset ds = read_dataset(filter_data);
    Dataset top = filter_top_percentile(ds, keep_fraction);
    write_dataset(top, filter_out);
    echo_config(filter_out, {{"subcommand", "filter"},
                             {"data", filter_data},
                             {"keep_fraction", format_double(keep_fraction)}});
    std::printf("kept %zu of %zu episodes\n", top.episodes.size(), ds.episodes.size());
    return 0;
  }

  if (shift->parsed()) {
    Dataset ds = read_dataset(shift_data);
    Dataset shifted = shift_actions(ds, DelayOffset{shift_delay});
    write_dataset(shifted, shift_out);
    echo_config(shift_out, {{"subcommand", "shift"},
                            {"data", shift_data},
                            {"delay", std::to_string(shift_delay)}});
    std::printf("shifted %zu episodes by %d\n", shifted.episodes.size(), shift_delay);
    return 0;
  }

  if (train_cmd->parsed()) {
    tc.resize_width = resize_w;
    tc.resize_height = resize_h;
    tc.flicker_merge = flicker;
    Dataset ds = read_dataset(train_data);
    fs::create_directories(train_out);
    echo_config(train_out, snapshot_to_entries(tc.snapshot()));
    TrainResult result = train(ds, tc, [&](const EpochRecord& e) {
      std::printf("epoch %d mean_loss %.6f\n", e.epoch, e.mean_loss);
      std::fflush(stdout);
    });
    for (const auto& ckpt : result.checkpoints) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d.ckpt", ckpt.epoch);
      save_checkpoint(ckpt, fs::path(train_out) / name);
    }
    write_loss_curve_csv(result.loss_curve, fs::path(train_out) / "loss_curve.csv");
    if (result.skipped_episodes)
      std::fprintf(stderr, "warning: %zu episodes shorter than |delay| were skipped\n",
                   result.skipped_episodes);
    std::printf("trained %d epochs on %zu samples; checkpoints in %s\n", tc.epochs,
                result.samples_per_epoch, train_out.c_str());
    return 0;
  }

  if (play->parsed()) {
    ModelCheckpoint ckpt = load_checkpoint(play_model);
    std::string host;
    const uint16_t port = parse_endpoint_port(play_connect, host);
    Connection conn(TcpStream::connect(host, port));
    PlayOptions opt;
    opt.seed = play_seed;
    opt.greedy = play_greedy;
    opt.flicker = play_flicker;
    PlayReport rep = play_session(conn, ckpt.to_model(), opt);
    for (size_t i = 0; i < rep.episode_scores.size(); ++i)
      std::printf("episode %zu score %g\n", i, rep.episode_scores[i]);
    std::printf("final score %g over %zu frames (%zu dropped)\n", rep.final_score,
                rep.frames_processed, rep.dropped_frames);
    std::printf("decision latency us: p50 %.0f p95 %.0f p99 %.0f max %.0f; %zu over one tick\n",
                rep.latency.p50_us, rep.latency.p95_us, rep.latency.p99_us, rep.latency.max_us,
                rep.latency.over_tick);
    if (!rep.clean) {
      std::printf("session status: %s\n", rep.status.c_str());
      return 2;
    }
    return 0;
  }

  if (eval_cmd->parsed()) {
    ModelCheckpoint ckpt = load_checkpoint(eval_model);
    EvalResult r = run_evaluation(ckpt.to_model(), eval_env.to_config(), eval_max_frames,
                                  consecutive_seeds(eval_seeds, eval_episodes), eval_greedy,
                                  eval_flicker);
    std::printf("episodes %zu mean %.3f std %.3f\n", r.scores.size(), r.mean, r.stdev);
    if (norm_human != norm_random)
      std::printf("normalized %.2f%% (random %.3f, human %.3f)\n",
                  human_normalized(r.mean, norm_random, norm_human), norm_random, norm_human);
    if (!eval_csv.empty()) {
      std::ofstream f(eval_csv);
      f << "episode,score\n";
      for (size_t i = 0; i < r.scores.size(); ++i) f << i << ',' << r.scores[i] << '\n';
    }
    return 0;
  }

  if (baseline->parsed()) {
    EvalResult r = run_random_baseline(base_env.to_config(), base_max_frames,
                                       consecutive_seeds(base_seed, base_episodes));
    std::printf("game %s episodes %d random_mean %.6f std %.6f\n", base_env.game.c_str(),
                base_episodes, r.mean, r.stdev);
    return 0;
  }

  if (rollout->parsed()) {
    Dataset ds = record_expert_dataset(roll_env.to_config(), roll_episodes, roll_delay, roll_noise,
                                       roll_base_seed, roll_player);
    write_dataset(ds, roll_out);
    echo_config(roll_out, {{"subcommand", "rollout"},
                           {"game", roll_env.game},
                           {"episodes", std::to_string(roll_episodes)},
                           {"expert_delay", std::to_string(roll_delay)},
                           {"noise", format_double(roll_noise)},
                           {"base_seed", std::to_string(roll_base_seed)}});
    DatasetStats st = dataset_stats(ds);
    std::printf("recorded %zu episodes, %zu samples, mean score %.2f\n", st.episode_count,
                st.total_samples, st.mean_score);
    return 0;
  }

  if (experiment->parsed()) {
    Dataset ds = read_dataset(exp_data);
    EvalSpec spec;
    spec.env = exp_env.to_config();
    spec.episodes = exp_eval_episodes;
    spec.max_frames = exp_eval_max_frames;
    spec.seed_base = exp_eval_seed;
    std::vector<ExperimentPoint> points;
    if (sweep->parsed())
      points = experiment_delay_sweep(ds, sweep_delays, exp_tc, spec, exp_seeds, exp_last);
    else
      points = experiment_quality_filter(ds, quality_fractions, exp_tc, spec, exp_seeds, exp_last);
    write_experiment_csv(points, exp_out);
    echo_config(fs::path(exp_out).parent_path().empty() ? "." : fs::path(exp_out).parent_path(),
                snapshot_to_entries(exp_tc.snapshot()));
    for (const auto& p : points) {
      std::printf("%-16s reported %.3f  seed means:", p.condition.c_str(), p.result.reported);
      for (double m : p.result.seed_means()) std::printf(" %.3f", m);
      std::printf("\n");
    }
    std::printf("rows written to %s\n", exp_out.c_str());
    return 0;
  }

  if (gradcheck_cmd->parsed()) {
    Rng64 rng(gc_seed);
    bool all_pass = true;
    struct Case {
      const char* name;
      ModelArch arch;
      int batch;
    };
    ActionSpace small = ActionSpace::multi_class(3);
    ActionSpace buttons = ActionSpace::buttons({"a", "b"});
    std::vector<Case> cases;
    cases.push_back({"conv+dense", make_arch(2, 8, 8, small,
                                             {conv2d(3, 3, 2), relu(), flatten(), dense(6), relu(),
                                              dense(3)}),
                     3});
    cases.push_back({"linear", make_arch(1, 4, 4, small, {flatten(), dense(3)}), 4});
    cases.push_back({"buttons", make_arch(2, 6, 6, buttons,
                                          {conv2d(4, 3, 1), relu(), flatten(), dense(4)}),
                     2});
    cases.push_back({"nature-84", build_nature_cnn(3, 84, 84, ActionSpace::multi_class(18)), 2});
    for (auto& cs : cases) {
      Network<double> net(cs.arch);
      init_weights(net, rng);
      std::vector<double> input(static_cast<size_t>(cs.batch) * cs.arch.in_c * cs.arch.in_h *
                                cs.arch.in_w);
      for (auto& x : input) x = rng.next_double();
      std::vector<Action> actions(static_cast<size_t>(cs.batch));
      for (auto& a : actions)
        for (const auto& v : cs.arch.space.variables)
          a.indices.push_back(static_cast<int>(rng.next_below(v.cardinality)));
      Rng64 pick(gc_seed ^ 0xC0FFEE);
      auto report = grad_check(net, input.data(), cs.batch, actions, 1e-5, gc_eps, gc_tol,
                               gc_coords, pick);
      std::printf("%-12s max_rel_err %.3e  %s\n", cs.name, report.max_rel_err,
                  report.pass ? "ok" : "FAIL");
      for (const auto& l : report.layers)
        std::printf("  %-16s checked %zu excluded %zu max_rel_err %.3e\n", l.layer.c_str(),
                    l.checked, l.excluded, l.max_rel_err);
      all_pass = all_pass && report.pass;
    }
    return all_pass ? 0 : 2;
  }

  return 0;
}

} // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
