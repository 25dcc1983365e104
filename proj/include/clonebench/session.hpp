#pragma once

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "clonebench/archive.hpp"
#include "clonebench/envsim.hpp"
#include "clonebench/netio.hpp"
#include "clonebench/policy.hpp"
#include "clonebench/protocol.hpp"

namespace clonebench {

// Framed message transport over one TCP stream. The stream header goes out
// at construction; the peer's header is validated on the first receive.
// One thread may send while another receives, but each direction must stay
// single-threaded.
class Connection {
public:
  explicit Connection(TcpStream stream) : stream_(std::move(stream)) {
    const auto h = stream_header();
    stream_.write_all(h.data(), h.size());
  }

  void send(const Message& msg) {
    const auto bytes = encode_message(msg);
    stream_.write_all(bytes.data(), bytes.size());
  }

  // nullopt on clean EOF at a record boundary.
  std::optional<Message> receive() {
    if (!peer_header_checked_) {
      uint8_t hdr[6];
      if (!stream_.read_exact(hdr, 6)) return std::nullopt;
      check_stream_header(hdr, 6);
      peer_header_checked_ = true;
    }
    uint8_t lenbuf[4];
    if (!stream_.read_exact(lenbuf, 4)) return std::nullopt;
    const uint32_t len = (static_cast<uint32_t>(lenbuf[0]) << 24) |
                         (static_cast<uint32_t>(lenbuf[1]) << 16) |
                         (static_cast<uint32_t>(lenbuf[2]) << 8) | lenbuf[3];
    if (len < 1 || len > PROTO_MAX_PAYLOAD)
      throw ProtocolError("bad record length " + std::to_string(len) + ", dropping connection");
    std::vector<uint8_t> record(4 + len);
    std::copy(lenbuf, lenbuf + 4, record.begin());
    if (!stream_.read_exact(record.data() + 4, len)) throw NetError("connection closed mid-record");
    size_t consumed = 0;
    return decode_message(record.data(), record.size(), consumed);
  }

  void shutdown() { stream_.shutdown_both(); }

private:
  TcpStream stream_;
  bool peer_header_checked_ = false;
};

// ---------------------------------------------------------------------------
// serve_env: run a game over the wire at its fixed tick rate
// ---------------------------------------------------------------------------

struct ServeOptions {
  int episodes = 1;
  bool synchronous = false; // wait for one EMULATE per frame instead of free-running
  // Built-in demonstrator: the server plays its own scripted expert and
  // ignores client EMULATEs, so a recorder on the wire captures genuine
  // expert demonstrations.
  bool expert = false;
  int expert_delay = 0;
  double expert_noise = 0.0;
};

struct ServeReport {
  int episodes = 0;
  long ticks = 0;
  double interval_us = 0.0;
  double mean_abs_jitter_us = 0.0;
  double max_abs_jitter_us = 0.0;
  bool client_disconnected = false;
};

namespace sessiondetail {

using Clock = std::chrono::steady_clock;

inline uint64_t us_since(Clock::time_point t0) {
  return static_cast<uint64_t>(
      std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - t0).count());
}

// Latest-value slot written by the reader thread, drained by the tick loop.
struct InputSlot {
  std::mutex mu;
  std::vector<uint8_t> state;
  bool bye = false;
  bool disconnected = false;
};

} // namespace sessiondetail

// Emits FRAME at every tick of the configured rate no matter how fast the
// client answers; the most recently received EMULATE state is applied at
// the next tick boundary, never mid-tick. Each applied input is echoed as
// INPUT_STATE stamped with the timestamp of the frame it was held during,
// so a recorder on the stream reconstructs (frame, action) pairs exactly.
// Episode e runs on seed config.seed + e.
inline ServeReport serve_env(const EnvConfig& config, Connection& conn, const ServeOptions& opt) {
  using namespace sessiondetail;
  ServeReport report;

  EnvConfig probe_cfg = config;
  auto probe = make_env(probe_cfg);
  const ActionSpace space = probe->action_space();
  const Action noop = probe->noop_action();

  const double interval_us = 1e6 / config.tick_rate;
  report.interval_us = interval_us;
  conn.send(HelloMsg{static_cast<uint32_t>(config.tick_rate * 1000.0 + 0.5),
                     static_cast<uint8_t>(opt.synchronous ? 1 : 0), space});

  InputSlot slot;
  slot.state = indices_from_action(noop);
  std::thread reader;
  if (!opt.synchronous) {
    reader = std::thread([&conn, &slot] {
      try {
        for (;;) {
          auto msg = conn.receive();
          if (!msg) {
            std::lock_guard<std::mutex> lk(slot.mu);
            slot.disconnected = true;
            return;
          }
          if (const auto* em = std::get_if<EmulateMsg>(&*msg)) {
            std::lock_guard<std::mutex> lk(slot.mu);
            slot.state = em->indices;
          } else if (std::get_if<ByeMsg>(&*msg)) {
            std::lock_guard<std::mutex> lk(slot.mu);
            slot.bye = true;
            return;
          }
        }
      } catch (const std::exception&) {
        std::lock_guard<std::mutex> lk(slot.mu);
        slot.disconnected = true;
      }
    });
  }

  const Clock::time_point t0 = Clock::now();
  long global_tick = 0;
  double jitter_sum = 0.0, jitter_max = 0.0;
  long jitter_n = 0;
  bool stop = false;

  // In synchronous mode timestamps are the logical tick clock.
  auto frame_ts = [&](long tick) -> uint64_t {
    if (opt.synchronous) return static_cast<uint64_t>(tick * interval_us);
    return us_since(t0);
  };

  for (int ep = 0; ep < opt.episodes && !stop; ++ep) {
    EnvConfig cfg = config;
    cfg.seed = config.seed + static_cast<uint64_t>(ep);
    auto env = make_env(cfg);
    env->reset();
    ScriptedExpert expert(*env, opt.expert_delay, opt.expert_noise,
                          cfg.seed ^ 0xD5A5A5A5A5A5A5A5ULL);
    Observation obs = env->render();
    uint32_t index = 0;
    uint64_t prev_send_us = 0;
    bool have_prev_send = false;

    while (!stop) {
      if (!opt.synchronous) {
        const auto deadline =
            t0 + std::chrono::microseconds(static_cast<int64_t>(global_tick * interval_us));
        std::this_thread::sleep_until(deadline);
      }
      const uint64_t ts = frame_ts(global_tick);
      try {
        conn.send(FrameMsg{static_cast<uint32_t>(ep), index, ts,
                           static_cast<uint16_t>(obs.width), static_cast<uint16_t>(obs.height), 0,
                           obs.pixels});
      } catch (const std::exception&) {
        report.client_disconnected = true;
        stop = true;
        break;
      }
      if (!opt.synchronous) {
        const uint64_t sent = us_since(t0);
        if (have_prev_send) {
          const double dev = std::abs(static_cast<double>(sent - prev_send_us) - interval_us);
          jitter_sum += dev;
          jitter_max = std::max(jitter_max, dev);
          ++jitter_n;
        }
        prev_send_us = sent;
        have_prev_send = true;
      }
      ++global_tick;

      // Pick up the input state for this frame. The built-in demonstrator
      // never waits on the client: with --sync it simply records at full
      // speed.
      std::vector<uint8_t> applied;
      if (opt.expert) {
        applied = indices_from_action(expert.next());
        if (!opt.synchronous) {
          std::lock_guard<std::mutex> lk(slot.mu);
          if (slot.bye || slot.disconnected) {
            report.client_disconnected = slot.disconnected;
            stop = true;
            break;
          }
        }
      } else if (opt.synchronous) {
        bool got = false;
        while (!got) {
          std::optional<Message> msg;
          try {
            msg = conn.receive();
          } catch (const std::exception&) {
            msg.reset();
          }
          if (!msg) {
            report.client_disconnected = true;
            stop = true;
            break;
          }
          if (const auto* em = std::get_if<EmulateMsg>(&*msg)) {
            slot.state = em->indices;
            got = true;
          } else if (std::get_if<ByeMsg>(&*msg)) {
            stop = true;
            break;
          }
        }
        if (stop) break;
        applied = slot.state;
      } else {
        std::lock_guard<std::mutex> lk(slot.mu);
        if (slot.bye || slot.disconnected) {
          report.client_disconnected = slot.disconnected;
          stop = true;
          break;
        }
        applied = slot.state;
      }

      Action act = action_from_indices(applied);
      if (!act.valid_for(space)) act = noop; // garbage input falls back to no-op
      StepResult r = env->step(act);
      ++report.ticks;
      try {
        conn.send(InputStateMsg{ts, indices_from_action(act)});
        if (r.score_delta != 0.0) conn.send(ScoreMsg{r.score_delta});
        if (r.done) {
          conn.send(ResetMsg{static_cast<uint8_t>(ep + 1 == opt.episodes ? 1 : 0)});
          ++report.episodes;
          break;
        }
      } catch (const std::exception&) {
        report.client_disconnected = true;
        stop = true;
        break;
      }
      obs = env->render();
      ++index;
    }
  }

  if (!report.client_disconnected) {
    try {
      conn.send(ByeMsg{});
    } catch (const std::exception&) {
      report.client_disconnected = true;
    }
  }
  conn.shutdown();
  if (reader.joinable()) reader.join();
  if (jitter_n > 0) report.mean_abs_jitter_us = jitter_sum / static_cast<double>(jitter_n);
  report.max_abs_jitter_us = jitter_max;
  return report;
}

// ---------------------------------------------------------------------------
// record_session: archive the (frame, input) stream of a session
// ---------------------------------------------------------------------------

struct RecordOptions {
  std::filesystem::path out_dir;
  std::string game_id = "unknown"; // the wire does not carry a game name
  std::string player_id = "recorded";
  int64_t recorded_at = 0; // 0 keeps archives byte-deterministic
};

struct RecordReport {
  std::vector<std::filesystem::path> archives;
  std::vector<std::string> warnings;
};

// Pairs each FRAME with the most recent INPUT_STATE at or before the
// frame's timestamp (an input between frames k and k+1 belongs to k+1).
// RESET delimits episodes; the final score is the cumulative SCORE sum.
// on_frame, when given, may answer each frame with an EMULATE action, which
// turns the recorder into a playing client (used with synchronous servers).
inline RecordReport record_session(
    Connection& conn, const RecordOptions& opt,
    const std::function<std::optional<Action>(const FrameMsg&)>& on_frame = {}) {
  RecordReport report;
  std::filesystem::create_directories(opt.out_dir);

  auto first = conn.receive();
  if (!first) throw ProtocolError("peer closed before HELLO");
  const auto* hello = std::get_if<HelloMsg>(&*first);
  if (!hello) throw ProtocolError("protocol violation: expected HELLO first");
  const double fps = hello->tick_rate_mhz / 1000.0;
  const ActionSpace space = hello->space;

  struct PendingEpisode {
    std::vector<FrameMsg> frames;
    std::vector<InputStateMsg> inputs;
    double score = 0.0;
    bool saw_score = false;
  };
  PendingEpisode cur;
  int episode_no = 0;

  auto finalize = [&](bool warn_no_reset) {
    if (cur.frames.empty()) {
      cur = PendingEpisode{};
      return;
    }
    if (warn_no_reset)
      report.warnings.push_back("episode " + std::to_string(episode_no) +
                                " ended without RESET; archiving what arrived");
    if (!cur.saw_score)
      report.warnings.push_back("episode " + std::to_string(episode_no) +
                                " carried no SCORE; final score recorded as cumulative 0");
    std::stable_sort(cur.inputs.begin(), cur.inputs.end(),
                     [](const InputStateMsg& a, const InputStateMsg& b) { return a.ts_us < b.ts_us; });
    Episode ep;
    ep.meta.game_id = opt.game_id;
    ep.meta.player_id = opt.player_id;
    ep.meta.fps = fps;
    ep.meta.action_space = space;
    ep.meta.final_score = cur.score;
    ep.meta.recorded_at = opt.recorded_at;
    ep.meta.native_width = cur.frames.front().width;
    ep.meta.native_height = cur.frames.front().height;
    bool warned_unpaired = false;
    size_t cursor = 0; // frames arrive in ts order, inputs sorted: two pointers
    const InputStateMsg* latest = nullptr;
    for (const auto& fm : cur.frames) {
      if (fm.width != cur.frames.front().width || fm.height != cur.frames.front().height)
        throw ProtocolError("frame dimensions changed mid-episode");
      while (cursor < cur.inputs.size() && cur.inputs[cursor].ts_us <= fm.ts_us)
        latest = &cur.inputs[cursor++];
      Observation obs(fm.width, fm.height);
      obs.pixels = fm.pixels;
      ep.frames.push_back(std::move(obs));
      if (latest) {
        ep.actions.push_back(action_from_indices(latest->indices));
      } else {
        if (!warned_unpaired) {
          report.warnings.push_back("episode " + std::to_string(episode_no) +
                                    " has frames before any INPUT_STATE; zero action assumed");
          warned_unpaired = true;
        }
        ep.actions.push_back(Action(std::vector<int>(space.variables.size(), 0)));
      }
    }
    char name[32];
    std::snprintf(name, sizeof name, "ep_%05d", episode_no);
    report.archives.push_back(write_episode(ep, opt.out_dir / name));
    ++episode_no;
    cur = PendingEpisode{};
  };

  for (;;) {
    std::optional<Message> msg = conn.receive();
    if (!msg) {
      finalize(true);
      report.warnings.push_back("stream ended without BYE");
      break;
    }
    if (auto* fm = std::get_if<FrameMsg>(&*msg)) {
      if (on_frame) {
        if (auto action = on_frame(*fm))
          conn.send(EmulateMsg{fm->ts_us, indices_from_action(*action)});
      }
      cur.frames.push_back(std::move(*fm));
    } else if (const auto* in = std::get_if<InputStateMsg>(&*msg)) {
      cur.inputs.push_back(*in);
    } else if (const auto* sc = std::get_if<ScoreMsg>(&*msg)) {
      cur.score += sc->delta;
      cur.saw_score = true;
    } else if (std::get_if<ResetMsg>(&*msg)) {
      finalize(false);
    } else if (std::get_if<ByeMsg>(&*msg)) {
      finalize(true);
      break;
    } else if (std::get_if<HelloMsg>(&*msg)) {
      throw ProtocolError("protocol violation: HELLO repeated mid-session");
    } else {
      throw ProtocolError("protocol violation: unexpected message while recording");
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// play_session: drive a trained model against a served game
// ---------------------------------------------------------------------------

struct PlayOptions {
  uint64_t seed = 1;
  bool greedy = false;
  bool flicker = false;
};

struct LatencyStats {
  size_t frames = 0;
  size_t over_tick = 0; // decisions slower than one tick interval
  double p50_us = 0.0, p95_us = 0.0, p99_us = 0.0, max_us = 0.0;
};

struct PlayReport {
  std::vector<double> episode_scores;
  double final_score = 0.0;
  size_t frames_processed = 0;
  size_t dropped_frames = 0; // overwritten in the mailbox before being seen
  uint64_t action_digest = 0; // FNV-1a over emitted indices; repro checks
  LatencyStats latency;
  bool clean = true;
  std::string status = "completed";
};

// The decision loop holds a single-slot mailbox: a frame that arrives
// before the previous one was processed simply replaces it. Dropping stale
// frames is the correct behaviour for a fixed-rate game; queuing them would
// reintroduce exactly the control delay this measures. EMULATE goes out
// only when the button state changes (every frame in synchronous mode).
inline PlayReport play_session(Connection& conn, const PolicyModel& model, const PlayOptions& opt) {
  using namespace sessiondetail;
  PlayReport report;

  auto first = conn.receive();
  if (!first) throw ProtocolError("peer closed before HELLO");
  const auto* hello = std::get_if<HelloMsg>(&*first);
  if (!hello) throw ProtocolError("protocol violation: expected HELLO first");
  if (!(hello->space == model.arch.space))
    throw ProtocolError("action space offered by the peer does not match the model");
  const bool synchronous = hello->mode == 1;
  const double interval_us = 1e6 / (hello->tick_rate_mhz / 1000.0);

  Agent agent(model, opt.seed, opt.greedy, opt.flicker);
  std::vector<double> latencies;
  std::vector<uint8_t> last_sent;
  double score = 0.0;
  uint64_t digest = 1469598103934665603ULL; // FNV-1a offset basis
  const Clock::time_point t0 = Clock::now();

  auto emit = [&](const Action& a, bool force) {
    auto idx = indices_from_action(a);
    for (uint8_t v : idx) {
      digest ^= v;
      digest *= 1099511628211ULL;
    }
    if (force || idx != last_sent) {
      conn.send(EmulateMsg{us_since(t0), idx});
      last_sent = std::move(idx);
    }
  };

  auto handle_frame = [&](const FrameMsg& fm, Clock::time_point received) {
    Observation obs(fm.width, fm.height);
    obs.pixels = fm.pixels;
    const Action a = agent.act(obs);
    emit(a, synchronous);
    const double lat = std::chrono::duration<double, std::micro>(Clock::now() - received).count();
    latencies.push_back(lat);
    ++report.frames_processed;
  };

  if (synchronous) {
    for (;;) {
      std::optional<Message> msg;
      try {
        msg = conn.receive();
      } catch (const std::exception& e) {
        report.clean = false;
        report.status = std::string("peer lost: ") + e.what();
        break;
      }
      if (!msg) {
        report.clean = false;
        report.status = "peer closed without BYE";
        break;
      }
      if (const auto* fm = std::get_if<FrameMsg>(&*msg)) {
        handle_frame(*fm, Clock::now());
      } else if (const auto* sc = std::get_if<ScoreMsg>(&*msg)) {
        score += sc->delta;
      } else if (std::get_if<ResetMsg>(&*msg)) {
        report.episode_scores.push_back(score);
        score = 0.0;
        agent.reset();
      } else if (std::get_if<ByeMsg>(&*msg)) {
        break;
      }
    }
  } else {
    struct Mailbox {
      std::mutex mu;
      std::condition_variable cv;
      std::optional<FrameMsg> frame;
      Clock::time_point received;
      size_t dropped = 0;
      bool done = false;
      bool clean = true;
      std::string status = "completed";
      std::vector<double> episode_scores;
      double score = 0.0;
    } box;

    std::thread reader([&] {
      try {
        for (;;) {
          auto msg = conn.receive();
          std::lock_guard<std::mutex> lk(box.mu);
          if (!msg) {
            box.clean = false;
            box.status = "peer closed without BYE";
            box.done = true;
            box.cv.notify_all();
            return;
          }
          if (auto* fm = std::get_if<FrameMsg>(&*msg)) {
            if (box.frame) ++box.dropped;
            box.frame = std::move(*fm);
            box.received = Clock::now();
          } else if (const auto* sc = std::get_if<ScoreMsg>(&*msg)) {
            box.score += sc->delta;
          } else if (std::get_if<ResetMsg>(&*msg)) {
            box.episode_scores.push_back(box.score);
            box.score = 0.0;
          } else if (std::get_if<ByeMsg>(&*msg)) {
            box.done = true;
          }
          box.cv.notify_all();
          if (box.done) return;
        }
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lk(box.mu);
        box.clean = false;
        box.status = std::string("peer lost: ") + e.what();
        box.done = true;
        box.cv.notify_all();
      }
    });

    for (;;) {
      FrameMsg fm;
      Clock::time_point received;
      {
        std::unique_lock<std::mutex> lk(box.mu);
        box.cv.wait(lk, [&] { return box.frame.has_value() || box.done; });
        if (!box.frame && box.done) break;
        fm = std::move(*box.frame);
        box.frame.reset();
        received = box.received;
      }
      try {
        handle_frame(fm, received);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lk(box.mu);
        box.clean = false;
        box.status = std::string("send failed: ") + e.what();
        box.done = true;
        break;
      }
    }
    conn.shutdown();
    reader.join();
    report.dropped_frames = box.dropped;
    report.clean = box.clean;
    report.status = box.status;
    report.episode_scores = box.episode_scores;
    score = box.score;
  }
  // a session cut mid-episode still reports the partial score
  if (!report.clean && report.frames_processed > 0) report.episode_scores.push_back(score);
  if (!report.episode_scores.empty()) report.final_score = report.episode_scores.back();

  report.action_digest = digest;
  report.latency.frames = latencies.size();
  if (!latencies.empty()) {
    std::vector<double> sorted = latencies;
    std::sort(sorted.begin(), sorted.end());
    auto pct = [&](double p) {
      size_t r = static_cast<size_t>(std::ceil(p * sorted.size()));
      if (r < 1) r = 1;
      return sorted[std::min(r - 1, sorted.size() - 1)];
    };
    report.latency.p50_us = pct(0.50);
    report.latency.p95_us = pct(0.95);
    report.latency.p99_us = pct(0.99);
    report.latency.max_us = sorted.back();
    for (double l : latencies)
      if (l > interval_us) ++report.latency.over_tick;
  }
  return report;
}

} // namespace clonebench
