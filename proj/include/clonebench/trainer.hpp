#pragma once

#include <cstdio>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "clonebench/checkpoint.hpp"
#include "clonebench/core.hpp"
#include "clonebench/nn.hpp"
#include "clonebench/parallel.hpp"
#include "clonebench/preprocess.hpp"
#include "clonebench/prng.hpp"

namespace clonebench {

struct TrainConfig {
  double learning_rate = 0.001;
  double l2_weight = 1e-5;
  int epochs = 10;
  int batch_size = 32;
  uint64_t seed = 0;
  DelayOffset delay{0};
  int resize_width = 0;  // 0 keeps the native resolution
  int resize_height = 0;
  bool flicker_merge = false;

  KvMap snapshot() const {
    KvMap m;
    m["learning_rate"] = format_double(learning_rate);
    m["l2_weight"] = format_double(l2_weight);
    m["epochs"] = std::to_string(epochs);
    m["batch_size"] = std::to_string(batch_size);
    m["seed"] = std::to_string(seed);
    m["delay"] = std::to_string(delay.frames);
    m["resize_width"] = std::to_string(resize_width);
    m["resize_height"] = std::to_string(resize_height);
    m["flicker_merge"] = flicker_merge ? "1" : "0";
    return m;
  }
};

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EpochRecord {
  int epoch = 0; // 1-based
  double mean_loss = 0.0;
};

struct TrainResult {
  std::vector<ModelCheckpoint> checkpoints; // one per epoch
  std::vector<EpochRecord> loss_curve;
  size_t samples_per_epoch = 0;
  size_t steps_per_epoch = 0;
  size_t skipped_episodes = 0; // shorter than |delay|
};

inline void write_loss_curve_csv(const std::vector<EpochRecord>& curve,
                                 const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw TrainError("cannot write " + path.string());
  f << "epoch,mean_loss\n";
  for (const auto& r : curve) f << r.epoch << ',' << format_double(r.mean_loss) << '\n';
}

namespace traindetail {

// One (episode, frame) coordinate after the delay shift; the action index
// within the episode is frame + delay for positive delays and frame alone
// for negative ones (where the frame index starts at |delay|).
struct SampleRef {
  uint32_t episode;
  uint32_t frame;
  uint32_t action;
};

} // namespace traindetail

// Behavioural-cloning loop: preprocess once, shuffle sample-level every
// epoch from the config seed, Adam on the summed-head cross entropy, one
// checkpoint per epoch. Bitwise reproducible for a fixed config and build,
// independent of worker count. Episodes shorter than |delay| are skipped;
// training with none left is an error.
inline TrainResult train(const Dataset& dataset, const TrainConfig& config,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  if (dataset.episodes.empty()) throw TrainError("empty dataset");
  if (config.epochs < 1 || config.batch_size < 1)
    throw TrainError("epochs and batch_size must be at least 1");
  const ActionSpace& space = dataset.episodes.front().meta.action_space;
  for (const auto& ep : dataset.episodes)
    if (!(ep.meta.action_space == space))
      throw TrainError("heterogeneous action spaces across episodes");

  // Resolve sample coordinates under the delay shift.
  const int d = config.delay.frames;
  std::vector<traindetail::SampleRef> samples;
  TrainResult result;
  for (size_t e = 0; e < dataset.episodes.size(); ++e) {
    const long n = static_cast<long>(dataset.episodes[e].length());
    if (n <= std::labs(d)) {
      ++result.skipped_episodes;
      continue;
    }
    const long len = n - std::labs(d);
    const long frame0 = d >= 0 ? 0 : -d;
    const long action0 = d >= 0 ? d : 0;
    for (long j = 0; j < len; ++j)
      samples.push_back({static_cast<uint32_t>(e), static_cast<uint32_t>(frame0 + j),
                         static_cast<uint32_t>(action0 + j)});
  }
  if (samples.empty()) throw TrainError("empty dataset after delay shift");

  // Preprocess frames once. When neither flicker merge nor resize applies
  // the samples reference episode pixel buffers directly.
  const Observation& probe = dataset.episodes.front().frames.front();
  const int in_w = config.resize_width > 0 ? config.resize_width : probe.width;
  const int in_h = config.resize_height > 0 ? config.resize_height : probe.height;
  const bool identity = !config.flicker_merge && in_w == probe.width && in_h == probe.height;
  const size_t frame_bytes = static_cast<size_t>(in_w) * in_h * 3;

  std::vector<const uint8_t*> sample_pixels(samples.size());
  std::vector<uint8_t> pool;
  if (identity) {
    for (size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      sample_pixels[i] = dataset.episodes[s.episode].frames[s.frame].pixels.data();
    }
  } else {
    pool.resize(samples.size() * frame_bytes);
    parallel_for(samples.size(), [&](size_t i) {
      const auto& s = samples[i];
      const auto& ep = dataset.episodes[s.episode];
      Observation frame = ep.frames[s.frame];
      if (config.flicker_merge && s.frame > 0) frame = flicker_merge(ep.frames[s.frame - 1], frame);
      if (frame.width != in_w || frame.height != in_h) frame = resize(frame, in_w, in_h);
      std::copy(frame.pixels.begin(), frame.pixels.end(), pool.begin() + i * frame_bytes);
    });
    for (size_t i = 0; i < samples.size(); ++i) sample_pixels[i] = pool.data() + i * frame_bytes;
  }

  // Model, optimizer, shuffle stream.
  PolicyModel model(build_nature_cnn(3, in_h, in_w, space));
  Rng64 rng(config.seed);
  init_weights(model, rng);
  AdamState<float> adam(model.weights.size());
  AdamConfig adam_cfg;
  adam_cfg.lr = config.learning_rate;

  const size_t total = samples.size();
  const size_t bs = static_cast<size_t>(config.batch_size);
  result.samples_per_epoch = total;
  result.steps_per_epoch = (total + bs - 1) / bs;

  std::vector<uint32_t> order(total);
  for (size_t i = 0; i < total; ++i) order[i] = static_cast<uint32_t>(i);

  ForwardCache<float> cache;
  std::vector<float> grad;
  const size_t input_one = static_cast<size_t>(3) * in_h * in_w;
  std::vector<float> batch_input(bs * input_one);
  std::vector<Action> batch_actions(bs);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle(order, rng);
    double loss_sum = 0.0;
    for (size_t start = 0; start < total; start += bs) {
      const size_t b = std::min(bs, total - start);
      batch_actions.resize(b);
      parallel_for(b, [&](size_t k) {
        const auto& s = samples[order[start + k]];
        const uint8_t* px = sample_pixels[order[start + k]];
        // planar conversion straight from the stored bytes
        float* dst = batch_input.data() + k * input_one;
        const size_t hw = static_cast<size_t>(in_h) * in_w;
        constexpr float inv = 1.0f / 255.0f;
        for (size_t i = 0; i < hw; ++i)
          for (size_t c = 0; c < 3; ++c) dst[c * hw + i] = static_cast<float>(px[i * 3 + c]) * inv;
        batch_actions[k] = dataset.episodes[s.episode].actions[s.action];
      });
      const double loss = loss_and_grad(model, batch_input.data(), static_cast<int>(b),
                                        batch_actions, config.l2_weight, cache, grad);
      const AdamResult ar = adam_step(model.weights, grad, adam, adam_cfg);
      if (!ar.ok)
        throw TrainError("non-finite gradient component at index " +
                         std::to_string(ar.bad_index) + "; step aborted");
      loss_sum += loss * static_cast<double>(b);
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(total)};
    result.loss_curve.push_back(rec);

    ModelCheckpoint ckpt;
    ckpt.arch = model.arch;
    ckpt.weights = model.weights;
    ckpt.config = config.snapshot();
    ckpt.seed = config.seed;
    ckpt.epoch = epoch;
    result.checkpoints.push_back(std::move(ckpt));
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

} // namespace clonebench
