#pragma once

#include <vector>

#include "clonebench/core.hpp"
#include "clonebench/nn.hpp"
#include "clonebench/preprocess.hpp"
#include "clonebench/prng.hpp"

namespace clonebench {

namespace policydetail {

template <typename T>
std::vector<T> prepare_input(const ModelArch& arch, const Observation& obs) {
  if (obs.width == arch.in_w && obs.height == arch.in_h) return to_model_input<T>(obs);
  return to_model_input<T>(resize(obs, arch.in_w, arch.in_h));
}

inline int sample_head(const float* probs, int n, Rng64& rng) {
  const double u = rng.next_double();
  double cdf = 0.0;
  for (int i = 0; i < n; ++i) {
    cdf += static_cast<double>(probs[i]);
    if (u < cdf) return i;
  }
  return n - 1; // rounding pushed the walked mass below 1
}

inline int argmax_head(const float* logits, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (logits[i] > logits[best]) best = i; // ties keep the lowest index
  return best;
}

} // namespace policydetail

// Samples one index per head from its softmax distribution, heads
// independent; the default way a trained model acts.
inline Action act_sample(const PolicyModel& model, const Observation& obs, Rng64& rng,
                         ForwardCache<float>* cache = nullptr) {
  ForwardCache<float> local;
  ForwardCache<float>& c = cache ? *cache : local;
  const auto input = policydetail::prepare_input<float>(model.arch, obs);
  const float* logits = forward(model, input.data(), 1, c);
  Action a;
  std::vector<float> probs(model.arch.total_logits());
  int off = 0;
  for (const auto& v : model.arch.space.variables) {
    softmax_head(logits + off, v.cardinality, probs.data());
    a.indices.push_back(policydetail::sample_head(probs.data(), v.cardinality, rng));
    off += v.cardinality;
  }
  return a;
}

// Per-head argmax with lowest-index tie-break; kept for comparison runs.
inline Action act_greedy(const PolicyModel& model, const Observation& obs,
                         ForwardCache<float>* cache = nullptr) {
  ForwardCache<float> local;
  ForwardCache<float>& c = cache ? *cache : local;
  const auto input = policydetail::prepare_input<float>(model.arch, obs);
  const float* logits = forward(model, input.data(), 1, c);
  Action a;
  int off = 0;
  for (const auto& v : model.arch.space.variables) {
    a.indices.push_back(policydetail::argmax_head(logits + off, v.cardinality));
    off += v.cardinality;
  }
  return a;
}

// Stateful wrapper owning the rng, the forward cache and the optional
// flicker-merge history, so rollout loops stay allocation-light.
class Agent {
public:
  Agent(PolicyModel model, uint64_t seed, bool greedy = false, bool flicker = false)
      : model_(std::move(model)), rng_(seed), greedy_(greedy), flicker_(flicker) {}

  void reset() { has_prev_ = false; }

  Action act(const Observation& obs) {
    const Observation* frame = &obs;
    Observation merged;
    if (flicker_) {
      if (has_prev_) {
        merged = flicker_merge(prev_, obs);
        frame = &merged;
      }
      prev_ = obs;
      has_prev_ = true;
    }
    return greedy_ ? act_greedy(model_, *frame, &cache_) : act_sample(model_, *frame, rng_, &cache_);
  }

  const PolicyModel& model() const { return model_; }

private:
  PolicyModel model_;
  Rng64 rng_;
  ForwardCache<float> cache_;
  Observation prev_;
  bool has_prev_ = false;
  bool greedy_ = false;
  bool flicker_ = false;
};

} // namespace clonebench
