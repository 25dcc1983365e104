#pragma once

#include <cstdint>
#include <limits>

namespace clonebench {

// Deterministic generator used everywhere randomness is needed: environment
// schedules, weight init, shuffling, action sampling. The recurrence is
// xorshift64* so trajectories can be reproduced from a seed in any language:
//
//   x ^= x >> 12;  x ^= x << 25;  x ^= x >> 27;
//   output = x * 0x2545F4914F6CDD1D
//
// The raw seed is first mixed through one round of SplitMix64
// (z = (s + 0x9E3779B97F4A7C15); z = (z ^ z>>30) * 0xBF58476D1CE4E5B9;
//  z = (z ^ z>>27) * 0x94D049BB133111EB; z ^= z>>31) so that small seeds
// (0, 1, 2, ...) still produce well-spread states. A mixed state of zero is
// replaced by the SplitMix64 constant since xorshift has no zero orbit.
class Rng64 {
public:
  explicit Rng64(uint64_t seed = 0x853C49E6748FEA9BULL) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t z = seed + 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    state_ = z ? z : 0x9E3779B97F4A7C15ULL;
  }

  uint64_t next() {
    uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545F4914F6CDD1DULL;
  }

  // next() % n. The modulo bias is below 2^-32 for any n that fits in
  // uint32_t, which is far under anything our statistical tests can see.
  uint64_t next_below(uint64_t n) { return n ? next() % n : 0; }

  // 53-bit mantissa in [0, 1).
  double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double next_range(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  bool next_bernoulli(double p) { return next_double() < p; }

  // Derive an independent stream, e.g. one per episode or per layer.
  Rng64 split(uint64_t stream_id) {
    Rng64 child(state_ ^ (0x9E3779B97F4A7C15ULL * (stream_id + 1)));
    return child;
  }

  // std::uniform_random_bit_generator interface, so the generator can feed
  // std::shuffle and friends when exact portability does not matter.
  using result_type = uint64_t;
  static constexpr uint64_t min() { return 0; }
  static constexpr uint64_t max() { return std::numeric_limits<uint64_t>::max(); }
  uint64_t operator()() { return next(); }

private:
  uint64_t state_;
};

// In-place Fisher-Yates using next_below; the canonical shuffle for sample
// ordering so training runs are reproducible from TrainConfig::seed alone.
template <typename T, typename Alloc, template <typename, typename> class Vec>
void shuffle(Vec<T, Alloc>& v, Rng64& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.next_below(i));
    T tmp = v[i - 1];
    v[i - 1] = v[j];
    v[j] = tmp;
  }
}

} // namespace clonebench
