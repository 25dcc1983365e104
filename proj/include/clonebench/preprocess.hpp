#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "clonebench/core.hpp"

namespace clonebench {

// Interpolation is a parameter so alternates can be added without touching
// call sites; bilinear is the only implemented method.
enum class ResizeMethod { bilinear };

// Half-pixel-centered bilinear resample, each channel independent. Output
// values are clamped to [0,255] and rounded half-away-from-zero, so
// resizing to the source dimensions reproduces the source bit for bit.
inline Observation resize(const Observation& src, int target_w, int target_h,
                          ResizeMethod method = ResizeMethod::bilinear) {
  (void)method;
  if (target_w < 1 || target_h < 1)
    throw std::invalid_argument("resize: target dimensions must be >= 1");
  if (!src.valid()) throw std::invalid_argument("resize: malformed source observation");
  if (target_w == src.width && target_h == src.height) return src;

  Observation dst(target_w, target_h);
  const double sx = static_cast<double>(src.width) / target_w;
  const double sy = static_cast<double>(src.height) / target_h;
  for (int y = 0; y < target_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    if (fy < 0) fy = 0;
    if (fy > src.height - 1) fy = src.height - 1;
    const int y0 = static_cast<int>(fy);
    const int y1 = y0 + 1 < src.height ? y0 + 1 : y0;
    const double wy = fy - y0;
    for (int x = 0; x < target_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      if (fx < 0) fx = 0;
      if (fx > src.width - 1) fx = src.width - 1;
      const int x0 = static_cast<int>(fx);
      const int x1 = x0 + 1 < src.width ? x0 + 1 : x0;
      const double wx = fx - x0;
      const uint8_t* p00 = src.at(x0, y0);
      const uint8_t* p10 = src.at(x1, y0);
      const uint8_t* p01 = src.at(x0, y1);
      const uint8_t* p11 = src.at(x1, y1);
      uint8_t* out = dst.at(x, y);
      for (int c = 0; c < 3; ++c) {
        const double top = p00[c] + (p10[c] - p00[c]) * wx;
        const double bot = p01[c] + (p11[c] - p01[c]) * wx;
        double v = std::round(top + (bot - top) * wy);
        if (v < 0) v = 0;
        if (v > 255) v = 255;
        out[c] = static_cast<uint8_t>(v);
      }
    }
  }
  return dst;
}

inline Observation resize_bilinear(const Observation& src, int target_w, int target_h) {
  return resize(src, target_w, target_h, ResizeMethod::bilinear);
}

// Per-byte maximum of two frames; removes the sprite flicker of renderers
// that draw alternating objects on consecutive frames.
inline Observation flicker_merge(const Observation& a, const Observation& b) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("flicker_merge: dimension mismatch");
  Observation out(a.width, a.height);
  for (size_t i = 0; i < out.pixels.size(); ++i)
    out.pixels[i] = a.pixels[i] > b.pixels[i] ? a.pixels[i] : b.pixels[i];
  return out;
}

// Interleaved RGB bytes to planar channels-height-width reals in [0, 1].
template <typename T>
void to_model_input(const Observation& frame, T* out) {
  const size_t hw = static_cast<size_t>(frame.width) * frame.height;
  constexpr T inv = static_cast<T>(1) / static_cast<T>(255);
  const uint8_t* px = frame.pixels.data();
  for (size_t i = 0; i < hw; ++i)
    for (size_t c = 0; c < 3; ++c) out[c * hw + i] = static_cast<T>(px[i * 3 + c]) * inv;
}

template <typename T = float>
std::vector<T> to_model_input(const Observation& frame) {
  std::vector<T> out(3 * static_cast<size_t>(frame.width) * frame.height);
  to_model_input(frame, out.data());
  return out;
}

// Re-pairs frame i with action i+d. Unmatched boundary frames are dropped
// rather than padded: for d >= 0 the last d frames and first d actions go,
// for d < 0 the first |d| frames and last |d| actions. Result length is
// N - |d| and the applied offset accumulates in meta.
inline Episode shift_actions(const Episode& ep, DelayOffset delay) {
  const long n = static_cast<long>(ep.length());
  const long d = delay.frames;
  if (std::labs(d) >= n)
    throw std::invalid_argument("shift_actions: |delay| must be below the episode length");

  Episode out;
  out.meta = ep.meta;
  out.meta.applied_delay += static_cast<int>(d);
  const long len = n - std::labs(d);
  out.frames.reserve(len);
  out.actions.reserve(len);
  const long frame_begin = d >= 0 ? 0 : -d;
  const long action_begin = d >= 0 ? d : 0;
  for (long j = 0; j < len; ++j) {
    out.frames.push_back(ep.frames[static_cast<size_t>(frame_begin + j)]);
    out.actions.push_back(ep.actions[static_cast<size_t>(action_begin + j)]);
  }
  return out;
}

inline Dataset shift_actions(const Dataset& ds, DelayOffset delay) {
  Dataset out;
  out.episodes.reserve(ds.episodes.size());
  for (const auto& ep : ds.episodes) out.episodes.push_back(shift_actions(ep, delay));
  return out;
}

} // namespace clonebench
