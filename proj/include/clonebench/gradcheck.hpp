#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "clonebench/nn.hpp"
#include "clonebench/prng.hpp"

namespace clonebench {

struct GradCheckLayer {
  std::string layer;
  size_t checked = 0;
  size_t excluded = 0; // relu-kink coordinates, reported but not scored
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckLayer> layers;
  double max_rel_err = 0.0;
  size_t excluded = 0;
  double tolerance = 0.0;
  bool pass = false;
};

namespace gcdetail {

// Snapshot of every relu activation sign; if a finite-difference probe
// flips any sign the loss is not differentiable along that coordinate and
// the comparison is meaningless.
template <typename T>
std::vector<uint8_t> relu_masks(const ModelArch& arch, const ForwardCache<T>& cache) {
  std::vector<uint8_t> masks;
  for (size_t li = 0; li < arch.layers.size(); ++li) {
    const auto& l = arch.layers[li];
    if (l.kind != LayerSpec::Kind::relu) continue;
    const size_t n = (l.in_features ? static_cast<size_t>(l.in_features)
                                    : static_cast<size_t>(l.in_c) * l.in_h * l.in_w) *
                     static_cast<size_t>(cache.batch);
    const T* out = cache.out_of(li);
    for (size_t i = 0; i < n; ++i) masks.push_back(out[i] > T(0) ? 1 : 0);
  }
  return masks;
}

} // namespace gcdetail

// Central-difference verification of loss_and_grad in double precision.
// Layers with at most max_coords_per_layer parameters are checked
// exhaustively, larger ones on a seeded random subset. Coordinates whose
// probe crosses a relu kink are excluded from the error and counted.
inline GradCheckReport grad_check(const Network<double>& net, const double* input, int batch,
                                  const std::vector<Action>& actions, double l2, double eps,
                                  double tolerance, size_t max_coords_per_layer, Rng64& rng) {
  GradCheckReport report;
  report.tolerance = tolerance;

  ForwardCache<double> cache;
  std::vector<double> analytic;
  loss_and_grad(net, input, batch, actions, l2, cache, analytic);

  Network<double> probe = net;
  ForwardCache<double> pcache;

  for (const auto& l : net.arch.layers) {
    if (l.param_count() == 0) continue;
    GradCheckLayer lr;
    lr.layer = l.describe();

    std::vector<size_t> coords;
    if (l.param_count() <= max_coords_per_layer) {
      coords.resize(l.param_count());
      for (size_t i = 0; i < coords.size(); ++i) coords[i] = l.offset + i;
    } else {
      std::set<size_t> picked;
      while (picked.size() < max_coords_per_layer)
        picked.insert(l.offset + static_cast<size_t>(rng.next_below(l.param_count())));
      coords.assign(picked.begin(), picked.end());
    }

    for (size_t ci : coords) {
      const double w0 = probe.weights[ci];
      probe.weights[ci] = w0 + eps;
      const double lp = loss_only(probe, input, batch, actions, l2, pcache);
      const auto masks_p = gcdetail::relu_masks(probe.arch, pcache);
      probe.weights[ci] = w0 - eps;
      const double lm = loss_only(probe, input, batch, actions, l2, pcache);
      const auto masks_m = gcdetail::relu_masks(probe.arch, pcache);
      probe.weights[ci] = w0;

      if (masks_p != masks_m) {
        ++lr.excluded;
        continue;
      }
      const double fd = (lp - lm) / (2.0 * eps);
      const double ga = analytic[ci];
      const double denom = std::max({std::abs(ga), std::abs(fd), 1e-8});
      const double rel = std::abs(ga - fd) / denom;
      if (rel > lr.max_rel_err) lr.max_rel_err = rel;
      ++lr.checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, lr.max_rel_err);
    report.excluded += lr.excluded;
    report.layers.push_back(std::move(lr));
  }
  report.pass = report.max_rel_err < tolerance;
  return report;
}

} // namespace clonebench
