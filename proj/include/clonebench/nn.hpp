#pragma once

#include <cmath>
#include <cstring>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "clonebench/core.hpp"
#include "clonebench/gemm.hpp"
#include "clonebench/parallel.hpp"
#include "clonebench/prng.hpp"

namespace clonebench {

// ---------------------------------------------------------------------------
// Architecture description
// ---------------------------------------------------------------------------

struct LayerSpec {
  enum class Kind { conv2d, dense, relu, flatten };
  Kind kind;

  // conv2d parameters
  int out_channels = 0, kernel = 0, stride = 0;
  // dense parameters
  int units = 0;

  // inferred shapes; conv/relu-3d/flatten use c,h,w, dense/relu-1d use features
  int in_c = 0, in_h = 0, in_w = 0;
  int out_c = 0, out_h = 0, out_w = 0;
  int in_features = 0, out_features = 0;

  // flat weight vector layout: [weights..., biases...] starting at offset
  size_t offset = 0;
  size_t weight_len = 0;
  size_t bias_len = 0;
  size_t param_count() const { return weight_len + bias_len; }

  std::string describe() const {
    switch (kind) {
      case Kind::conv2d:
        return "conv2d " + std::to_string(out_channels) + " " + std::to_string(kernel) + " " +
               std::to_string(stride);
      case Kind::dense: return "dense " + std::to_string(units);
      case Kind::relu: return "relu";
      case Kind::flatten: return "flatten";
    }
    return "?";
  }
};

struct ModelArch {
  int in_c = 0, in_h = 0, in_w = 0;
  ActionSpace space;
  std::vector<LayerSpec> layers;
  size_t param_count = 0;

  int total_logits() const { return space.total_logits(); }

  bool operator==(const ModelArch& o) const {
    if (in_c != o.in_c || in_h != o.in_h || in_w != o.in_w || !(space == o.space) ||
        layers.size() != o.layers.size())
      return false;
    for (size_t i = 0; i < layers.size(); ++i)
      if (layers[i].describe() != o.layers[i].describe()) return false;
    return true;
  }
};

struct BuildError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace archdetail {

inline int conv_out(int in, int kernel, int stride) {
  return (in - kernel) / stride + 1; // no padding
}

// Walks the layer kinds, infers every shape and assigns weight offsets.
inline ModelArch resolve(int in_c, int in_h, int in_w, ActionSpace space,
                         std::vector<LayerSpec> kinds) {
  ModelArch arch;
  arch.in_c = in_c;
  arch.in_h = in_h;
  arch.in_w = in_w;
  arch.space = std::move(space);

  bool spatial = true;
  int c = in_c, h = in_h, w = in_w;
  int features = 0;
  size_t offset = 0;
  for (auto& l : kinds) {
    switch (l.kind) {
      case LayerSpec::Kind::conv2d: {
        if (!spatial) throw BuildError("conv2d after flatten");
        l.in_c = c; l.in_h = h; l.in_w = w;
        l.out_c = l.out_channels;
        l.out_h = conv_out(h, l.kernel, l.stride);
        l.out_w = conv_out(w, l.kernel, l.stride);
        if (l.out_h < 1 || l.out_w < 1)
          throw BuildError("input too small: conv " + std::to_string(l.kernel) + "x" +
                           std::to_string(l.kernel) + "/" + std::to_string(l.stride) +
                           " on " + std::to_string(h) + "x" + std::to_string(w));
        l.weight_len = static_cast<size_t>(l.out_c) * c * l.kernel * l.kernel;
        l.bias_len = static_cast<size_t>(l.out_c);
        c = l.out_c; h = l.out_h; w = l.out_w;
        break;
      }
      case LayerSpec::Kind::relu: {
        if (spatial) { l.in_c = l.out_c = c; l.in_h = l.out_h = h; l.in_w = l.out_w = w; }
        else { l.in_features = l.out_features = features; }
        break;
      }
      case LayerSpec::Kind::flatten: {
        if (!spatial) throw BuildError("flatten applied twice");
        l.in_c = c; l.in_h = h; l.in_w = w;
        features = c * h * w;
        l.out_features = features;
        spatial = false;
        break;
      }
      case LayerSpec::Kind::dense: {
        if (spatial) throw BuildError("dense before flatten");
        l.in_features = features;
        l.out_features = l.units;
        l.weight_len = static_cast<size_t>(l.units) * features;
        l.bias_len = static_cast<size_t>(l.units);
        features = l.units;
        break;
      }
    }
    l.offset = offset;
    offset += l.param_count();
    arch.layers.push_back(l);
  }
  if (spatial) throw BuildError("network never flattens to a feature vector");
  if (features != arch.total_logits())
    throw BuildError("final layer width " + std::to_string(features) +
                     " does not match action space logits " +
                     std::to_string(arch.total_logits()));
  arch.param_count = offset;
  return arch;
}

} // namespace archdetail

inline LayerSpec conv2d(int out_channels, int kernel, int stride) {
  LayerSpec l; l.kind = LayerSpec::Kind::conv2d;
  l.out_channels = out_channels; l.kernel = kernel; l.stride = stride;
  return l;
}
inline LayerSpec relu() { LayerSpec l; l.kind = LayerSpec::Kind::relu; return l; }
inline LayerSpec flatten() { LayerSpec l; l.kind = LayerSpec::Kind::flatten; return l; }
inline LayerSpec dense(int units) {
  LayerSpec l; l.kind = LayerSpec::Kind::dense; l.units = units;
  return l;
}

inline ModelArch make_arch(int in_c, int in_h, int in_w, const ActionSpace& space,
                           std::vector<LayerSpec> kinds) {
  return archdetail::resolve(in_c, in_h, in_w, space, std::move(kinds));
}

// The three-conv stack from the deep Q-learning lineage, one logit group
// per action variable on the output layer.
inline ModelArch build_nature_cnn(int in_c, int in_h, int in_w, const ActionSpace& space) {
  return make_arch(in_c, in_h, in_w, space,
                   {conv2d(32, 8, 4), relu(), conv2d(64, 4, 2), relu(), conv2d(64, 3, 1), relu(),
                    flatten(), dense(512), relu(), dense(space.total_logits())});
}

// ---------------------------------------------------------------------------
// Network: arch + flat weights
// ---------------------------------------------------------------------------

template <typename T>
struct Network {
  ModelArch arch;
  std::vector<T> weights;

  explicit Network(ModelArch a = {}) : arch(std::move(a)), weights(arch.param_count, T(0)) {}

  template <typename U>
  Network<U> cast() const {
    Network<U> out(arch);
    for (size_t i = 0; i < weights.size(); ++i) out.weights[i] = static_cast<U>(weights[i]);
    return out;
  }
};

using PolicyModel = Network<float>;

// Fan-in scaled uniform init, bound sqrt(1/fan_in); biases stay zero.
template <typename T>
void init_weights(Network<T>& net, Rng64& rng) {
  for (const auto& l : net.arch.layers) {
    if (l.weight_len == 0) continue;
    size_t fan_in = l.kind == LayerSpec::Kind::conv2d
                        ? static_cast<size_t>(l.in_c) * l.kernel * l.kernel
                        : static_cast<size_t>(l.in_features);
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (size_t i = 0; i < l.weight_len; ++i)
      net.weights[l.offset + i] = static_cast<T>(rng.next_range(-bound, bound));
    for (size_t i = 0; i < l.bias_len; ++i) net.weights[l.offset + l.weight_len + i] = T(0);
  }
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

template <typename T>
struct ForwardCache {
  int batch = 0;
  const T* input = nullptr;         // caller's batch; must stay alive through backward
  std::vector<std::vector<T>> act;  // owning layers only; relu/flatten alias their producer
  std::vector<int> owner;           // owner[li]: layer whose act buffer holds li's output, -1 = input
  std::vector<std::vector<T>> cols; // im2col buffers per conv layer, [B][K x out_hw]
  std::vector<PackedA<T>> wpack;    // per-layer packed weights, refreshed per call
  std::vector<T> bwd_cur, bwd_prev; // backward scratch, reused across batches
  std::vector<T> dw_partial;        // per-chunk weight-gradient partials

  const T* out_of(size_t li) const {
    const int o = owner[li];
    return o < 0 ? input : act[static_cast<size_t>(o)].data();
  }
  T* mutable_out_of(size_t li) {
    return act[static_cast<size_t>(owner[li])].data();
  }

  void ensure(const ModelArch& arch, int B) {
    batch = B;
    act.resize(arch.layers.size());
    cols.resize(arch.layers.size());
    wpack.resize(arch.layers.size());
    owner.assign(arch.layers.size(), -1);
    int prev_owner = -1;
    for (size_t li = 0; li < arch.layers.size(); ++li) {
      const auto& l = arch.layers[li];
      switch (l.kind) {
        case LayerSpec::Kind::conv2d: {
          act[li].resize(static_cast<size_t>(l.out_c) * l.out_h * l.out_w * B);
          if (li != 0) {
            // the first conv's im2col is regenerated from the input during
            // backward instead of being kept: it is by far the largest
            const size_t col_rows = static_cast<size_t>(l.in_c) * l.kernel * l.kernel;
            cols[li].resize(col_rows * l.out_h * l.out_w * B);
          }
          owner[li] = static_cast<int>(li);
          break;
        }
        case LayerSpec::Kind::dense: {
          act[li].resize(static_cast<size_t>(l.out_features) * B);
          owner[li] = static_cast<int>(li);
          break;
        }
        case LayerSpec::Kind::relu: {
          if (prev_owner < 0) { // relu straight on the input: materialise
            const size_t n = l.in_features
                                 ? static_cast<size_t>(l.in_features)
                                 : static_cast<size_t>(l.in_c) * l.in_h * l.in_w;
            act[li].resize(n * B);
            owner[li] = static_cast<int>(li);
          } else {
            owner[li] = prev_owner; // applied in place
          }
          break;
        }
        case LayerSpec::Kind::flatten: {
          owner[li] = prev_owner; // planar layout already matches, pure alias
          break;
        }
      }
      prev_owner = owner[li];
    }
  }
};

namespace nndetail {

template <typename T>
void im2col(const T* in, int c_in, int h_in, int w_in, int kernel, int stride, int out_h,
            int out_w, T* col) {
  const size_t ohw = static_cast<size_t>(out_h) * out_w;
  for (int c = 0; c < c_in; ++c)
    for (int ky = 0; ky < kernel; ++ky)
      for (int kx = 0; kx < kernel; ++kx) {
        T* row = col + ((static_cast<size_t>(c) * kernel + ky) * kernel + kx) * ohw;
        for (int oy = 0; oy < out_h; ++oy) {
          const T* src = in + (static_cast<size_t>(c) * h_in + oy * stride + ky) * w_in + kx;
          T* dst = row + static_cast<size_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) dst[ox] = src[static_cast<size_t>(ox) * stride];
        }
      }
}

// col rows may live inside a larger matrix: ldcol is the row stride.
template <typename T>
void col2im_add(const T* col, size_t ldcol, int c_in, int h_in, int w_in, int kernel, int stride,
                int out_h, int out_w, T* in_grad) {
  for (int c = 0; c < c_in; ++c)
    for (int ky = 0; ky < kernel; ++ky)
      for (int kx = 0; kx < kernel; ++kx) {
        const T* row = col + ((static_cast<size_t>(c) * kernel + ky) * kernel + kx) * ldcol;
        for (int oy = 0; oy < out_h; ++oy) {
          T* dst = in_grad + (static_cast<size_t>(c) * h_in + oy * stride + ky) * w_in + kx;
          const T* src = row + static_cast<size_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) dst[static_cast<size_t>(ox) * stride] += src[ox];
        }
      }
}

} // namespace nndetail

// Runs the batch through the stack and returns the logits, one row per
// sample, heads concatenated in action-variable order; the pointer stays
// valid until the next forward on this cache. relu applies in place and
// flatten aliases, so the stack touches each activation buffer once.
// Deterministic for a fixed build and worker count.
template <typename T>
const T* forward(const Network<T>& net, const T* input, int B, ForwardCache<T>& cache) {
  const ModelArch& arch = net.arch;
  cache.ensure(arch, B);
  cache.input = input;

  const T* cur = input;
  for (size_t li = 0; li < arch.layers.size(); ++li) {
    const auto& l = arch.layers[li];
    switch (l.kind) {
      case LayerSpec::Kind::conv2d: {
        T* out = cache.act[li].data();
        const size_t in_one = static_cast<size_t>(l.in_c) * l.in_h * l.in_w;
        const size_t ohw = static_cast<size_t>(l.out_h) * l.out_w;
        const size_t out_one = static_cast<size_t>(l.out_c) * ohw;
        const size_t col_rows = static_cast<size_t>(l.in_c) * l.kernel * l.kernel;
        const T* W = net.weights.data() + l.offset;
        const T* bias = W + l.weight_len;
        const bool keep_cols = li != 0;
        T* colbuf = keep_cols ? cache.cols[li].data() : nullptr;
        PackedA<T>& wp = cache.wpack[li];
        wp.pack_rowmajor(W, l.out_c, static_cast<int>(col_rows));
        parallel_for(static_cast<size_t>(B), [&](size_t b) {
          thread_local std::vector<T> col_tmp;
          T* col;
          if (keep_cols) {
            col = colbuf + b * col_rows * ohw;
          } else {
            col_tmp.resize(col_rows * ohw);
            col = col_tmp.data();
          }
          nndetail::im2col(cur + b * in_one, l.in_c, l.in_h, l.in_w, l.kernel, l.stride, l.out_h,
                           l.out_w, col);
          auto& colpack = gemmdetail::scratch_b<T>();
          colpack.pack_rowmajor(col, static_cast<int>(col_rows), static_cast<int>(ohw));
          T* y = out + b * out_one;
          gemm_packed(wp, colpack, y, false, B == 1);
          for (int oc = 0; oc < l.out_c; ++oc) {
            const T bv = bias[oc];
            T* yr = y + static_cast<size_t>(oc) * ohw;
            for (size_t i = 0; i < ohw; ++i) yr[i] += bv;
          }
        });
        cur = out;
        break;
      }
      case LayerSpec::Kind::relu: {
        const size_t n =
            (l.in_features ? static_cast<size_t>(l.in_features)
                           : static_cast<size_t>(l.in_c) * l.in_h * l.in_w) *
            static_cast<size_t>(B);
        if (cache.owner[li] == static_cast<int>(li)) { // materialised (input was the source)
          T* out = cache.act[li].data();
          for (size_t i = 0; i < n; ++i) out[i] = cur[i] > T(0) ? cur[i] : T(0);
          cur = out;
        } else {
          T* out = cache.mutable_out_of(li);
          for (size_t i = 0; i < n; ++i)
            if (out[i] < T(0)) out[i] = T(0);
          cur = out;
        }
        break;
      }
      case LayerSpec::Kind::flatten: {
        break; // alias: planar [c][h][w] already reads as a feature vector
      }
      case LayerSpec::Kind::dense: {
        T* out = cache.act[li].data();
        const int in_f = l.in_features, out_f = l.out_features;
        const T* W = net.weights.data() + l.offset;
        const T* bias = W + l.weight_len;
        for (int b = 0; b < B; ++b)
          std::copy(bias, bias + out_f, out + static_cast<size_t>(b) * out_f);
        if (B == 1) {
          gemv_nt(out_f, in_f, cur, W, out, true);
        } else {
          const int nchunks = std::min(B, WorkerPool::instance().thread_count());
          parallel_for(static_cast<size_t>(nchunks), [&](size_t c) {
            const int b0 = static_cast<int>(c) * B / nchunks;
            const int b1 = static_cast<int>(c + 1) * B / nchunks;
            if (b0 < b1)
              gemm_nt_direct(b1 - b0, out_f, in_f, cur + static_cast<size_t>(b0) * in_f, in_f, W,
                             in_f, out + static_cast<size_t>(b0) * out_f, out_f, true);
          });
        }
        cur = out;
        break;
      }
    }
  }
  return cache.out_of(arch.layers.size() - 1);
}

// Backpropagates d(loss)/d(logits) through the cached forward pass and adds
// the result into grad (caller zeroes it when starting fresh). Weight
// gradient partials reduce in a fixed chunk order.
template <typename T>
void backward(const Network<T>& net, ForwardCache<T>& cache, const std::vector<T>& dlogits,
              std::vector<T>& grad) {
  const ModelArch& arch = net.arch;
  const int B = cache.batch;
  grad.resize(net.weights.size(), T(0));

  std::vector<T>& dcur = cache.bwd_cur;
  std::vector<T>& dprev = cache.bwd_prev;
  dcur.assign(dlogits.begin(), dlogits.end());

  for (size_t li = arch.layers.size(); li-- > 0;) {
    const auto& l = arch.layers[li];
    const T* layer_in = li == 0 ? cache.input : cache.out_of(li - 1);
    switch (l.kind) {
      case LayerSpec::Kind::dense: {
        const int in_f = l.in_features, out_f = l.out_features;
        const T* W = net.weights.data() + l.offset;
        T* dW = grad.data() + l.offset;
        T* db = dW + l.weight_len;
        // dW[out][in] += dY^T X, k-reduction over the batch in order
        gemm(GemmLayout::tn, out_f, in_f, B, dcur.data(), layer_in, dW, true, true);
        for (int b = 0; b < B; ++b) {
          const T* dy = dcur.data() + static_cast<size_t>(b) * out_f;
          for (int o = 0; o < out_f; ++o) db[o] += dy[o];
        }
        dprev.resize(static_cast<size_t>(B) * in_f);
        gemm(GemmLayout::nn, B, in_f, out_f, dcur.data(), W, dprev.data(), false, true);
        dcur.swap(dprev);
        break;
      }
      case LayerSpec::Kind::relu: {
        const T* out = cache.out_of(li);
        for (size_t i = 0; i < dcur.size(); ++i)
          if (!(out[i] > T(0))) dcur[i] = T(0); // mask in place
        break;
      }
      case LayerSpec::Kind::flatten: {
        break;
      }
      case LayerSpec::Kind::conv2d: {
        const size_t ohw = static_cast<size_t>(l.out_h) * l.out_w;
        const size_t out_one = static_cast<size_t>(l.out_c) * ohw;
        const size_t col_rows = static_cast<size_t>(l.in_c) * l.kernel * l.kernel;
        const size_t in_one = static_cast<size_t>(l.in_c) * l.in_h * l.in_w;
        const T* W = net.weights.data() + l.offset;
        T* dW = grad.data() + l.offset;
        const bool keep_cols = li != 0;
        const T* colbuf = keep_cols ? cache.cols[li].data() : nullptr;
        const bool need_dx = li != 0;

        if (need_dx) {
          dprev.assign(static_cast<size_t>(B) * in_one, T(0));
          cache.wpack[li].pack_colmajor(W, static_cast<int>(col_rows), l.out_c); // logical W^T
          parallel_for(static_cast<size_t>(B), [&](size_t b) {
            thread_local std::vector<T> dcol;
            dcol.resize(col_rows * ohw);
            auto& dypack = gemmdetail::scratch_b<T>();
            dypack.pack_rowmajor(dcur.data() + b * out_one, l.out_c, static_cast<int>(ohw));
            gemm_packed(cache.wpack[li], dypack, dcol.data(), false, B == 1);
            nndetail::col2im_add(dcol.data(), ohw, l.in_c, l.in_h, l.in_w, l.kernel, l.stride,
                                 l.out_h, l.out_w, dprev.data() + b * in_one);
          });
        }

        if (ohw >= 200 || !keep_cols) {
          // long rows: unpacked dot-product kernel, one sample chunk per
          // worker, partials reduced in chunk order; the first conv
          // regenerates its im2col from the input as it goes
          const int nchunks = std::min(B, WorkerPool::instance().thread_count());
          cache.dw_partial.assign(static_cast<size_t>(nchunks) * l.param_count(), T(0));
          parallel_for(static_cast<size_t>(nchunks), [&](size_t c) {
            const int b0 = static_cast<int>(c) * B / nchunks;
            const int b1 = static_cast<int>(c + 1) * B / nchunks;
            T* dwp = cache.dw_partial.data() + c * l.param_count();
            T* dbp = dwp + l.weight_len;
            thread_local std::vector<T> col_tmp;
            for (int b = b0; b < b1; ++b) {
              const T* dy = dcur.data() + static_cast<size_t>(b) * out_one;
              const T* col;
              if (keep_cols) {
                col = colbuf + static_cast<size_t>(b) * col_rows * ohw;
              } else {
                col_tmp.resize(col_rows * ohw);
                nndetail::im2col(cache.input + static_cast<size_t>(b) * in_one, l.in_c, l.in_h,
                                 l.in_w, l.kernel, l.stride, l.out_h, l.out_w, col_tmp.data());
                col = col_tmp.data();
              }
              gemm_nt_direct(l.out_c, static_cast<int>(col_rows), static_cast<int>(ohw), dy, ohw,
                             col, ohw, dwp, col_rows, true);
              for (int oc = 0; oc < l.out_c; ++oc) {
                T s = T(0);
                const T* dyr = dy + static_cast<size_t>(oc) * ohw;
                for (size_t i = 0; i < ohw; ++i) s += dyr[i];
                dbp[oc] += s;
              }
            }
          });
          for (int c = 0; c < nchunks; ++c) {
            const T* src = cache.dw_partial.data() + static_cast<size_t>(c) * l.param_count();
            for (size_t i = 0; i < l.param_count(); ++i) dW[i] += src[i];
          }
        } else {
          // short rows: one packed product with k over (sample, position)
          T* db = dW + l.weight_len;
          auto& dy_all = gemmdetail::scratch_a<T>();
          thread_local PackedB<T> col_all;
          dy_all.pack_batched(dcur.data(), l.out_c, B, static_cast<int>(ohw), out_one);
          col_all.pack_batched_trans(colbuf, B, static_cast<int>(ohw), static_cast<int>(col_rows),
                                     col_rows * ohw);
          gemm_packed(dy_all, col_all, dW, true, true);
          for (int b = 0; b < B; ++b) {
            const T* dy = dcur.data() + static_cast<size_t>(b) * out_one;
            for (int oc = 0; oc < l.out_c; ++oc) {
              T s = T(0);
              const T* dyr = dy + static_cast<size_t>(oc) * ohw;
              for (size_t i = 0; i < ohw; ++i) s += dyr[i];
              db[oc] += s;
            }
          }
        }
        if (need_dx) dcur.swap(dprev);
        break;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// Per-head softmax over a logits row; numerically shifted by the row max.
template <typename T>
void softmax_head(const T* logits, int n, T* probs) {
  T mx = logits[0];
  for (int i = 1; i < n; ++i)
    if (logits[i] > mx) mx = logits[i];
  T sum = T(0);
  for (int i = 0; i < n; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  const T inv = T(1) / sum;
  for (int i = 0; i < n; ++i) probs[i] *= inv;
}

struct LossError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Mean over the batch of summed per-variable categorical cross-entropies,
// plus the coupled L2 term l2 * ||W||^2 / 2 over weights (biases excluded).
// Returns the loss; the exact gradient of that objective goes to grad.
template <typename T>
double loss_and_grad(const Network<T>& net, const T* input, int B,
                     const std::vector<Action>& actions, double l2, ForwardCache<T>& cache,
                     std::vector<T>& grad) {
  if (static_cast<int>(actions.size()) != B)
    throw LossError("actions size does not match batch size");
  const T* logits = forward(net, input, B, cache);
  const int total = net.arch.total_logits();
  const auto& vars = net.arch.space.variables;

  std::vector<T> dlogits(static_cast<size_t>(B) * total);
  std::vector<T> probs(total);
  double loss = 0.0;
  const T inv_b = T(1) / static_cast<T>(B);
  for (int b = 0; b < B; ++b) {
    const T* row = logits + static_cast<size_t>(b) * total;
    T* drow = dlogits.data() + static_cast<size_t>(b) * total;
    int off = 0;
    for (size_t v = 0; v < vars.size(); ++v) {
      const int n = vars[v].cardinality;
      const int label = actions[b].indices.at(v);
      if (label < 0 || label >= n)
        throw LossError("label " + std::to_string(label) + " out of range for variable " +
                        vars[v].name);
      softmax_head(row + off, n, probs.data());
      const T p = probs[label] > T(1e-30) ? probs[label] : T(1e-30);
      loss -= std::log(static_cast<double>(p));
      for (int i = 0; i < n; ++i)
        drow[off + i] = (probs[i] - (i == label ? T(1) : T(0))) * inv_b;
      off += n;
    }
  }
  loss /= B;

  grad.assign(net.weights.size(), T(0));
  backward(net, cache, dlogits, grad);

  if (l2 > 0) {
    double l2sum = 0.0;
    const int nch = WorkerPool::instance().thread_count();
    for (const auto& l : net.arch.layers) {
      if (l.weight_len == 0) continue;
      const T* w = net.weights.data() + l.offset;
      T* g = grad.data() + l.offset;
      if (l.weight_len < 262144 || nch < 2) {
        for (size_t i = 0; i < l.weight_len; ++i) {
          l2sum += static_cast<double>(w[i]) * static_cast<double>(w[i]);
          g[i] += static_cast<T>(l2) * w[i];
        }
      } else {
        std::vector<double> partial(static_cast<size_t>(nch), 0.0);
        parallel_for(static_cast<size_t>(nch), [&](size_t c) {
          const size_t lo = c * l.weight_len / nch;
          const size_t hi = (c + 1) * l.weight_len / nch;
          double acc = 0.0;
          for (size_t i = lo; i < hi; ++i) {
            acc += static_cast<double>(w[i]) * static_cast<double>(w[i]);
            g[i] += static_cast<T>(l2) * w[i];
          }
          partial[c] = acc;
        });
        for (double p : partial) l2sum += p;
      }
    }
    loss += 0.5 * l2 * l2sum;
  }
  return loss;
}

// Loss without the gradient; used by finite differencing.
template <typename T>
double loss_only(const Network<T>& net, const T* input, int B, const std::vector<Action>& actions,
                 double l2, ForwardCache<T>& cache) {
  const T* logits = forward(net, input, B, cache);
  const int total = net.arch.total_logits();
  const auto& vars = net.arch.space.variables;
  std::vector<T> probs(total);
  double loss = 0.0;
  for (int b = 0; b < B; ++b) {
    const T* row = logits + static_cast<size_t>(b) * total;
    int off = 0;
    for (size_t v = 0; v < vars.size(); ++v) {
      const int n = vars[v].cardinality;
      softmax_head(row + off, n, probs.data());
      const T p = probs[actions[b].indices.at(v)];
      loss -= std::log(static_cast<double>(p > T(1e-30) ? p : T(1e-30)));
      off += n;
    }
  }
  loss /= B;
  if (l2 > 0) {
    double l2sum = 0.0;
    for (const auto& l : net.arch.layers)
      for (size_t i = 0; i < l.weight_len; ++i) {
        const double w = static_cast<double>(net.weights[l.offset + i]);
        l2sum += w * w;
      }
    loss += 0.5 * l2 * l2sum;
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<T> m, v;
  long t = 0;

  explicit AdamState(size_t n = 0) : m(n, T(0)), v(n, T(0)) {}
};

struct AdamResult {
  bool ok = true;
  size_t bad_index = 0; // first non-finite gradient component when !ok
};

namespace nndetail {

// exponent-bits finiteness test, vectorizable unlike std::isfinite
inline bool finite_bits(float v) {
  uint32_t b;
  std::memcpy(&b, &v, 4);
  return (b & 0x7F800000u) != 0x7F800000u;
}
inline bool finite_bits(double v) {
  uint64_t b;
  std::memcpy(&b, &v, 8);
  return (b & 0x7FF0000000000000ull) != 0x7FF0000000000000ull;
}

template <typename T>
bool all_finite(const std::vector<T>& v) {
  int bad = 0;
  for (size_t i = 0; i < v.size(); ++i) bad |= finite_bits(v[i]) ? 0 : 1;
  return bad == 0;
}

} // namespace nndetail

// Bias-corrected Adam; L2 arrives through the gradient (coupled), never as
// decoupled decay here. A non-finite gradient aborts the step untouched.
template <typename T>
AdamResult adam_step(std::vector<T>& weights, const std::vector<T>& grads, AdamState<T>& state,
                     const AdamConfig& cfg = {}) {
  if (!nndetail::all_finite(grads)) {
    for (size_t i = 0; i < grads.size(); ++i)
      if (!nndetail::finite_bits(grads[i])) return {false, i};
  }

  ++state.t;
  const double b1t = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double b2t = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T one_m_b1 = static_cast<T>(1.0 - cfg.beta1), one_m_b2 = static_cast<T>(1.0 - cfg.beta2);
  const T lr = static_cast<T>(cfg.lr), eps = static_cast<T>(cfg.eps);
  const T inv_b1t = static_cast<T>(1.0 / b1t), inv_b2t = static_cast<T>(1.0 / b2t);
  T* w = weights.data();
  T* m = state.m.data();
  T* v = state.v.data();
  const T* g = grads.data();
  parallel_chunks(weights.size(), 262144, [&](size_t lo, size_t hi) {
    for (size_t i = lo; i < hi; ++i) {
      m[i] = b1 * m[i] + one_m_b1 * g[i];
      v[i] = b2 * v[i] + one_m_b2 * g[i] * g[i];
      const T mhat = m[i] * inv_b1t;
      const T vhat = v[i] * inv_b2t;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  });
  return {};
}

} // namespace clonebench
