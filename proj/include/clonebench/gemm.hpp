#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstring>
#include <type_traits>
#include <vector>

#include "clonebench/parallel.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#endif

// Row-major single/double precision GEMM tuned for the layer shapes this
// project trains: A packed into 6-row strips, B into NR-column panels, and
// a register-tile microkernel over the packs. Packs are first-class so a
// weight matrix is packed once per batch and reused across samples.
// Accumulation over k runs in a fixed serial order per output element and
// tiles never overlap, so results are bitwise identical for any worker
// count.

namespace clonebench {
namespace gemmdetail {

template <typename T> struct PanelWidth { static constexpr int value = 8; };
#if defined(__AVX512F__)
template <> struct PanelWidth<float> { static constexpr int value = 32; };
#elif defined(__AVX2__) && defined(__FMA__)
template <> struct PanelWidth<float> { static constexpr int value = 16; };
#endif

constexpr int MR = 6;

// Generic microkernel: MR x NR tile, full K reduction. Panels are k-major
// ([k][NR]), strips k-major ([k][MR]).
template <typename T, int NR>
inline void kernel(const T* ap, const T* bp, T* out, int ldo, int K, bool accumulate) {
  T acc[MR][NR];
  for (int i = 0; i < MR; ++i)
    for (int j = 0; j < NR; ++j) acc[i][j] = T(0);
  for (int k = 0; k < K; ++k) {
    for (int i = 0; i < MR; ++i) {
      const T a = ap[i];
      for (int j = 0; j < NR; ++j) acc[i][j] += a * bp[j];
    }
    ap += MR;
    bp += NR;
  }
  for (int i = 0; i < MR; ++i)
    for (int j = 0; j < NR; ++j) {
      if (accumulate)
        out[i * ldo + j] += acc[i][j];
      else
        out[i * ldo + j] = acc[i][j];
    }
}

#if defined(__AVX512F__)
inline void kernel_f32(const float* ap, const float* bp, float* out, int ldo, int K,
                       bool accumulate) {
  __m512 acc[MR][2];
  for (int i = 0; i < MR; ++i) {
    acc[i][0] = _mm512_setzero_ps();
    acc[i][1] = _mm512_setzero_ps();
  }
  for (int k = 0; k < K; ++k) {
    const __m512 b0 = _mm512_loadu_ps(bp);
    const __m512 b1 = _mm512_loadu_ps(bp + 16);
    bp += 32;
    for (int i = 0; i < MR; ++i) {
      const __m512 a = _mm512_set1_ps(ap[i]);
      acc[i][0] = _mm512_fmadd_ps(a, b0, acc[i][0]);
      acc[i][1] = _mm512_fmadd_ps(a, b1, acc[i][1]);
    }
    ap += MR;
  }
  for (int i = 0; i < MR; ++i) {
    float* o = out + static_cast<size_t>(i) * ldo;
    if (accumulate) {
      acc[i][0] = _mm512_add_ps(acc[i][0], _mm512_loadu_ps(o));
      acc[i][1] = _mm512_add_ps(acc[i][1], _mm512_loadu_ps(o + 16));
    }
    _mm512_storeu_ps(o, acc[i][0]);
    _mm512_storeu_ps(o + 16, acc[i][1]);
  }
}
#elif defined(__AVX2__) && defined(__FMA__)
inline void kernel_f32(const float* ap, const float* bp, float* out, int ldo, int K,
                       bool accumulate) {
  __m256 acc[MR][2];
  for (int i = 0; i < MR; ++i) {
    acc[i][0] = _mm256_setzero_ps();
    acc[i][1] = _mm256_setzero_ps();
  }
  for (int k = 0; k < K; ++k) {
    const __m256 b0 = _mm256_loadu_ps(bp);
    const __m256 b1 = _mm256_loadu_ps(bp + 8);
    bp += 16;
    for (int i = 0; i < MR; ++i) {
      const __m256 a = _mm256_broadcast_ss(ap + i);
      acc[i][0] = _mm256_fmadd_ps(a, b0, acc[i][0]);
      acc[i][1] = _mm256_fmadd_ps(a, b1, acc[i][1]);
    }
    ap += MR;
  }
  for (int i = 0; i < MR; ++i) {
    float* o = out + static_cast<size_t>(i) * ldo;
    if (accumulate) {
      acc[i][0] = _mm256_add_ps(acc[i][0], _mm256_loadu_ps(o));
      acc[i][1] = _mm256_add_ps(acc[i][1], _mm256_loadu_ps(o + 8));
    }
    _mm256_storeu_ps(o, acc[i][0]);
    _mm256_storeu_ps(o + 8, acc[i][1]);
  }
}
#endif

template <typename T, int NR>
inline void run_kernel(const T* ap, const T* bp, T* out, int ldo, int K, bool accumulate) {
#if defined(__AVX512F__) || (defined(__AVX2__) && defined(__FMA__))
  if constexpr (std::is_same_v<T, float>) {
    kernel_f32(ap, bp, out, ldo, K, accumulate);
    return;
  }
#endif
  kernel<T, NR>(ap, bp, out, ldo, K, accumulate);
}

} // namespace gemmdetail

enum class GemmLayout {
  nn, // C = A[MxK]             * B[KxN]
  nt, // C = A[MxK]             * Bs[NxK] transposed
  tn, // C = As[KxM] transposed * B[KxN]
};

// A packed into zero-padded 6-row strips, k-major within each strip.
template <typename T>
struct PackedA {
  std::vector<T> data;
  int M = 0, K = 0;

  template <typename Fill>
  void fill_strips(int strips, Fill fill) {
    if (strips > 1 && static_cast<size_t>(strips) * gemmdetail::MR * K >= 65536) {
      parallel_for(static_cast<size_t>(strips), [&](size_t s) { fill(static_cast<int>(s)); });
    } else {
      for (int s = 0; s < strips; ++s) fill(s);
    }
  }

  template <typename Src>
  void pack(int M_, int K_, Src src) {
    using namespace gemmdetail;
    M = M_;
    K = K_;
    const int strips = (M + MR - 1) / MR;
    data.resize(static_cast<size_t>(strips) * MR * K);
    fill_strips(strips, [&](int s) {
      const int i0 = s * MR;
      const int h = std::min(MR, M - i0);
      T* dst = data.data() + static_cast<size_t>(s) * MR * K;
      for (int k = 0; k < K; ++k)
        for (int i = 0; i < MR; ++i)
          dst[static_cast<size_t>(k) * MR + i] = i < h ? src(i0 + i, k) : T(0);
    });
  }
  void pack_rowmajor(const T* A, int M_, int K_) {
    pack(M_, K_, [&](int i, int k) { return A[static_cast<size_t>(i) * K_ + k]; });
  }
  // stored K x M, logical A = stored transposed
  void pack_colmajor(const T* A, int M_, int K_) {
    pack(M_, K_, [&](int i, int k) { return A[static_cast<size_t>(k) * M_ + i]; });
  }
  // logical A[i][b*inner+r] = base[b*sample_stride + i*inner + r]
  void pack_batched(const T* base, int M_, int batch, int inner, size_t sample_stride) {
    using namespace gemmdetail;
    M = M_;
    K = batch * inner;
    const int strips = (M + MR - 1) / MR;
    data.resize(static_cast<size_t>(strips) * MR * K);
    fill_strips(strips, [&](int s) {
      const int i0 = s * MR;
      const int h = std::min(MR, M - i0);
      T* dst = data.data() + static_cast<size_t>(s) * MR * K;
      for (int b = 0; b < batch; ++b) {
        T* dblock = dst + static_cast<size_t>(b) * inner * MR;
        for (int i = 0; i < MR; ++i) {
          if (i < h) {
            const T* src =
                base + static_cast<size_t>(b) * sample_stride + static_cast<size_t>(i0 + i) * inner;
            for (int r = 0; r < inner; ++r) dblock[static_cast<size_t>(r) * MR + i] = src[r];
          } else {
            for (int r = 0; r < inner; ++r) dblock[static_cast<size_t>(r) * MR + i] = T(0);
          }
        }
      }
    });
  }
};

// B packed into zero-padded NR-column panels, k-major within each panel.
template <typename T>
struct PackedB {
  std::vector<T> data;
  int K = 0, N = 0;
  static constexpr int NR = gemmdetail::PanelWidth<T>::value;

  int panels() const { return (N + NR - 1) / NR; }

  // panel-parallel when the volume justifies a dispatch
  template <typename Fill>
  void fill_panels(Fill fill) {
    const int np = panels();
    if (np > 1 && static_cast<size_t>(np) * NR * K >= 65536) {
      parallel_for(static_cast<size_t>(np), [&](size_t p) { fill(static_cast<int>(p)); });
    } else {
      for (int p = 0; p < np; ++p) fill(p);
    }
  }

  template <typename Src>
  void pack(int K_, int N_, Src src) {
    K = K_;
    N = N_;
    data.resize(static_cast<size_t>(panels()) * NR * K);
    fill_panels([&](int p) {
      const int j0 = p * NR;
      const int w = std::min(NR, N - j0);
      T* dst = data.data() + static_cast<size_t>(p) * NR * K;
      for (int k = 0; k < K; ++k)
        for (int j = 0; j < NR; ++j)
          dst[static_cast<size_t>(k) * NR + j] = j < w ? src(k, j0 + j) : T(0);
    });
  }
  void pack_rowmajor(const T* B, int K_, int N_) {
    // contiguous row copies instead of the generic gather
    K = K_;
    N = N_;
    data.resize(static_cast<size_t>(panels()) * NR * K);
    fill_panels([&](int p) {
      const int j0 = p * NR;
      const int w = std::min(NR, N - j0);
      T* dst = data.data() + static_cast<size_t>(p) * NR * K;
      for (int k = 0; k < K; ++k) {
        const T* src = B + static_cast<size_t>(k) * N + j0;
        T* d = dst + static_cast<size_t>(k) * NR;
        int j = 0;
        for (; j < w; ++j) d[j] = src[j];
        for (; j < NR; ++j) d[j] = T(0);
      }
    });
  }
  // stored N x K, logical B = stored transposed; reads stay contiguous by
  // walking each stored row once
  void pack_trans(const T* B, int K_, int N_) {
    K = K_;
    N = N_;
    data.resize(static_cast<size_t>(panels()) * NR * K);
    fill_panels([&](int p) {
      const int j0 = p * NR;
      const int w = std::min(NR, N - j0);
      T* dst = data.data() + static_cast<size_t>(p) * NR * K;
      for (int j = 0; j < NR; ++j) {
        if (j < w) {
          const T* src = B + static_cast<size_t>(j0 + j) * K;
          for (int k = 0; k < K; ++k) dst[static_cast<size_t>(k) * NR + j] = src[k];
        } else {
          for (int k = 0; k < K; ++k) dst[static_cast<size_t>(k) * NR + j] = T(0);
        }
      }
    });
  }
  // logical B[b*inner+r][j] = base[b*sample_stride + j*inner + r]
  // (per-sample row-major [N x inner] blocks stacked along k)
  void pack_batched_trans(const T* base, int batch, int inner, int N_, size_t sample_stride) {
    K = batch * inner;
    N = N_;
    data.resize(static_cast<size_t>(panels()) * NR * K);
    fill_panels([&](int p) {
      const int j0 = p * NR;
      const int w = std::min(NR, N - j0);
      T* dst = data.data() + static_cast<size_t>(p) * NR * K;
      for (int b = 0; b < batch; ++b)
        for (int j = 0; j < NR; ++j) {
          const T* src = j < w ? base + static_cast<size_t>(b) * sample_stride +
                                     static_cast<size_t>(j0 + j) * inner
                               : nullptr;
          T* d = dst + (static_cast<size_t>(b) * inner) * NR + j;
          for (int r = 0; r < inner; ++r) d[static_cast<size_t>(r) * NR] = src ? src[r] : T(0);
        }
    });
  }
};

// C[MxN] (+)= packed product; tiles are disjoint and the k order is fixed,
// so reruns are bitwise stable. Long reductions run in cache-sized k blocks
// with C as the carry.
template <typename T>
void gemm_packed(const PackedA<T>& A, const PackedB<T>& B, T* C, bool accumulate = false,
                 bool allow_parallel = true) {
  using namespace gemmdetail;
  constexpr int NR = PackedB<T>::NR;
  constexpr int KB = 768;
  const int M = A.M, N = B.N, K = A.K;
  const int n_strips = (M + MR - 1) / MR;
  const int n_panels = B.panels();

  for (int k0 = 0; k0 < K; k0 += KB) {
    const int kb = std::min(KB, K - k0);
    const bool acc = accumulate || k0 > 0;
    auto compute_panel = [&](size_t p) {
      const int j0 = static_cast<int>(p) * NR;
      const int w = std::min(NR, N - j0);
      const T* bp = B.data.data() + p * NR * K + static_cast<size_t>(k0) * NR;
      alignas(64) T ctmp[MR * NR];
      for (int s = 0; s < n_strips; ++s) {
        const int i0 = s * MR;
        const int h = std::min(MR, M - i0);
        const T* ap = A.data.data() + static_cast<size_t>(s) * MR * K + static_cast<size_t>(k0) * MR;
        if (h == MR && w == NR) {
          run_kernel<T, NR>(ap, bp, C + static_cast<size_t>(i0) * N + j0, N, kb, acc);
        } else {
          run_kernel<T, NR>(ap, bp, ctmp, NR, kb, false);
          for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
              T& c = C[static_cast<size_t>(i0 + i) * N + j0 + j];
              c = acc ? c + ctmp[i * NR + j] : ctmp[i * NR + j];
            }
        }
      }
    };

    if (allow_parallel && n_panels > 1) {
      parallel_for(static_cast<size_t>(n_panels), compute_panel);
    } else {
      for (int p = 0; p < n_panels; ++p) compute_panel(static_cast<size_t>(p));
    }
  }
}

namespace gemmdetail {

template <typename T>
PackedA<T>& scratch_a() {
  thread_local PackedA<T> pa;
  return pa;
}
template <typename T>
PackedB<T>& scratch_b() {
  thread_local PackedB<T> pb;
  return pb;
}

} // namespace gemmdetail

// One-shot convenience: packs both operands into thread-local scratch.
template <typename T>
void gemm(GemmLayout layout, int M, int N, int K, const T* A, const T* B, T* C,
          bool accumulate = false, bool allow_parallel = true) {
  auto& pa = gemmdetail::scratch_a<T>();
  auto& pb = gemmdetail::scratch_b<T>();
  if (layout == GemmLayout::tn)
    pa.pack_colmajor(A, M, K);
  else
    pa.pack_rowmajor(A, M, K);
  if (layout == GemmLayout::nt)
    pb.pack_trans(B, K, N);
  else
    pb.pack_rowmajor(B, K, N);
  gemm_packed(pa, pb, C, accumulate, allow_parallel);
}

namespace gemmdetail {

#if defined(__AVX512F__)
inline float hsum(__m512 v) { return _mm512_reduce_add_ps(v); }
constexpr int NT_VEC = 16;
typedef __m512 nt_vec;
inline nt_vec nt_load(const float* p) { return _mm512_loadu_ps(p); }
inline nt_vec nt_zero() { return _mm512_setzero_ps(); }
inline nt_vec nt_fma(nt_vec a, nt_vec b, nt_vec c) { return _mm512_fmadd_ps(a, b, c); }
#elif defined(__AVX2__) && defined(__FMA__)
inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  return _mm_cvtss_f32(lo);
}
constexpr int NT_VEC = 8;
typedef __m256 nt_vec;
inline nt_vec nt_load(const float* p) { return _mm256_loadu_ps(p); }
inline nt_vec nt_zero() { return _mm256_setzero_ps(); }
inline nt_vec nt_fma(nt_vec a, nt_vec b, nt_vec c) { return _mm256_fmadd_ps(a, b, c); }
#endif

} // namespace gemmdetail

// C[MxN] (+)= A[MxK] * B[NxK]^T with everything row-major and unpacked;
// the reduction runs along contiguous rows of both operands, so no packing
// pass touches memory. Used for weight gradients (A = dY, B = im2col) and
// for dense forwards (A = X, B = W).
template <typename T>
void gemm_nt_direct(int M, int N, int K, const T* A, size_t lda, const T* B, size_t ldb, T* C,
                    size_t ldc, bool accumulate) {
#if defined(__AVX512F__) || (defined(__AVX2__) && defined(__FMA__))
  if constexpr (std::is_same_v<T, float>) {
    using namespace gemmdetail;
    constexpr int TI = 4, TJ = 6;
    int i = 0;
    for (; i + TI <= M; i += TI) {
      int j = 0;
      for (; j + TJ <= N; j += TJ) {
        nt_vec acc[TI][TJ];
        for (int a = 0; a < TI; ++a)
          for (int b = 0; b < TJ; ++b) acc[a][b] = nt_zero();
        int k = 0;
        for (; k + NT_VEC <= K; k += NT_VEC) {
          nt_vec av[TI], bv[TJ];
          for (int a = 0; a < TI; ++a) av[a] = nt_load(A + (i + a) * lda + k);
          for (int b = 0; b < TJ; ++b) bv[b] = nt_load(B + (j + b) * ldb + k);
          for (int a = 0; a < TI; ++a)
            for (int b = 0; b < TJ; ++b) acc[a][b] = nt_fma(av[a], bv[b], acc[a][b]);
        }
        for (int a = 0; a < TI; ++a)
          for (int b = 0; b < TJ; ++b) {
            float s = hsum(acc[a][b]);
            for (int kk = k; kk < K; ++kk) s += A[(i + a) * lda + kk] * B[(j + b) * ldb + kk];
            float& c = C[(i + a) * ldc + j + b];
            c = accumulate ? c + s : s;
          }
      }
      for (; j < N; ++j)
        for (int a = 0; a < TI; ++a) {
          float s = 0.0f;
          const float* ar = A + (i + a) * lda;
          const float* br = B + static_cast<size_t>(j) * ldb;
          for (int k = 0; k < K; ++k) s += ar[k] * br[k];
          float& c = C[(i + a) * ldc + j];
          c = accumulate ? c + s : s;
        }
    }
    for (; i < M; ++i)
      for (int j = 0; j < N; ++j) {
        float s = 0.0f;
        const float* ar = A + static_cast<size_t>(i) * lda;
        const float* br = B + static_cast<size_t>(j) * ldb;
        for (int k = 0; k < K; ++k) s += ar[k] * br[k];
        float& c = C[static_cast<size_t>(i) * ldc + j];
        c = accumulate ? c + s : s;
      }
    return;
  }
#endif
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) {
      T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
      const T* ar = A + static_cast<size_t>(i) * lda;
      const T* br = B + static_cast<size_t>(j) * ldb;
      int k = 0;
      for (; k + 4 <= K; k += 4) {
        s0 += ar[k] * br[k];
        s1 += ar[k + 1] * br[k + 1];
        s2 += ar[k + 2] * br[k + 2];
        s3 += ar[k + 3] * br[k + 3];
      }
      T s = (s0 + s1) + (s2 + s3);
      for (; k < K; ++k) s += ar[k] * br[k];
      T& c = C[static_cast<size_t>(i) * ldc + j];
      c = accumulate ? c + s : s;
    }
}

// y[1xN] (+)= x[1xK] * Ws[NxK]^T: the batch-of-one fast path used when an
// agent runs one frame at a time.
template <typename T>
void gemv_nt(int N, int K, const T* x, const T* Ws, T* y, bool accumulate = false) {
  for (int j = 0; j < N; ++j) {
    const T* w = Ws + static_cast<size_t>(j) * K;
    T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
    int k = 0;
    for (; k + 4 <= K; k += 4) {
      s0 += x[k] * w[k];
      s1 += x[k + 1] * w[k + 1];
      s2 += x[k + 2] * w[k + 2];
      s3 += x[k + 3] * w[k + 3];
    }
    T s = (s0 + s1) + (s2 + s3);
    for (; k < K; ++k) s += x[k] * w[k];
    y[j] = accumulate ? y[j] + s : s;
  }
}

} // namespace clonebench
