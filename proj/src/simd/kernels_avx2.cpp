// Compiled with -mavx2 -mfma on x86-64; only reached after a CPUID check.
#include "cut/simd/kernels.hpp"
#include "kernels_impl.hpp"

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace cut::simd::detail {

namespace {

constexpr std::int64_t kMC = 144;
constexpr std::int64_t kKC = 256;
constexpr std::int64_t kNC = 2048;

template <class T>
struct Tile;

template <>
struct Tile<float> {
  static constexpr std::int64_t MR = 6;
  static constexpr std::int64_t NR = 16;
};

template <>
struct Tile<double> {
  static constexpr std::int64_t MR = 6;
  static constexpr std::int64_t NR = 8;
};

// Packs op(A)[ic:ic+mc, pc:pc+kc] into MR-row panels, k-major inside a panel.
template <class T>
void pack_a(bool ta, const T* a, std::int64_t lda, std::int64_t ic,
            std::int64_t pc, std::int64_t mc, std::int64_t kc, T* out) {
  constexpr std::int64_t MR = Tile<T>::MR;
  for (std::int64_t ir = 0; ir < mc; ir += MR) {
    const std::int64_t rows = std::min(MR, mc - ir);
    for (std::int64_t p = 0; p < kc; ++p) {
      for (std::int64_t r = 0; r < MR; ++r) {
        T v = 0;
        if (r < rows) {
          const std::int64_t i = ic + ir + r;
          const std::int64_t kk = pc + p;
          v = ta ? a[kk * lda + i] : a[i * lda + kk];
        }
        *out++ = v;
      }
    }
  }
}

// Packs op(B)[pc:pc+kc, jc:jc+nc] into NR-column panels.
template <class T>
void pack_b(bool tb, const T* b, std::int64_t ldb, std::int64_t pc,
            std::int64_t jc, std::int64_t kc, std::int64_t nc, T* out) {
  constexpr std::int64_t NR = Tile<T>::NR;
  for (std::int64_t jr = 0; jr < nc; jr += NR) {
    const std::int64_t cols = std::min(NR, nc - jr);
    for (std::int64_t p = 0; p < kc; ++p) {
      const std::int64_t kk = pc + p;
      if (!tb && cols == NR) {
        std::memcpy(out, b + kk * ldb + jc + jr, sizeof(T) * NR);
        out += NR;
        continue;
      }
      for (std::int64_t c = 0; c < NR; ++c) {
        T v = 0;
        if (c < cols) {
          const std::int64_t j = jc + jr + c;
          v = tb ? b[j * ldb + kk] : b[kk * ldb + j];
        }
        *out++ = v;
      }
    }
  }
}

// 6x16 float micro-kernel: acc += Apanel * Bpanel, then C += alpha * acc.
void micro_f32(std::int64_t kc, const float* ap, const float* bp, float alpha,
               float* c, std::int64_t ldc, std::int64_t rows,
               std::int64_t cols) {
  __m256 acc[6][2];
  for (auto& r : acc) r[0] = r[1] = _mm256_setzero_ps();
  for (std::int64_t p = 0; p < kc; ++p) {
    const __m256 b0 = _mm256_loadu_ps(bp);
    const __m256 b1 = _mm256_loadu_ps(bp + 8);
    for (int r = 0; r < 6; ++r) {
      const __m256 av = _mm256_broadcast_ss(ap + r);
      acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
      acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
    }
    ap += 6;
    bp += 16;
  }
  const __m256 va = _mm256_set1_ps(alpha);
  if (rows == 6 && cols == 16) {
    for (int r = 0; r < 6; ++r) {
      float* cr = c + r * ldc;
      _mm256_storeu_ps(cr, _mm256_fmadd_ps(va, acc[r][0], _mm256_loadu_ps(cr)));
      _mm256_storeu_ps(cr + 8,
                       _mm256_fmadd_ps(va, acc[r][1], _mm256_loadu_ps(cr + 8)));
    }
    return;
  }
  alignas(32) float tmp[16];
  for (std::int64_t r = 0; r < rows; ++r) {
    _mm256_store_ps(tmp, _mm256_mul_ps(va, acc[r][0]));
    _mm256_store_ps(tmp + 8, _mm256_mul_ps(va, acc[r][1]));
    float* cr = c + r * ldc;
    for (std::int64_t j = 0; j < cols; ++j) cr[j] += tmp[j];
  }
}

void micro_f64(std::int64_t kc, const double* ap, const double* bp,
               double alpha, double* c, std::int64_t ldc, std::int64_t rows,
               std::int64_t cols) {
  __m256d acc[6][2];
  for (auto& r : acc) r[0] = r[1] = _mm256_setzero_pd();
  for (std::int64_t p = 0; p < kc; ++p) {
    const __m256d b0 = _mm256_loadu_pd(bp);
    const __m256d b1 = _mm256_loadu_pd(bp + 4);
    for (int r = 0; r < 6; ++r) {
      const __m256d av = _mm256_broadcast_sd(ap + r);
      acc[r][0] = _mm256_fmadd_pd(av, b0, acc[r][0]);
      acc[r][1] = _mm256_fmadd_pd(av, b1, acc[r][1]);
    }
    ap += 6;
    bp += 8;
  }
  const __m256d va = _mm256_set1_pd(alpha);
  if (rows == 6 && cols == 8) {
    for (int r = 0; r < 6; ++r) {
      double* cr = c + r * ldc;
      _mm256_storeu_pd(cr, _mm256_fmadd_pd(va, acc[r][0], _mm256_loadu_pd(cr)));
      _mm256_storeu_pd(cr + 4,
                       _mm256_fmadd_pd(va, acc[r][1], _mm256_loadu_pd(cr + 4)));
    }
    return;
  }
  alignas(32) double tmp[8];
  for (std::int64_t r = 0; r < rows; ++r) {
    _mm256_store_pd(tmp, _mm256_mul_pd(va, acc[r][0]));
    _mm256_store_pd(tmp + 4, _mm256_mul_pd(va, acc[r][1]));
    double* cr = c + r * ldc;
    for (std::int64_t j = 0; j < cols; ++j) cr[j] += tmp[j];
  }
}

template <class T>
void micro(std::int64_t kc, const T* ap, const T* bp, T alpha, T* c,
           std::int64_t ldc, std::int64_t rows, std::int64_t cols) {
  if constexpr (std::is_same_v<T, float>) {
    micro_f32(kc, ap, bp, alpha, c, ldc, rows, cols);
  } else {
    micro_f64(kc, ap, bp, alpha, c, ldc, rows, cols);
  }
}

template <class T>
void gemm_avx2(bool ta, bool tb, std::int64_t m, std::int64_t n,
               std::int64_t k, T alpha, const T* a, std::int64_t lda,
               const T* b, std::int64_t ldb, T beta, T* c, std::int64_t ldc) {
  constexpr std::int64_t MR = Tile<T>::MR;
  constexpr std::int64_t NR = Tile<T>::NR;
  if (beta != T(1)) {
    for (std::int64_t i = 0; i < m; ++i) {
      T* row = c + i * ldc;
      if (beta == T(0)) {
        std::fill(row, row + n, T(0));
      } else {
        for (std::int64_t j = 0; j < n; ++j) row[j] *= beta;
      }
    }
  }
  if (m == 0 || n == 0 || k == 0 || alpha == T(0)) return;

  // Per-thread scratch; the engine is single-threaded per call.
  thread_local std::vector<T> apack;
  thread_local std::vector<T> bpack;
  apack.resize(static_cast<std::size_t>((kMC + MR) * kKC));
  bpack.resize(static_cast<std::size_t>((kNC + NR) * kKC));

  for (std::int64_t jc = 0; jc < n; jc += kNC) {
    const std::int64_t nc = std::min(kNC, n - jc);
    for (std::int64_t pc = 0; pc < k; pc += kKC) {
      const std::int64_t kc = std::min(kKC, k - pc);
      pack_b(tb, b, ldb, pc, jc, kc, nc, bpack.data());
      for (std::int64_t ic = 0; ic < m; ic += kMC) {
        const std::int64_t mc = std::min(kMC, m - ic);
        pack_a(ta, a, lda, ic, pc, mc, kc, apack.data());
        for (std::int64_t jr = 0; jr < nc; jr += NR) {
          const std::int64_t cols = std::min(NR, nc - jr);
          const T* bp = bpack.data() + (jr / NR) * NR * kc;
          for (std::int64_t ir = 0; ir < mc; ir += MR) {
            const std::int64_t rows = std::min(MR, mc - ir);
            const T* ap = apack.data() + (ir / MR) * MR * kc;
            micro<T>(kc, ap, bp, alpha, c + (ic + ir) * ldc + jc + jr, ldc,
                     rows, cols);
          }
        }
      }
    }
  }
}

float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  return _mm_cvtss_f32(lo);
}

double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_hadd_pd(lo, lo));
}

float dot_f32(const float* x, const float* y, std::int64_t n) {
  __m256 a0 = _mm256_setzero_ps();
  __m256 a1 = _mm256_setzero_ps();
  std::int64_t i = 0;
  for (; i + 16 <= n; i += 16) {
    a0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), a0);
    a1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8),
                         a1);
  }
  float acc = hsum(_mm256_add_ps(a0, a1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

double dot_f64(const double* x, const double* y, std::int64_t n) {
  __m256d a0 = _mm256_setzero_pd();
  __m256d a1 = _mm256_setzero_pd();
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    a0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), a0);
    a1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4),
                         a1);
  }
  double acc = hsum(_mm256_add_pd(a0, a1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_f32(std::int64_t n, float alpha, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i),
                                            _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void axpy_f64(std::int64_t n, double alpha, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void adam_f32(std::int64_t n, float* p, const float* g, float* m, float* v,
              float b1, float b2, float lr_t, float eps) {
  const __m256 vb1 = _mm256_set1_ps(b1);
  const __m256 vb2 = _mm256_set1_ps(b2);
  const __m256 vc1 = _mm256_set1_ps(1.0f - b1);
  const __m256 vc2 = _mm256_set1_ps(1.0f - b2);
  const __m256 vlr = _mm256_set1_ps(lr_t);
  const __m256 veps = _mm256_set1_ps(eps);
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 gi = _mm256_loadu_ps(g + i);
    const __m256 mi = _mm256_fmadd_ps(vb1, _mm256_loadu_ps(m + i),
                                      _mm256_mul_ps(vc1, gi));
    const __m256 vi = _mm256_fmadd_ps(vb2, _mm256_loadu_ps(v + i),
                                      _mm256_mul_ps(vc2, _mm256_mul_ps(gi, gi)));
    _mm256_storeu_ps(m + i, mi);
    _mm256_storeu_ps(v + i, vi);
    const __m256 den = _mm256_add_ps(_mm256_sqrt_ps(vi), veps);
    const __m256 step = _mm256_div_ps(_mm256_mul_ps(vlr, mi), den);
    _mm256_storeu_ps(p + i, _mm256_sub_ps(_mm256_loadu_ps(p + i), step));
  }
  for (; i < n; ++i) {
    m[i] = b1 * m[i] + (1.0f - b1) * g[i];
    v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
    p[i] -= lr_t * m[i] / (std::sqrt(v[i]) + eps);
  }
}

void adam_f64(std::int64_t n, double* p, const double* g, double* m,
              double* v, double b1, double b2, double lr_t, double eps) {
  const __m256d vb1 = _mm256_set1_pd(b1);
  const __m256d vb2 = _mm256_set1_pd(b2);
  const __m256d vc1 = _mm256_set1_pd(1.0 - b1);
  const __m256d vc2 = _mm256_set1_pd(1.0 - b2);
  const __m256d vlr = _mm256_set1_pd(lr_t);
  const __m256d veps = _mm256_set1_pd(eps);
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d gi = _mm256_loadu_pd(g + i);
    const __m256d mi = _mm256_fmadd_pd(vb1, _mm256_loadu_pd(m + i),
                                       _mm256_mul_pd(vc1, gi));
    const __m256d vi = _mm256_fmadd_pd(
        vb2, _mm256_loadu_pd(v + i), _mm256_mul_pd(vc2, _mm256_mul_pd(gi, gi)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d den = _mm256_add_pd(_mm256_sqrt_pd(vi), veps);
    const __m256d step = _mm256_div_pd(_mm256_mul_pd(vlr, mi), den);
    _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), step));
  }
  for (; i < n; ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    p[i] -= lr_t * m[i] / (std::sqrt(v[i]) + eps);
  }
}

}  // namespace

const KernelSet* avx2_set() {
  static const KernelSet set{Backend::avx2,     &gemm_avx2<float>,
                             &gemm_avx2<double>, &dot_f32,
                             &dot_f64,           &axpy_f32,
                             &axpy_f64,          &adam_f32,
                             &adam_f64};
  return &set;
}

}  // namespace cut::simd::detail

#else

namespace cut::simd::detail {
const KernelSet* avx2_set() { return nullptr; }
}  // namespace cut::simd::detail

#endif
