#include "cut/simd/kernels.hpp"
#include "kernels_impl.hpp"

#if defined(__aarch64__) && defined(__ARM_NEON)

#include <arm_neon.h>

#include <cmath>

namespace cut::simd::detail {

namespace {

// Row-by-row NEON GEMM. Only the non-transposed-B path is vectorized; the
// other cases use the scalar reference through the fallback set.
void gemm_neon_f32(bool ta, bool tb, std::int64_t m, std::int64_t n,
                   std::int64_t k, float alpha, const float* a,
                   std::int64_t lda, const float* b, std::int64_t ldb,
                   float beta, float* c, std::int64_t ldc) {
  if (tb) {
    scalar_set().gemm_f32(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
    return;
  }
  for (std::int64_t i = 0; i < m; ++i) {
    float* crow = c + i * ldc;
    for (std::int64_t j = 0; j < n; ++j) crow[j] = beta == 0.0f ? 0.0f : crow[j] * beta;
    for (std::int64_t p = 0; p < k; ++p) {
      const float av = alpha * (ta ? a[p * lda + i] : a[i * lda + p]);
      const float32x4_t va = vdupq_n_f32(av);
      const float* brow = b + p * ldb;
      std::int64_t j = 0;
      for (; j + 4 <= n; j += 4) {
        vst1q_f32(crow + j, vfmaq_f32(vld1q_f32(crow + j), va, vld1q_f32(brow + j)));
      }
      for (; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

float dot_neon_f32(const float* x, const float* y, std::int64_t n) {
  float32x4_t acc = vdupq_n_f32(0.0f);
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4) acc = vfmaq_f32(acc, vld1q_f32(x + i), vld1q_f32(y + i));
  float s = vaddvq_f32(acc);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_neon_f32(std::int64_t n, float alpha, const float* x, float* y) {
  const float32x4_t va = vdupq_n_f32(alpha);
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vfmaq_f32(vld1q_f32(y + i), va, vld1q_f32(x + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void adam_neon_f32(std::int64_t n, float* p, const float* g, float* m,
                   float* v, float b1, float b2, float lr_t, float eps) {
  const float32x4_t vb1 = vdupq_n_f32(b1), vb2 = vdupq_n_f32(b2);
  const float32x4_t vc1 = vdupq_n_f32(1.0f - b1), vc2 = vdupq_n_f32(1.0f - b2);
  const float32x4_t vlr = vdupq_n_f32(lr_t), veps = vdupq_n_f32(eps);
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float32x4_t gi = vld1q_f32(g + i);
    const float32x4_t mi = vfmaq_f32(vmulq_f32(vc1, gi), vb1, vld1q_f32(m + i));
    const float32x4_t vi = vfmaq_f32(vmulq_f32(vc2, vmulq_f32(gi, gi)), vb2, vld1q_f32(v + i));
    vst1q_f32(m + i, mi);
    vst1q_f32(v + i, vi);
    const float32x4_t den = vaddq_f32(vsqrtq_f32(vi), veps);
    vst1q_f32(p + i, vsubq_f32(vld1q_f32(p + i), vdivq_f32(vmulq_f32(vlr, mi), den)));
  }
  for (; i < n; ++i) {
    m[i] = b1 * m[i] + (1.0f - b1) * g[i];
    v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
    p[i] -= lr_t * m[i] / (std::sqrt(v[i]) + eps);
  }
}

}  // namespace

const KernelSet* neon_set() {
  const KernelSet& s = scalar_set();
  static const KernelSet set{Backend::neon, &gemm_neon_f32, s.gemm_f64,
                             &dot_neon_f32, s.dot_f64,      &axpy_neon_f32,
                             s.axpy_f64,    &adam_neon_f32, s.adam_f64};
  return &set;
}

}  // namespace cut::simd::detail

#else

namespace cut::simd::detail {
const KernelSet* neon_set() { return nullptr; }
}  // namespace cut::simd::detail

#endif
