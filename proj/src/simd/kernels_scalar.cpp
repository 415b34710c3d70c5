#include "cut/simd/kernels.hpp"
#include "kernels_impl.hpp"

#include <cmath>

namespace cut::simd::detail {

namespace {

template <class T>
void scale_c(std::int64_t m, std::int64_t n, T beta, T* c, std::int64_t ldc) {
  if (beta == T(1)) return;
  for (std::int64_t i = 0; i < m; ++i) {
    T* row = c + i * ldc;
    if (beta == T(0)) {
      for (std::int64_t j = 0; j < n; ++j) row[j] = T(0);
    } else {
      for (std::int64_t j = 0; j < n; ++j) row[j] *= beta;
    }
  }
}

template <class T>
void gemm_ref(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
              T alpha, const T* a, std::int64_t lda, const T* b,
              std::int64_t ldb, T beta, T* c, std::int64_t ldc) {
  scale_c(m, n, beta, c, ldc);
  if (m == 0 || n == 0 || k == 0 || alpha == T(0)) return;
  // i-p-j order keeps the innermost loop contiguous in B and C when B is not
  // transposed; the transposed-B case walks B by rows of op(B)^T instead.
  if (!tb) {
    for (std::int64_t i = 0; i < m; ++i) {
      T* crow = c + i * ldc;
      for (std::int64_t p = 0; p < k; ++p) {
        const T av = alpha * (ta ? a[p * lda + i] : a[i * lda + p]);
        if (av == T(0)) continue;
        const T* brow = b + p * ldb;
        for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    for (std::int64_t i = 0; i < m; ++i) {
      T* crow = c + i * ldc;
      for (std::int64_t j = 0; j < n; ++j) {
        const T* bcol = b + j * ldb;
        T acc = 0;
        if (ta) {
          for (std::int64_t p = 0; p < k; ++p) acc += a[p * lda + i] * bcol[p];
        } else {
          const T* arow = a + i * lda;
          for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * bcol[p];
        }
        crow[j] += alpha * acc;
      }
    }
  }
}

template <class T>
T dot_ref(const T* x, const T* y, std::int64_t n) {
  T acc = 0;
  for (std::int64_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <class T>
void axpy_ref(std::int64_t n, T alpha, const T* x, T* y) {
  for (std::int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
void adam_ref(std::int64_t n, T* p, const T* g, T* m, T* v, T b1, T b2,
              T lr_t, T eps) {
  for (std::int64_t i = 0; i < n; ++i) {
    m[i] = b1 * m[i] + (T(1) - b1) * g[i];
    v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
    p[i] -= lr_t * m[i] / (std::sqrt(v[i]) + eps);
  }
}

}  // namespace

const KernelSet& scalar_set() {
  static const KernelSet set{Backend::scalar,   &gemm_ref<float>,
                             &gemm_ref<double>, &dot_ref<float>,
                             &dot_ref<double>,  &axpy_ref<float>,
                             &axpy_ref<double>, &adam_ref<float>,
                             &adam_ref<double>};
  return set;
}

}  // namespace cut::simd::detail
