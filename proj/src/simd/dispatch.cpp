#include "cut/simd/kernels.hpp"
#include "kernels_impl.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace cut::simd {

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelSet* lookup(std::string_view name) {
  if (name == "scalar") return &scalar_kernels();
  if (name == "avx2") return avx2_kernels();
  if (name == "neon") return neon_kernels();
  if (name == "auto" || name.empty()) {
    if (const KernelSet* k = avx2_kernels()) return k;
    if (const KernelSet* k = neon_kernels()) return k;
    return &scalar_kernels();
  }
  return nullptr;
}

std::atomic<const KernelSet*>& current() {
  static std::atomic<const KernelSet*> ptr{nullptr};
  return ptr;
}

}  // namespace

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
    case Backend::neon: return "neon";
  }
  return "unknown";
}

const KernelSet& scalar_kernels() { return detail::scalar_set(); }

const KernelSet* avx2_kernels() {
  static const KernelSet* set = cpu_has_avx2() ? detail::avx2_set() : nullptr;
  return set;
}

const KernelSet* neon_kernels() { return detail::neon_set(); }

void select(std::string_view name) {
  const KernelSet* k = lookup(name);
  if (k == nullptr) {
    throw std::invalid_argument("SIMD backend unavailable: " + std::string(name));
  }
  current().store(k);
}

const KernelSet& active() {
  const KernelSet* k = current().load();
  if (k != nullptr) return *k;
  const char* env = std::getenv("CUT_SIMD");
  k = lookup(env != nullptr ? std::string_view(env) : std::string_view("auto"));
  if (k == nullptr) k = lookup("auto");
  current().store(k);
  return *k;
}

template <>
void gemm<float>(bool ta, bool tb, std::int64_t m, std::int64_t n,
                 std::int64_t k, float alpha, const float* a, std::int64_t lda,
                 const float* b, std::int64_t ldb, float beta, float* c,
                 std::int64_t ldc) {
  active().gemm_f32(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
template <>
void gemm<double>(bool ta, bool tb, std::int64_t m, std::int64_t n,
                  std::int64_t k, double alpha, const double* a,
                  std::int64_t lda, const double* b, std::int64_t ldb,
                  double beta, double* c, std::int64_t ldc) {
  active().gemm_f64(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
template <>
float dot<float>(const float* x, const float* y, std::int64_t n) {
  return active().dot_f32(x, y, n);
}
template <>
double dot<double>(const double* x, const double* y, std::int64_t n) {
  return active().dot_f64(x, y, n);
}
template <>
void axpy<float>(std::int64_t n, float alpha, const float* x, float* y) {
  active().axpy_f32(n, alpha, x, y);
}
template <>
void axpy<double>(std::int64_t n, double alpha, const double* x, double* y) {
  active().axpy_f64(n, alpha, x, y);
}
template <>
void adam<float>(std::int64_t n, float* p, const float* g, float* m, float* v,
                 float b1, float b2, float lr_t, float eps) {
  active().adam_f32(n, p, g, m, v, b1, b2, lr_t, eps);
}
template <>
void adam<double>(std::int64_t n, double* p, const double* g, double* m,
                  double* v, double b1, double b2, double lr_t, double eps) {
  active().adam_f64(n, p, g, m, v, b1, b2, lr_t, eps);
}

}  // namespace cut::simd
