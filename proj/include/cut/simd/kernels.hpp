#pragma once

// Dense arithmetic kernels used by the tensor engine.
//
// Every kernel exists as a portable scalar reference and, where the target
// supports it, an AVX2+FMA (x86-64) or NEON (aarch64) variant. The variant is
// chosen once at runtime; `CUT_SIMD=scalar|avx2|neon|auto` forces a choice.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace cut::simd {

enum class Backend { scalar, avx2, neon };

std::string_view backend_name(Backend b);

/// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C.
/// op(A) is M x K, op(B) is K x N. lda/ldb/ldc are row strides of the
/// stored (untransposed) matrices.
template <class T>
using GemmFn = void (*)(bool trans_a, bool trans_b, std::int64_t m,
                        std::int64_t n, std::int64_t k, T alpha, const T* a,
                        std::int64_t lda, const T* b, std::int64_t ldb, T beta,
                        T* c, std::int64_t ldc);

template <class T>
using DotFn = T (*)(const T* x, const T* y, std::int64_t n);

/// y += alpha * x
template <class T>
using AxpyFn = void (*)(std::int64_t n, T alpha, const T* x, T* y);

/// One bias-corrected Adam step over a flat parameter block.
/// `lr_t` already includes the bias correction sqrt(1-b2^t)/(1-b1^t).
template <class T>
using AdamFn = void (*)(std::int64_t n, T* param, const T* grad, T* m, T* v,
                        T beta1, T beta2, T lr_t, T eps);

struct KernelSet {
  Backend backend;
  GemmFn<float> gemm_f32;
  GemmFn<double> gemm_f64;
  DotFn<float> dot_f32;
  DotFn<double> dot_f64;
  AxpyFn<float> axpy_f32;
  AxpyFn<double> axpy_f64;
  AdamFn<float> adam_f32;
  AdamFn<double> adam_f64;
};

const KernelSet& scalar_kernels();
/// nullptr when the variant was not compiled in or the CPU lacks support.
const KernelSet* avx2_kernels();
const KernelSet* neon_kernels();

/// The process-wide active set. Selected on first use.
const KernelSet& active();

/// Overrides the active set ("auto", "scalar", "avx2", "neon").
/// Throws std::invalid_argument for unknown or unavailable backends.
void select(std::string_view name);

// Typed convenience wrappers over the active set.
template <class T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n,
          std::int64_t k, T alpha, const T* a, std::int64_t lda, const T* b,
          std::int64_t ldb, T beta, T* c, std::int64_t ldc);
template <class T>
T dot(const T* x, const T* y, std::int64_t n);
template <class T>
void axpy(std::int64_t n, T alpha, const T* x, T* y);
template <class T>
void adam(std::int64_t n, T* param, const T* grad, T* m, T* v, T beta1,
          T beta2, T lr_t, T eps);

}  // namespace cut::simd
