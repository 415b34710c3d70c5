#pragma once

#include "cut/simd/kernels.hpp"

namespace cut::simd::detail {

const KernelSet& scalar_set();
// Return nullptr when not compiled for the current architecture.
const KernelSet* avx2_set();
const KernelSet* neon_set();

}  // namespace cut::simd::detail
