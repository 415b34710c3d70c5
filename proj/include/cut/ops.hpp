#pragma once

// Differentiable tensor ops. Image tensors are NCHW; embedding matrices are
// [rows, width]. Every op validates shapes and throws InvalidArgument.

#include <cstdint>
#include <vector>

#include "cut/autograd.hpp"

namespace cut::ops {

using ag::Var;

template <class T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> scale(const Var<T>& a, T c);
/// Elementwise product with a constant tensor (no gradient into the mask).
template <class T> Var<T> mul_const(const Var<T>& a, const Tensor<T>& mask);
/// Sum of all elements, shape [1].
template <class T> Var<T> sum(const Var<T>& a);
template <class T> Var<T> mean(const Var<T>& a);
/// Per-batch-item sums of an [N, ...] tensor, shape [N].
template <class T> Var<T> per_sample_sum(const Var<T>& a);

template <class T> Var<T> relu(const Var<T>& x);
template <class T> Var<T> leaky_relu(const Var<T>& x, T slope);
template <class T> Var<T> tanh(const Var<T>& x);

/// Identity in value, blocks gradient.
template <class T> Var<T> detach(const Var<T>& x);
/// Value `value`, gradient routed unchanged to `grad_path` (same shape).
template <class T> Var<T> straight_through(Tensor<T> value, const Var<T>& grad_path);

template <class T> Var<T> reflection_pad2d(const Var<T>& x, int pad);

/// Zero-padded 2-D convolution. w: [Cout, Cin, k, k]; b: [Cout] or undefined.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad);

/// Transposed convolution. w: [Cin, Cout, k, k].
template <class T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& b,
                        int stride, int pad, int output_pad);

/// Per-(n, c) normalization over H x W, no affine parameters.
template <class T> Var<T> instance_norm(const Var<T>& x, T eps = T(1e-5));

/// Anti-aliased stride-2 downsampling: reflect pad 1, [1 2 1]^2/16 blur.
template <class T> Var<T> blur_downsample(const Var<T>& x);

/// Mirrors the width axis: (h, w) -> (h, W-1-w).
template <class T> Var<T> flip_width(const Var<T>& x);

/// Gathers feature vectors at flat positions h*W+w from every batch item.
/// Returns [N*S, C], rows ordered (n, s).
template <class T>
Var<T> gather_positions(const Var<T>& x, const std::vector<std::int64_t>& positions);

/// x: [S, C], w: [O, C], b: [O] -> [S, O].
template <class T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);

/// Rows divided by max(||row||, eps).
template <class T> Var<T> l2_normalize_rows(const Var<T>& x, T eps = T(1e-12));

/// Splits [N, C, H, W] into non-overlapping tile x tile pieces:
/// [N * (H/tile) * (W/tile), C, tile, tile], ordered (n, row, col).
template <class T> Var<T> split_tiles(const Var<T>& x, int tile);

/// mean((x - target)^2)
template <class T> Var<T> mse_const(const Var<T>& x, T target);
/// mean(softplus(sign * x)), sign in {+1, -1}
template <class T> Var<T> softplus_mean(const Var<T>& x, T sign);

// Non-differentiable helpers used by the layers and their tests.
template <class T>
void im2col(const T* x, std::int64_t c, std::int64_t h, std::int64_t w, int k,
            int stride, int pad, std::int64_t ho, std::int64_t wo, T* col);
template <class T>
void col2im(const T* col, std::int64_t c, std::int64_t h, std::int64_t w, int k,
            int stride, int pad, std::int64_t ho, std::int64_t wo, T* x);

}  // namespace cut::ops
