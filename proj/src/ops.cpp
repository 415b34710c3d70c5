#include "cut/ops.hpp"

#include <algorithm>
#include <cmath>

#include "cut/simd/kernels.hpp"

namespace cut::ops {

namespace {

template <class T>
using NodeT = ag::Node<T>;

template <class T>
bool wants(const NodeT<T>& self, std::size_t i) {
  return i < self.inputs.size() && self.inputs[i] && self.inputs[i]->requires_grad;
}

template <class T>
Tensor<T>& gin(NodeT<T>& self, std::size_t i) {
  return self.inputs[i]->grad_buffer();
}

template <class T>
const Tensor<T>& vin(const NodeT<T>& self, std::size_t i) {
  return self.inputs[i]->value;
}

void require_nchw(const Shape& s, const char* what) {
  CUT_REQUIRE(s.size() == 4, InvalidArgument,
              std::string(what) + ": expected NCHW tensor, got " + shape_str(s));
}

template <class T>
Var<T> unary(const Var<T>& x, T (*f)(T), T (*df)(T, T)) {
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = f(xv[i]);
  return ag::make_op<T>(std::move(out), {x}, [df](NodeT<T>& self) {
    if (!wants(self, 0)) return;
    auto& g = gin(self, 0);
    const auto& xv = vin(self, 0);
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      g[i] += self.grad[i] * df(xv[i], self.value[i]);
    }
  });
}

inline std::int64_t reflect(std::int64_t i, std::int64_t n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

}  // namespace

template <class T>
void im2col(const T* x, std::int64_t c, std::int64_t h, std::int64_t w, int k,
            int stride, int pad, std::int64_t ho, std::int64_t wo, T* col) {
  const std::int64_t plane = ho * wo;
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const T* xc = x + ch * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = col + ((ch * k + ki) * k + kj) * plane;
        // Output columns whose input column lands inside [0, w).
        std::int64_t lo = 0;
        while (lo < wo && lo * stride - pad + kj < 0) ++lo;
        std::int64_t hi = wo;
        while (hi > lo && (hi - 1) * stride - pad + kj >= w) --hi;
        for (std::int64_t oh = 0; oh < ho; ++oh) {
          T* dst = row + oh * wo;
          const std::int64_t ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          std::fill(dst, dst + lo, T(0));
          std::fill(dst + hi, dst + wo, T(0));
          const T* src = xc + ih * w - pad + kj;
          if (stride == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (std::int64_t ow = lo; ow < hi; ++ow) dst[ow] = src[ow * stride];
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, std::int64_t c, std::int64_t h, std::int64_t w, int k,
            int stride, int pad, std::int64_t ho, std::int64_t wo, T* x) {
  const std::int64_t plane = ho * wo;
  for (std::int64_t ch = 0; ch < c; ++ch) {
    T* xc = x + ch * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = col + ((ch * k + ki) * k + kj) * plane;
        std::int64_t lo = 0;
        while (lo < wo && lo * stride - pad + kj < 0) ++lo;
        std::int64_t hi = wo;
        while (hi > lo && (hi - 1) * stride - pad + kj >= w) --hi;
        for (std::int64_t oh = 0; oh < ho; ++oh) {
          const std::int64_t ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= h) continue;
          const T* src = row + oh * wo;
          T* dst = xc + ih * w - pad + kj;
          for (std::int64_t ow = lo; ow < hi; ++ow) dst[ow * stride] += src[ow];
        }
      }
    }
  }
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  simd::axpy<T>(out.numel(), T(1), b.value().ptr(), out.ptr());
  return ag::make_op<T>(std::move(out), {a, b}, [](NodeT<T>& self) {
    for (std::size_t i = 0; i < 2; ++i) {
      if (wants(self, i)) {
        simd::axpy<T>(self.grad.numel(), T(1), self.grad.ptr(), gin(self, i).ptr());
      }
    }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor<T> out = a.value();
  simd::axpy<T>(out.numel(), T(-1), b.value().ptr(), out.ptr());
  return ag::make_op<T>(std::move(out), {a, b}, [](NodeT<T>& self) {
    if (wants(self, 0)) simd::axpy<T>(self.grad.numel(), T(1), self.grad.ptr(), gin(self, 0).ptr());
    if (wants(self, 1)) simd::axpy<T>(self.grad.numel(), T(-1), self.grad.ptr(), gin(self, 1).ptr());
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return ag::make_op<T>(std::move(out), {a, b}, [](NodeT<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants(self, k)) continue;
      auto& g = gin(self, k);
      const auto& other = vin(self, 1 - k);
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * other[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T c) {
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * c;
  return ag::make_op<T>(std::move(out), {a}, [c](NodeT<T>& self) {
    if (wants(self, 0)) simd::axpy<T>(self.grad.numel(), c, self.grad.ptr(), gin(self, 0).ptr());
  });
}

template <class T>
Var<T> mul_const(const Var<T>& a, const Tensor<T>& mask) {
  require_same_shape(a.value(), mask, "mul_const");
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * mask[i];
  return ag::make_op<T>(std::move(out), {a}, [mask](NodeT<T>& self) {
    if (!wants(self, 0)) return;
    auto& g = gin(self, 0);
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

template <class T>
Var<T> sum(const Var<T>& a) {
  double acc = 0;
  for (T v : a.value().data) acc += v;
  return ag::make_op<T>(Tensor<T>({1}, T(acc)), {a}, [](NodeT<T>& self) {
    if (!wants(self, 0)) return;
    auto& g = gin(self, 0);
    const T s = self.grad[0];
    for (auto& v : g.data) v += s;
  });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  const auto n = a.value().numel();
  CUT_REQUIRE(n > 0, InvalidArgument, "mean of empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(n));
}

template <class T>
Var<T> per_sample_sum(const Var<T>& a) {
  CUT_REQUIRE(a.value().rank() >= 1, InvalidArgument, "per_sample_sum needs rank >= 1");
  const std::int64_t n = a.dim(0);
  const std::int64_t per = n == 0 ? 0 : a.value().numel() / n;
  Tensor<T> out({n});
  for (std::int64_t i = 0; i < n; ++i) {
    double acc = 0;
    for (std::int64_t j = 0; j < per; ++j) acc += a.value()[i * per + j];
    out[i] = T(acc);
  }
  return ag::make_op<T>(std::move(out), {a}, [n, per](NodeT<T>& self) {
    if (!wants(self, 0)) return;
    auto& g = gin(self, 0);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < per; ++j) g[i * per + j] += self.grad[i];
  });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  return unary<T>(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = xv[i] > T(0) ? xv[i] : slope * xv[i];
  return ag::make_op<T>(std::move(out), {x}, [slope](NodeT<T>& self) {
    if (!wants(self, 0)) return;
    auto& g = gin(self, 0);
    const auto& xv = vin(self, 0);
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * (xv[i] > T(0) ? T(1) : slope);
  });
}

template <class T>
Var<T> tanh(const Var<T>& x) {
  return unary<T>(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> detach(const Var<T>& x) {
  return ag::constant<T>(x.value());
}

template <class T>
Var<T> straight_through(Tensor<T> value, const Var<T>& grad_path) {
  require_same_shape(value, grad_path.value(), "straight_through");
  return ag::make_op<T>(std::move(value), {grad_path}, [](NodeT<T>& self) {
    if (wants(self, 0)) simd::axpy<T>(self.grad.numel(), T(1), self.grad.ptr(), gin(self, 0).ptr());
  });
}

template <class T>
Var<T> reflection_pad2d(const Var<T>& x, int pad) {
  require_nchw(x.shape(), "reflection_pad2d");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  CUT_REQUIRE(pad >= 0 && pad < h && pad < w, InvalidArgument,
              "reflection padding must be smaller than the spatial size");
  const std::int64_t ho = h + 2 * pad, wo = w + 2 * pad;
  Tensor<T> out({n, c, ho, wo});
  const auto& xv = x.value();
  for (std::int64_t p = 0; p < n * c; ++p) {
    const T* src = xv.ptr() + p * h * w;
    T* dst = out.ptr() + p * ho * wo;
    for (std::int64_t i = 0; i < ho; ++i) {
      const std::int64_t si = reflect(i - pad, h);
      for (std::int64_t j = 0; j < wo; ++j) dst[i * wo + j] = src[si * w + reflect(j - pad, w)];
    }
  }
  return ag::make_op<T>(std::move(out), {x}, [=](NodeT<T>& self) {
    if (!wants(self, 0)) return;
    auto& g = gin(self, 0);
    for (std::int64_t p = 0; p < n * c; ++p) {
      const T* src = self.grad.ptr() + p * ho * wo;
      T* dst = g.ptr() + p * h * w;
      for (std::int64_t i = 0; i < ho; ++i) {
        const std::int64_t si = reflect(i - pad, h);
        for (std::int64_t j = 0; j < wo; ++j) dst[si * w + reflect(j - pad, w)] += src[i * wo + j];
      }
    }
  });
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  require_nchw(x.shape(), "conv2d input");
  require_nchw(w.shape(), "conv2d weight");
  const std::int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::int64_t cout = w.dim(0);
  const int k = static_cast<int>(w.dim(2));
  CUT_REQUIRE(w.dim(1) == cin && w.dim(3) == k, InvalidArgument,
              "conv2d weight " + shape_str(w.shape()) + " incompatible with input " +
                  shape_str(x.shape()));
  CUT_REQUIRE(stride >= 1 && pad >= 0, InvalidArgument, "conv2d stride/pad");
  CUT_REQUIRE(h + 2 * pad >= k && wd + 2 * pad >= k, InvalidArgument,
              "conv2d kernel larger than padded input " + shape_str(x.shape()));
  if (b.defined()) {
    CUT_REQUIRE(b.value().numel() == cout, InvalidArgument, "conv2d bias size");
  }
  const std::int64_t ho = (h + 2 * pad - k) / stride + 1;
  const std::int64_t wo = (wd + 2 * pad - k) / stride + 1;
  const std::int64_t ckk = cin * k * k, hw = ho * wo;
  Tensor<T> out({n, cout, ho, wo});
  std::vector<T> col(static_cast<std::size_t>(ckk * hw));
  for (std::int64_t i = 0; i < n; ++i) {
    im2col(x.value().ptr() + i * cin * h * wd, cin, h, wd, k, stride, pad, ho, wo, col.data());
    T* o = out.ptr() + i * cout * hw;
    simd::gemm<T>(false, false, cout, hw, ckk, T(1), w.value().ptr(), ckk, col.data(), hw, T(0), o, hw);
    if (b.defined()) {
      for (std::int64_t c = 0; c < cout; ++c) {
        const T bv = b.value()[c];
        for (std::int64_t j = 0; j < hw; ++j) o[c * hw + j] += bv;
      }
    }
  }
  return ag::make_op<T>(std::move(out), {x, w, b}, [=](NodeT<T>& self) {
    const bool gx = wants(self, 0), gw = wants(self, 1), gb = wants(self, 2);
    const auto& xv = vin(self, 0);
    const auto& wv = vin(self, 1);
    std::vector<T> col(static_cast<std::size_t>(ckk * hw));
    for (std::int64_t i = 0; i < n; ++i) {
      const T* dout = self.grad.ptr() + i * cout * hw;
      if (gw) {
        im2col(xv.ptr() + i * cin * h * wd, cin, h, wd, k, stride, pad, ho, wo, col.data());
        simd::gemm<T>(false, true, cout, ckk, hw, T(1), dout, hw, col.data(), hw, T(1),
                      gin(self, 1).ptr(), ckk);
      }
      if (gx) {
        simd::gemm<T>(true, false, ckk, hw, cout, T(1), wv.ptr(), ckk, dout, hw, T(0), col.data(), hw);
        col2im(col.data(), cin, h, wd, k, stride, pad, ho, wo, gin(self, 0).ptr() + i * cin * h * wd);
      }
      if (gb) {
        auto& g = gin(self, 2);
        for (std::int64_t c = 0; c < cout; ++c) {
          T acc = 0;
          for (std::int64_t j = 0; j < hw; ++j) acc += dout[c * hw + j];
          g[c] += acc;
        }
      }
    }
  });
}

template <class T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride,
                        int pad, int output_pad) {
  require_nchw(x.shape(), "conv_transpose2d input");
  require_nchw(w.shape(), "conv_transpose2d weight");
  const std::int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  CUT_REQUIRE(w.dim(0) == cin, InvalidArgument, "conv_transpose2d weight channels");
  CUT_REQUIRE(output_pad >= 0 && output_pad < stride, InvalidArgument,
              "conv_transpose2d output padding must be < stride");
  const std::int64_t cout = w.dim(1);
  const int k = static_cast<int>(w.dim(2));
  const std::int64_t ho = (h - 1) * stride - 2 * pad + k + output_pad;
  const std::int64_t wo = (wd - 1) * stride - 2 * pad + k + output_pad;
  CUT_REQUIRE(ho > 0 && wo > 0, InvalidArgument, "conv_transpose2d empty output");
  if (b.defined()) {
    CUT_REQUIRE(b.value().numel() == cout, InvalidArgument, "conv_transpose2d bias size");
  }
  const std::int64_t ckk = cout * k * k, hw = h * wd, ohw = ho * wo;
  Tensor<T> out({n, cout, ho, wo});
  std::vector<T> col(static_cast<std::size_t>(ckk * hw));
  for (std::int64_t i = 0; i < n; ++i) {
    simd::gemm<T>(true, false, ckk, hw, cin, T(1), w.value().ptr(), ckk,
                  x.value().ptr() + i * cin * hw, hw, T(0), col.data(), hw);
    T* o = out.ptr() + i * cout * ohw;
    col2im(col.data(), cout, ho, wo, k, stride, pad, h, wd, o);
    if (b.defined()) {
      for (std::int64_t c = 0; c < cout; ++c) {
        const T bv = b.value()[c];
        for (std::int64_t j = 0; j < ohw; ++j) o[c * ohw + j] += bv;
      }
    }
  }
  return ag::make_op<T>(std::move(out), {x, w, b}, [=](NodeT<T>& self) {
    const bool gx = wants(self, 0), gw = wants(self, 1), gb = wants(self, 2);
    const auto& xv = vin(self, 0);
    const auto& wv = vin(self, 1);
    std::vector<T> col(static_cast<std::size_t>(ckk * hw));
    for (std::int64_t i = 0; i < n; ++i) {
      const T* dout = self.grad.ptr() + i * cout * ohw;
      if (gx || gw) im2col(dout, cout, ho, wo, k, stride, pad, h, wd, col.data());
      if (gx) {
        simd::gemm<T>(false, false, cin, hw, ckk, T(1), wv.ptr(), ckk, col.data(), hw, T(1),
                      gin(self, 0).ptr() + i * cin * hw, hw);
      }
      if (gw) {
        simd::gemm<T>(false, true, cin, ckk, hw, T(1), xv.ptr() + i * cin * hw, hw, col.data(), hw,
                      T(1), gin(self, 1).ptr(), ckk);
      }
      if (gb) {
        auto& g = gin(self, 2);
        for (std::int64_t c = 0; c < cout; ++c) {
          T acc = 0;
          for (std::int64_t j = 0; j < ohw; ++j) acc += dout[c * ohw + j];
          g[c] += acc;
        }
      }
    }
  });
}

template <class T>
Var<T> instance_norm(const Var<T>& x, T eps) {
  require_nchw(x.shape(), "instance_norm");
  const std::int64_t planes = x.dim(0) * x.dim(1);
  const std::int64_t hw = x.dim(2) * x.dim(3);
  Tensor<T> out(x.shape());
  std::vector<T> inv_std(static_cast<std::size_t>(planes));
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = x.value().ptr() + p * hw;
    double mu = 0;
    for (std::int64_t j = 0; j < hw; ++j) mu += src[j];
    mu /= static_cast<double>(hw);
    double var = 0;
    for (std::int64_t j = 0; j < hw; ++j) var += (src[j] - mu) * (src[j] - mu);
    var /= static_cast<double>(hw);
    const double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
    inv_std[static_cast<std::size_t>(p)] = static_cast<T>(is);
    T* dst = out.ptr() + p * hw;
    for (std::int64_t j = 0; j < hw; ++j) dst[j] = static_cast<T>((src[j] - mu) * is);
  }
  return ag::make_op<T>(std::move(out), {x}, [=, inv_std = std::move(inv_std)](NodeT<T>& self) {
    if (!wants(self, 0)) return;
    auto& g = gin(self, 0);
    for (std::int64_t p = 0; p < planes; ++p) {
      const T* dy = self.grad.ptr() + p * hw;
      const T* y = self.value.ptr() + p * hw;
      double mdy = 0, mdyy = 0;
      for (std::int64_t j = 0; j < hw; ++j) {
        mdy += dy[j];
        mdyy += static_cast<double>(dy[j]) * y[j];
      }
      mdy /= static_cast<double>(hw);
      mdyy /= static_cast<double>(hw);
      const double is = inv_std[static_cast<std::size_t>(p)];
      T* dx = g.ptr() + p * hw;
      for (std::int64_t j = 0; j < hw; ++j) dx[j] += static_cast<T>(is * (dy[j] - mdy - y[j] * mdyy));
    }
  });
}

template <class T>
Var<T> blur_downsample(const Var<T>& x) {
  require_nchw(x.shape(), "blur_downsample");
  const std::int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  CUT_REQUIRE(h >= 2 && w >= 2, InvalidArgument, "blur_downsample needs spatial size >= 2");
  const std::int64_t ho = (h + 1) / 2, wo = (w + 1) / 2;
  static constexpr double f[3] = {0.25, 0.5, 0.25};
  Tensor<T> out({x.dim(0), x.dim(1), ho, wo});
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = x.value().ptr() + p * h * w;
    T* dst = out.ptr() + p * ho * wo;
    for (std::int64_t i = 0; i < ho; ++i)
      for (std::int64_t j = 0; j < wo; ++j) {
        double acc = 0;
        for (int a = 0; a < 3; ++a) {
          const std::int64_t si = reflect(2 * i - 1 + a, h);
          for (int bb = 0; bb < 3; ++bb) acc += f[a] * f[bb] * src[si * w + reflect(2 * j - 1 + bb, w)];
        }
        dst[i * wo + j] = static_cast<T>(acc);
      }
  }
  return ag::make_op<T>(std::move(out), {x}, [=](NodeT<T>& self) {
    if (!wants(self, 0)) return;
    auto& g = gin(self, 0);
    for (std::int64_t p = 0; p < planes; ++p) {
      const T* dy = self.grad.ptr() + p * ho * wo;
      T* dx = g.ptr() + p * h * w;
      for (std::int64_t i = 0; i < ho; ++i)
        for (std::int64_t j = 0; j < wo; ++j) {
          const T gv = dy[i * wo + j];
          for (int a = 0; a < 3; ++a) {
            const std::int64_t si = reflect(2 * i - 1 + a, h);
            for (int bb = 0; bb < 3; ++bb)
              dx[si * w + reflect(2 * j - 1 + bb, w)] += static_cast<T>(f[a] * f[bb]) * gv;
          }
        }
    }
  });
}

template <class T>
Var<T> flip_width(const Var<T>& x) {
  CUT_REQUIRE(x.value().rank() >= 1, InvalidArgument, "flip_width needs rank >= 1");
  const std::int64_t w = x.dim(-1);
  const std::int64_t rows = w == 0 ? 0 : x.value().numel() / w;
  Tensor<T> out(x.shape());
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < w; ++j) out[r * w + j] = x.value()[r * w + (w - 1 - j)];
  return ag::make_op<T>(std::move(out), {x}, [=](NodeT<T>& self) {
    if (!wants(self, 0)) return;
    auto& g = gin(self, 0);
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t j = 0; j < w; ++j) g[r * w + (w - 1 - j)] += self.grad[r * w + j];
  });
}

template <class T>
Var<T> gather_positions(const Var<T>& x, const std::vector<std::int64_t>& positions) {
  require_nchw(x.shape(), "gather_positions");
  const std::int64_t nb = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (auto p : positions) {
    CUT_REQUIRE(p >= 0 && p < hw, InvalidArgument,
                "spatial index " + std::to_string(p) + " out of bounds for " + shape_str(x.shape()));
  }
  const std::int64_t s = static_cast<std::int64_t>(positions.size());
  Tensor<T> out({nb * s, c});
  for (std::int64_t n = 0; n < nb; ++n) {
    const T* base = x.value().ptr() + n * c * hw;
    for (std::int64_t i = 0; i < s; ++i)
      for (std::int64_t ch = 0; ch < c; ++ch)
        out[(n * s + i) * c + ch] = base[ch * hw + positions[static_cast<std::size_t>(i)]];
  }
  return ag::make_op<T>(std::move(out), {x}, [=](NodeT<T>& self) {
    if (!wants(self, 0)) return;
    for (std::int64_t n = 0; n < nb; ++n) {
      T* gbase = gin(self, 0).ptr() + n * c * hw;
      for (std::int64_t i = 0; i < s; ++i)
        for (std::int64_t ch = 0; ch < c; ++ch)
          gbase[ch * hw + positions[static_cast<std::size_t>(i)]] += self.grad[(n * s + i) * c + ch];
    }
  });
}

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  CUT_REQUIRE(x.value().rank() == 2 && w.value().rank() == 2 && w.dim(1) == x.dim(1),
              InvalidArgument,
              "linear: input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()));
  const std::int64_t s = x.dim(0), c = x.dim(1), o = w.dim(0);
  if (b.defined()) CUT_REQUIRE(b.value().numel() == o, InvalidArgument, "linear bias size");
  Tensor<T> out({s, o});
  simd::gemm<T>(false, true, s, o, c, T(1), x.value().ptr(), c, w.value().ptr(), c, T(0), out.ptr(), o);
  if (b.defined()) {
    for (std::int64_t i = 0; i < s; ++i)
      for (std::int64_t j = 0; j < o; ++j) out[i * o + j] += b.value()[j];
  }
  return ag::make_op<T>(std::move(out), {x, w, b}, [=](NodeT<T>& self) {
    if (wants(self, 0)) {
      simd::gemm<T>(false, false, s, c, o, T(1), self.grad.ptr(), o, vin(self, 1).ptr(), c, T(1),
                    gin(self, 0).ptr(), c);
    }
    if (wants(self, 1)) {
      simd::gemm<T>(true, false, o, c, s, T(1), self.grad.ptr(), o, vin(self, 0).ptr(), c, T(1),
                    gin(self, 1).ptr(), c);
    }
    if (wants(self, 2)) {
      auto& g = gin(self, 2);
      for (std::int64_t i = 0; i < s; ++i)
        for (std::int64_t j = 0; j < o; ++j) g[j] += self.grad[i * o + j];
    }
  });
}

template <class T>
Var<T> l2_normalize_rows(const Var<T>& x, T eps) {
  CUT_REQUIRE(x.value().rank() == 2, InvalidArgument, "l2_normalize_rows expects a matrix");
  const std::int64_t s = x.dim(0), k = x.dim(1);
  Tensor<T> out(x.shape());
  std::vector<T> denom(static_cast<std::size_t>(s));
  for (std::int64_t i = 0; i < s; ++i) {
    const T* r = x.value().ptr() + i * k;
    double ss = 0;
    for (std::int64_t j = 0; j < k; ++j) ss += static_cast<double>(r[j]) * r[j];
    const T d = std::max(static_cast<T>(std::sqrt(ss)), eps);
    denom[static_cast<std::size_t>(i)] = d;
    for (std::int64_t j = 0; j < k; ++j) out[i * k + j] = r[j] / d;
  }
  return ag::make_op<T>(std::move(out), {x}, [=, denom = std::move(denom)](NodeT<T>& self) {
    if (!wants(self, 0)) return;
    auto& g = gin(self, 0);
    for (std::int64_t i = 0; i < s; ++i) {
      const T d = denom[static_cast<std::size_t>(i)];
      const T* y = self.value.ptr() + i * k;
      const T* dy = self.grad.ptr() + i * k;
      const bool clamped = d <= eps;
      double proj = 0;
      if (!clamped)
        for (std::int64_t j = 0; j < k; ++j) proj += static_cast<double>(y[j]) * dy[j];
      for (std::int64_t j = 0; j < k; ++j) g[i * k + j] += static_cast<T>((dy[j] - y[j] * proj) / d);
    }
  });
}

template <class T>
Var<T> split_tiles(const Var<T>& x, int tile) {
  require_nchw(x.shape(), "split_tiles");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  CUT_REQUIRE(tile > 0 && h % tile == 0 && w % tile == 0, InvalidArgument,
              "split_tiles: " + shape_str(x.shape()) + " not divisible into " +
                  std::to_string(tile) + "x" + std::to_string(tile) + " tiles");
  const std::int64_t th = h / tile, tw = w / tile;
  Tensor<T> out({n * th * tw, c, tile, tile});
  auto map = [=](std::int64_t b, std::int64_t ch, std::int64_t i, std::int64_t j) {
    const std::int64_t img = b / (th * tw), r = (b / tw) % th, col = b % tw;
    return ((img * c + ch) * h + r * tile + i) * w + col * tile + j;
  };
  std::int64_t o = 0;
  for (std::int64_t b = 0; b < n * th * tw; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i < tile; ++i)
        for (std::int64_t j = 0; j < tile; ++j) out[o++] = x.value()[map(b, ch, i, j)];
  return ag::make_op<T>(std::move(out), {x}, [=](NodeT<T>& self) {
    if (!wants(self, 0)) return;
    auto& g = gin(self, 0);
    std::int64_t o = 0;
    for (std::int64_t b = 0; b < n * th * tw; ++b)
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t i = 0; i < tile; ++i)
          for (std::int64_t j = 0; j < tile; ++j) g[map(b, ch, i, j)] += self.grad[o++];
  });
}

template <class T>
Var<T> mse_const(const Var<T>& x, T target) {
  const std::int64_t n = x.value().numel();
  CUT_REQUIRE(n > 0, InvalidArgument, "mse_const of empty tensor");
  double acc = 0;
  for (T v : x.value().data) acc += (static_cast<double>(v) - target) * (static_cast<double>(v) - target);
  return ag::make_op<T>(Tensor<T>({1}, T(acc / n)), {x}, [=](NodeT<T>& self) {
    if (!wants(self, 0)) return;
    auto& g = gin(self, 0);
    const auto& xv = vin(self, 0);
    const T s = self.grad[0] * T(2) / static_cast<T>(n);
    for (std::int64_t i = 0; i < n; ++i) g[i] += s * (xv[i] - target);
  });
}

template <class T>
Var<T> softplus_mean(const Var<T>& x, T sign) {
  const std::int64_t n = x.value().numel();
  CUT_REQUIRE(n > 0, InvalidArgument, "softplus_mean of empty tensor");
  double acc = 0;
  for (T v : x.value().data) {
    const double z = sign * static_cast<double>(v);
    acc += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
  }
  return ag::make_op<T>(Tensor<T>({1}, T(acc / n)), {x}, [=](NodeT<T>& self) {
    if (!wants(self, 0)) return;
    auto& g = gin(self, 0);
    const auto& xv = vin(self, 0);
    const double s = self.grad[0] / static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      const double z = sign * static_cast<double>(xv[i]);
      const double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      g[i] += static_cast<T>(s * sign * sig);
    }
  });
}

#define CUT_OPS_INSTANTIATE(T)                                                                   \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                          \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                          \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                          \
  template Var<T> scale<T>(const Var<T>&, T);                                                    \
  template Var<T> mul_const<T>(const Var<T>&, const Tensor<T>&);                                 \
  template Var<T> sum<T>(const Var<T>&);                                                         \
  template Var<T> mean<T>(const Var<T>&);                                                        \
  template Var<T> per_sample_sum<T>(const Var<T>&);                                              \
  template Var<T> relu<T>(const Var<T>&);                                                        \
  template Var<T> leaky_relu<T>(const Var<T>&, T);                                               \
  template Var<T> tanh<T>(const Var<T>&);                                                        \
  template Var<T> detach<T>(const Var<T>&);                                                      \
  template Var<T> straight_through<T>(Tensor<T>, const Var<T>&);                                 \
  template Var<T> reflection_pad2d<T>(const Var<T>&, int);                                       \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int);              \
  template Var<T> conv_transpose2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int, int); \
  template Var<T> instance_norm<T>(const Var<T>&, T);                                            \
  template Var<T> blur_downsample<T>(const Var<T>&);                                             \
  template Var<T> flip_width<T>(const Var<T>&);                                                  \
  template Var<T> gather_positions<T>(const Var<T>&, const std::vector<std::int64_t>&); \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                        \
  template Var<T> l2_normalize_rows<T>(const Var<T>&, T);                                        \
  template Var<T> split_tiles<T>(const Var<T>&, int);                                            \
  template Var<T> mse_const<T>(const Var<T>&, T);                                                \
  template Var<T> softplus_mean<T>(const Var<T>&, T);                                            \
  template void im2col<T>(const T*, std::int64_t, std::int64_t, std::int64_t, int, int, int,    \
                          std::int64_t, std::int64_t, T*);                                       \
  template void col2im<T>(const T*, std::int64_t, std::int64_t, std::int64_t, int, int, int,    \
                          std::int64_t, std::int64_t, T*);

CUT_OPS_INSTANTIATE(float)
CUT_OPS_INSTANTIATE(double)

}  // namespace cut::ops
