#pragma once

// Shared helpers for the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "cut/autograd.hpp"
#include "cut/rng.hpp"

namespace cut::testing {

template <class T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(scale * standard_normal(rng));
  return t;
}

/// |a - b|_2 / max(|b|_2, floor)
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-12) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), floor);
}

/// Central differences of a scalar function of the given value buffers.
inline std::vector<double> numeric_gradient(const std::function<double()>& f, std::vector<double*> values,
                                            double eps = 1e-6) {
  std::vector<double> g;
  for (double* v : values) {
    const double old = *v;
    *v = old + eps;
    const double fp = f();
    *v = old - eps;
    const double fm = f();
    *v = old;
    g.push_back((fp - fm) / (2 * eps));
  }
  return g;
}

/// Relative error between backprop and central differences for a scalar
/// function of input tensors.
inline double gradcheck_inputs(const std::function<ag::Var<double>(const std::vector<ag::Var<double>>&)>& f,
                               std::vector<Tensor<double>> inputs, double eps = 1e-6) {
  std::vector<ag::Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(ag::input<double>(t, true));
  ag::backward(f(vars));
  std::vector<double> analytic;
  for (const auto& v : vars)
    for (double g : v.grad().data) analytic.push_back(g);
  auto eval = [&] {
    std::vector<ag::Var<double>> c;
    for (const auto& t : inputs) c.push_back(ag::constant<double>(t));
    return f(c).item();
  };
  std::vector<double*> ptrs;
  for (auto& t : inputs)
    for (auto& v : t.data) ptrs.push_back(&v);
  return relative_error(analytic, numeric_gradient(eval, ptrs, eps));
}

/// Same for parameters: `f` builds the graph from the current values.
inline double gradcheck_params(const std::function<ag::Var<double>()>& f,
                               const std::vector<ag::Parameter<double>*>& params, double eps = 1e-6,
                               std::size_t max_entries = 0) {
  for (auto* p : params) p->zero_grad();
  ag::backward(f());
  std::vector<double> analytic;
  std::vector<double*> ptrs;
  for (auto* p : params)
    for (std::size_t i = 0; i < p->value.data.size(); ++i) {
      analytic.push_back(p->grad.data[i]);
      ptrs.push_back(&p->value.data[i]);
    }
  if (max_entries > 0 && ptrs.size() > max_entries) {
    const std::size_t stride = ptrs.size() / max_entries + 1;
    std::vector<double> a2;
    std::vector<double*> p2;
    for (std::size_t i = 0; i < ptrs.size(); i += stride) {
      a2.push_back(analytic[i]);
      p2.push_back(ptrs[i]);
    }
    analytic.swap(a2);
    ptrs.swap(p2);
  }
  return relative_error(analytic, numeric_gradient([&] { return f().item(); }, ptrs, eps));
}

/// Fresh empty directory under the system temp dir, removed on destruction.
struct ScratchDir {
  std::filesystem::path path;
  explicit ScratchDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() / ("cut_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
};

}  // namespace cut::testing
