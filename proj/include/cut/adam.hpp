#pragma once

// Adam over a fixed list of parameters. Moment buffers are owned here and
// indexed in parameter order, which is also the checkpoint order.

#include <cstdint>
#include <vector>

#include "cut/autograd.hpp"

namespace cut {

template <class T>
class Adam {
 public:
  struct Options {
    double lr = 0.002;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() = default;
  Adam(std::vector<ag::Parameter<T>*> params, Options opts);

  /// Applies one update using the accumulated Parameter::grad and the given
  /// learning rate.
  void step(double lr);
  void zero_grad();

  std::int64_t steps() const { return t_; }
  const Options& options() const { return opts_; }
  const std::vector<ag::Parameter<T>*>& params() const { return params_; }

  /// Moment buffers in parameter order (m for every parameter, then v).
  std::vector<Tensor<T>*> state();
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  std::vector<ag::Parameter<T>*> params_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  Options opts_;
  std::int64_t t_ = 0;
};

}  // namespace cut
