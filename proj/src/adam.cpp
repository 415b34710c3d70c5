#include "cut/adam.hpp"

#include <cmath>

#include "cut/simd/kernels.hpp"

namespace cut {

template <class T>
Adam<T>::Adam(std::vector<ag::Parameter<T>*> params, Options opts)
    : params_(std::move(params)), opts_(opts) {
  CUT_REQUIRE(opts_.lr >= 0 && opts_.beta1 >= 0 && opts_.beta1 < 1 && opts_.beta2 >= 0 &&
                  opts_.beta2 < 1 && opts_.eps > 0,
              InvalidArgument, "invalid Adam hyperparameters");
  for (auto* p : params_) {
    m_.emplace_back(p->value.shape);
    v_.emplace_back(p->value.shape);
  }
}

template <class T>
void Adam<T>::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  const T lr_t = static_cast<T>(lr * std::sqrt(bc2) / bc1);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto* p = params_[i];
    if (p->grad.shape != p->value.shape) p->zero_grad();
    simd::adam<T>(p->value.numel(), p->value.ptr(), p->grad.ptr(), m_[i].ptr(), v_[i].ptr(),
                  static_cast<T>(opts_.beta1), static_cast<T>(opts_.beta2), lr_t,
                  static_cast<T>(opts_.eps));
  }
}

template <class T>
void Adam<T>::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

template <class T>
std::vector<Tensor<T>*> Adam<T>::state() {
  std::vector<Tensor<T>*> out;
  for (auto& m : m_) out.push_back(&m);
  for (auto& v : v_) out.push_back(&v);
  return out;
}

template class Adam<float>;
template class Adam<double>;

}  // namespace cut
