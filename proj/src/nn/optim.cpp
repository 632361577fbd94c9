#include "residseg/nn/optim.hpp"

#include <cmath>

#include "residseg/error.hpp"

namespace residseg::nn {

template <typename T>
void Adam<T>::step(ParameterSet<T>& params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.size(), 0.0);
      v_.emplace_back(p.value.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ShapeError("Adam: parameter set changed between steps");
  ++t_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = options_.learning_rate;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto& m = m_[k];
    auto& v = v_[k];
    if (m.size() != p.value.size()) throw ShapeError("Adam: state shape mismatch for '" + p.name + "'");
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = p.grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      if (lr == 0.0) continue;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p.value[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + options_.eps));
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace residseg::nn
