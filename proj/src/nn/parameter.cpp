#include "residseg/nn/parameter.hpp"

#include <algorithm>

#include "residseg/error.hpp"

namespace residseg::nn {

template <typename T>
Parameter<T>& ParameterSet<T>::add(std::string name, Tensor4<T> value) {
  if (find(name) != nullptr) throw Error("duplicate parameter name '" + name + "'");
  return params_.emplace_back(std::move(name), std::move(value));
}

template <typename T>
Parameter<T>* ParameterSet<T>::find(const std::string& name) {
  auto it = std::find_if(params_.begin(), params_.end(), [&](const auto& p) { return p.name == name; });
  return it == params_.end() ? nullptr : &*it;
}

template <typename T>
const Parameter<T>* ParameterSet<T>::find(const std::string& name) const {
  auto it = std::find_if(params_.begin(), params_.end(), [&](const auto& p) { return p.name == name; });
  return it == params_.end() ? nullptr : &*it;
}

template <typename T>
std::size_t ParameterSet<T>::element_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.value.size();
  return total;
}

template <typename T>
std::vector<std::string> ParameterSet<T>::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.name);
  return out;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template class ParameterSet<float>;
template class ParameterSet<double>;

}  // namespace residseg::nn
