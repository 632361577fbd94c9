#pragma once

#include <cstddef>
#include <deque>
#include <string>
#include <vector>

#include "residseg/nn/tensor.hpp"

namespace residseg::nn {

/// A trainable tensor with its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor4<T> value;
  Tensor4<T> grad;

  Parameter(std::string name_, Tensor4<T> value_)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T{0}); }
};

/// Ordered collection of uniquely named parameters. References stay valid
/// as new parameters are added.
template <typename T>
class ParameterSet {
 public:
  Parameter<T>& add(std::string name, Tensor4<T> value);

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }

  Parameter<T>* find(const std::string& name);
  const Parameter<T>* find(const std::string& name) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t element_count() const;
  std::vector<std::string> names() const;
  void zero_grad();

 private:
  std::deque<Parameter<T>> params_;
};

}  // namespace residseg::nn
