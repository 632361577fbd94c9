#pragma once

#include <functional>
#include <string>
#include <vector>

#include "residseg/nn/tape.hpp"

namespace residseg::nn {

/// Outcome of comparing analytic against central-difference gradients.
///
/// The per-element error is |analytic - numeric| / max(1, |analytic|, |numeric|):
/// relative for gradients of magnitude above one and absolute below, so
/// entries whose true gradient vanishes (a bias feeding a normalisation,
/// say) do not divide noise by noise.
struct GradCheckReport {
  double max_error = 0.0;
  std::string worst;  // "<input index>[<element>]" of the worst entry
  std::size_t checked = 0;
  bool finite = true;
  bool passed = false;
};

/// Builds a scalar from the given leaves on a fresh tape.
using ScalarFn = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

/// Perturbs every element of every input by ±step and compares the
/// central difference with the reverse-mode gradient.
GradCheckReport gradient_check(const ScalarFn& fn, const std::vector<Tensor4<double>>& inputs, double tolerance,
                               double step = 1e-5);

}  // namespace residseg::nn
