#include "residseg/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "residseg/error.hpp"

namespace residseg::nn {
namespace {

double evaluate(const ScalarFn& fn, const std::vector<Tensor4<double>>& inputs) {
  Tape<double> tape(false);
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const auto& x : inputs) leaves.push_back(tape.leaf(x));
  return tape.value(fn(tape, leaves))[0];
}

}  // namespace

GradCheckReport gradient_check(const ScalarFn& fn, const std::vector<Tensor4<double>>& inputs, double tolerance,
                               double step) {
  GradCheckReport report;

  std::vector<Tensor4<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var> leaves;
    for (const auto& x : inputs) leaves.push_back(tape.leaf(x));
    Var out = fn(tape, leaves);
    if (tape.value(out).size() != 1) throw ShapeError("gradient_check: function must return a scalar");
    tape.backward(out);
    for (Var v : leaves) analytic.push_back(tape.grad(v));
  }

  std::vector<Tensor4<double>> probe = inputs;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double a = analytic[k][i];
      if (!std::isfinite(a)) {
        report.finite = false;
        report.worst = std::to_string(k) + "[" + std::to_string(i) + "]";
        report.max_error = INFINITY;
        return report;
      }
      const double orig = probe[k][i];
      probe[k][i] = orig + step;
      const double fp = evaluate(fn, probe);
      probe[k][i] = orig - step;
      const double fm = evaluate(fn, probe);
      probe[k][i] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++report.checked;
      if (!(err <= report.max_error)) {
        report.max_error = err;
        report.worst = std::to_string(k) + "[" + std::to_string(i) + "]";
      }
    }
  }
  report.passed = report.finite && report.max_error < tolerance;
  return report;
}

}  // namespace residseg::nn
