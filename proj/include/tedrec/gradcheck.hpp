#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "tedrec/tensor.hpp"

namespace tedrec {

// One quantity the check perturbs: a block input or a parameter.
struct GradVariable {
  std::string name;
  Matrix<double>* value;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_variable;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

// Compares a block's analytic gradients against central differences.
//
// `forward()` evaluates the block at the current variable values.
// `backward(upstream)` must be consistent with the most recent forward() and
// return one gradient matrix per variable, in order. The scalar objective is
// sum(upstream (.) forward()) for a fixed random upstream.
//
// Error per coordinate: |analytic - numeric| / max(1, |analytic|, |numeric|).
inline GradCheckReport gradient_contract(std::vector<GradVariable> variables,
                                         const std::function<Matrix<double>()>& forward,
                                         const std::function<std::vector<Matrix<double>>(const Matrix<double>&)>& backward,
                                         std::uint64_t seed = 17, double step = 1e-5) {
  Matrix<double> y = forward();
  if (!all_finite<double>(y.flat())) throw NumericError("gradient_contract: non-finite forward output");
  Matrix<double> upstream(y.rows(), y.cols());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  for (auto& v : upstream.flat()) v = nd(rng);
  const auto analytic = backward(upstream);
  if (analytic.size() != variables.size()) {
    throw InvalidArgument("gradient_contract: backward returned " + std::to_string(analytic.size()) +
                          " gradients for " + std::to_string(variables.size()) + " variables");
  }

  auto objective = [&] {
    Matrix<double> out = forward();
    if (!all_finite<double>(out.flat())) throw NumericError("gradient_contract: non-finite forward output");
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out.data()[i] * upstream.data()[i];
    return s;
  };

  GradCheckReport report;
  for (std::size_t v = 0; v < variables.size(); ++v) {
    auto& var = variables[v];
    if (!analytic[v].same_shape(*var.value)) {
      throw InvalidArgument("gradient_contract: gradient shape mismatch for " + var.name);
    }
    auto values = var.value->flat();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = objective();
      values[i] = saved - step;
      const double down = objective();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[v].data()[i];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++report.coordinates;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_variable = var.name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace tedrec
