#pragma once

#include <cmath>
#include <cstdint>

#include "tedrec/params.hpp"

namespace tedrec {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Matrix<T>> first_moment;
  std::vector<Matrix<T>> second_moment;

  AdamState() = default;
  AdamState(const ParamStore<T>& params, AdamConfig cfg) : config(cfg) {
    for (const auto& e : params) {
      first_moment.emplace_back(e.value.rows(), e.value.cols());
      second_moment.emplace_back(e.value.rows(), e.value.cols());
    }
  }
};

// One bias-corrected Adam update. Gradients are validated up front so a
// non-finite value leaves parameters and state untouched.
template <class T>
void adam_step(ParamStore<T>& params, const GradStore<T>& grads, AdamState<T>& state) {
  if (!grads.matches(params) || state.first_moment.size() != params.size()) {
    throw InvalidArgument("adam_step: gradient/state shapes do not match the parameter store");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!all_finite<T>(grads[i].flat())) {
      throw NumericError("adam_step: non-finite gradient for parameter '" + params.entry(i).name + "'");
    }
  }
  const auto& cfg = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step_size = static_cast<T>(cfg.lr / bias1);
  const T inv_sqrt_bias2 = static_cast<T>(1.0 / std::sqrt(bias2));
  const T eps = static_cast<T>(cfg.eps);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params.entry(i).value.flat();
    auto g = grads[i].flat();
    auto m = state.first_moment[i].flat();
    auto v = state.second_moment[i].flat();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (T{1} - b1) * g[j];
      v[j] = b2 * v[j] + (T{1} - b2) * g[j] * g[j];
      p[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_bias2 + eps);
    }
    if (!all_finite<T>(p)) {
      throw NumericError("adam_step: parameter '" + params.entry(i).name + "' became non-finite");
    }
  }
}

}  // namespace tedrec
