#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "tedrec/tensor.hpp"

namespace tedrec {

struct LossConfig {
  double temperature = 1.0;
};

// Dot products of the sequence representation with every item row.
template <class T>
std::vector<T> item_logits(std::span<const T> seq_repr, MatrixView<const T> items) {
  if (seq_repr.size() != items.cols) throw InvalidArgument("item_logits: dimension mismatch");
  std::vector<T> out(items.rows);
  for (std::size_t i = 0; i < items.rows; ++i) out[i] = dot<T>(seq_repr, items.row(i));
  return out;
}

// In-place numerically stable softmax.
template <class T>
void softmax_inplace(std::span<T> v) {
  if (v.empty()) return;
  const T mx = *std::max_element(v.begin(), v.end());
  T sum{};
  for (auto& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (auto& x : v) x /= sum;
}

// Next-item probabilities over the full item set: softmax(x . e^T).
template <class T>
std::vector<T> score_items(std::span<const T> seq_repr, MatrixView<const T> items) {
  auto p = item_logits(seq_repr, items);
  if (!all_finite<T>(p)) throw NumericError("score_items: non-finite scores");
  softmax_inplace<T>(p);
  return p;
}

// Temperature-scaled cross entropy of a single target against all items.
// `items` holds one row per item, row r <-> item id r + 1. Gradients are
// accumulated (not assigned) into grad_repr and grad_items. Returns the loss.
template <class T>
T cross_entropy_accumulate(std::span<const T> seq_repr, MatrixView<const T> items, std::size_t target,
                           const LossConfig& cfg, std::span<T> grad_repr, MatrixView<T> grad_items,
                           T grad_scale = T{1}) {
  if (target < 1 || target > items.rows) {
    throw InvalidArgument("cross_entropy_loss: target " + std::to_string(target) + " outside [1, " +
                          std::to_string(items.rows) + "]");
  }
  if (!(cfg.temperature > 0)) throw InvalidArgument("cross_entropy_loss: temperature must be positive");
  const T inv_tau = static_cast<T>(1.0 / cfg.temperature);
  auto p = item_logits(seq_repr, items);
  for (auto& v : p) v *= inv_tau;
  if (!all_finite<T>(p)) throw NumericError("cross_entropy_loss: non-finite scores");
  const T mx = *std::max_element(p.begin(), p.end());
  T sum{};
  for (auto v : p) sum += std::exp(v - mx);
  const T log_z = mx + std::log(sum);
  const T loss = log_z - p[target - 1];
  for (auto& v : p) v = std::exp(v - log_z);
  p[target - 1] -= T{1};
  // p now holds dL/dlogit * tau
  for (std::size_t i = 0; i < items.rows; ++i) {
    const T coeff = p[i] * inv_tau * grad_scale;
    if (coeff == T{}) continue;
    axpy<T>(coeff, items.row(i), grad_repr);
    axpy<T>(coeff, seq_repr, grad_items.row(i));
  }
  return std::max(loss, T{});
}

template <class T>
struct LossResult {
  T loss{};
  std::vector<T> grad_repr;
  Matrix<T> grad_items;
};

template <class T>
LossResult<T> cross_entropy_loss(std::span<const T> seq_repr, MatrixView<const T> items, std::size_t target,
                                 const LossConfig& cfg) {
  LossResult<T> r{T{}, std::vector<T>(seq_repr.size()), Matrix<T>(items.rows, items.cols)};
  r.loss = cross_entropy_accumulate<T>(seq_repr, items, target, cfg, r.grad_repr, r.grad_items.view());
  return r;
}

}  // namespace tedrec
