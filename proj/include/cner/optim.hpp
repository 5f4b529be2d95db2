#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "cner/tensor.hpp"

namespace cner::nn {

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Global L2 norm of all gradients, accumulated in double. Throws
/// NonFiniteError naming the first parameter holding a NaN or infinity.
template <class T>
double gradient_norm(const ParameterList<T>& params) {
  double total = 0.0;
  for (const auto* p : params) {
    for (T g : p->grad.values()) {
      if (!std::isfinite(g)) throw NonFiniteError("non-finite gradient in parameter '" + p->name + "'");
      total += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  return std::sqrt(total);
}

/// Clips the global gradient norm to `clip_norm`, then value -= lr * grad.
/// Returns the pre-clip norm. Gradients are left in place.
template <class T>
double sgd_step(const ParameterList<T>& params, double lr,
                double clip_norm = std::numeric_limits<double>::infinity()) {
  const double norm = gradient_norm(params);
  const double scale = (std::isfinite(clip_norm) && norm > clip_norm) ? clip_norm / norm : 1.0;
  const T step = static_cast<T>(lr * scale);
  if (step == T(0)) return norm;
  for (auto* p : params) {
    T* v = p->value.data();
    const T* g = p->grad.data();
    for (std::size_t i = 0, n = p->value.size(); i < n; ++i) v[i] -= step * g[i];
  }
  return norm;
}

enum class MetricDirection { kLowerIsBetter, kHigherIsBetter };

/// Learning-rate schedule: divide by `anneal_factor` after `patience`
/// consecutive checks without improvement; stop once lr falls below `min_lr`.
struct SgdState {
  double lr = 20.0;
  double anneal_factor = 4.0;
  int patience = 1;
  double clip_norm = 5.0;
  double min_lr = 1e-4;
  MetricDirection direction = MetricDirection::kLowerIsBetter;
  double best_dev_metric = std::numeric_limits<double>::quiet_NaN();
  int epochs_since_improve = 0;
  bool improved = false;  // set by the last maybe_anneal call
  bool stop = false;

  void validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
    if (!(anneal_factor > 1.0)) throw std::invalid_argument("anneal_factor must exceed 1");
    if (patience < 0) throw std::invalid_argument("patience must be non-negative");
    if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be positive");
  }
};

inline SgdState maybe_anneal(SgdState state, double dev_metric) {
  if (!std::isfinite(dev_metric)) throw std::invalid_argument("dev metric must be finite");
  const bool better = std::isnan(state.best_dev_metric) ||
                      (state.direction == MetricDirection::kLowerIsBetter ? dev_metric < state.best_dev_metric
                                                                          : dev_metric > state.best_dev_metric);
  state.improved = better;
  if (better) {
    state.best_dev_metric = dev_metric;
    state.epochs_since_improve = 0;
    return state;
  }
  ++state.epochs_since_improve;
  if (state.epochs_since_improve >= state.patience) {
    state.lr /= state.anneal_factor;
    state.epochs_since_improve = 0;
    if (state.lr < state.min_lr) state.stop = true;
  }
  return state;
}

}  // namespace cner::nn
