#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cner/optim.hpp"
#include "cner/rng.hpp"
#include "cner/tensor.hpp"

namespace cner::nn {

struct GradCheckOptions {
  double eps = 1e-4;
  std::size_t samples = 64;
  std::uint64_t seed = 7;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// Compares the gradients produced by `analytic_loss` (which must accumulate
/// into the grads of `analytic_params`; they are zeroed first) against central
/// differences of `reference_loss` over `reference_params`. The two lists must
/// describe the same parameters; they differ only when a 32-bit model is
/// checked against its 64-bit twin. A random subset of coordinates is probed.
template <class A, class R>
GradCheckResult grad_check(const std::function<double()>& analytic_loss, const ParameterList<A>& analytic_params,
                           const std::function<double()>& reference_loss, const ParameterList<R>& reference_params,
                           const GradCheckOptions& options = {}) {
  if (!(options.eps >= 1e-5 && options.eps <= 1e-2)) throw std::invalid_argument("eps must lie in [1e-5, 1e-2]");
  if (analytic_params.size() != reference_params.size()) throw DimensionError("parameter lists differ in length");
  for (std::size_t i = 0; i < analytic_params.size(); ++i) {
    if (analytic_params[i]->value.dims() != reference_params[i]->value.dims()) {
      throw DimensionError("parameter '" + analytic_params[i]->name + "' differs in shape from its reference");
    }
  }

  zero_grads(analytic_params);
  const double base = analytic_loss();
  if (!std::isfinite(base)) throw NonFiniteError("grad_check: loss is not finite");

  std::vector<std::pair<std::size_t, std::size_t>> coords;  // (parameter, flat index)
  std::size_t total = 0;
  for (const auto* p : reference_params) total += p->value.size();
  auto locate = [&](std::size_t flat) {
    for (std::size_t k = 0; k < reference_params.size(); ++k) {
      const std::size_t n = reference_params[k]->value.size();
      if (flat < n) return std::make_pair(k, flat);
      flat -= n;
    }
    throw std::logic_error("coordinate out of range");
  };
  if (total <= options.samples) {
    for (std::size_t f = 0; f < total; ++f) coords.push_back(locate(f));
  } else {
    Rng rng(options.seed);
    std::set<std::size_t> picked;
    while (picked.size() < options.samples) picked.insert(rng.index(total));
    for (std::size_t f : picked) coords.push_back(locate(f));
  }

  GradCheckResult result;
  for (const auto& [k, idx] : coords) {
    R& v = reference_params[k]->value[idx];
    const R original = v;
    v = static_cast<R>(static_cast<double>(original) + options.eps);
    const double up_at = static_cast<double>(v);
    const double up = reference_loss();
    v = static_cast<R>(static_cast<double>(original) - options.eps);
    const double down_at = static_cast<double>(v);
    const double down = reference_loss();
    v = original;
    if (!std::isfinite(up) || !std::isfinite(down)) throw NonFiniteError("grad_check: perturbed loss is not finite");
    const double numeric = (up - down) / (up_at - down_at);
    const double analytic = static_cast<double>(analytic_params[k]->grad[idx]);
    const double err = relative_error(analytic, numeric);
    ++result.coordinates;
    if (err >= result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_parameter = analytic_params[k]->name;
      result.worst_index = idx;
      result.worst_analytic = analytic;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

/// Single-model form: `loss_fn(true)` must accumulate gradients, `loss_fn(false)`
/// only evaluate.
template <class T>
GradCheckResult grad_check(const std::function<double(bool)>& loss_fn, const ParameterList<T>& params,
                           const GradCheckOptions& options = {}) {
  return grad_check<T, T>([&] { return loss_fn(true); }, params, [&] { return loss_fn(false); }, params, options);
}

}  // namespace cner::nn
