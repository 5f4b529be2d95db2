#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cner/tensor.hpp"
#include "cner/text_corpus.hpp"

namespace cner {

// Linear-chain CRF over K tags. Emissions are [steps x K]; transitions are
// [(K+2) x (K+2)] with transitions(i, j) scoring i -> j, row/column K the
// virtual START state and K+1 the virtual STOP state. A path y scores
//   trans(START, y0) + sum_t emit(t, y_t) + sum_t trans(y_{t-1}, y_t) + trans(y_last, STOP).
// All recursions run in double regardless of T.

inline constexpr double kCrfSentinel = -1e4;

inline std::size_t crf_start(std::size_t k) { return k; }
inline std::size_t crf_stop(std::size_t k) { return k + 1; }

namespace detail {

template <class T>
std::size_t crf_check(const nn::DenseArray<T>& emissions, const nn::DenseArray<T>& transitions) {
  if (emissions.rank() != 2 || emissions.dim(0) == 0 || emissions.dim(1) == 0) {
    throw nn::DimensionError("crf: emissions must be a non-empty [steps x K] matrix");
  }
  const std::size_t k = emissions.dim(1);
  if (transitions.rank() != 2 || transitions.dim(0) != k + 2 || transitions.dim(1) != k + 2) {
    throw nn::DimensionError("crf: transitions must be [" + std::to_string(k + 2) + " x " + std::to_string(k + 2) + "]");
  }
  if (!emissions.all_finite()) throw std::invalid_argument("crf: emissions are not finite");
  if (!transitions.all_finite()) throw std::invalid_argument("crf: transitions are not finite");
  return k;
}

inline double log_sum_exp(std::span<const double> v) {
  double peak = -std::numeric_limits<double>::infinity();
  for (double x : v) peak = std::max(peak, x);
  if (!std::isfinite(peak)) return peak;
  double total = 0.0;
  for (double x : v) total += std::exp(x - peak);
  return peak + std::log(total);
}

/// alpha[t][j]: log-sum over prefixes ending in tag j at step t.
template <class T>
std::vector<std::vector<double>> crf_alpha(const nn::DenseArray<T>& em, const nn::DenseArray<T>& tr, std::size_t k) {
  const std::size_t n = em.dim(0);
  std::vector<std::vector<double>> alpha(n, std::vector<double>(k));
  for (std::size_t j = 0; j < k; ++j) alpha[0][j] = double(tr(crf_start(k), j)) + double(em(0, j));
  std::vector<double> terms(k);
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t i = 0; i < k; ++i) terms[i] = alpha[t - 1][i] + double(tr(i, j));
      alpha[t][j] = log_sum_exp(terms) + double(em(t, j));
    }
  }
  return alpha;
}

/// beta[t][i]: log-sum over suffixes after step t given tag i at t, STOP included.
template <class T>
std::vector<std::vector<double>> crf_beta(const nn::DenseArray<T>& em, const nn::DenseArray<T>& tr, std::size_t k) {
  const std::size_t n = em.dim(0);
  std::vector<std::vector<double>> beta(n, std::vector<double>(k));
  for (std::size_t i = 0; i < k; ++i) beta[n - 1][i] = double(tr(i, crf_stop(k)));
  std::vector<double> terms(k);
  for (std::size_t t = n - 1; t-- > 0;) {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) terms[j] = double(tr(i, j)) + double(em(t + 1, j)) + beta[t + 1][j];
      beta[t][i] = log_sum_exp(terms);
    }
  }
  return beta;
}

template <class T>
double crf_log_z(const std::vector<std::vector<double>>& alpha, const nn::DenseArray<T>& tr, std::size_t k) {
  std::vector<double> terms(k);
  for (std::size_t j = 0; j < k; ++j) terms[j] = alpha.back()[j] + double(tr(j, crf_stop(k)));
  return log_sum_exp(terms);
}

}  // namespace detail

/// log of the sum over all K^steps paths of exp(path score).
template <class T>
double crf_log_partition(const nn::DenseArray<T>& emissions, const nn::DenseArray<T>& transitions) {
  const std::size_t k = detail::crf_check(emissions, transitions);
  return detail::crf_log_z(detail::crf_alpha(emissions, transitions, k), transitions, k);
}

template <class T>
double crf_path_score(const nn::DenseArray<T>& emissions, const nn::DenseArray<T>& transitions,
                      std::span<const int> path) {
  const std::size_t k = detail::crf_check(emissions, transitions);
  if (path.size() != emissions.dim(0)) {
    throw nn::DimensionError("crf: path has " + std::to_string(path.size()) + " tags for " +
                             std::to_string(emissions.dim(0)) + " steps");
  }
  for (int y : path) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw std::out_of_range("crf: tag id " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  auto at = [](int y) { return static_cast<std::size_t>(y); };
  double score = double(transitions(crf_start(k), at(path[0])));
  for (std::size_t t = 0; t < path.size(); ++t) {
    score += double(emissions(t, at(path[t])));
    if (t) score += double(transitions(at(path[t - 1]), at(path[t])));
  }
  return score + double(transitions(at(path.back()), crf_stop(k)));
}

/// Posterior tag marginals p(y_t = j), [steps x K].
template <class T>
std::vector<std::vector<double>> crf_marginals(const nn::DenseArray<T>& emissions,
                                               const nn::DenseArray<T>& transitions) {
  const std::size_t k = detail::crf_check(emissions, transitions);
  const auto alpha = detail::crf_alpha(emissions, transitions, k);
  const auto beta = detail::crf_beta(emissions, transitions, k);
  const double log_z = detail::crf_log_z(alpha, transitions, k);
  std::vector<std::vector<double>> out(alpha.size(), std::vector<double>(k));
  for (std::size_t t = 0; t < alpha.size(); ++t) {
    for (std::size_t j = 0; j < k; ++j) out[t][j] = std::exp(alpha[t][j] + beta[t][j] - log_z);
  }
  return out;
}

/// logZ - score(gold). When given, gradients scaled by `scale` are added into
/// `d_emissions` ([steps x K]) and `d_transitions` ([(K+2) x (K+2)]).
template <class T>
double crf_nll(const nn::DenseArray<T>& emissions, const nn::DenseArray<T>& transitions, std::span<const int> gold,
               nn::DenseArray<T>* d_emissions = nullptr, nn::DenseArray<T>* d_transitions = nullptr,
               double scale = 1.0) {
  const double gold_score = crf_path_score(emissions, transitions, gold);
  const std::size_t k = emissions.dim(1);
  const std::size_t n = emissions.dim(0);
  const auto alpha = detail::crf_alpha(emissions, transitions, k);
  const double log_z = detail::crf_log_z(alpha, transitions, k);
  const double loss = log_z - gold_score;
  if (!d_emissions && !d_transitions) return loss;
  if (d_emissions && d_emissions->dims() != emissions.dims()) throw nn::DimensionError("crf: d_emissions shape");
  if (d_transitions && d_transitions->dims() != transitions.dims()) throw nn::DimensionError("crf: d_transitions shape");

  const auto beta = detail::crf_beta(emissions, transitions, k);
  auto at = [](int y) { return static_cast<std::size_t>(y); };
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      const double m = std::exp(alpha[t][j] + beta[t][j] - log_z);
      if (d_emissions) (*d_emissions)(t, j) += static_cast<T>(scale * m);
      if (d_transitions && t == 0) (*d_transitions)(crf_start(k), j) += static_cast<T>(scale * m);
      if (d_transitions && t == n - 1) (*d_transitions)(j, crf_stop(k)) += static_cast<T>(scale * m);
    }
    if (d_emissions) (*d_emissions)(t, at(gold[t])) -= static_cast<T>(scale);
  }
  if (d_transitions) {
    for (std::size_t t = 1; t < n; ++t) {
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const double pair = std::exp(alpha[t - 1][i] + double(transitions(i, j)) + double(emissions(t, j)) +
                                       beta[t][j] - log_z);
          (*d_transitions)(i, j) += static_cast<T>(scale * pair);
        }
      }
      (*d_transitions)(at(gold[t - 1]), at(gold[t])) -= static_cast<T>(scale);
    }
    (*d_transitions)(crf_start(k), at(gold.front())) -= static_cast<T>(scale);
    (*d_transitions)(at(gold.back()), crf_stop(k)) -= static_cast<T>(scale);
  }
  return loss;
}

struct ViterbiResult {
  std::vector<int> path;
  double score = 0.0;
};

/// Highest-scoring path. Ties go to the lowest tag id, both when choosing a
/// predecessor and when choosing the final tag.
template <class T>
ViterbiResult viterbi_decode(const nn::DenseArray<T>& emissions, const nn::DenseArray<T>& transitions) {
  const std::size_t k = detail::crf_check(emissions, transitions);
  const std::size_t n = emissions.dim(0);
  std::vector<std::vector<double>> delta(n, std::vector<double>(k));
  std::vector<std::vector<std::size_t>> back(n, std::vector<std::size_t>(k, 0));
  for (std::size_t j = 0; j < k; ++j) delta[0][j] = double(transitions(crf_start(k), j)) + double(emissions(0, j));
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      std::size_t best = 0;
      double best_score = delta[t - 1][0] + double(transitions(0, j));
      for (std::size_t i = 1; i < k; ++i) {
        const double s = delta[t - 1][i] + double(transitions(i, j));
        if (s > best_score) {
          best_score = s;
          best = i;
        }
      }
      delta[t][j] = best_score + double(emissions(t, j));
      back[t][j] = best;
    }
  }
  std::size_t last = 0;
  double best_score = delta[n - 1][0] + double(transitions(0, crf_stop(k)));
  for (std::size_t j = 1; j < k; ++j) {
    const double s = delta[n - 1][j] + double(transitions(j, crf_stop(k)));
    if (s > best_score) {
      best_score = s;
      last = j;
    }
  }
  ViterbiResult out;
  out.path.assign(n, 0);
  out.path[n - 1] = static_cast<int>(last);
  for (std::size_t t = n - 1; t > 0; --t) {
    out.path[t - 1] = static_cast<int>(back[t][static_cast<std::size_t>(out.path[t])]);
  }
  out.score = best_score;
  return out;
}

// ---------------------------------------------------------------------------
// BIO structure

/// Whether `from -> to` may occur in a well-formed BIO sequence. `from` may be
/// START and `to` may be STOP; nothing enters START and nothing leaves STOP.
inline bool bio_transition_allowed(const TagSet& tags, std::size_t from, std::size_t to) {
  const std::size_t k = static_cast<std::size_t>(tags.size());
  if (to == crf_start(k) || from == crf_stop(k)) return false;
  if (to == crf_stop(k)) return true;
  const auto to_parts = parse_tag(tags.tag(static_cast<int>(to)));
  if (to_parts->prefix != TagPrefix::kInside) return true;
  if (from == crf_start(k)) return false;
  const auto from_parts = parse_tag(tags.tag(static_cast<int>(from)));
  return from_parts->prefix != TagPrefix::kOutside && from_parts->type == to_parts->type;
}

/// Boolean mask over the transition matrix, true where the sentinel applies.
inline std::vector<bool> bio_forbidden_mask(const TagSet& tags) {
  const std::size_t m = static_cast<std::size_t>(tags.size()) + 2;
  std::vector<bool> mask(m * m, false);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) mask[i * m + j] = !bio_transition_allowed(tags, i, j);
  }
  return mask;
}

template <class T>
void clamp_transitions(nn::DenseArray<T>& transitions, const std::vector<bool>& forbidden) {
  if (forbidden.size() != transitions.size()) throw nn::DimensionError("crf: mask does not match transitions");
  for (std::size_t i = 0; i < forbidden.size(); ++i) {
    if (forbidden[i]) transitions[i] = static_cast<T>(kCrfSentinel);
  }
}

}  // namespace cner
