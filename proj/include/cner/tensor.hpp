#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cner/rng.hpp"

namespace cner::nn {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Row-major array of rank 1 to 3; extents may be zero. A default-constructed
/// array is empty (rank 0) and only serves as a placeholder.
template <class T>
class DenseArray {
 public:
  using value_type = T;

  DenseArray() = default;

  explicit DenseArray(std::vector<std::size_t> dims, T fill = T(0)) : dims_(std::move(dims)) {
    if (dims_.empty() || dims_.size() > 3) throw DimensionError("array rank must be 1, 2 or 3");
    data_.assign(product(dims_), fill);
  }

  DenseArray(std::vector<std::size_t> dims, std::vector<T> values) : DenseArray(std::move(dims)) {
    if (values.size() != data_.size()) {
      throw DimensionError("value count " + std::to_string(values.size()) + " does not match dims");
    }
    data_ = std::move(values);
  }

  static DenseArray vector(std::vector<T> values) {
    const std::size_t n = values.size();
    return DenseArray({n}, std::move(values));
  }

  std::size_t rank() const { return dims_.size(); }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * dims_[1] + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * dims_[1] + j]; }

  T& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }

  /// Contiguous slice along the leading axis.
  std::span<T> row(std::size_t i) {
    const std::size_t stride = dims_[0] ? data_.size() / dims_[0] : 0;
    return std::span<T>(data_).subspan(i * stride, stride);
  }
  std::span<const T> row(std::size_t i) const {
    const std::size_t stride = dims_[0] ? data_.size() / dims_[0] : 0;
    return std::span<const T>(data_).subspan(i * stride, stride);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  DenseArray<U> cast() const {
    DenseArray<U> out(dims_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool operator==(const DenseArray&) const = default;

 private:
  static std::size_t product(const std::vector<std::size_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
  }

  std::vector<std::size_t> dims_;
  std::vector<T> data_;
};

template <class T>
struct Parameter {
  std::string name;
  DenseArray<T> value;
  DenseArray<T> grad;

  Parameter() = default;
  Parameter(std::string n, std::vector<std::size_t> dims)
      : name(std::move(n)), value(dims), grad(std::move(dims)) {}

  void zero_grad() { grad.fill(T(0)); }
};

template <class T>
using ParameterList = std::vector<Parameter<T>*>;

/// Sorts by name and rejects duplicates.
template <class T>
ParameterList<T> sorted_by_name(ParameterList<T> params) {
  std::sort(params.begin(), params.end(), [](auto* a, auto* b) { return a->name < b->name; });
  for (std::size_t i = 1; i < params.size(); ++i) {
    if (params[i]->name == params[i - 1]->name) {
      throw std::logic_error("duplicate parameter name '" + params[i]->name + "'");
    }
  }
  return params;
}

template <class T>
void zero_grads(const ParameterList<T>& params) {
  for (auto* p : params) p->zero_grad();
}

/// Uniform in [-sqrt(1/fan_in), +sqrt(1/fan_in)], drawn in double precision so
/// float and double models built from one seed agree up to rounding.
template <class T>
void init_uniform(DenseArray<T>& array, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (auto& v : array.values()) v = static_cast<T>(rng.uniform(-bound, bound));
}

/// Copies parameter values between two models with identical parameter
/// names and shapes (e.g. a float model and its double twin).
template <class A, class B>
void copy_parameter_values(const ParameterList<A>& from, const ParameterList<B>& to) {
  auto src = sorted_by_name(from);
  auto dst = sorted_by_name(to);
  if (src.size() != dst.size()) throw DimensionError("parameter lists differ in length");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i]->name != dst[i]->name || src[i]->value.dims() != dst[i]->value.dims()) {
      throw DimensionError("parameter mismatch at '" + src[i]->name + "'");
    }
    std::transform(src[i]->value.data(), src[i]->value.data() + src[i]->value.size(),
                   dst[i]->value.data(), [](A v) { return static_cast<B>(v); });
  }
}

}  // namespace cner::nn
