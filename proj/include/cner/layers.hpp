#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cner/rng.hpp"
#include "cner/tensor.hpp"

namespace cner::nn {

template <class T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// ---------------------------------------------------------------------------
// Affine maps. W is [out x in] row-major.

/// y = W x + b
template <class T>
void affine(const DenseArray<T>& w, const DenseArray<T>& b, std::span<const T> x, std::span<T> y) {
  const std::size_t out = w.dim(0);
  const std::size_t in = w.dim(1);
  const T* wp = w.data();
  for (std::size_t r = 0; r < out; ++r) {
    T acc = b[r];
    const T* wr = wp + r * in;
    for (std::size_t c = 0; c < in; ++c) acc += wr[c] * x[c];
    y[r] = acc;
  }
}

/// dW += dy x^T, db += dy, dx += W^T dy. `dx` may be empty to skip it.
template <class T>
void affine_backward(const DenseArray<T>& w, std::span<const T> x, std::span<const T> dy,
                     DenseArray<T>& dw, DenseArray<T>* db, std::span<T> dx) {
  const std::size_t out = w.dim(0);
  const std::size_t in = w.dim(1);
  const T* wp = w.data();
  T* dwp = dw.data();
  for (std::size_t r = 0; r < out; ++r) {
    const T g = dy[r];
    if (db) (*db)[r] += g;
    if (g == T(0)) continue;
    T* dwr = dwp + r * in;
    for (std::size_t c = 0; c < in; ++c) dwr[c] += g * x[c];
    if (!dx.empty()) {
      const T* wr = wp + r * in;
      for (std::size_t c = 0; c < in; ++c) dx[c] += wr[c] * g;
    }
  }
}

// ---------------------------------------------------------------------------
// Softmax and cross-entropy

/// Max-subtracted softmax over `logits`, in place.
template <class T>
void softmax_inplace(std::span<T> logits) {
  T peak = -std::numeric_limits<T>::infinity();
  for (T v : logits) peak = std::max(peak, v);
  T total = 0;
  for (T& v : logits) {
    v = std::exp(v - peak);
    total += v;
  }
  for (T& v : logits) v /= total;
}

/// softmax(W h + b). W is [V x d_h], b is [V].
template <class T>
DenseArray<T> linear_softmax(const DenseArray<T>& h, const DenseArray<T>& w, const DenseArray<T>& b) {
  if (w.rank() != 2) throw DimensionError("linear_softmax: W must be a matrix");
  if (h.rank() != 1 || h.size() != w.dim(1)) {
    throw DimensionError("linear_softmax: h has " + std::to_string(h.size()) + " entries, W expects " +
                         std::to_string(w.dim(1)));
  }
  if (b.rank() != 1 || b.size() != w.dim(0)) {
    throw DimensionError("linear_softmax: b has " + std::to_string(b.size()) + " entries, W has " +
                         std::to_string(w.dim(0)) + " rows");
  }
  DenseArray<T> out({w.dim(0)});
  affine(w, b, h.values(), out.values());
  softmax_inplace(out.values());
  return out;
}

/// -ln p[target], in nats.
template <class T>
double cross_entropy(const DenseArray<T>& probabilities, std::size_t target) {
  if (target >= probabilities.size()) {
    throw std::out_of_range("cross_entropy: target " + std::to_string(target) + " outside [0, " +
                            std::to_string(probabilities.size()) + ")");
  }
  const double p = static_cast<double>(probabilities[target]);
  return p <= 0.0 ? -std::log(std::numeric_limits<double>::denorm_min()) : -std::log(p);
}

/// Output layer: softmax(W h + b) scored with cross-entropy.
template <class T>
struct SoftmaxLayer {
  Parameter<T> weight;  // [V x d]
  Parameter<T> bias;    // [V]

  SoftmaxLayer() = default;
  SoftmaxLayer(const std::string& prefix, std::size_t input_dim, std::size_t classes)
      : weight(prefix + ".weight", {classes, input_dim}), bias(prefix + ".bias", {classes}) {}

  std::size_t input_dim() const { return weight.value.dim(1); }
  std::size_t classes() const { return weight.value.dim(0); }

  void init(Rng& rng) {
    init_uniform(weight.value, input_dim(), rng);
    bias.value.fill(T(0));
  }

  void collect(ParameterList<T>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  /// Returns the loss; with `dh` non-empty, accumulates parameter gradients
  /// scaled by `scale` and adds scale * dL/dh into `dh`.
  double loss(std::span<const T> h, std::size_t target, std::vector<T>& scratch, T scale = T(1),
              std::span<T> dh = {}, bool accumulate = false) {
    scratch.resize(classes());
    affine(weight.value, bias.value, h, std::span<T>(scratch));
    softmax_inplace(std::span<T>(scratch));
    const double p = static_cast<double>(scratch[target]);
    const double nats = p <= 0.0 ? -std::log(std::numeric_limits<double>::denorm_min()) : -std::log(p);
    if (accumulate) {
      scratch[target] -= T(1);
      for (auto& v : scratch) v *= scale;
      affine_backward(weight.value, h, std::span<const T>(scratch), weight.grad, &bias.grad, dh);
    }
    return nats;
  }
};

// ---------------------------------------------------------------------------
// LSTM

/// Recurrent state: `r` is the layer output fed back (the projected hidden
/// state when a projection is present, otherwise h), `c` the memory cell.
template <class T>
struct LstmState {
  std::vector<T> r;
  std::vector<T> c;

  bool operator==(const LstmState&) const = default;
};

template <class T>
struct LstmStepCache {
  std::vector<T> input;   // [x; r_prev]
  std::vector<T> gates;   // activated i, f, g, o
  std::vector<T> c_prev;
  std::vector<T> tanh_c;
  std::vector<T> h;       // o * tanh(c), before projection
};

/// One LSTM layer with gate order (input, forget, cell, output):
///   z = W [x; r_prev] + b
///   i = sig(z_i)  f = sig(z_f)  g = tanh(z_g)  o = sig(z_o)
///   c = f * c_prev + i * g
///   h = o * tanh(c)
///   r = P h when a projection is configured, otherwise r = h.
template <class T>
class LstmLayer {
 public:
  LstmLayer() = default;
  LstmLayer(const std::string& prefix, std::size_t input_dim, std::size_t hidden_dim,
            std::size_t projection_dim = 0)
      : input_dim_(input_dim),
        hidden_dim_(hidden_dim),
        projection_dim_(projection_dim),
        weight_(prefix + ".weight", {4 * hidden_dim, input_dim + (projection_dim ? projection_dim : hidden_dim)}),
        bias_(prefix + ".bias", {4 * hidden_dim}) {
    if (projection_dim) projection_ = Parameter<T>(prefix + ".projection", {projection_dim, hidden_dim});
  }

  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden_dim() const { return hidden_dim_; }
  std::size_t output_dim() const { return projection_dim_ ? projection_dim_ : hidden_dim_; }
  bool has_projection() const { return projection_dim_ != 0; }

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }
  Parameter<T>& projection() { return projection_; }
  const Parameter<T>& weight() const { return weight_; }
  const Parameter<T>& bias() const { return bias_; }
  const Parameter<T>& projection() const { return projection_; }

  /// Uniform fan-in init; forget-gate bias 1, other biases 0.
  void init(Rng& rng) {
    init_uniform(weight_.value, weight_.value.dim(1), rng);
    bias_.value.fill(T(0));
    for (std::size_t k = hidden_dim_; k < 2 * hidden_dim_; ++k) bias_.value[k] = T(1);
    if (has_projection()) init_uniform(projection_.value, hidden_dim_, rng);
  }

  void collect(ParameterList<T>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
    if (has_projection()) out.push_back(&projection_);
  }

  LstmState<T> zero_state() const {
    return LstmState<T>{std::vector<T>(output_dim(), T(0)), std::vector<T>(hidden_dim_, T(0))};
  }

  /// Advances `state` by one input; fills `cache` when non-null.
  void step(std::span<const T> x, LstmState<T>& state, LstmStepCache<T>* cache, std::vector<T>& scratch) const {
    const std::size_t H = hidden_dim_;
    std::vector<T> local_input;
    std::vector<T>& input = cache ? cache->input : local_input;
    input.resize(input_dim_ + output_dim());
    std::copy(x.begin(), x.end(), input.begin());
    std::copy(state.r.begin(), state.r.end(), input.begin() + static_cast<std::ptrdiff_t>(input_dim_));

    scratch.resize(4 * H);
    affine(weight_.value, bias_.value, std::span<const T>(input), std::span<T>(scratch));
    for (std::size_t k = 0; k < H; ++k) {
      scratch[k] = sigmoid(scratch[k]);
      scratch[H + k] = sigmoid(scratch[H + k]);
      scratch[2 * H + k] = std::tanh(scratch[2 * H + k]);
      scratch[3 * H + k] = sigmoid(scratch[3 * H + k]);
    }
    if (cache) {
      cache->c_prev = state.c;
      cache->gates = scratch;
      cache->tanh_c.resize(H);
      cache->h.resize(H);
    }
    std::vector<T> h_local(H);
    std::vector<T>& h = cache ? cache->h : h_local;
    for (std::size_t k = 0; k < H; ++k) {
      const T c = scratch[H + k] * state.c[k] + scratch[k] * scratch[2 * H + k];
      state.c[k] = c;
      const T tc = std::tanh(c);
      if (cache) cache->tanh_c[k] = tc;
      h[k] = scratch[3 * H + k] * tc;
    }
    if (has_projection()) {
      const T* p = projection_.value.data();
      for (std::size_t r = 0; r < projection_dim_; ++r) {
        T acc = 0;
        const T* pr = p + r * H;
        for (std::size_t k = 0; k < H; ++k) acc += pr[k] * h[k];
        state.r[r] = acc;
      }
    } else {
      std::copy(h.begin(), h.end(), state.r.begin());
    }
  }

  /// Backpropagates one step. `dr` is dL/dr at this step (consumed), `dc`
  /// carries dL/dc from the following step in and dL/dc_prev out. Writes
  /// dL/dx into `dx` and dL/dr_prev into `dr_prev`; accumulates parameter grads.
  void step_backward(const LstmStepCache<T>& cache, std::span<const T> dr, std::vector<T>& dc,
                     std::span<T> dx, std::span<T> dr_prev, std::vector<T>& scratch) {
    const std::size_t H = hidden_dim_;
    std::vector<T> dh(H, T(0));
    if (has_projection()) {
      affine_backward(projection_.value, std::span<const T>(cache.h), dr, projection_.grad, static_cast<DenseArray<T>*>(nullptr),
                      std::span<T>(dh));
    } else {
      std::copy(dr.begin(), dr.end(), dh.begin());
    }
    const auto& gt = cache.gates;
    scratch.resize(4 * H);
    for (std::size_t k = 0; k < H; ++k) {
      const T i = gt[k], f = gt[H + k], g = gt[2 * H + k], o = gt[3 * H + k];
      const T tc = cache.tanh_c[k];
      const T dct = dc[k] + dh[k] * o * (T(1) - tc * tc);
      const T d_o = dh[k] * tc;
      scratch[k] = dct * g * i * (T(1) - i);
      scratch[H + k] = dct * cache.c_prev[k] * f * (T(1) - f);
      scratch[2 * H + k] = dct * i * (T(1) - g * g);
      scratch[3 * H + k] = d_o * o * (T(1) - o);
      dc[k] = dct * f;
    }
    std::vector<T> dinput(cache.input.size(), T(0));
    affine_backward(weight_.value, std::span<const T>(cache.input), std::span<const T>(scratch), weight_.grad,
                    &bias_.grad, std::span<T>(dinput));
    for (std::size_t j = 0; j < input_dim_; ++j) dx[j] += dinput[j];
    for (std::size_t j = 0; j < output_dim(); ++j) dr_prev[j] = dinput[input_dim_ + j];
  }

  /// Runs a sequence from `state` (updated in place). Outputs are [steps x output_dim].
  std::vector<std::vector<T>> forward(const std::vector<std::vector<T>>& inputs, LstmState<T>& state,
                                      std::vector<LstmStepCache<T>>* caches) const {
    std::vector<std::vector<T>> outputs;
    outputs.reserve(inputs.size());
    if (caches) caches->assign(inputs.size(), LstmStepCache<T>{});
    std::vector<T> scratch;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      step(std::span<const T>(inputs[t]), state, caches ? &(*caches)[t] : nullptr, scratch);
      outputs.push_back(state.r);
    }
    return outputs;
  }

  /// Backpropagation through time over one window; gradient into the initial
  /// state is dropped (truncated). Returns dL/dinputs.
  std::vector<std::vector<T>> backward(const std::vector<LstmStepCache<T>>& caches,
                                       const std::vector<std::vector<T>>& d_outputs) {
    const std::size_t steps = caches.size();
    std::vector<std::vector<T>> dx(steps, std::vector<T>(input_dim_, T(0)));
    std::vector<T> dr_next(output_dim(), T(0));
    std::vector<T> dc(hidden_dim_, T(0));
    std::vector<T> dr(output_dim());
    std::vector<T> scratch;
    for (std::size_t t = steps; t-- > 0;) {
      for (std::size_t j = 0; j < output_dim(); ++j) dr[j] = d_outputs[t][j] + dr_next[j];
      step_backward(caches[t], std::span<const T>(dr), dc, std::span<T>(dx[t]), std::span<T>(dr_next), scratch);
    }
    return dx;
  }

 private:
  std::size_t input_dim_ = 0;
  std::size_t hidden_dim_ = 0;
  std::size_t projection_dim_ = 0;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Parameter<T> projection_;
};

/// Single LSTM step on standalone arrays: returns (h, c). Dimension
/// mismatches throw DimensionError naming the operand.
template <class T>
std::pair<DenseArray<T>, DenseArray<T>> lstm_step(const DenseArray<T>& x, const DenseArray<T>& h_prev,
                                                  const DenseArray<T>& c_prev, const LstmLayer<T>& cell) {
  if (cell.has_projection()) throw DimensionError("lstm_step: projected cells are not supported here");
  if (x.rank() != 1 || x.size() != cell.input_dim()) {
    throw DimensionError("lstm_step: x has " + std::to_string(x.size()) + " entries, expected " +
                         std::to_string(cell.input_dim()));
  }
  if (h_prev.rank() != 1 || h_prev.size() != cell.hidden_dim()) {
    throw DimensionError("lstm_step: h_prev has " + std::to_string(h_prev.size()) + " entries, expected " +
                         std::to_string(cell.hidden_dim()));
  }
  if (c_prev.rank() != 1 || c_prev.size() != cell.hidden_dim()) {
    throw DimensionError("lstm_step: c_prev has " + std::to_string(c_prev.size()) + " entries, expected " +
                         std::to_string(cell.hidden_dim()));
  }
  LstmState<T> state{std::vector<T>(h_prev.values().begin(), h_prev.values().end()),
                     std::vector<T>(c_prev.values().begin(), c_prev.values().end())};
  std::vector<T> scratch;
  cell.step(x.values(), state, nullptr, scratch);
  return {DenseArray<T>::vector(std::move(state.r)), DenseArray<T>::vector(std::move(state.c))};
}

// ---------------------------------------------------------------------------
// Embedding table

template <class T>
struct Embedding {
  Parameter<T> table;  // [rows x dim]

  Embedding() = default;
  Embedding(const std::string& name, std::size_t rows, std::size_t dim) : table(name, {rows, dim}) {}

  std::size_t rows() const { return table.value.dim(0); }
  std::size_t dim() const { return table.value.dim(1); }

  void init(Rng& rng) { init_uniform(table.value, dim(), rng); }
  void collect(ParameterList<T>& out) { out.push_back(&table); }

  std::span<const T> lookup(std::size_t id) const {
    if (id >= rows()) {
      throw std::out_of_range("embedding id " + std::to_string(id) + " outside [0, " + std::to_string(rows()) + ")");
    }
    return table.value.row(id);
  }

  void accumulate(std::size_t id, std::span<const T> grad) {
    auto row = table.grad.row(id);
    for (std::size_t k = 0; k < row.size(); ++k) row[k] += grad[k];
  }
};

}  // namespace cner::nn
