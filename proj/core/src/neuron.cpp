#include "spikeformer/neuron.hpp"

#include <algorithm>
#include <cmath>

#include "spikeformer/error.hpp"
#include "spikeformer/ops.hpp"

namespace spikeformer {

void LifParams::validate() const {
  if (!(tau >= 1.0)) {
    throw ConfigError("neuron tau must be >= 1, got " + std::to_string(tau));
  }
  if (!(v_threshold > v_reset)) {
    throw ConfigError("neuron v_threshold must exceed v_reset");
  }
  if (!(surrogate_alpha > 0.0)) {
    throw ConfigError("surrogate alpha must be positive");
  }
}

template <typename T>
T surrogate_sigmoid(T x, T alpha) {
  return T(1) / (T(1) + std::exp(-alpha * x));
}

template <typename T>
T surrogate_grad(T x, T alpha) {
  const T s = surrogate_sigmoid(x, alpha);
  return alpha * s * (T(1) - s);
}

template <typename T>
Tensor<T> surrogate_backward(const Tensor<T>& h_minus_vth, T alpha) {
  const auto xs = h_minus_vth.values();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = surrogate_grad(xs[i], alpha);
  return Tensor<T>(h_minus_vth.shape(), std::move(out));
}

template <typename T>
Tensor<T> spike_fn(const Tensor<T>& h_minus_vth, T alpha) {
  const auto xs = h_minus_vth.values();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] >= T(0) ? T(1) : T(0);
  return Tensor<T>::record(h_minus_vth.shape(), std::move(out), {h_minus_vth},
                           "spike_fn", [h_minus_vth, alpha](std::span<const T> g) {
                             auto gx = h_minus_vth.grad_accumulator();
                             if (gx.empty()) return;
                             const auto xs = h_minus_vth.values();
                             for (std::size_t i = 0; i < g.size(); ++i)
                               gx[i] += g[i] * surrogate_grad(xs[i], alpha);
                           });
}

namespace {

template <typename T>
void check_time_axis(const Tensor<T>& x) {
  if (!x.defined() || x.rank() == 0 || x.dim(0) == 0 || x.size() == 0) {
    throw DimensionError("spiking neuron: empty input (no time steps)");
  }
}

// Runs the hard-threshold recurrence. `charge` and `spikes` receive H[t] and
// S[t]; `membrane` (optional) receives V[t].
template <typename T>
void run_recurrence(std::span<const T> x, std::size_t steps, std::size_t width,
                    const LifParams& p, std::vector<T>& charge,
                    std::vector<T>& spikes, std::vector<T>* membrane) {
  const T tau = static_cast<T>(p.tau);
  const T v_th = static_cast<T>(p.v_threshold);
  const T v_reset = static_cast<T>(p.v_reset);
  const bool leaky = p.mode == NeuronMode::Lif;
  std::vector<T> v(width, v_reset);
  charge.resize(steps * width);
  spikes.resize(steps * width);
  if (membrane) membrane->resize(steps * width);
  for (std::size_t t = 0; t < steps; ++t) {
    const T* xt = x.data() + t * width;
    T* ht = charge.data() + t * width;
    T* st = spikes.data() + t * width;
    for (std::size_t i = 0; i < width; ++i) {
      const T h = leaky ? v[i] + (xt[i] - (v[i] - v_reset)) / tau : v[i] + xt[i];
      const bool fire = h - v_th >= T(0);
      ht[i] = h;
      st[i] = fire ? T(1) : T(0);
      v[i] = fire ? v_reset : h;
    }
    if (membrane) std::copy(v.begin(), v.end(), membrane->begin() + t * width);
  }
}

}  // namespace

template <typename T>
LifTrace<T> lif_trace(const Tensor<T>& x, const LifParams& params) {
  check_time_axis(x);
  params.validate();
  LifTrace<T> trace;
  trace.shape = x.shape();
  const std::size_t steps = x.dim(0);
  run_recurrence<T>(x.values(), steps, x.size() / steps, params, trace.charge,
                    trace.spikes, &trace.membrane);
  return trace;
}

template <typename T>
Tensor<T> lif_forward(const Tensor<T>& x, const LifParams& params) {
  if (params.smooth) return soft_lif_forward(x, params);
  check_time_axis(x);
  params.validate();
  const std::size_t steps = x.dim(0);
  const std::size_t width = x.size() / steps;
  std::vector<T> charge, spikes;
  run_recurrence<T>(x.values(), steps, width, params, charge, spikes, nullptr);
  auto out = spikes;
  return Tensor<T>::record(
      x.shape(), std::move(out), {x}, "lif",
      [x, params, steps, width, charge = std::move(charge),
       spikes = std::move(spikes)](std::span<const T> g) {
        auto gx = x.grad_accumulator();
        if (gx.empty()) return;
        const bool leaky = params.mode == NeuronMode::Lif;
        const T inv_tau = leaky ? T(1) / static_cast<T>(params.tau) : T(1);
        const T leak = leaky ? T(1) - inv_tau : T(1);
        const T v_th = static_cast<T>(params.v_threshold);
        const T alpha = static_cast<T>(params.surrogate_alpha);
        // dV carries dL/dV[t] from step t+1 back to step t.
        std::vector<T> dv(width, T(0));
        for (std::size_t t = steps; t-- > 0;) {
          const T* ht = charge.data() + t * width;
          const T* st = spikes.data() + t * width;
          const T* gt = g.data() + t * width;
          T* gxt = gx.data() + t * width;
          for (std::size_t i = 0; i < width; ++i) {
            const T dh = gt[i] * surrogate_grad(ht[i] - v_th, alpha) +
                         dv[i] * (T(1) - st[i]);
            gxt[i] += dh * inv_tau;
            dv[i] = dh * leak;
          }
        }
      });
}

template <typename T>
Tensor<T> soft_lif_forward(const Tensor<T>& x, const LifParams& params) {
  check_time_axis(x);
  params.validate();
  const std::size_t steps = x.dim(0);
  const T tau = static_cast<T>(params.tau);
  const T v_th = static_cast<T>(params.v_threshold);
  const T v_reset = static_cast<T>(params.v_reset);
  const T alpha = static_cast<T>(params.surrogate_alpha);
  const bool leaky = params.mode == NeuronMode::Lif;

  Shape step_shape(x.shape().begin() + 1, x.shape().end());
  if (step_shape.empty()) step_shape.push_back(1);
  Tensor<T> v = Tensor<T>::full(step_shape, v_reset);
  std::vector<Tensor<T>> outputs;
  outputs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const Tensor<T> xt = ops::select(x, t);
    Tensor<T> h;
    if (leaky) {
      // H = V + (X - (V - V_reset)) / tau
      h = ops::add(v, ops::scale(ops::sub(xt, ops::add_scalar(v, -v_reset)),
                                 T(1) / tau));
    } else {
      h = ops::add(v, xt);
    }
    const Tensor<T> s =
        ops::sigmoid(ops::scale(ops::add_scalar(h, -v_th), alpha));
    // V = H (1 - S) + V_reset S
    v = ops::add(ops::sub(h, ops::mul(h, s)), ops::scale(s, v_reset));
    outputs.push_back(s);
  }
  return ops::reshape(ops::stack(outputs), x.shape());
}

template <typename V>
static bool binary_impl(std::span<const V> values) {
  return std::all_of(values.begin(), values.end(),
                     [](V v) { return v == V(0) || v == V(1); });
}

bool is_binary(std::span<const float> values) { return binary_impl(values); }
bool is_binary(std::span<const double> values) { return binary_impl(values); }

#define SPIKEFORMER_INSTANTIATE_NEURON(T)                                  \
  template T surrogate_sigmoid(T, T);                                      \
  template T surrogate_grad(T, T);                                         \
  template Tensor<T> surrogate_backward(const Tensor<T>&, T);              \
  template Tensor<T> spike_fn(const Tensor<T>&, T);                        \
  template Tensor<T> lif_forward(const Tensor<T>&, const LifParams&);      \
  template LifTrace<T> lif_trace(const Tensor<T>&, const LifParams&);      \
  template Tensor<T> soft_lif_forward(const Tensor<T>&, const LifParams&);

SPIKEFORMER_INSTANTIATE_NEURON(float)
SPIKEFORMER_INSTANTIATE_NEURON(double)

}  // namespace spikeformer
