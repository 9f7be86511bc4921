#pragma once

#include <string>
#include <vector>

#include "spikeformer/tensor.hpp"

namespace spikeformer {

enum class NeuronMode { Lif, If };

struct LifParams {
  double tau = 2.0;
  double v_threshold = 1.0;
  double v_reset = 0.0;
  double surrogate_alpha = 4.0;
  NeuronMode mode = NeuronMode::Lif;
  // Replace the Heaviside forward by Sigmoid(alpha (H - V_th)) and
  // differentiate the whole recurrence, reset path included. Used for
  // gradient verification only; outputs are no longer binary.
  bool smooth = false;

  // Throws ConfigError unless tau >= 1 and v_threshold > v_reset.
  void validate() const;
};

// Sigmoid(alpha * x) and its derivative alpha * s * (1 - s).
template <typename T>
T surrogate_sigmoid(T x, T alpha);
template <typename T>
T surrogate_grad(T x, T alpha);

// Elementwise surrogate derivative evaluated at x = H - V_th.
template <typename T>
Tensor<T> surrogate_backward(const Tensor<T>& h_minus_vth, T alpha);

// Heaviside forward (1 where x >= 0) with the sigmoid surrogate as its
// backward rule.
template <typename T>
Tensor<T> spike_fn(const Tensor<T>& h_minus_vth, T alpha);

// Full per-step record of one neuron layer evaluation.
template <typename T>
struct LifTrace {
  Shape shape;             // [T, ...]
  std::vector<T> charge;   // H[t]
  std::vector<T> spikes;   // S[t]
  std::vector<T> membrane; // V[t]
};

// Runs the recurrence over the leading time axis of `x` starting from
// V[-1] = v_reset. Every other axis is independent. When `params.smooth`
// is set this dispatches to soft_lif_forward.
//
// The tape entry replays the recurrence backwards in time (BPTT):
//   dH[t] = dS[t] * sg(H[t] - V_th) + dV[t] * (1 - S[t])
//   dV[t-1] = dH[t] * (1 - 1/tau)      (LIF; 1 for IF)
//   dX[t]   = dH[t] / tau              (LIF; 1 for IF)
// The reset's dependence on S[t] is not differentiated.
template <typename T>
Tensor<T> lif_forward(const Tensor<T>& x, const LifParams& params);

// Same recurrence without a tape, exposing H, S and V for inspection.
template <typename T>
LifTrace<T> lif_trace(const Tensor<T>& x, const LifParams& params);

// The smoothed neuron built from differentiable primitives, one step at a
// time, so the tape differentiates every path including the reset.
template <typename T>
Tensor<T> soft_lif_forward(const Tensor<T>& x, const LifParams& params);

bool is_binary(std::span<const float> values);
bool is_binary(std::span<const double> values);

}  // namespace spikeformer
