#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "spikeformer/nn.hpp"

namespace spikeformer {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.02;
};

// One decoupled-weight-decay Adam update of a single tensor; `step` counts
// from 1. Decay is applied as p *= (1 - lr * wd) before the Adam step.
template <typename T>
void adamw_step(std::span<T> param, std::span<const T> grad, std::span<double> m,
                std::span<double> v, std::uint64_t step, double lr,
                const AdamWConfig& config, bool decay);

// lr = base * (1 + cos(pi * step / total)) / 2, clamped to [0, total].
double cosine_lr(std::uint64_t step, std::uint64_t total, double base_lr);

// Owns the moment buffers of a parameter set. Weight decay is applied to
// tensors of rank >= 2 only (matrices and conv kernels); BN affine terms,
// biases and the attention scale are not decayed.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<nn::NamedTensor<T>> params, const AdamWConfig& config);

  // Applies one update with learning rate `lr`. Parameters without a
  // gradient are treated as having zero gradient.
  void step(double lr);
  void zero_grad();
  std::uint64_t steps() const { return steps_; }
  const std::vector<nn::NamedTensor<T>>& params() const { return params_; }

 private:
  std::vector<nn::NamedTensor<T>> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamWConfig config_;
  std::uint64_t steps_ = 0;
};

}  // namespace spikeformer
