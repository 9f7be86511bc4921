#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "spikeformer/ops.hpp"
#include "spikeformer/tensor.hpp"

namespace spikeformer::nn {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

// Non-trainable state (BN running statistics) addressed by name.
template <typename T>
struct NamedBuffer {
  std::string name;
  std::vector<T>* values;
};

// Draws from N(0, std^2) truncated to [-2 std, 2 std] by resampling.
template <typename T>
void truncated_normal_(Tensor<T>& t, double std, std::mt19937_64& rng);

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features, bool with_bias);

  Tensor<T> forward(const Tensor<T>& x) const {
    return ops::linear(x, weight, bias);
  }
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  void init(std::mt19937_64& rng, double std = 0.02);
  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const;

  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out] or undefined
};

// 3x3 stride-1 pad-1 convolution without bias.
template <typename T>
class Conv3x3 {
 public:
  Conv3x3() = default;
  Conv3x3(std::size_t in_channels, std::size_t out_channels);

  Tensor<T> forward(const Tensor<T>& x) const { return ops::conv2d(x, weight); }
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }

  void init(std::mt19937_64& rng, double std = 0.02);
  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const;

  Tensor<T> weight;  // [O, C, 3, 3]
};

template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels);

  Tensor<T> forward(const Tensor<T>& x, std::size_t channel_axis,
                    bool training) {
    return ops::batchnorm(x, gamma, beta, state, channel_axis, training);
  }
  std::size_t channels() const { return gamma.size(); }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const;
  void collect_buffers(const std::string& prefix,
                       std::vector<NamedBuffer<T>>& out);

  Tensor<T> gamma;
  Tensor<T> beta;
  ops::BatchNormState<T> state;
};

}  // namespace spikeformer::nn
