#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "spikeformer/tensor.hpp"

// Differentiable primitives. Every function records a tape entry when grad
// mode is on and an input requires grad. All are instantiated for float and
// double.
namespace spikeformer::ops {

enum class Transpose : bool { No = false, Yes = true };

// op(a) @ op(b) over the two trailing axes. Leading (batch) axes must match,
// or `b` may be rank 2 and is then shared by every batch entry of `a`.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b,
                 Transpose trans_a = Transpose::No,
                 Transpose trans_b = Transpose::No);

// x[..., in] @ weight[in, out] (+ bias[out]). An undefined bias is skipped.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias = {});

// 3x3 cross-correlation, stride 1, zero padding 1. x[B, C, H, W],
// weight[O, C, 3, 3] -> [B, O, H, W]. Lowered to one GEMM over im2col
// columns.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight);

// 2x2 window, stride 2 over the trailing two axes of a rank-4 tensor.
// Gradient goes to the first maximum in row-major window order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x);

template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

// Per-channel normalisation where `channel_axis` indexes the channel and
// every other axis is pooled into the statistics.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma,
                    const Tensor<T>& beta, BatchNormState<T>& state,
                    std::size_t channel_axis, bool training);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
// x * s where s is a one-element (possibly learnable) tensor.
template <typename T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& s);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T negative_slope);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x);
// Mean negative log-likelihood of `labels` under softmax(logits[B, K]).
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);
template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis);
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

// x[index] along axis 0, and its inverse.
template <typename T>
Tensor<T> select(const Tensor<T>& x, std::size_t index);
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts);

}  // namespace spikeformer::ops
