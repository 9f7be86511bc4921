#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "spikeformer/attention.hpp"
#include "spikeformer/config.hpp"
#include "spikeformer/layer.hpp"
#include "spikeformer/neuron.hpp"
#include "spikeformer/nn.hpp"
#include "spikeformer/tensor.hpp"

namespace spikeformer {

struct ModelConfig {
  std::size_t time_steps = 4;
  std::size_t in_channels = 1;
  std::size_t image_height = 16;
  std::size_t image_width = 16;
  // One character per SPS block, '1' when the block ends in a 2x2 max-pool.
  // Its length is the number of SPS blocks.
  std::string sps_pool = "11";
  std::size_t embed_dim = 64;
  std::size_t num_blocks = 2;
  std::size_t num_heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t num_classes = 10;

  AttentionVariant attention = AttentionVariant::Ssa;
  AttentionOrder attention_order = AttentionOrder::Auto;
  double attn_scale = 0.125;
  bool attn_scale_learnable = false;

  NeuronMode neuron_mode = NeuronMode::Lif;
  double tau = 2.0;
  double v_threshold = 1.0;
  double v_reset = 0.0;
  double attn_v_threshold = 0.5;
  double surrogate_alpha = 4.0;
  // Sigmoid-forward neurons everywhere (gradient verification only).
  bool smooth_neurons = false;

  std::size_t sps_blocks() const { return sps_pool.size(); }
  std::size_t pooled_blocks() const;
  // D / 2^(k-1-i) for block i of k.
  std::size_t sps_channels(std::size_t block) const;
  std::size_t grid_height() const;
  std::size_t grid_width() const;
  std::size_t tokens() const { return grid_height() * grid_width(); }

  LifParams neuron() const;
  LifParams attn_neuron() const;
  SsaConfig ssa() const;

  // Throws ConfigError on any inconsistency (zero sizes, D not divisible by
  // heads or by 2^(k-1), image not divisible by 2^p, bad pool mask).
  void validate() const;

  // Applies one key; returns false when the key is not a model key.
  bool set(const ConfigLine& line);
  std::string to_text() const;
  // Parses a config holding only model keys; unknown keys throw.
  static ModelConfig from_text(std::string_view text);
};

// [B, ...] -> [T, B, ...] by repetition along a new leading axis.
template <typename T>
Tensor<T> replicate_static_input(const Tensor<T>& images, std::size_t time_steps);

template <typename T>
struct EncoderBlock {
  SpikingSelfAttention<T> attn;
  nn::Linear<T> fc1, fc2;
  nn::BatchNorm<T> bn1, bn2;
};

// Spikformer: SPS stem, RPE, L encoder blocks, GAP + time average + linear
// head. Shapes:
//   images [B, C, H, W] -> replicated [T, B, C, H, W]
//   SPS/RPE operate on [T*B, C, H, W]; tokens are [T, B, N, D].
template <typename T>
class Spikformer {
 public:
  explicit Spikformer(const ModelConfig& config);
  Spikformer(Spikformer&&) = default;
  Spikformer& operator=(Spikformer&&) = default;
  Spikformer(const Spikformer&) = delete;
  Spikformer& operator=(const Spikformer&) = delete;

  void init(std::uint64_t seed);

  // images [B, C, H, W] -> logits [B, num_classes]
  Tensor<T> forward(const Tensor<T>& images, bool training,
                    ForwardObserver<T>* observer = nullptr);

  // x [T, B, C, H, W] -> spike tokens [T, B, N, D]
  Tensor<T> sps_forward(const Tensor<T>& x, bool training,
                        ForwardObserver<T>* observer = nullptr);
  // x [T, B, N, D] spikes -> x + SN(BN(Conv(x)))
  Tensor<T> rpe_forward(const Tensor<T>& x, bool training,
                        ForwardObserver<T>* observer = nullptr);
  Tensor<T> encoder_block(std::size_t index, const Tensor<T>& x, bool training,
                          ForwardObserver<T>* observer = nullptr);
  // [T, B, N, D] -> [B, num_classes]
  Tensor<T> classify(const Tensor<T>& x, ForwardObserver<T>* observer = nullptr);

  std::vector<nn::NamedTensor<T>> parameters() const;
  std::vector<nn::NamedBuffer<T>> buffers();

  const ModelConfig& config() const { return config_; }

  std::vector<nn::Conv3x3<T>> sps_conv;
  std::vector<nn::BatchNorm<T>> sps_bn;
  nn::Conv3x3<T> rpe_conv;
  nn::BatchNorm<T> rpe_bn;
  std::vector<EncoderBlock<T>> blocks;
  nn::Linear<T> head;

 private:
  // x [T, B, N, D] <-> [T*B, D, h, w]
  Tensor<T> tokens_to_grid(const Tensor<T>& x) const;
  Tensor<T> grid_to_tokens(const Tensor<T>& x, std::size_t steps) const;
  // Runs the neuron over [T*B, ...] by exposing the time axis.
  Tensor<T> spike(const Tensor<T>& x, std::size_t steps, const LifParams& p,
                  ForwardObserver<T>* observer, const std::string& name) const;

  ModelConfig config_;
  LifParams neuron_;
};

}  // namespace spikeformer
