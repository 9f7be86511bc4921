#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "spikeformer/binary_matmul.hpp"
#include "spikeformer/layer.hpp"
#include "spikeformer/neuron.hpp"
#include "spikeformer/nn.hpp"
#include "spikeformer/tensor.hpp"

namespace spikeformer {

struct SsaConfig {
  std::size_t embed_dim = 0;
  std::size_t num_heads = 1;
  double scale = 0.125;
  bool scale_learnable = false;
  AttentionOrder order = AttentionOrder::Auto;

  std::size_t head_dim() const { return embed_dim / num_heads; }
  // Throws ConfigError unless embed_dim is a positive multiple of num_heads
  // and scale > 0.
  void validate() const;
};

// KvFirst when tokens > head_dim, otherwise QkFirst (ties go to QkFirst).
AttentionOrder select_order(std::size_t tokens, std::size_t head_dim);
AttentionOrder resolve_order(AttentionOrder requested, std::size_t tokens,
                             std::size_t head_dim);

struct QkvRates {
  double q = 1.0;
  double k = 1.0;
  double v = 1.0;
};

// Cost of one attention product for one sample and one time step, summed
// over heads. `*_macs` count multiply-accumulates (2 N^2 d and 2 N d^2 per
// head); `*_flops` count the multiply and the add separately, which is the
// convention behind the dense VSA figure. `expected_sops` applies the
// measured firing rates stage by stage to the selected order.
struct AttentionCost {
  std::uint64_t qk_first_macs = 0;
  std::uint64_t kv_first_macs = 0;
  std::uint64_t qk_first_flops = 0;
  std::uint64_t kv_first_flops = 0;
  std::uint64_t softmax_flops = 0;  // scale, max, exp, sum, divide per entry
  AttentionOrder selected = AttentionOrder::QkFirst;
  double expected_sops = 0.0;

  std::uint64_t selected_macs() const {
    return selected == AttentionOrder::KvFirst ? kv_first_macs : qk_first_macs;
  }
};

AttentionCost flop_sop_cost(const SsaConfig& config, std::size_t tokens,
                            const QkvRates& rates = {});

// Q K^T V over the two trailing axes of [..., N, d] tensors. Binary inputs
// go through the bit-packed kernels (and `counts`, if given, receives their
// accumulate counts); anything else uses dense float products. Both paths
// share one backward rule.
template <typename T>
Tensor<T> qktv_product(const Tensor<T>& q, const Tensor<T>& k,
                       const Tensor<T>& v, AttentionOrder order,
                       binary::ProductCounts* counts = nullptr,
                       bool* used_binary_kernel = nullptr);

// SN(Q K^T V * s) with Q, K, V [T, ..., N, d]; the neuron runs over the
// leading T axis. `pre_neuron` receives Q K^T V * s when non-null.
template <typename T>
Tensor<T> ssa_core(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                   const Tensor<T>& scale, const LifParams& neuron,
                   AttentionOrder order, Tensor<T>* pre_neuron = nullptr,
                   binary::ProductCounts* counts = nullptr);

// [T, B, N, H*d] <-> [T, B, H, N, d]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads);
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x);

template <typename T>
struct QkvTriple {
  Tensor<T> q;
  Tensor<T> k;
  Tensor<T> v;
};

// Spiking self-attention block: spike Q/K/V projections, multi-head
// attention product, attention neuron, and the SN(BN(Linear)) output
// projection. The variant selects how the attention map is formed; every
// variant keeps the remaining structure.
template <typename T>
class SpikingSelfAttention {
 public:
  SpikingSelfAttention() = default;
  SpikingSelfAttention(const SsaConfig& config, AttentionVariant variant,
                       const LifParams& neuron, const LifParams& attn_neuron);

  // x [T, B, N, D] -> [T, B, N, D]
  Tensor<T> forward(const Tensor<T>& x, bool training,
                    ForwardObserver<T>* observer = nullptr,
                    const std::string& name = "attn");

  // Q = SN_Q(BN(X W_Q)) and likewise K, V; each branch owns its BN and
  // neuron. Returned in [T, B, N, D].
  QkvTriple<T> spike_qkv(const Tensor<T>& x, bool training,
                         ForwardObserver<T>* observer = nullptr,
                         const std::string& name = "attn");

  // Multi-head SSA on spike Q, K, V [T, B, N, D]: per-head ssa_core,
  // concatenation, then SN(BN(Linear(.))).
  Tensor<T> mssa(const QkvTriple<T>& qkv, bool training,
                 ForwardObserver<T>* observer = nullptr,
                 const std::string& name = "attn");

  void init(std::mt19937_64& rng);
  void collect(const std::string& prefix,
               std::vector<nn::NamedTensor<T>>& out) const;
  void collect_buffers(const std::string& prefix,
                       std::vector<nn::NamedBuffer<T>>& out);

  const SsaConfig& config() const { return config_; }
  AttentionVariant variant() const { return variant_; }

  nn::Linear<T> q_linear, k_linear, v_linear, proj_linear;
  nn::BatchNorm<T> q_bn, k_bn, v_bn, proj_bn;
  Tensor<T> scale;  // one element; learnable when config.scale_learnable

 private:
  Tensor<T> project(const Tensor<T>& heads_out, std::size_t time_steps,
                    std::size_t batch, bool training,
                    ForwardObserver<T>* observer, const std::string& name);
  Tensor<T> branch(nn::Linear<T>& lin, nn::BatchNorm<T>& bn,
                   const Tensor<T>& x, bool training,
                   ForwardObserver<T>* observer, const std::string& name);

  SsaConfig config_;
  AttentionVariant variant_ = AttentionVariant::Ssa;
  LifParams neuron_;
  LifParams attn_neuron_;
};

}  // namespace spikeformer
