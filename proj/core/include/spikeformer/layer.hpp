#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "spikeformer/binary_matmul.hpp"
#include "spikeformer/tensor.hpp"

// Layer descriptors and the forward-pass instrumentation hooks shared by the
// attention, model and profiler modules.
namespace spikeformer {

enum class AttentionVariant { Ssa, VsaSpikeV, VsaFloatV, Identity, Relu, LeakyRelu };

// Association order of Q K^T V. Auto picks KvFirst exactly when N > d.
enum class AttentionOrder { Auto, QkFirst, KvFirst };

std::string to_string(AttentionVariant variant);
// Accepts the CLI spellings: ssa, vsa, vsa_floatv, i, relu, leakyrelu.
AttentionVariant parse_variant(std::string_view name);
std::string to_string(AttentionOrder order);
AttentionOrder parse_order(std::string_view name);

enum class LayerKind { Conv, Linear, Attention, BatchNorm, Neuron, Pool };

std::string to_string(LayerKind kind);

struct ConvGeometry {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t out_height = 0;
  std::size_t out_width = 0;
};

struct LinearGeometry {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  std::size_t rows = 1;  // rows per sample per time step (tokens)
};

struct AttentionGeometry {
  std::size_t tokens = 0;
  std::size_t head_dim = 0;
  std::size_t heads = 1;
  AttentionOrder order = AttentionOrder::QkFirst;
  AttentionVariant variant = AttentionVariant::Ssa;
};

struct LayerDescriptor {
  std::string name;
  LayerKind kind = LayerKind::Linear;
  ConvGeometry conv;
  LinearGeometry linear;
  AttentionGeometry attention;
  // The input is real-valued (the encoding layer or the classifier), so the
  // layer is billed per MAC rather than per synaptic operation.
  bool real_valued_input = false;
};

template <typename T>
struct SynapseEvent {
  const LayerDescriptor& layer;
  const Tensor<T>& input;  // layout [T * B, ...] or [T, B, ...]
  std::size_t time_steps;
  std::size_t batch;
};

template <typename T>
struct AttentionEvent {
  const LayerDescriptor& layer;
  const Tensor<T>& q;        // [T, B, H, N, d] (float Q_F for float variants)
  const Tensor<T>& k;
  const Tensor<T>& v;
  const Tensor<T>& product;  // value fed to the attention neuron
  binary::ProductCounts counts;
  bool counted;              // counts come from the binary kernel
  std::size_t time_steps;
  std::size_t batch;
};

// Receives call-local notifications during one forward pass. Default
// implementations ignore everything.
template <typename T>
class ForwardObserver {
 public:
  virtual ~ForwardObserver() = default;
  virtual void on_neuron(std::string_view layer, const Tensor<T>& spikes) {
    (void)layer;
    (void)spikes;
  }
  virtual void on_synapse(const SynapseEvent<T>& event) { (void)event; }
  virtual void on_attention(const AttentionEvent<T>& event) { (void)event; }
};

}  // namespace spikeformer
