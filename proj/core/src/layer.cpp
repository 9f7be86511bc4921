#include "spikeformer/layer.hpp"

#include "spikeformer/error.hpp"

namespace spikeformer {

std::string to_string(AttentionVariant variant) {
  switch (variant) {
    case AttentionVariant::Ssa: return "ssa";
    case AttentionVariant::VsaSpikeV: return "vsa";
    case AttentionVariant::VsaFloatV: return "vsa_floatv";
    case AttentionVariant::Identity: return "i";
    case AttentionVariant::Relu: return "relu";
    case AttentionVariant::LeakyRelu: return "leakyrelu";
  }
  return "ssa";
}

AttentionVariant parse_variant(std::string_view name) {
  if (name == "ssa") return AttentionVariant::Ssa;
  if (name == "vsa" || name == "softmax") return AttentionVariant::VsaSpikeV;
  if (name == "vsa_floatv") return AttentionVariant::VsaFloatV;
  if (name == "i") return AttentionVariant::Identity;
  if (name == "relu") return AttentionVariant::Relu;
  if (name == "leakyrelu") return AttentionVariant::LeakyRelu;
  throw ConfigError("unknown attention variant '" + std::string(name) +
                    "' (expected ssa|vsa|vsa_floatv|i|relu|leakyrelu)");
}

std::string to_string(AttentionOrder order) {
  switch (order) {
    case AttentionOrder::Auto: return "auto";
    case AttentionOrder::QkFirst: return "qk_first";
    case AttentionOrder::KvFirst: return "kv_first";
  }
  return "auto";
}

AttentionOrder parse_order(std::string_view name) {
  if (name == "auto") return AttentionOrder::Auto;
  if (name == "qk_first") return AttentionOrder::QkFirst;
  if (name == "kv_first") return AttentionOrder::KvFirst;
  throw ConfigError("unknown attention order '" + std::string(name) +
                    "' (expected auto|qk_first|kv_first)");
}

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Linear: return "linear";
    case LayerKind::Attention: return "attention";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::Neuron: return "neuron";
    case LayerKind::Pool: return "pool";
  }
  return "unknown";
}

}  // namespace spikeformer
