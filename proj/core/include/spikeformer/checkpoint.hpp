#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spikeformer/model.hpp"
#include "spikeformer/tensor.hpp"

// Binary checkpoint:
//   "SPKF" | version u32 LE | config length u32 LE + key=value text |
//   tensor count u32 LE | per tensor: name length u16 LE + name, rank u8,
//   dims u32 LE each, float32 LE values (row-major).
// Parameters come first, then BN running statistics.
namespace spikeformer {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct CheckpointRecord {
  std::string config_text;
  std::vector<CheckpointTensor> tensors;
};

std::string encode_checkpoint(const CheckpointRecord& record);
// Throws CheckpointError (Format or Truncated).
CheckpointRecord decode_checkpoint(std::string_view bytes);

template <typename T>
CheckpointRecord make_checkpoint(Spikformer<T>& model);

// Copies every tensor into `model`. Throws CheckpointError(Shape) naming the
// first tensor that is missing, unexpected, or of a different shape.
template <typename T>
void apply_checkpoint(const CheckpointRecord& record, Spikformer<T>& model);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, Spikformer<T>& model);

// Builds the model described by the embedded config and loads its tensors.
template <typename T>
Spikformer<T> load_checkpoint(const std::filesystem::path& path);

CheckpointRecord read_checkpoint(const std::filesystem::path& path);

}  // namespace spikeformer
