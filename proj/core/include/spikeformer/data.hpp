#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spikeformer/error.hpp"
#include "spikeformer/tensor.hpp"

namespace spikeformer {

// Parse failure of an IDX file pair. `kind` distinguishes the failure modes.
class IdxError : public DataError {
 public:
  enum class Kind { Io, BadMagic, Truncated, CountMismatch, BadLabel };
  IdxError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// In-memory image classification set; images are [C, H, W] floats in
// [0, 1], stored back to back.
struct Dataset {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;
  std::vector<float> images;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return channels * height * width; }
  std::span<const float> image(std::size_t i) const {
    return {images.data() + i * sample_size(), sample_size()};
  }
  // Gathers the listed samples into a [B, C, H, W] tensor.
  template <typename T>
  Tensor<T> batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

// IDX pair: images magic 0x00000803 with dims [count, rows, cols], labels
// magic 0x00000801 with [count]; payload is raw u8. Pixels are scaled by
// 1/255. num_classes is max(label) + 1 unless `num_classes` is given.
Dataset load_idx(const std::filesystem::path& images,
                 const std::filesystem::path& labels, std::size_t num_classes = 0);
Dataset parse_idx(std::string_view image_bytes, std::string_view label_bytes,
                  std::size_t num_classes = 0);

struct SynthConfig {
  std::size_t num_classes = 4;  // at most 10 pattern families
  std::size_t size = 16;        // square images
  std::size_t count = 512;
  std::uint64_t seed = 7;
};

// Class-distinct line patterns (bars, crosses, diagonals, boxes, ...) at
// jittered positions with additive noise. Labels are balanced and the set
// is a pure function of the config.
Dataset synth_shapes(const SynthConfig& config);

// Deterministic shuffled split; `test_fraction` of the samples go to test.
std::pair<Dataset, Dataset> split_holdout(const Dataset& data, double test_fraction,
                                          std::uint64_t seed);

// Data source spec used by the command line:
//   idx:<images>,<labels>[,<test images>,<test labels>]
//   synth:<classes>x<count>
struct DataSource {
  enum class Kind { Idx, Synth } kind = Kind::Synth;
  std::vector<std::filesystem::path> paths;
  SynthConfig synth;
};

// Throws ConfigError on a malformed spec.
DataSource parse_data_spec(std::string_view spec);

struct DataSplits {
  Dataset train;
  Dataset test;
  bool explicit_test = false;  // test split came from the spec itself
};

// Loads the source; synthetic images use `image_size`, and without an
// explicit test split `holdout` of the data is held out with `seed`.
DataSplits load_data(const DataSource& source, std::size_t image_size,
                     double holdout, std::uint64_t seed,
                     std::size_t num_classes = 0);

}  // namespace spikeformer
