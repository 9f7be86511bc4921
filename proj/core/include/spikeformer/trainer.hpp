#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "spikeformer/config.hpp"
#include "spikeformer/data.hpp"
#include "spikeformer/model.hpp"

namespace spikeformer {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double base_lr = 5e-4;
  double weight_decay = 0.02;
  std::uint64_t seed = 1;
  double holdout = 0.2;            // used when the data has no test split
  std::size_t eval_batch_size = 128;
  // Stop after the first epoch whose test accuracy reaches this value;
  // 0 trains for all epochs.
  double target_accuracy = 0.0;

  void validate() const;
  bool set(const ConfigLine& line);
  std::string to_text() const;
};

// A complete experiment description: model keys and training keys in one
// key=value file.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  // Unknown keys throw ConfigError quoting the offending line.
  static RunConfig from_text(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
  std::string to_text() const;
  // Hash of the resolved config with the attention variant left out, so
  // runs that differ only in the variant share it.
  std::string shape_hash() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double test_acc = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

// epoch,train_loss,test_loss,test_acc,lr -- a pure function of seed, config
// and data, so reruns compare bitwise.
std::string metrics_csv(const std::vector<EpochMetrics>& history);
// epoch,wall_seconds -- kept apart because it is not reproducible.
std::string timing_csv(const std::vector<EpochMetrics>& history);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
};

struct TrainOptions {
  // When set, receives metrics.csv, timing.csv, last.ckpt, best.ckpt and
  // config.txt
  // after every epoch (all written atomically).
  std::filesystem::path out_dir;
  std::ostream* log = nullptr;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  double best_accuracy = 0.0;
  std::size_t best_epoch = 0;
};

// Eval-mode pass; throws DataError on an empty set.
template <typename T>
EvalResult eval_loop(Spikformer<T>& model, const Dataset& data, std::size_t batch_size = 128);

// AdamW + per-step cosine decay over epochs * ceil(n / batch) steps with a
// seeded shuffle each epoch. The model is trained as given (call init()
// first for a fresh run). A non-finite loss writes a value-range dump to
// out_dir/nan_dump and throws NumericalError.
template <typename T>
TrainResult train_loop(Spikformer<T>& model, const Dataset& train, const Dataset& test,
                       const RunConfig& config, const TrainOptions& options = {});

}  // namespace spikeformer
