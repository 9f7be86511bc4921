#include "spikeformer/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "spikeformer/checkpoint.hpp"
#include "spikeformer/error.hpp"
#include "spikeformer/io.hpp"
#include "spikeformer/ops.hpp"
#include "spikeformer/optim.hpp"
#include "spikeformer/profiler.hpp"

namespace spikeformer {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train config: epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("train config: batch_size must be >= 1");
  if (eval_batch_size == 0) throw ConfigError("train config: eval_batch_size must be >= 1");
  if (!(base_lr > 0.0)) throw ConfigError("train config: lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train config: weight_decay must be >= 0");
  if (!(holdout > 0.0 && holdout < 1.0)) throw ConfigError("train config: holdout must lie in (0, 1)");
  if (!(target_accuracy >= 0.0 && target_accuracy <= 1.0)) {
    throw ConfigError("train config: target_accuracy must lie in [0, 1]");
  }
}

bool TrainConfig::set(const ConfigLine& line) {
  const auto& k = line.key;
  if (k == "epochs") epochs = config_size(line);
  else if (k == "batch_size") batch_size = config_size(line);
  else if (k == "lr" || k == "base_lr") base_lr = config_double(line);
  else if (k == "weight_decay") weight_decay = config_double(line);
  else if (k == "seed") seed = config_u64(line);
  else if (k == "holdout") holdout = config_double(line);
  else if (k == "eval_batch_size") eval_batch_size = config_size(line);
  else if (k == "target_accuracy") target_accuracy = config_double(line);
  else return false;
  return true;
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "epochs=" << epochs << '\n'
     << "batch_size=" << batch_size << '\n'
     << "lr=" << format_double(base_lr) << '\n'
     << "weight_decay=" << format_double(weight_decay) << '\n'
     << "seed=" << seed << '\n'
     << "holdout=" << format_double(holdout) << '\n'
     << "eval_batch_size=" << eval_batch_size << '\n'
     << "target_accuracy=" << format_double(target_accuracy) << '\n';
  return os.str();
}

RunConfig RunConfig::from_text(std::string_view text) {
  RunConfig c;
  for (const auto& line : parse_key_values(text)) {
    if (!c.model.set(line) && !c.train.set(line)) throw_unknown_key(line);
  }
  c.model.validate();
  c.train.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return from_text(text);
}

std::string RunConfig::to_text() const { return model.to_text() + train.to_text(); }

std::string RunConfig::shape_hash() const {
  ModelConfig m = model;
  m.attention = AttentionVariant::Ssa;
  return fnv1a_hex(m.to_text() + train.to_text());
}

std::string metrics_csv(const std::vector<EpochMetrics>& history) {
  std::string out = "epoch,train_loss,test_loss,test_acc,lr\n";
  for (const auto& m : history) {
    out += std::to_string(m.epoch) + "," + format_double(m.train_loss) + "," +
           format_double(m.test_loss) + "," + format_double(m.test_acc) + "," +
           format_double(m.lr) + "\n";
  }
  return out;
}

std::string timing_csv(const std::vector<EpochMetrics>& history) {
  std::string out = "epoch,wall_seconds\n";
  char wall[32];
  for (const auto& m : history) {
    std::snprintf(wall, sizeof wall, "%.3f", m.wall_seconds);
    out += std::to_string(m.epoch) + "," + wall + "\n";
  }
  return out;
}

namespace {

std::vector<std::size_t> range_slice(const std::vector<std::size_t>& order, std::size_t start,
                                     std::size_t count) {
  const auto b = order.begin() + static_cast<std::ptrdiff_t>(start);
  const auto e = order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + count));
  return {b, e};
}

template <typename T>
void check_compatible(const Spikformer<T>& model, const Dataset& data) {
  const auto& c = model.config();
  if (data.channels != c.in_channels || data.height != c.image_height ||
      data.width != c.image_width) {
    throw DataError("data images are " + std::to_string(data.channels) + "x" +
                    std::to_string(data.height) + "x" + std::to_string(data.width) +
                    " but the model expects " + std::to_string(c.in_channels) + "x" +
                    std::to_string(c.image_height) + "x" + std::to_string(c.image_width));
  }
  for (int l : data.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= c.num_classes) {
      throw DataError("label " + std::to_string(l) + " is outside the model's " +
                      std::to_string(c.num_classes) + " classes");
    }
  }
}

template <typename T>
void write_nan_dump(Spikformer<T>& model, const Dataset& data,
                    const std::vector<std::size_t>& batch, const std::filesystem::path& dir,
                    std::size_t epoch, std::uint64_t step, double loss) {
  std::filesystem::create_directories(dir);
  Profiler<T> prof;
  {
    NoGradGuard no_grad;
    model.forward(data.batch<T>(batch), false, &prof);
  }
  std::ostringstream report;
  report << "epoch=" << epoch << "\nstep=" << step << "\nloss=" << loss << '\n';
  for (const auto& h : prof.histograms()) {
    report << h.layer << ": min=" << h.min << " max=" << h.max << " non_finite=" << h.non_finite
           << '\n';
    io::write_file_atomic(dir / (h.layer + ".hist.csv"), histogram_csv(h));
  }
  for (const auto& p : model.parameters()) {
    std::size_t bad = 0;
    for (T v : p.tensor.values()) bad += !std::isfinite(v);
    if (bad) report << "parameter " << p.name << ": " << bad << " non-finite values\n";
  }
  io::write_file_atomic(dir / "nan_report.txt", report.str());
}

}  // namespace

template <typename T>
EvalResult eval_loop(Spikformer<T>& model, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw DataError("evaluation set is empty");
  check_compatible(model, data);
  NoGradGuard no_grad;
  EvalResult r;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const auto idx = range_slice(order, start, batch_size);
    const auto labels = data.batch_labels(idx);
    const auto logits = model.forward(data.batch<T>(idx), false);
    loss_sum += static_cast<double>(ops::cross_entropy(logits, labels).item()) *
                static_cast<double>(idx.size());
    const std::size_t k = logits.dim(1);
    const auto v = logits.values();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto row = v.subspan(b * k, k);
      const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      r.correct += best == labels[b];
    }
  }
  r.total = data.size();
  r.loss = loss_sum / static_cast<double>(r.total);
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

template <typename T>
TrainResult train_loop(Spikformer<T>& model, const Dataset& train, const Dataset& test,
                       const RunConfig& config, const TrainOptions& options) {
  const auto& tc = config.train;
  tc.validate();
  if (train.size() == 0) throw DataError("training set is empty");
  check_compatible(model, train);
  check_compatible(model, test);
  const bool write = !options.out_dir.empty();
  if (write) {
    std::filesystem::create_directories(options.out_dir);
    io::write_file_atomic(options.out_dir / "config.txt", config.to_text());
  }

  AdamWConfig ac;
  ac.weight_decay = tc.weight_decay;
  AdamW<T> opt(model.parameters(), ac);
  const std::size_t steps_per_epoch = (train.size() + tc.batch_size - 1) / tc.batch_size;
  const std::uint64_t total_steps = std::uint64_t{steps_per_epoch} * tc.epochs;
  std::mt19937_64 rng(tc.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  std::uint64_t step = 0;
  double lr = tc.base_lr;
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const auto idx = range_slice(order, start, tc.batch_size);
      const auto labels = train.batch_labels(idx);
      opt.zero_grad();
      const auto logits = model.forward(train.batch<T>(idx), true);
      const auto loss = ops::cross_entropy(logits, labels);
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv)) {
        if (write) {
          write_nan_dump(model, train, idx, options.out_dir / "nan_dump", epoch, step, lv);
        }
        throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) +
                             ", step " + std::to_string(step) +
                             (write ? " (value ranges written to nan_dump/)" : ""));
      }
      loss.backward();
      lr = cosine_lr(step, total_steps, tc.base_lr);
      opt.step(lr);
      ++step;
      loss_sum += lv * static_cast<double>(idx.size());
    }
    const auto ev = eval_loop(model, test, tc.eval_batch_size);
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(train.size());
    m.test_loss = ev.loss;
    m.test_acc = ev.accuracy;
    m.lr = lr;
    m.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(m);
    const bool improved = result.best_epoch == 0 || m.test_acc > result.best_accuracy;
    if (improved) {
      result.best_accuracy = m.test_acc;
      result.best_epoch = epoch;
    }
    if (write) {
      io::write_file_atomic(options.out_dir / "metrics.csv", metrics_csv(result.history));
      io::write_file_atomic(options.out_dir / "timing.csv", timing_csv(result.history));
      save_checkpoint(options.out_dir / "last.ckpt", model);
      if (improved) save_checkpoint(options.out_dir / "best.ckpt", model);
    }
    if (options.log) {
      char line[160];
      std::snprintf(line, sizeof line,
                    "epoch %zu  train_loss %.4f  test_loss %.4f  test_acc %.4f  lr %.2e  %.1fs\n",
                    epoch, m.train_loss, m.test_loss, m.test_acc, m.lr, m.wall_seconds);
      *options.log << line << std::flush;
    }
    if (tc.target_accuracy > 0.0 && m.test_acc >= tc.target_accuracy) break;
  }
  return result;
}

template EvalResult eval_loop(Spikformer<float>&, const Dataset&, std::size_t);
template EvalResult eval_loop(Spikformer<double>&, const Dataset&, std::size_t);
template TrainResult train_loop(Spikformer<float>&, const Dataset&, const Dataset&,
                                const RunConfig&, const TrainOptions&);
template TrainResult train_loop(Spikformer<double>&, const Dataset&, const Dataset&,
                                const RunConfig&, const TrainOptions&);

}  // namespace spikeformer
