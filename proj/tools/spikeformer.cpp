// spikeformer: train / eval / profile / ablate / export-attn.
//
// Exit codes: 0 ok, 1 runtime failure, 2 usage or config, 3 data,
// 4 checkpoint.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "spikeformer/checkpoint.hpp"
#include "spikeformer/data.hpp"
#include "spikeformer/error.hpp"
#include "spikeformer/io.hpp"
#include "spikeformer/profiler.hpp"
#include "spikeformer/trainer.hpp"

namespace fs = std::filesystem;
using namespace spikeformer;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kData = 3, kCheckpoint = 4 };

// Raised for a well-formed command whose indices or choices are invalid.
struct UsageError : Error {
  using Error::Error;
};

DataSplits load_for_model(const std::string& spec, const ModelConfig& model,
                          double holdout, std::uint64_t seed) {
  const auto source = parse_data_spec(spec);
  if (source.kind == DataSource::Kind::Synth && model.image_height != model.image_width) {
    throw ConfigError("synthetic data needs a square image size");
  }
  return load_data(source, model.image_height, holdout, seed, model.num_classes);
}

void require_match(const ModelConfig& model, const Dataset& data) {
  if (data.num_classes > model.num_classes) {
    throw CheckpointError(CheckpointError::Kind::Shape,
                          "data has " + std::to_string(data.num_classes) +
                              " classes but the checkpoint classifies " +
                              std::to_string(model.num_classes));
  }
  if (data.channels != model.in_channels || data.height != model.image_height ||
      data.width != model.image_width) {
    throw CheckpointError(CheckpointError::Kind::Shape,
                          "data images are " + std::to_string(data.height) + "x" +
                              std::to_string(data.width) + " but the checkpoint expects " +
                              std::to_string(model.image_height) + "x" +
                              std::to_string(model.image_width));
  }
}

struct TrainArgs {
  std::string config, data, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  bool quiet = false;
};

RunConfig resolve_config(const TrainArgs& a) {
  RunConfig rc = RunConfig::load(a.config);
  if (a.seed) rc.train.seed = *a.seed;
  if (a.epochs) rc.train.epochs = *a.epochs;
  rc.train.validate();
  return rc;
}

TrainResult run_training(const RunConfig& rc, const std::string& data_spec,
                         const fs::path& out, bool quiet, Spikformer<float>& model,
                         DataSplits& splits) {
  splits = load_for_model(data_spec, rc.model, rc.train.holdout, rc.train.seed);
  if (splits.train.num_classes > rc.model.num_classes) {
    throw DataError("data has " + std::to_string(splits.train.num_classes) +
                    " classes but the config sets num_classes=" +
                    std::to_string(rc.model.num_classes));
  }
  model.init(rc.train.seed);
  TrainOptions opts;
  opts.out_dir = out;
  opts.log = quiet ? nullptr : &std::cerr;
  return train_loop(model, splits.train, splits.test, rc, opts);
}

int cmd_train(const TrainArgs& a) {
  const RunConfig rc = resolve_config(a);
  Spikformer<float> model(rc.model);
  DataSplits splits;
  const auto result = run_training(rc, a.data, a.out, a.quiet, model, splits);
  std::printf("best_accuracy=%s epoch=%zu\n", format_double(result.best_accuracy).c_str(),
              result.best_epoch);
  return kOk;
}

struct EvalArgs {
  std::string checkpoint, data, split = "test";
  std::uint64_t seed = 1;
  double holdout = 0.2;
  std::size_t batch = 128;
};

int cmd_eval(const EvalArgs& a) {
  auto model = load_checkpoint<float>(a.checkpoint);
  const auto splits = load_for_model(a.data, model.config(), a.holdout, a.seed);
  require_match(model.config(), splits.train);
  require_match(model.config(), splits.test);
  if (a.split == "both") {
    const auto tr = eval_loop(model, splits.train, a.batch);
    std::printf("train_accuracy=%s\n", format_double(tr.accuracy).c_str());
  }
  const auto& data = a.split == "train" ? splits.train : splits.test;
  const auto r = eval_loop(model, data, a.batch);
  std::printf("accuracy=%s\n", format_double(r.accuracy).c_str());
  return kOk;
}

struct ProfileArgs {
  std::string checkpoint, data, out, split = "test";
  std::uint64_t seed = 1;
  double holdout = 0.2;
  std::size_t batch = 64;
  double e_mac = 4.6, e_ac = 0.9;
};

std::string safe_name(std::string s) {
  for (auto& c : s) {
    if (c == '/' || c == '\\') c = '_';
  }
  return s;
}

void write_profile(const fs::path& out, const ProbeResult& probe) {
  fs::create_directories(out / "hist");
  io::write_file_atomic(out / "profile.csv", profile_csv(probe.energy));
  io::write_file_atomic(out / "firing_rates.csv", firing_rate_csv(probe.rates));
  std::string check = "layer,eq19_sops,counted_sops\n";
  for (const auto& l : probe.energy.layers) {
    if (l.billing == Billing::Ac) {
      check += l.layer + "," + std::to_string(l.sops) + "," + std::to_string(l.counted_sops) + "\n";
    }
  }
  io::write_file_atomic(out / "sop_check.csv", check);
  std::string ranges = "layer,min,max,count,non_finite\n";
  for (const auto& h : probe.histograms) {
    io::write_file_atomic(out / "hist" / (safe_name(h.layer) + ".csv"), histogram_csv(h));
    ranges += h.layer + "," + format_double(h.min) + "," + format_double(h.max) + "," +
              std::to_string(h.count) + "," + std::to_string(h.non_finite) + "\n";
  }
  io::write_file_atomic(out / "value_ranges.csv", ranges);
}

int cmd_profile(const ProfileArgs& a) {
  auto model = load_checkpoint<float>(a.checkpoint);
  const auto splits = load_for_model(a.data, model.config(), a.holdout, a.seed);
  const auto& data = a.split == "train" ? splits.train : splits.test;
  require_match(model.config(), data);
  const auto probe = firing_rate_probe(model, data, a.batch, EnergyConstants{a.e_mac, a.e_ac});
  write_profile(a.out, probe);
  std::printf("samples=%zu\n", data.size());
  std::printf("snn_energy_pj=%s\n", format_fj_as_pj(energy_snn(probe.energy)).c_str());
  std::printf("ann_energy_pj=%s\n", format_fj_as_pj(energy_ann(probe.energy)).c_str());
  std::printf("snn_energy_uj=%s\n", format_fj_as_uj(energy_snn(probe.energy)).c_str());
  std::printf("ann_energy_uj=%s\n", format_fj_as_uj(energy_ann(probe.energy)).c_str());
  return kOk;
}

struct AblateArgs {
  TrainArgs train;
  std::string variant;
};

int cmd_ablate(const AblateArgs& a) {
  const auto variant = parse_variant(a.variant);
  RunConfig rc = resolve_config(a.train);
  rc.model.attention = variant;
  const fs::path out = a.train.out;
  fs::create_directories(out);
  Spikformer<float> model(rc.model);
  DataSplits splits;
  run_training(rc, a.train.data, out / to_string(variant), a.train.quiet, model, splits);
  // Report the final model (the same epoch for every variant).
  const auto ev = eval_loop(model, splits.test, rc.train.eval_batch_size);
  const auto probe = firing_rate_probe(model, splits.test, rc.train.eval_batch_size);
  write_profile(out / to_string(variant) / "profile", probe);

  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto& h : probe.histograms) {
    if (h.count == 0) continue;
    lo = first ? h.min : std::min(lo, h.min);
    hi = first ? h.max : std::max(hi, h.max);
    first = false;
  }
  const fs::path csv = out / "ablation.csv";
  std::string text = fs::exists(csv) ? io::read_file(csv) : std::string();
  if (text.empty()) text = "variant,acc,ops,energy,qktv_min,qktv_max,config_hash\n";
  char ops[64];
  std::snprintf(ops, sizeof ops, "%.6f", static_cast<double>(probe.energy.total_ops()) / 1e6);
  text += to_string(variant) + "," + format_double(ev.accuracy) + "," + ops + "," +
          format_fj_as_uj(energy_snn(probe.energy)) + "," + format_double(lo) + "," +
          format_double(hi) + "," + rc.shape_hash() + "\n";
  io::write_file_atomic(csv, text);
  std::printf("variant=%s acc=%s ops_m=%s energy_uj=%s\n", to_string(variant).c_str(),
              format_double(ev.accuracy).c_str(), ops,
              format_fj_as_uj(energy_snn(probe.energy)).c_str());
  return kOk;
}

struct ExportArgs {
  std::string checkpoint, input, out;
  std::size_t block = 0, head = 0, t = 0;
};

// Keeps the attention tensors of one block.
class AttentionCapture : public ForwardObserver<float> {
 public:
  explicit AttentionCapture(std::string layer) : layer_(std::move(layer)) {}
  void on_attention(const AttentionEvent<float>& e) override {
    if (e.layer.name != layer_) return;
    q = e.q;
    k = e.k;
    product = e.product;
  }
  Tensor<float> q, k, product;

 private:
  std::string layer_;
};

int cmd_export(const ExportArgs& a) {
  auto model = load_checkpoint<float>(a.checkpoint);
  const auto& c = model.config();
  if (a.block >= c.num_blocks) {
    throw UsageError("--block " + std::to_string(a.block) + " is out of range (model has " +
                     std::to_string(c.num_blocks) + " blocks)");
  }
  if (a.head >= c.num_heads) {
    throw UsageError("--head " + std::to_string(a.head) + " is out of range (model has " +
                     std::to_string(c.num_heads) + " heads)");
  }
  if (a.t >= c.time_steps) {
    throw UsageError("--t " + std::to_string(a.t) + " is out of range (model has " +
                     std::to_string(c.time_steps) + " time steps)");
  }
  std::string bytes;
  try {
    bytes = io::read_file(a.input);
  } catch (const Error& e) {
    throw DataError(e.what());
  }
  const auto img = io::decode_pgm(bytes);
  if (img.width != c.image_width || img.height != c.image_height) {
    throw DataError("input image is " + std::to_string(img.width) + "x" +
                    std::to_string(img.height) + " but the model expects " +
                    std::to_string(c.image_width) + "x" + std::to_string(c.image_height));
  }
  std::vector<float> pixels;
  for (std::size_t ch = 0; ch < c.in_channels; ++ch) {
    for (auto p : img.pixels) pixels.push_back(static_cast<float>(p) / 255.0f);
  }
  const Tensor<float> x({1, c.in_channels, c.image_height, c.image_width}, std::move(pixels));

  AttentionCapture cap("blocks." + std::to_string(a.block) + ".attn.ssa");
  {
    NoGradGuard no_grad;
    model.forward(x, false, &cap);
  }
  // Captured tensors are [T, 1, H, N, d].
  const std::size_t n = c.tokens(), d = c.embed_dim / c.num_heads;
  const std::size_t offset = (a.t * c.num_heads + a.head) * n * d;
  const auto qv = cap.q.values().subspan(offset, n * d);
  const auto kv = cap.k.values().subspan(offset, n * d);
  const auto pv = cap.product.values().subspan(offset, n * d);
  std::vector<double> map(n * n, 0.0), out(pv.begin(), pv.end());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t e = 0; e < d; ++e) s += double(qv[i * d + e]) * double(kv[j * d + e]);
      map[i * n + j] = s;
    }
  }
  const fs::path dir = a.out;
  fs::create_directories(dir);
  io::write_file_atomic(dir / "attn_map.csv", io::matrix_csv(map, n, n));
  io::write_file_atomic(dir / "attn_map.pgm", io::encode_pgm(io::to_gray(map, n, n)));
  io::write_file_atomic(dir / "ssa_out.csv", io::matrix_csv(out, n, d));
  io::write_file_atomic(dir / "ssa_out.pgm", io::encode_pgm(io::to_gray(out, n, d)));
  std::printf("map=%zux%zu output=%zux%zu\n", n, n, n, d);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spiking transformer engine: train, evaluate and profile Spikformer models"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train a model and write metrics and checkpoints");
  t->add_option("--config", train.config, "key=value config file")->required();
  t->add_option("--data", train.data, "idx:<img>,<lbl>[,<img>,<lbl>] or synth:<K>x<count>")->required();
  t->add_option("--out", train.out, "output directory")->required();
  t->add_option("--seed", train.seed, "override the config seed");
  t->add_option("--epochs", train.epochs, "override the config epoch count");
  t->add_flag("--quiet", train.quiet, "no per-epoch log on stderr");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "print accuracy of a checkpoint");
  e->add_option("--checkpoint", eval.checkpoint)->required();
  e->add_option("--data", eval.data)->required();
  e->add_option("--split", eval.split, "test, train or both")
      ->check(CLI::IsMember({"test", "train", "both"}));
  e->add_option("--seed", eval.seed, "seed used for synthetic data and the holdout split");
  e->add_option("--holdout", eval.holdout);
  e->add_option("--batch", eval.batch)->check(CLI::PositiveNumber);

  ProfileArgs prof;
  auto* p = app.add_subcommand("profile", "firing rates, SOP counts and energy estimate");
  p->add_option("--checkpoint", prof.checkpoint)->required();
  p->add_option("--data", prof.data)->required();
  p->add_option("--out", prof.out)->required();
  p->add_option("--split", prof.split)->check(CLI::IsMember({"test", "train"}));
  p->add_option("--seed", prof.seed);
  p->add_option("--holdout", prof.holdout);
  p->add_option("--batch", prof.batch)->check(CLI::PositiveNumber);
  p->add_option("--e-mac", prof.e_mac, "pJ per multiply-accumulate");
  p->add_option("--e-ac", prof.e_ac, "pJ per accumulate");

  AblateArgs abl;
  auto* b = app.add_subcommand("ablate", "train one attention variant and append to ablation.csv");
  b->add_option("--variant", abl.variant, "ssa|vsa|vsa_floatv|i|relu|leakyrelu")->required();
  b->add_option("--config", abl.train.config)->required();
  b->add_option("--data", abl.train.data)->required();
  b->add_option("--out", abl.train.out)->required();
  b->add_option("--seed", abl.train.seed);
  b->add_option("--epochs", abl.train.epochs);
  b->add_flag("--quiet", abl.train.quiet);

  ExportArgs ex;
  auto* x = app.add_subcommand("export-attn", "export one attention map as CSV and PGM");
  x->add_option("--checkpoint", ex.checkpoint)->required();
  x->add_option("--input", ex.input, "8-bit PGM image")->required();
  x->add_option("--block", ex.block)->required();
  x->add_option("--head", ex.head)->required();
  x->add_option("--t", ex.t)->required();
  x->add_option("--out", ex.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (t->parsed()) return cmd_train(train);
    if (e->parsed()) return cmd_eval(eval);
    if (p->parsed()) return cmd_profile(prof);
    if (b->parsed()) return cmd_ablate(abl);
    if (x->parsed()) return cmd_export(ex);
  } catch (const UsageError& err) {
    std::fprintf(stderr, "usage error: %s\n", err.what());
    return kUsage;
  } catch (const ConfigError& err) {
    std::fprintf(stderr, "config error: %s\n", err.what());
    return kUsage;
  } catch (const CheckpointError& err) {
    std::fprintf(stderr, "checkpoint error: %s\n", err.what());
    return kCheckpoint;
  } catch (const DataError& err) {
    std::fprintf(stderr, "data error: %s\n", err.what());
    return kData;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kFailure;
  }
  return kUsage;
}
