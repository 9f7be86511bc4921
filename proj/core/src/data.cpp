#include "spikeformer/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <random>

#include "spikeformer/io.hpp"

namespace spikeformer {

template <typename T>
Tensor<T> Dataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t n = sample_size();
  std::vector<T> out(indices.size() * n);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto img = image(indices[b]);
    std::copy(img.begin(), img.end(), out.begin() + static_cast<std::ptrdiff_t>(b * n));
  }
  return Tensor<T>({indices.size(), channels, height, width}, std::move(out));
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels[i]);
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset d;
  d.channels = channels;
  d.height = height;
  d.width = width;
  d.num_classes = num_classes;
  d.images.reserve(indices.size() * sample_size());
  for (auto i : indices) {
    const auto img = image(i);
    d.images.insert(d.images.end(), img.begin(), img.end());
    d.labels.push_back(labels[i]);
  }
  return d;
}

template Tensor<float> Dataset::batch(std::span<const std::size_t>) const;
template Tensor<double> Dataset::batch(std::span<const std::size_t>) const;

namespace {

using IdxKind = IdxError::Kind;

std::uint32_t be32(std::string_view bytes, std::size_t offset, const char* file) {
  if (bytes.size() < offset + 4) {
    throw IdxError(IdxKind::Truncated, std::string(file) + " IDX header is truncated");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + offset);
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
         (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

std::string read_or_throw(const std::filesystem::path& path) {
  try {
    return io::read_file(path);
  } catch (const Error& e) {
    throw IdxError(IdxKind::Io, e.what());
  }
}

}  // namespace

Dataset parse_idx(std::string_view image_bytes, std::string_view label_bytes,
                  std::size_t num_classes) {
  const auto img_magic = be32(image_bytes, 0, "image");
  if (img_magic != 0x803) {
    throw IdxError(IdxKind::BadMagic, "image file: bad IDX magic (expected 0x00000803)");
  }
  const auto lbl_magic = be32(label_bytes, 0, "label");
  if (lbl_magic != 0x801) {
    throw IdxError(IdxKind::BadMagic, "label file: bad IDX magic (expected 0x00000801)");
  }
  const std::size_t count = be32(image_bytes, 4, "image");
  const std::size_t rows = be32(image_bytes, 8, "image");
  const std::size_t cols = be32(image_bytes, 12, "image");
  const std::size_t label_count = be32(label_bytes, 4, "label");
  if (count != label_count) {
    throw IdxError(IdxKind::CountMismatch, "IDX count mismatch: " + std::to_string(count) +
                                               " images vs " + std::to_string(label_count) +
                                               " labels");
  }
  if (rows == 0 || cols == 0) throw IdxError(IdxKind::Truncated, "image file: zero-sized images");
  const std::size_t pixels = count * rows * cols;
  if (image_bytes.size() - 16 < pixels) {
    throw IdxError(IdxKind::Truncated, "image file is truncated: expected " +
                                           std::to_string(pixels) + " pixel bytes");
  }
  if (label_bytes.size() - 8 < count) {
    throw IdxError(IdxKind::Truncated, "label file is truncated: expected " +
                                           std::to_string(count) + " labels");
  }
  Dataset d;
  d.channels = 1;
  d.height = rows;
  d.width = cols;
  d.images.resize(pixels);
  const auto* px = reinterpret_cast<const unsigned char*>(image_bytes.data() + 16);
  for (std::size_t i = 0; i < pixels; ++i) d.images[i] = static_cast<float>(px[i]) / 255.0f;
  const auto* lb = reinterpret_cast<const unsigned char*>(label_bytes.data() + 8);
  int max_label = -1;
  d.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    d.labels[i] = lb[i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.num_classes = num_classes ? num_classes : static_cast<std::size_t>(max_label + 1);
  if (max_label >= static_cast<int>(d.num_classes)) {
    throw IdxError(IdxKind::BadLabel, "label " + std::to_string(max_label) +
                                          " is outside [0, " + std::to_string(d.num_classes) + ")");
  }
  return d;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t num_classes) {
  return parse_idx(read_or_throw(images), read_or_throw(labels), num_classes);
}

namespace {

// Draws one pattern of family `cls` centred near (cy, cx).
void draw_pattern(std::vector<float>& img, std::size_t s, std::size_t cls, int cy, int cx,
                  int r, float ink) {
  // 2x2 pen, so strokes survive positional jitter.
  auto dot = [&](int y, int x) {
    if (y >= 0 && x >= 0 && y < static_cast<int>(s) && x < static_cast<int>(s)) {
      img[static_cast<std::size_t>(y) * s + static_cast<std::size_t>(x)] = ink;
    }
  };
  auto plot = [&](int y, int x) {
    dot(y, x);
    dot(y + 1, x);
    dot(y, x + 1);
    dot(y + 1, x + 1);
  };
  for (int d = -r; d <= r; ++d) {
    switch (cls) {
      case 0: plot(cy, cx + d); plot(cy + 1, cx + d); break;        // horizontal bar
      case 1: plot(cy + d, cx); plot(cy + d, cx + 1); break;        // vertical bar
      case 2: plot(cy, cx + d); plot(cy + d, cx); break;            // plus
      case 3: plot(cy + d, cx + d); plot(cy + d, cx + d + 1); break;  // diagonal
      case 4:                                                       // box outline
        plot(cy - r, cx + d); plot(cy + r, cx + d);
        plot(cy + d, cx - r); plot(cy + d, cx + r);
        break;
      case 5: plot(cy + d, cx + d); plot(cy + d, cx - d); break;    // X
      case 6: plot(cy + d, cx - d); plot(cy + d, cx - d - 1); break;  // anti-diagonal
      case 7: plot(cy + r, cx + d); plot(cy + d, cx - r); break;    // L
      case 8: plot(cy - r, cx + d); plot(cy + d, cx); break;        // T
      case 9:                                                       // filled square
        for (int e = -r / 2; e <= r / 2; ++e) {
          if (std::abs(d) <= r / 2) plot(cy + d, cx + e);
        }
        break;
      default: break;
    }
  }
}

}  // namespace

Dataset synth_shapes(const SynthConfig& config) {
  if (config.num_classes < 2 || config.num_classes > 10) {
    throw ConfigError("synthetic data supports 2..10 classes, got " +
                      std::to_string(config.num_classes));
  }
  if (config.size < 8) throw ConfigError("synthetic images must be at least 8x8");
  if (config.count == 0) throw DataError("synthetic data: count must be positive");
  std::mt19937_64 rng(config.seed);
  const std::size_t s = config.size;
  Dataset d;
  d.channels = 1;
  d.height = d.width = s;
  d.num_classes = config.num_classes;
  d.labels.resize(config.count);
  for (std::size_t i = 0; i < config.count; ++i) {
    d.labels[i] = static_cast<int>(i % config.num_classes);
  }
  std::shuffle(d.labels.begin(), d.labels.end(), rng);
  d.images.assign(config.count * s * s, 0.0f);

  const int half = static_cast<int>(s) / 2;
  const int jitter = std::max(1, static_cast<int>(s) / 12);
  std::uniform_int_distribution<int> shift(-jitter, jitter);
  std::uniform_int_distribution<int> radius(std::max(2, half / 2), std::max(3, half - jitter - 1));
  std::uniform_real_distribution<float> ink(0.7f, 1.0f);
  std::uniform_real_distribution<float> noise(0.0f, 0.2f);
  std::vector<float> img(s * s);
  for (std::size_t i = 0; i < config.count; ++i) {
    for (auto& v : img) v = noise(rng);
    const int cy = half + shift(rng), cx = half + shift(rng);
    draw_pattern(img, s, static_cast<std::size_t>(d.labels[i]), cy, cx, radius(rng), ink(rng));
    std::copy(img.begin(), img.end(), d.images.begin() + static_cast<std::ptrdiff_t>(i * s * s));
  }
  return d;
}

std::pair<Dataset, Dataset> split_holdout(const Dataset& data, double test_fraction,
                                          std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("holdout fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(data.size())));
  if (n_test == 0 || n_test >= data.size()) {
    throw DataError("dataset of " + std::to_string(data.size()) +
                    " samples is too small to hold out a test split");
  }
  std::vector<std::size_t> test(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {data.subset(train), data.subset(test)};
}

DataSource parse_data_spec(std::string_view spec) {
  DataSource src;
  if (spec.starts_with("synth:")) {
    src.kind = DataSource::Kind::Synth;
    const auto body = spec.substr(6);
    const auto x = body.find('x');
    auto num = [&](std::string_view s, std::size_t& out) {
      const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
      return !s.empty() && r.ec == std::errc() && r.ptr == s.data() + s.size();
    };
    if (x == std::string_view::npos || !num(body.substr(0, x), src.synth.num_classes) ||
        !num(body.substr(x + 1), src.synth.count)) {
      throw ConfigError("data spec '" + std::string(spec) +
                        "': expected synth:<classes>x<count>");
    }
    return src;
  }
  if (spec.starts_with("idx:")) {
    src.kind = DataSource::Kind::Idx;
    std::string_view body = spec.substr(4);
    while (true) {
      const auto c = body.find(',');
      src.paths.emplace_back(std::string(body.substr(0, c)));
      if (c == std::string_view::npos) break;
      body = body.substr(c + 1);
    }
    if (src.paths.size() != 2 && src.paths.size() != 4) {
      throw ConfigError("data spec '" + std::string(spec) +
                        "': expected idx:<images>,<labels>[,<test images>,<test labels>]");
    }
    for (const auto& p : src.paths) {
      if (p.empty()) throw ConfigError("data spec '" + std::string(spec) + "': empty path");
    }
    return src;
  }
  throw ConfigError("data spec '" + std::string(spec) + "': expected idx:... or synth:...");
}

DataSplits load_data(const DataSource& source, std::size_t image_size, double holdout,
                     std::uint64_t seed, std::size_t num_classes) {
  DataSplits out;
  Dataset all;
  if (source.kind == DataSource::Kind::Synth) {
    SynthConfig sc = source.synth;
    sc.size = image_size;
    sc.seed = seed;
    all = synth_shapes(sc);
  } else {
    all = load_idx(source.paths[0], source.paths[1], num_classes);
    if (source.paths.size() == 4) {
      out.train = std::move(all);
      out.test = load_idx(source.paths[2], source.paths[3], num_classes);
      if (out.test.height != out.train.height || out.test.width != out.train.width) {
        throw DataError("train and test IDX images differ in size");
      }
      const auto k = std::max(out.train.num_classes, out.test.num_classes);
      out.train.num_classes = out.test.num_classes = k;
      out.explicit_test = true;
      return out;
    }
  }
  if (all.size() == 0) throw DataError("dataset is empty");
  auto [train, test] = split_holdout(all, holdout, seed);
  out.train = std::move(train);
  out.test = std::move(test);
  return out;
}

}  // namespace spikeformer
