#include "spikeformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "spikeformer/error.hpp"
#include "spikeformer/io.hpp"

namespace spikeformer {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

namespace {

using Kind = CheckpointError::Kind;

template <typename U>
void put(std::string& out, U value) {
  char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(Kind::Truncated, std::string("checkpoint truncated while reading ") +
                                                 what + " at byte " + std::to_string(pos_));
    }
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const CheckpointRecord& record) {
  std::string out = "SPKF";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(record.config_text.size()));
  out += record.config_text;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(record.tensors.size()));
  for (const auto& t : record.tensors) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out += t.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(t.values.data()), t.values.size() * sizeof(float));
  }
  return out;
}

CheckpointRecord decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != "SPKF") {
    throw CheckpointError(Kind::Format, "not a checkpoint: bad magic bytes");
  }
  Reader r(bytes.substr(4));
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::Format, "unsupported checkpoint version " +
                                            std::to_string(version));
  }
  CheckpointRecord rec;
  const auto config_len = r.get<std::uint32_t>("config length");
  rec.config_text = std::string(r.take(config_len, "config"));
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    const auto name_len = r.get<std::uint16_t>("tensor name length");
    t.name = std::string(r.take(name_len, "tensor name"));
    const auto rank = r.get<std::uint8_t>("tensor rank");
    std::uint64_t n = 1;
    for (std::uint8_t a = 0; a < rank; ++a) {
      t.shape.push_back(r.get<std::uint32_t>("tensor dims"));
      n *= t.shape.back();
    }
    if (n > (std::uint64_t{1} << 32)) {
      throw CheckpointError(Kind::Format, "tensor '" + t.name + "' is implausibly large");
    }
    const auto raw = r.take(n * sizeof(float), "tensor values");
    t.values.resize(n);
    std::memcpy(t.values.data(), raw.data(), raw.size());
    rec.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw CheckpointError(Kind::Format, "trailing bytes after last tensor");
  return rec;
}

template <typename T>
CheckpointRecord make_checkpoint(Spikformer<T>& model) {
  CheckpointRecord rec;
  rec.config_text = model.config().to_text();
  for (const auto& p : model.parameters()) {
    const auto v = p.tensor.values();
    rec.tensors.push_back({p.name, p.tensor.shape(), std::vector<float>(v.begin(), v.end())});
  }
  for (const auto& b : model.buffers()) {
    rec.tensors.push_back({b.name, Shape{b.values->size()},
                           std::vector<float>(b.values->begin(), b.values->end())});
  }
  return rec;
}

template <typename T>
void apply_checkpoint(const CheckpointRecord& record, Spikformer<T>& model) {
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : record.tensors) by_name[t.name] = &t;
  std::size_t used = 0;
  auto lookup = [&](const std::string& name, const Shape& shape) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw CheckpointError(Kind::Shape, "checkpoint has no tensor '" + name + "'");
    }
    if (it->second->shape != shape) {
      throw CheckpointError(Kind::Shape, "shape mismatch for tensor '" + name +
                                             "': checkpoint " +
                                             to_string(it->second->shape) + ", model " +
                                             to_string(shape));
    }
    ++used;
    return it->second;
  };
  for (auto& p : model.parameters()) {
    const auto* t = lookup(p.name, p.tensor.shape());
    auto dst = p.tensor.mutable_values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(t->values[i]);
  }
  for (auto& b : model.buffers()) {
    const auto* t = lookup(b.name, Shape{b.values->size()});
    for (std::size_t i = 0; i < b.values->size(); ++i) (*b.values)[i] = static_cast<T>(t->values[i]);
  }
  if (used != record.tensors.size()) {
    for (const auto& t : record.tensors) {
      bool known = false;
      for (const auto& p : model.parameters()) known = known || p.name == t.name;
      for (const auto& b : model.buffers()) known = known || b.name == t.name;
      if (!known) {
        throw CheckpointError(Kind::Shape, "checkpoint tensor '" + t.name +
                                               "' does not exist in the model");
      }
    }
    throw CheckpointError(Kind::Shape, "checkpoint holds duplicate tensor names");
  }
}

CheckpointRecord read_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = io::read_file(path);
  } catch (const Error& e) {
    throw CheckpointError(Kind::Io, e.what());
  }
  return decode_checkpoint(bytes);
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, Spikformer<T>& model) {
  io::write_file_atomic(path, encode_checkpoint(make_checkpoint(model)));
}

template <typename T>
Spikformer<T> load_checkpoint(const std::filesystem::path& path) {
  const auto rec = read_checkpoint(path);
  ModelConfig config;
  try {
    config = ModelConfig::from_text(rec.config_text);
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::Format, std::string("checkpoint config: ") + e.what());
  }
  Spikformer<T> model(config);
  apply_checkpoint(rec, model);
  return model;
}

#define SPIKEFORMER_INSTANTIATE_CHECKPOINT(T)                                  \
  template CheckpointRecord make_checkpoint(Spikformer<T>&);                   \
  template void apply_checkpoint(const CheckpointRecord&, Spikformer<T>&);     \
  template void save_checkpoint(const std::filesystem::path&, Spikformer<T>&); \
  template Spikformer<T> load_checkpoint(const std::filesystem::path&);

SPIKEFORMER_INSTANTIATE_CHECKPOINT(float)
SPIKEFORMER_INSTANTIATE_CHECKPOINT(double)

}  // namespace spikeformer
