#include "spikeformer/model.hpp"

#include <sstream>

#include "spikeformer/error.hpp"
#include "spikeformer/ops.hpp"

namespace spikeformer {

std::size_t ModelConfig::pooled_blocks() const {
  std::size_t p = 0;
  for (char c : sps_pool) p += c == '1';
  return p;
}

std::size_t ModelConfig::sps_channels(std::size_t block) const {
  const std::size_t shift = sps_blocks() - 1 - block;
  return embed_dim >> shift;
}

std::size_t ModelConfig::grid_height() const {
  return image_height >> pooled_blocks();
}

std::size_t ModelConfig::grid_width() const {
  return image_width >> pooled_blocks();
}

LifParams ModelConfig::neuron() const {
  LifParams p;
  p.tau = tau;
  p.v_threshold = v_threshold;
  p.v_reset = v_reset;
  p.surrogate_alpha = surrogate_alpha;
  p.mode = neuron_mode;
  p.smooth = smooth_neurons;
  return p;
}

LifParams ModelConfig::attn_neuron() const {
  LifParams p = neuron();
  p.v_threshold = attn_v_threshold;
  return p;
}

SsaConfig ModelConfig::ssa() const {
  SsaConfig c;
  c.embed_dim = embed_dim;
  c.num_heads = num_heads;
  c.scale = attn_scale;
  c.scale_learnable = attn_scale_learnable;
  c.order = attention_order;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (time_steps == 0) fail("time_steps must be >= 1");
  if (in_channels == 0) fail("in_channels must be >= 1");
  if (image_height == 0 || image_width == 0) fail("image size must be positive");
  if (sps_pool.empty()) fail("sps_pool must name at least one SPS block");
  for (char c : sps_pool) {
    if (c != '0' && c != '1') fail("sps_pool must be a string of 0/1, got '" + sps_pool + "'");
  }
  if (sps_blocks() > 16) fail("too many SPS blocks");
  if (embed_dim == 0 || num_blocks == 0 || mlp_ratio == 0) {
    fail("embed_dim, num_blocks and mlp_ratio must be positive");
  }
  if (num_classes < 2) fail("num_classes must be >= 2");
  const std::size_t div = std::size_t{1} << (sps_blocks() - 1);
  if (embed_dim % div != 0) {
    fail("embed_dim " + std::to_string(embed_dim) + " is not divisible by " +
         std::to_string(div) + " (SPS channel schedule)");
  }
  const std::size_t pool = std::size_t{1} << pooled_blocks();
  if (image_height % pool != 0 || image_width % pool != 0) {
    fail("image " + std::to_string(image_height) + "x" + std::to_string(image_width) +
         " is not divisible by 2^" + std::to_string(pooled_blocks()));
  }
  ssa().validate();
  neuron().validate();
  attn_neuron().validate();
}

bool ModelConfig::set(const ConfigLine& line) {
  const auto& k = line.key;
  if (k == "time_steps") time_steps = config_size(line);
  else if (k == "in_channels") in_channels = config_size(line);
  else if (k == "image_height") image_height = config_size(line);
  else if (k == "image_width") image_width = config_size(line);
  else if (k == "image_size") image_height = image_width = config_size(line);
  else if (k == "sps_pool") sps_pool = line.value;
  else if (k == "embed_dim") embed_dim = config_size(line);
  else if (k == "num_blocks") num_blocks = config_size(line);
  else if (k == "num_heads") num_heads = config_size(line);
  else if (k == "mlp_ratio") mlp_ratio = config_size(line);
  else if (k == "num_classes") num_classes = config_size(line);
  else if (k == "attention") attention = parse_variant(line.value);
  else if (k == "attention_order") attention_order = parse_order(line.value);
  else if (k == "attn_scale") attn_scale = config_double(line);
  else if (k == "attn_scale_learnable") attn_scale_learnable = config_bool(line);
  else if (k == "neuron_mode") {
    if (line.value == "lif") neuron_mode = NeuronMode::Lif;
    else if (line.value == "if") neuron_mode = NeuronMode::If;
    else throw ConfigError("config line " + std::to_string(line.line_no) + ": '" +
                           line.text + "': neuron_mode must be lif or if");
  }
  else if (k == "tau") tau = config_double(line);
  else if (k == "v_threshold") v_threshold = config_double(line);
  else if (k == "v_reset") v_reset = config_double(line);
  else if (k == "attn_v_threshold") attn_v_threshold = config_double(line);
  else if (k == "surrogate_alpha") surrogate_alpha = config_double(line);
  else if (k == "smooth_neurons") smooth_neurons = config_bool(line);
  else return false;
  return true;
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "time_steps=" << time_steps << '\n'
     << "in_channels=" << in_channels << '\n'
     << "image_height=" << image_height << '\n'
     << "image_width=" << image_width << '\n'
     << "sps_pool=" << sps_pool << '\n'
     << "embed_dim=" << embed_dim << '\n'
     << "num_blocks=" << num_blocks << '\n'
     << "num_heads=" << num_heads << '\n'
     << "mlp_ratio=" << mlp_ratio << '\n'
     << "num_classes=" << num_classes << '\n'
     << "attention=" << to_string(attention) << '\n'
     << "attention_order=" << to_string(attention_order) << '\n'
     << "attn_scale=" << format_double(attn_scale) << '\n'
     << "attn_scale_learnable=" << (attn_scale_learnable ? "true" : "false") << '\n'
     << "neuron_mode=" << (neuron_mode == NeuronMode::Lif ? "lif" : "if") << '\n'
     << "tau=" << format_double(tau) << '\n'
     << "v_threshold=" << format_double(v_threshold) << '\n'
     << "v_reset=" << format_double(v_reset) << '\n'
     << "attn_v_threshold=" << format_double(attn_v_threshold) << '\n'
     << "surrogate_alpha=" << format_double(surrogate_alpha) << '\n'
     << "smooth_neurons=" << (smooth_neurons ? "true" : "false") << '\n';
  return os.str();
}

ModelConfig ModelConfig::from_text(std::string_view text) {
  ModelConfig c;
  for (const auto& line : parse_key_values(text)) {
    if (!c.set(line)) throw_unknown_key(line);
  }
  c.validate();
  return c;
}

template <typename T>
Tensor<T> replicate_static_input(const Tensor<T>& images, std::size_t time_steps) {
  if (time_steps == 0) throw DimensionError("replicate_static_input: T must be >= 1");
  return ops::stack(std::vector<Tensor<T>>(time_steps, images));
}

template <typename T>
Spikformer<T>::Spikformer(const ModelConfig& config)
    : config_(config), neuron_(config.neuron()) {
  config_.validate();
  const std::size_t k = config_.sps_blocks();
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t in = i == 0 ? config_.in_channels : config_.sps_channels(i - 1);
    sps_conv.emplace_back(in, config_.sps_channels(i));
    sps_bn.emplace_back(config_.sps_channels(i));
  }
  const std::size_t d = config_.embed_dim;
  rpe_conv = nn::Conv3x3<T>(d, d);
  rpe_bn = nn::BatchNorm<T>(d);
  const std::size_t hidden = d * config_.mlp_ratio;
  for (std::size_t l = 0; l < config_.num_blocks; ++l) {
    blocks.push_back({SpikingSelfAttention<T>(config_.ssa(), config_.attention,
                                              config_.neuron(), config_.attn_neuron()),
                      nn::Linear<T>(d, hidden, false), nn::Linear<T>(hidden, d, false),
                      nn::BatchNorm<T>(hidden), nn::BatchNorm<T>(d)});
  }
  head = nn::Linear<T>(d, config_.num_classes, true);
}

template <typename T>
void Spikformer<T>::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& c : sps_conv) c.init(rng);
  rpe_conv.init(rng);
  for (auto& b : blocks) {
    b.attn.init(rng);
    b.fc1.init(rng);
    b.fc2.init(rng);
  }
  head.init(rng);
}

template <typename T>
Tensor<T> Spikformer<T>::spike(const Tensor<T>& x, std::size_t steps,
                               const LifParams& p, ForwardObserver<T>* observer,
                               const std::string& name) const {
  Shape timed = x.shape();
  timed[0] /= steps;
  timed.insert(timed.begin(), steps);
  const Tensor<T> s = lif_forward(ops::reshape(x, timed), p);
  if (observer) observer->on_neuron(name, s);
  return ops::reshape(s, x.shape());
}

template <typename T>
Tensor<T> Spikformer<T>::sps_forward(const Tensor<T>& x, bool training,
                                     ForwardObserver<T>* observer) {
  if (x.rank() != 5 || x.dim(2) != config_.in_channels ||
      x.dim(3) != config_.image_height || x.dim(4) != config_.image_width) {
    throw DimensionError("SPS expects [T, B, " + std::to_string(config_.in_channels) +
                         ", " + std::to_string(config_.image_height) + ", " +
                         std::to_string(config_.image_width) + "], got " +
                         to_string(x.shape()));
  }
  const std::size_t steps = x.dim(0), batch = x.dim(1);
  Tensor<T> h = ops::reshape(x, {steps * batch, x.dim(2), x.dim(3), x.dim(4)});
  for (std::size_t i = 0; i < sps_conv.size(); ++i) {
    const std::string name = "sps." + std::to_string(i);
    if (observer) {
      LayerDescriptor desc;
      desc.name = name + ".conv";
      desc.kind = LayerKind::Conv;
      desc.conv = {sps_conv[i].in_channels(), sps_conv[i].out_channels(), 3,
                   h.dim(2), h.dim(3)};
      desc.real_valued_input = i == 0;
      observer->on_synapse({desc, h, steps, batch});
    }
    h = sps_bn[i].forward(sps_conv[i].forward(h), 1, training);
    h = spike(h, steps, neuron_, observer, name + ".lif");
    if (config_.sps_pool[i] == '1') h = ops::maxpool2d(h);
  }
  return grid_to_tokens(h, steps);
}

template <typename T>
Tensor<T> Spikformer<T>::tokens_to_grid(const Tensor<T>& x) const {
  const auto p = ops::permute(x, {0, 1, 3, 2});  // [T, B, D, N]
  return ops::reshape(p, {x.dim(0) * x.dim(1), x.dim(3), config_.grid_height(),
                          config_.grid_width()});
}

template <typename T>
Tensor<T> Spikformer<T>::grid_to_tokens(const Tensor<T>& x, std::size_t steps) const {
  const std::size_t batch = x.dim(0) / steps;
  const auto r = ops::reshape(x, {steps, batch, x.dim(1), x.dim(2) * x.dim(3)});
  return ops::permute(r, {0, 1, 3, 2});
}

template <typename T>
Tensor<T> Spikformer<T>::rpe_forward(const Tensor<T>& x, bool training,
                                     ForwardObserver<T>* observer) {
  if (x.rank() != 4 || x.dim(2) != config_.tokens() || x.dim(3) != config_.embed_dim) {
    throw DimensionError("RPE expects [T, B, " + std::to_string(config_.tokens()) +
                         ", " + std::to_string(config_.embed_dim) + "], got " +
                         to_string(x.shape()));
  }
  const std::size_t steps = x.dim(0), batch = x.dim(1);
  const Tensor<T> grid = tokens_to_grid(x);
  if (observer) {
    LayerDescriptor desc;
    desc.name = "rpe.conv";
    desc.kind = LayerKind::Conv;
    desc.conv = {config_.embed_dim, config_.embed_dim, 3, grid.dim(2), grid.dim(3)};
    observer->on_synapse({desc, grid, steps, batch});
  }
  Tensor<T> r = rpe_bn.forward(rpe_conv.forward(grid), 1, training);
  r = spike(r, steps, neuron_, observer, "rpe.lif");
  return ops::add(x, grid_to_tokens(r, steps));
}

template <typename T>
Tensor<T> Spikformer<T>::encoder_block(std::size_t index, const Tensor<T>& x,
                                       bool training, ForwardObserver<T>* observer) {
  auto& b = blocks.at(index);
  const std::string name = "blocks." + std::to_string(index);
  const Tensor<T> x1 = ops::add(x, b.attn.forward(x, training, observer, name + ".attn"));

  auto synapse = [&](const nn::Linear<T>& lin, const Tensor<T>& in,
                     const std::string& lname) {
    if (!observer) return;
    LayerDescriptor desc;
    desc.name = lname;
    desc.kind = LayerKind::Linear;
    desc.linear = {lin.in_features(), lin.out_features(), in.dim(2)};
    observer->on_synapse({desc, in, in.dim(0), in.dim(1)});
  };
  synapse(b.fc1, x1, name + ".mlp.fc1");
  Tensor<T> h = lif_forward(b.bn1.forward(b.fc1.forward(x1), 3, training), neuron_);
  if (observer) observer->on_neuron(name + ".mlp.lif1", h);
  synapse(b.fc2, h, name + ".mlp.fc2");
  h = lif_forward(b.bn2.forward(b.fc2.forward(h), 3, training), neuron_);
  if (observer) observer->on_neuron(name + ".mlp.lif2", h);
  return ops::add(x1, h);
}

template <typename T>
Tensor<T> Spikformer<T>::classify(const Tensor<T>& x, ForwardObserver<T>* observer) {
  if (x.rank() != 4) {
    throw DimensionError("classify expects [T, B, N, D], got " + to_string(x.shape()));
  }
  const Tensor<T> pooled = ops::mean_axis(ops::mean_axis(x, 2), 0);  // [B, D]
  if (observer) {
    LayerDescriptor desc;
    desc.name = "head";
    desc.kind = LayerKind::Linear;
    desc.linear = {head.in_features(), head.out_features(), 1};
    desc.real_valued_input = true;
    observer->on_synapse({desc, pooled, 1, pooled.dim(0)});
  }
  return head.forward(pooled);
}

template <typename T>
Tensor<T> Spikformer<T>::forward(const Tensor<T>& images, bool training,
                                 ForwardObserver<T>* observer) {
  if (images.rank() != 4) {
    throw DimensionError("model input must be [B, C, H, W], got " +
                         to_string(images.shape()));
  }
  Tensor<T> x = sps_forward(replicate_static_input(images, config_.time_steps),
                            training, observer);
  x = rpe_forward(x, training, observer);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    x = encoder_block(l, x, training, observer);
  }
  return classify(x, observer);
}

template <typename T>
std::vector<nn::NamedTensor<T>> Spikformer<T>::parameters() const {
  std::vector<nn::NamedTensor<T>> out;
  for (std::size_t i = 0; i < sps_conv.size(); ++i) {
    const std::string p = "sps." + std::to_string(i);
    sps_conv[i].collect(p + ".conv", out);
    sps_bn[i].collect(p + ".bn", out);
  }
  rpe_conv.collect("rpe.conv", out);
  rpe_bn.collect("rpe.bn", out);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const std::string p = "blocks." + std::to_string(l);
    blocks[l].attn.collect(p + ".attn", out);
    blocks[l].fc1.collect(p + ".mlp.fc1", out);
    blocks[l].bn1.collect(p + ".mlp.bn1", out);
    blocks[l].fc2.collect(p + ".mlp.fc2", out);
    blocks[l].bn2.collect(p + ".mlp.bn2", out);
  }
  head.collect("head", out);
  return out;
}

template <typename T>
std::vector<nn::NamedBuffer<T>> Spikformer<T>::buffers() {
  std::vector<nn::NamedBuffer<T>> out;
  for (std::size_t i = 0; i < sps_bn.size(); ++i) {
    sps_bn[i].collect_buffers("sps." + std::to_string(i) + ".bn", out);
  }
  rpe_bn.collect_buffers("rpe.bn", out);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const std::string p = "blocks." + std::to_string(l);
    blocks[l].attn.collect_buffers(p + ".attn", out);
    blocks[l].bn1.collect_buffers(p + ".mlp.bn1", out);
    blocks[l].bn2.collect_buffers(p + ".mlp.bn2", out);
  }
  return out;
}

template Tensor<float> replicate_static_input(const Tensor<float>&, std::size_t);
template Tensor<double> replicate_static_input(const Tensor<double>&, std::size_t);
template class Spikformer<float>;
template class Spikformer<double>;

}  // namespace spikeformer
