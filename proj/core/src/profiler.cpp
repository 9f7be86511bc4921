#include "spikeformer/profiler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "spikeformer/attention.hpp"
#include "spikeformer/config.hpp"
#include "spikeformer/error.hpp"

namespace spikeformer {

std::int64_t EnergyConstants::mac_fj() const { return std::llround(e_mac_pj * 1000.0); }
std::int64_t EnergyConstants::ac_fj() const { return std::llround(e_ac_pj * 1000.0); }

namespace {

AttentionCost attention_cost(const AttentionGeometry& g) {
  SsaConfig c;
  c.embed_dim = g.heads * g.head_dim;
  c.num_heads = g.heads;
  c.order = g.order;
  return flop_sop_cost(c, g.tokens);
}

}  // namespace

std::uint64_t count_flops(const LayerDescriptor& layer) {
  switch (layer.kind) {
    case LayerKind::Conv: {
      const auto& c = layer.conv;
      return std::uint64_t{c.out_channels} * c.in_channels * c.kernel * c.kernel *
             c.out_height * c.out_width;
    }
    case LayerKind::Linear: {
      const auto& l = layer.linear;
      return std::uint64_t{l.rows} * l.in_features * l.out_features;
    }
    case LayerKind::Attention:
      return attention_cost(layer.attention).selected_macs();
    default:
      throw InstrumentationError("no FLOP model for layer '" + layer.name + "' of kind " +
                                 to_string(layer.kind));
  }
}

std::uint64_t count_sops(double fr, std::uint64_t time_steps, std::uint64_t flops) {
  if (!(fr >= 0.0 && fr <= 1.0)) {
    throw InstrumentationError("firing rate " + format_double(fr) + " is outside [0, 1]");
  }
  const long double v = static_cast<long double>(fr) * time_steps * flops;
  return static_cast<std::uint64_t>(std::floor(v));
}

std::uint64_t count_sops(std::uint64_t spikes, std::uint64_t elements,
                         std::uint64_t time_steps, std::uint64_t flops) {
  if (elements == 0) return 0;
  if (spikes > elements) {
    throw InstrumentationError("firing rate " + std::to_string(spikes) + "/" +
                               std::to_string(elements) + " exceeds 1");
  }
  const unsigned __int128 num =
      static_cast<unsigned __int128>(spikes) * time_steps * flops;
  return static_cast<std::uint64_t>(num / elements);
}

std::uint64_t EnergyReport::total_ops() const {
  std::uint64_t s = 0;
  for (const auto& l : layers) s += l.billed_ops;
  return s;
}

std::uint64_t EnergyReport::total_flops() const {
  std::uint64_t s = 0;
  for (const auto& l : layers) s += l.flops;
  return s;
}

std::uint64_t EnergyReport::total_sops() const {
  std::uint64_t s = 0;
  for (const auto& l : layers) s += l.sops;
  return s;
}

std::int64_t energy_snn(const EnergyReport& report) {
  std::int64_t s = 0;
  for (const auto& l : report.layers) s += l.energy_fj;
  return s;
}

std::int64_t energy_ann(const EnergyReport& report) {
  std::int64_t s = 0;
  for (const auto& l : report.layers) {
    s += static_cast<std::int64_t>(l.ann_flops) * report.constants.mac_fj();
  }
  return s;
}

namespace {

std::string fixed_point(std::int64_t value, std::int64_t scale, int digits, bool trim) {
  const bool neg = value < 0;
  const std::uint64_t v = neg ? static_cast<std::uint64_t>(-value) : static_cast<std::uint64_t>(value);
  std::string frac = std::to_string(v % static_cast<std::uint64_t>(scale));
  frac.insert(0, static_cast<std::size_t>(digits) - frac.size(), '0');
  if (trim) {
    while (frac.size() > 1 && frac.back() == '0') frac.pop_back();
  }
  return (neg ? "-" : "") + std::to_string(v / static_cast<std::uint64_t>(scale)) + "." + frac;
}

}  // namespace

std::string format_fj_as_pj(std::int64_t fj) { return fixed_point(fj, 1000, 3, false); }
std::string format_fj_as_uj(std::int64_t fj) {
  return fixed_point(fj, 1000000000, 9, true);
}

std::string profile_csv(const EnergyReport& report) {
  std::string out = "layer,kind,flops,sops,fr,energy_pj\n";
  for (const auto& l : report.layers) {
    out += l.layer + "," + to_string(l.kind) + "," + std::to_string(l.flops) + "," +
           std::to_string(l.sops) + "," + format_double(l.fr) + "," +
           format_fj_as_pj(l.energy_fj) + "\n";
  }
  return out;
}

const LayerRate* FiringRateStats::find(std::string_view layer) const {
  for (const auto& l : layers) {
    if (l.layer == layer) return &l;
  }
  return nullptr;
}

std::string firing_rate_csv(const FiringRateStats& stats) {
  std::string out = "layer,spikes,elements,rate\n";
  for (const auto& l : stats.layers) {
    out += l.layer + "," + std::to_string(l.spikes) + "," + std::to_string(l.elements) +
           "," + format_double(l.rate()) + "\n";
  }
  return out;
}

ValueHistogram make_histogram(std::string layer, std::span<const float> values,
                              std::size_t bins) {
  ValueHistogram h;
  h.layer = std::move(layer);
  bins = std::max<std::size_t>(bins, 1);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (float v : values) {
    if (!std::isfinite(v)) {
      ++h.non_finite;
      continue;
    }
    lo = std::min(lo, static_cast<double>(v));
    hi = std::max(hi, static_cast<double>(v));
    ++h.count;
  }
  h.counts.assign(bins, 0);
  h.centers.resize(bins);
  if (h.count == 0) {
    lo = hi = 0.0;
  }
  h.min = lo;
  h.max = hi;
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    h.centers[b] = lo + (static_cast<double>(b) + 0.5) * width;
  }
  if (h.count == 0) return h;
  for (float v : values) {
    if (!std::isfinite(v)) continue;
    std::size_t b = 0;
    if (width > 0) {
      b = static_cast<std::size_t>((static_cast<double>(v) - lo) / width);
      b = std::min(b, bins - 1);
    }
    ++h.counts[b];
  }
  return h;
}

std::string histogram_csv(const ValueHistogram& h) {
  std::string out = "bin_center,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    out += format_double(h.centers[b]) + "," + std::to_string(h.counts[b]) + "\n";
  }
  return out;
}

template <typename T>
void Profiler<T>::on_neuron(std::string_view layer, const Tensor<T>& spikes) {
  auto it = rate_index_.find(layer);
  if (it == rate_index_.end()) {
    it = rate_index_.emplace(std::string(layer), rates_.size()).first;
    rates_.push_back({std::string(layer)});
  }
  auto& r = rates_[it->second];
  for (T v : spikes.values()) {
    if (v == T(1)) {
      ++r.spikes;
    } else if (v != T(0)) {
      ++r.non_binary;
    }
  }
  r.elements += spikes.size();
}

template <typename T>
typename Profiler<T>::CostAccumulator& Profiler<T>::cost_slot(const LayerDescriptor& desc) {
  auto it = cost_index_.find(desc.name);
  if (it == cost_index_.end()) {
    it = cost_index_.emplace(desc.name, costs_.size()).first;
    costs_.push_back({desc});
  }
  return costs_[it->second];
}

namespace {

// Sum of values, exact when every value is a non-negative integer.
template <typename T>
std::uint64_t integral_sum(std::span<const T> values, bool& integral, std::uint64_t& nonzero) {
  std::uint64_t s = 0;
  for (T v : values) {
    if (v != T(0)) ++nonzero;
    if (v < T(0) || v != std::floor(v)) {
      integral = false;
      continue;
    }
    s += static_cast<std::uint64_t>(v);
  }
  return s;
}

}  // namespace

template <typename T>
void Profiler<T>::on_synapse(const SynapseEvent<T>& event) {
  auto& slot = cost_slot(event.layer);
  slot.samples += event.batch;
  slot.time_steps = event.time_steps;
  const auto values = event.input.values();
  slot.elements += values.size();
  bool integral = true;
  const std::uint64_t sum = integral_sum(values, integral, slot.nonzero);
  slot.spikes += sum;
  slot.integral = slot.integral && integral;
  if (event.layer.real_valued_input || !integral) return;

  slot.has_count = true;
  if (event.layer.kind == LayerKind::Linear) {
    slot.counted += sum * event.layer.linear.out_features;
  } else if (event.layer.kind == LayerKind::Conv) {
    // Each input unit feeds every output position whose 3x3 window covers
    // it; border pixels are covered by fewer windows.
    const auto& s = event.input.shape();
    const std::size_t c = s[1], h = s[2], w = s[3];
    auto cover = [](std::size_t i, std::size_t n) -> std::uint64_t {
      return 1 + (i > 0) + (i + 1 < n);
    };
    std::uint64_t acc = 0;
    for (std::size_t img = 0; img < s[0] * c; ++img) {
      const T* p = values.data() + img * h * w;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          if (p[y * w + x] != T(0)) {
            acc += static_cast<std::uint64_t>(p[y * w + x]) * cover(y, h) * cover(x, w);
          }
        }
      }
    }
    slot.counted += acc * event.layer.conv.out_channels;
  }
}

template <typename T>
void Profiler<T>::on_attention(const AttentionEvent<T>& event) {
  auto& slot = cost_slot(event.layer);
  slot.samples += event.batch;
  slot.time_steps = event.time_steps;
  if (keep_values_) {
    auto it = std::find_if(values_.begin(), values_.end(),
                           [&](const auto& e) { return e.first == event.layer.name; });
    if (it == values_.end()) {
      values_.push_back({event.layer.name, {}});
      it = values_.end() - 1;
    }
    const auto pv = event.product.values();
    it->second.insert(it->second.end(), pv.begin(), pv.end());
  }
  if (event.layer.attention.variant != AttentionVariant::Ssa) return;
  const bool kv = event.layer.attention.order == AttentionOrder::KvFirst;
  const Tensor<T>& first = kv ? event.k : event.q;
  const Tensor<T>& second = kv ? event.q : event.v;
  bool integral = true;
  slot.spikes += integral_sum(first.values(), integral, slot.nonzero);
  slot.spikes2 += integral_sum(second.values(), integral, slot.nonzero);
  slot.integral = slot.integral && integral;
  slot.elements += first.size();
  if (event.counted) {
    slot.has_count = true;
    slot.counted += event.counts.total();
  }
}

template <typename T>
FiringRateStats Profiler<T>::firing_rates() const {
  return {rates_};
}

template <typename T>
EnergyReport Profiler<T>::energy(const EnergyConstants& constants) const {
  EnergyReport report;
  report.constants = constants;
  for (const auto& s : costs_) {
    LayerCost row;
    row.layer = s.desc.name;
    row.kind = s.desc.kind;
    row.flops = count_flops(s.desc);
    const std::uint64_t steps = s.time_steps;
    const std::uint64_t samples = std::max<std::uint64_t>(s.samples, 1);
    report.time_steps = std::max<std::size_t>(report.time_steps, steps);
    report.samples = std::max<std::size_t>(report.samples, s.samples);
    row.ann_flops = row.flops;

    const bool attention = s.desc.kind == LayerKind::Attention;
    const bool float_attention = attention && s.desc.attention.variant != AttentionVariant::Ssa;
    if (attention) {
      const auto cost = attention_cost(s.desc.attention);
      row.ann_flops = cost.qk_first_macs + cost.softmax_flops;
    }

    if (s.desc.real_valued_input || float_attention) {
      row.billing = Billing::Mac;
      row.fr = s.elements ? static_cast<double>(s.nonzero) / static_cast<double>(s.elements) : 1.0;
      if (float_attention) {
        std::uint64_t per_step = row.flops;
        const auto v = s.desc.attention.variant;
        if (v == AttentionVariant::VsaSpikeV || v == AttentionVariant::VsaFloatV) {
          per_step += attention_cost(s.desc.attention).softmax_flops;
        }
        row.billed_ops = per_step * steps;
      } else {
        // Static input: one dense pass regardless of T.
        row.billed_ops = row.flops;
      }
      row.energy_fj = static_cast<std::int64_t>(row.billed_ops) * constants.mac_fj();
    } else {
      if (!s.integral) {
        throw InstrumentationError("layer '" + s.desc.name +
                                   "' received a non-integer input but is billed per spike");
      }
      row.billing = Billing::Ac;
      const std::uint64_t spikes = s.spikes + s.spikes2;
      const std::uint64_t elements = attention ? 2 * s.elements : s.elements;
      row.fr = elements ? static_cast<double>(spikes) / static_cast<double>(elements) : 0.0;
      row.sops = count_sops(spikes, elements, steps, row.flops);
      row.counted_sops = s.has_count ? s.counted / samples : row.sops;
      row.billed_ops = row.sops;
      row.energy_fj = static_cast<std::int64_t>(row.sops) * constants.ac_fj();
    }
    report.layers.push_back(std::move(row));
  }
  return report;
}

template <typename T>
std::vector<ValueHistogram> Profiler<T>::histograms(std::size_t bins) const {
  std::vector<ValueHistogram> out;
  for (const auto& [name, vals] : values_) out.push_back(make_histogram(name, vals, bins));
  return out;
}

template <typename T>
ProbeResult firing_rate_probe(Spikformer<T>& model, const Dataset& data,
                              std::size_t batch_size, const EnergyConstants& constants) {
  if (data.size() == 0) throw DataError("firing-rate probe: empty probe set");
  batch_size = std::max<std::size_t>(batch_size, 1);
  NoGradGuard no_grad;
  Profiler<T> prof;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) {
      idx.push_back(i);
    }
    model.forward(data.batch<T>(idx), false, &prof);
  }
  return {prof.firing_rates(), prof.energy(constants), prof.histograms()};
}

template class Profiler<float>;
template class Profiler<double>;
template ProbeResult firing_rate_probe(Spikformer<float>&, const Dataset&, std::size_t,
                                       const EnergyConstants&);
template ProbeResult firing_rate_probe(Spikformer<double>&, const Dataset&, std::size_t,
                                       const EnergyConstants&);

}  // namespace spikeformer
