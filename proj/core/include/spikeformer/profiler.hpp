#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "spikeformer/data.hpp"
#include "spikeformer/layer.hpp"
#include "spikeformer/model.hpp"

// Firing-rate instrumentation and the FLOP / SOP / energy model.
//
// Units: `flops` is the dense multiply-accumulate count of one layer for one
// sample and one time step. SOPs = fr * T * flops with fr measured on the
// layer input. Energies are kept in integer femtojoules so per-layer rows
// add up to the printed totals exactly.
namespace spikeformer {

struct EnergyConstants {
  double e_mac_pj = 4.6;
  double e_ac_pj = 0.9;

  std::int64_t mac_fj() const;
  std::int64_t ac_fj() const;
};

// Dense MACs for one sample and one time step. Conv: O*C*k^2*H'*W';
// linear: rows*in*out; attention: the selected order's 2*N^2*d or
// 2*N*d^2 summed over heads. Other kinds throw InstrumentationError.
std::uint64_t count_flops(const LayerDescriptor& layer);

// floor(fr * T * flops); fr outside [0, 1] throws InstrumentationError.
std::uint64_t count_sops(double fr, std::uint64_t time_steps, std::uint64_t flops);
// Same quantity with fr = spikes / elements evaluated exactly.
std::uint64_t count_sops(std::uint64_t spikes, std::uint64_t elements,
                         std::uint64_t time_steps, std::uint64_t flops);

enum class Billing { Mac, Ac };

struct LayerCost {
  std::string layer;
  LayerKind kind = LayerKind::Linear;
  Billing billing = Billing::Ac;
  std::uint64_t flops = 0;         // dense MACs per sample per step
  std::uint64_t sops = 0;          // Eq. 19 estimate per sample (AC rows)
  std::uint64_t counted_sops = 0;  // accumulates counted directly, per sample
  double fr = 0.0;                 // input firing rate
  std::uint64_t billed_ops = 0;    // ops charged: sops (AC) or MACs (MAC)
  std::uint64_t ann_flops = 0;     // dense equivalent with float attention
  std::int64_t energy_fj = 0;

  double energy_pj() const { return static_cast<double>(energy_fj) / 1000.0; }
};

struct EnergyReport {
  std::vector<LayerCost> layers;
  std::size_t time_steps = 0;
  std::size_t samples = 0;
  EnergyConstants constants;

  std::uint64_t total_ops() const;
  std::uint64_t total_flops() const;
  std::uint64_t total_sops() const;
};

// SNN energy per sample: E_MAC on MAC-billed rows + E_AC on SOP rows.
std::int64_t energy_snn(const EnergyReport& report);
// ANN energy per sample: E_MAC on every dense op, attention costed as VSA.
std::int64_t energy_ann(const EnergyReport& report);

// Femtojoules printed as picojoules / microjoules with exact decimals.
std::string format_fj_as_pj(std::int64_t fj);
std::string format_fj_as_uj(std::int64_t fj);

// layer,kind,flops,sops,fr,energy_pj
std::string profile_csv(const EnergyReport& report);

struct LayerRate {
  std::string layer;
  std::uint64_t spikes = 0;
  std::uint64_t elements = 0;
  std::uint64_t non_binary = 0;  // elements outside {0, 1}
  double rate() const {
    return elements ? static_cast<double>(spikes) / static_cast<double>(elements) : 0.0;
  }
};

struct FiringRateStats {
  std::vector<LayerRate> layers;
  const LayerRate* find(std::string_view layer) const;
};

std::string firing_rate_csv(const FiringRateStats& stats);

struct ValueHistogram {
  std::string layer;
  double min = 0.0;
  double max = 0.0;
  std::uint64_t count = 0;
  std::uint64_t non_finite = 0;
  std::vector<double> centers;
  std::vector<std::uint64_t> counts;
};

// Fixed-width bins spanning [min, max]; a constant sample gets one
// populated bin per centre equal to the value.
ValueHistogram make_histogram(std::string layer, std::span<const float> values,
                              std::size_t bins = 64);
std::string histogram_csv(const ValueHistogram& h);

// Collects per-layer statistics from forward passes. Counters are local to
// the instance; feed it one forward pass at a time.
template <typename T>
class Profiler : public ForwardObserver<T> {
 public:
  explicit Profiler(bool keep_values = true) : keep_values_(keep_values) {}

  void on_neuron(std::string_view layer, const Tensor<T>& spikes) override;
  void on_synapse(const SynapseEvent<T>& event) override;
  void on_attention(const AttentionEvent<T>& event) override;

  FiringRateStats firing_rates() const;
  EnergyReport energy(const EnergyConstants& constants = {}) const;
  std::vector<ValueHistogram> histograms(std::size_t bins = 64) const;

 private:
  struct CostAccumulator {
    LayerDescriptor desc;
    std::uint64_t samples = 0;
    std::uint64_t time_steps = 0;
    std::uint64_t elements = 0;     // per stage input
    std::uint64_t spikes = 0;       // stage-1 input value sum
    std::uint64_t spikes2 = 0;      // stage-2 input value sum (attention)
    std::uint64_t nonzero = 0;
    bool integral = true;
    std::uint64_t counted = 0;      // direct accumulate count, all samples
    bool has_count = false;
  };
  CostAccumulator& cost_slot(const LayerDescriptor& desc);

  bool keep_values_;
  std::vector<LayerRate> rates_;
  std::map<std::string, std::size_t, std::less<>> rate_index_;
  std::vector<CostAccumulator> costs_;
  std::map<std::string, std::size_t, std::less<>> cost_index_;
  std::vector<std::pair<std::string, std::vector<float>>> values_;
};

struct ProbeResult {
  FiringRateStats rates;
  EnergyReport energy;
  std::vector<ValueHistogram> histograms;
};

// Eval-mode pass over `data`; throws DataError on an empty set.
template <typename T>
ProbeResult firing_rate_probe(Spikformer<T>& model, const Dataset& data,
                              std::size_t batch_size = 64,
                              const EnergyConstants& constants = {});

}  // namespace spikeformer
