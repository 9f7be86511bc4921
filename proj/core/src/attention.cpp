#include "spikeformer/attention.hpp"

#include <cmath>

#include "blas.hpp"
#include "spikeformer/error.hpp"
#include "spikeformer/ops.hpp"
#include "spikeformer/parallel.hpp"

namespace spikeformer {

void SsaConfig::validate() const {
  if (num_heads == 0 || embed_dim == 0 || embed_dim % num_heads != 0) {
    throw ConfigError("attention: embed_dim " + std::to_string(embed_dim) +
                      " is not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (!(scale > 0.0)) throw ConfigError("attention: scale must be positive");
}

AttentionOrder select_order(std::size_t tokens, std::size_t head_dim) {
  return tokens > head_dim ? AttentionOrder::KvFirst : AttentionOrder::QkFirst;
}

AttentionOrder resolve_order(AttentionOrder requested, std::size_t tokens,
                             std::size_t head_dim) {
  return requested == AttentionOrder::Auto ? select_order(tokens, head_dim)
                                           : requested;
}

AttentionCost flop_sop_cost(const SsaConfig& config, std::size_t tokens,
                            const QkvRates& rates) {
  config.validate();
  const std::uint64_t n = tokens, d = config.head_dim(), h = config.num_heads;
  AttentionCost cost;
  cost.qk_first_macs = 2 * n * n * d * h;
  cost.kv_first_macs = 2 * n * d * d * h;
  cost.qk_first_flops = 2 * cost.qk_first_macs;
  cost.kv_first_flops = 2 * cost.kv_first_macs;
  cost.softmax_flops = 5 * n * n * h;
  cost.selected = resolve_order(config.order, tokens, config.head_dim());
  const double nd = static_cast<double>(n * d * h);
  if (cost.selected == AttentionOrder::KvFirst) {
    // K^T V masked by K, then Q (K^T V) masked by Q.
    cost.expected_sops = (rates.k + rates.q) * nd * static_cast<double>(d);
  } else {
    // Q K^T masked by Q, then (Q K^T) V masked by V.
    cost.expected_sops = (rates.q + rates.v) * nd * static_cast<double>(n);
  }
  return cost;
}

namespace {

template <typename T>
bool all_binary(const Tensor<T>& t) {
  return is_binary(t.values());
}

}  // namespace

template <typename T>
Tensor<T> qktv_product(const Tensor<T>& q, const Tensor<T>& k,
                       const Tensor<T>& v, AttentionOrder order,
                       binary::ProductCounts* counts,
                       bool* used_binary_kernel) {
  if (q.rank() < 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError("attention: Q " + to_string(q.shape()) + ", K " +
                         to_string(k.shape()) + ", V " + to_string(v.shape()) +
                         " must share one [..., N, d] shape");
  }
  const std::size_t n = q.dim(q.rank() - 2);
  const std::size_t d = q.dim(q.rank() - 1);
  const std::size_t nd = n * d;
  const std::size_t batch = nd ? q.size() / nd : 0;
  if (order == AttentionOrder::Auto) order = select_order(n, d);
  const bool binary_path = all_binary(q) && all_binary(k) && all_binary(v);
  if (used_binary_kernel) *used_binary_kernel = binary_path;

  std::vector<T> out(q.size(), T(0));
  const T* pq = q.values().data();
  const T* pk = k.values().data();
  const T* pv = v.values().data();
  if (binary_path) {
    std::vector<binary::ProductCounts> per_batch(batch);
    parallel_for(0, batch, [&](std::size_t b) {
      const std::span<const T> qs(pq + b * nd, nd), ks(pk + b * nd, nd),
          vs(pv + b * nd, nd);
      const auto qb = binary::BitMatrix::pack(qs, n, d);
      std::vector<std::int32_t> r;
      if (order == AttentionOrder::KvFirst) {
        r = binary::qktv_kv_first(qb, binary::BitMatrix::pack(ks, n, d, true),
                                  binary::BitMatrix::pack(vs, n, d, true),
                                  &per_batch[b]);
      } else {
        r = binary::qktv_qk_first(qb, binary::BitMatrix::pack(ks, n, d),
                                  binary::BitMatrix::pack(vs, n, d),
                                  &per_batch[b]);
      }
      for (std::size_t i = 0; i < nd; ++i) out[b * nd + i] = static_cast<T>(r[i]);
    });
    if (counts) {
      for (const auto& c : per_batch) {
        counts->first_stage += c.first_stage;
        counts->second_stage += c.second_stage;
      }
    }
  } else {
    parallel_for(0, batch, [&](std::size_t b) {
      const T* qb = pq + b * nd;
      const T* kb = pk + b * nd;
      const T* vb = pv + b * nd;
      if (order == AttentionOrder::KvFirst) {
        std::vector<T> m(d * d);
        blas::gemm<T>(true, false, d, d, n, T(1), kb, d, vb, d, T(0), m.data(), d);
        blas::gemm<T>(false, false, n, d, d, T(1), qb, d, m.data(), d, T(0),
                      out.data() + b * nd, d);
      } else {
        std::vector<T> a(n * n);
        blas::gemm<T>(false, true, n, n, d, T(1), qb, d, kb, d, T(0), a.data(), n);
        blas::gemm<T>(false, false, n, d, n, T(1), a.data(), n, vb, d, T(0),
                      out.data() + b * nd, d);
      }
    });
  }

  return Tensor<T>::record(
      q.shape(), std::move(out), {q, k, v}, "qktv",
      [q, k, v, n, d, batch](std::span<const T> g) {
        auto gq = q.grad_accumulator();
        auto gk = k.grad_accumulator();
        auto gv = v.grad_accumulator();
        const std::size_t nd = n * d;
        const T* pq = q.values().data();
        const T* pk = k.values().data();
        const T* pv = v.values().data();
        std::vector<T> m(d * d);
        for (std::size_t b = 0; b < batch; ++b) {
          const T* qb = pq + b * nd;
          const T* kb = pk + b * nd;
          const T* vb = pv + b * nd;
          const T* gb = g.data() + b * nd;
          if (!gq.empty()) {
            // dQ = G (K^T V)^T
            blas::gemm<T>(true, false, d, d, n, T(1), kb, d, vb, d, T(0), m.data(), d);
            blas::gemm<T>(false, true, n, d, d, T(1), gb, d, m.data(), d, T(1),
                          gq.data() + b * nd, d);
          }
          if (!gk.empty()) {
            // dK = V (G^T Q)
            blas::gemm<T>(true, false, d, d, n, T(1), gb, d, qb, d, T(0), m.data(), d);
            blas::gemm<T>(false, false, n, d, d, T(1), vb, d, m.data(), d, T(1),
                          gk.data() + b * nd, d);
          }
          if (!gv.empty()) {
            // dV = K (Q^T G)
            blas::gemm<T>(true, false, d, d, n, T(1), qb, d, gb, d, T(0), m.data(), d);
            blas::gemm<T>(false, false, n, d, d, T(1), kb, d, m.data(), d, T(1),
                          gv.data() + b * nd, d);
          }
        }
      });
}

template <typename T>
Tensor<T> ssa_core(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                   const Tensor<T>& scale, const LifParams& neuron,
                   AttentionOrder order, Tensor<T>* pre_neuron,
                   binary::ProductCounts* counts) {
  const Tensor<T> product = qktv_product(q, k, v, order, counts);
  const Tensor<T> scaled = ops::scale_by(product, scale);
  if (pre_neuron) *pre_neuron = scaled;
  return lif_forward(scaled, neuron);
}

template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  if (x.rank() != 4 || heads == 0 || x.dim(3) % heads != 0) {
    throw DimensionError("split_heads: cannot split " + to_string(x.shape()) +
                         " into " + std::to_string(heads) + " heads");
  }
  const auto& s = x.shape();
  const auto r = ops::reshape(x, {s[0], s[1], s[2], heads, s[3] / heads});
  return ops::permute(r, {0, 1, 3, 2, 4});
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  if (x.rank() != 5) {
    throw DimensionError("merge_heads: expects [T, B, H, N, d], got " +
                         to_string(x.shape()));
  }
  const auto& s = x.shape();
  const auto p = ops::permute(x, {0, 1, 3, 2, 4});
  return ops::reshape(p, {s[0], s[1], s[3], s[2] * s[4]});
}

template <typename T>
SpikingSelfAttention<T>::SpikingSelfAttention(const SsaConfig& config,
                                              AttentionVariant variant,
                                              const LifParams& neuron,
                                              const LifParams& attn_neuron)
    : q_linear(config.embed_dim, config.embed_dim, false),
      k_linear(config.embed_dim, config.embed_dim, false),
      v_linear(config.embed_dim, config.embed_dim, false),
      proj_linear(config.embed_dim, config.embed_dim, false),
      q_bn(config.embed_dim),
      k_bn(config.embed_dim),
      v_bn(config.embed_dim),
      proj_bn(config.embed_dim),
      scale(Tensor<T>::scalar(static_cast<T>(config.scale),
                              config.scale_learnable)),
      config_(config),
      variant_(variant),
      neuron_(neuron),
      attn_neuron_(attn_neuron) {
  config_.validate();
  neuron_.validate();
  attn_neuron_.validate();
}

template <typename T>
Tensor<T> SpikingSelfAttention<T>::branch(nn::Linear<T>& lin,
                                          nn::BatchNorm<T>& bn,
                                          const Tensor<T>& x, bool training,
                                          ForwardObserver<T>* observer,
                                          const std::string& name) {
  if (observer) {
    LayerDescriptor desc;
    desc.name = name;
    desc.kind = LayerKind::Linear;
    desc.linear = {lin.in_features(), lin.out_features(), x.dim(2)};
    observer->on_synapse({desc, x, x.dim(0), x.dim(1)});
  }
  return bn.forward(lin.forward(x), 3, training);
}

template <typename T>
QkvTriple<T> SpikingSelfAttention<T>::spike_qkv(const Tensor<T>& x,
                                                bool training,
                                                ForwardObserver<T>* observer,
                                                const std::string& name) {
  if (x.rank() != 4 || x.dim(3) != config_.embed_dim) {
    throw DimensionError("attention input must be [T, B, N, " +
                         std::to_string(config_.embed_dim) + "], got " +
                         to_string(x.shape()));
  }
  QkvTriple<T> out;
  out.q = lif_forward(branch(q_linear, q_bn, x, training, observer, name + ".q"),
                      neuron_);
  out.k = lif_forward(branch(k_linear, k_bn, x, training, observer, name + ".k"),
                      neuron_);
  out.v = lif_forward(branch(v_linear, v_bn, x, training, observer, name + ".v"),
                      neuron_);
  if (observer) {
    observer->on_neuron(name + ".q_lif", out.q);
    observer->on_neuron(name + ".k_lif", out.k);
    observer->on_neuron(name + ".v_lif", out.v);
  }
  return out;
}

template <typename T>
Tensor<T> SpikingSelfAttention<T>::project(const Tensor<T>& heads_out,
                                           std::size_t time_steps,
                                           std::size_t batch, bool training,
                                           ForwardObserver<T>* observer,
                                           const std::string& name) {
  const Tensor<T> merged = merge_heads(heads_out);
  if (observer) {
    LayerDescriptor desc;
    desc.name = name + ".proj";
    desc.kind = LayerKind::Linear;
    desc.linear = {proj_linear.in_features(), proj_linear.out_features(),
                   merged.dim(2)};
    observer->on_synapse({desc, merged, time_steps, batch});
  }
  const Tensor<T> y =
      lif_forward(proj_bn.forward(proj_linear.forward(merged), 3, training),
                  neuron_);
  if (observer) observer->on_neuron(name + ".proj_lif", y);
  return y;
}

template <typename T>
Tensor<T> SpikingSelfAttention<T>::mssa(const QkvTriple<T>& qkv, bool training,
                                        ForwardObserver<T>* observer,
                                        const std::string& name) {
  const std::size_t steps = qkv.q.dim(0), batch = qkv.q.dim(1),
                    tokens = qkv.q.dim(2);
  const auto qh = split_heads(qkv.q, config_.num_heads);
  const auto kh = split_heads(qkv.k, config_.num_heads);
  const auto vh = split_heads(qkv.v, config_.num_heads);
  const AttentionOrder order =
      resolve_order(config_.order, tokens, config_.head_dim());

  binary::ProductCounts counts;
  bool used_binary = false;
  const Tensor<T> product =
      qktv_product(qh, kh, vh, order, &counts, &used_binary);
  const Tensor<T> scaled = ops::scale_by(product, scale);
  const Tensor<T> spikes = lif_forward(scaled, attn_neuron_);
  if (observer) {
    LayerDescriptor desc;
    desc.name = name + ".ssa";
    desc.kind = LayerKind::Attention;
    desc.attention = {tokens, config_.head_dim(), config_.num_heads, order,
                      AttentionVariant::Ssa};
    observer->on_attention(
        {desc, qh, kh, vh, scaled, counts, used_binary, steps, batch});
    observer->on_neuron(name + ".attn_lif", spikes);
  }
  return project(spikes, steps, batch, training, observer, name);
}

template <typename T>
Tensor<T> SpikingSelfAttention<T>::forward(const Tensor<T>& x, bool training,
                                           ForwardObserver<T>* observer,
                                           const std::string& name) {
  if (variant_ == AttentionVariant::Ssa) {
    return mssa(spike_qkv(x, training, observer, name), training, observer,
                name);
  }
  if (x.rank() != 4 || x.dim(3) != config_.embed_dim) {
    throw DimensionError("attention input must be [T, B, N, " +
                         std::to_string(config_.embed_dim) + "], got " +
                         to_string(x.shape()));
  }
  const std::size_t steps = x.dim(0), batch = x.dim(1), tokens = x.dim(2);
  const std::size_t heads = config_.num_heads, d = config_.head_dim();
  const Tensor<T> qf = branch(q_linear, q_bn, x, training, observer, name + ".q");
  const Tensor<T> kf = branch(k_linear, k_bn, x, training, observer, name + ".k");
  const Tensor<T> vf = branch(v_linear, v_bn, x, training, observer, name + ".v");

  Tensor<T> value;
  if (variant_ == AttentionVariant::VsaFloatV) {
    value = vf;
  } else {
    value = lif_forward(vf, neuron_);
    if (observer) observer->on_neuron(name + ".v_lif", value);
  }

  Tensor<T> qa = qf, ka = kf;
  if (variant_ == AttentionVariant::Relu) {
    qa = ops::relu(qf);
    ka = ops::relu(kf);
  } else if (variant_ == AttentionVariant::LeakyRelu) {
    qa = ops::leaky_relu(qf, T(0.01));
    ka = ops::leaky_relu(kf, T(0.01));
  }
  const auto qh = split_heads(qa, heads);
  const auto kh = split_heads(ka, heads);
  const auto vh = split_heads(value, heads);

  Tensor<T> product;
  if (variant_ == AttentionVariant::VsaSpikeV ||
      variant_ == AttentionVariant::VsaFloatV) {
    const auto logits = ops::scale(
        ops::matmul(qh, kh, ops::Transpose::No, ops::Transpose::Yes),
        T(1) / std::sqrt(static_cast<T>(d)));
    product = ops::matmul(ops::softmax_lastdim(logits), vh);
  } else {
    product = ops::scale_by(
        qktv_product(qh, kh, vh, AttentionOrder::QkFirst), scale);
  }
  const Tensor<T> spikes = lif_forward(product, attn_neuron_);
  if (observer) {
    LayerDescriptor desc;
    desc.name = name + ".ssa";
    desc.kind = LayerKind::Attention;
    desc.attention = {tokens, d, heads, AttentionOrder::QkFirst, variant_};
    observer->on_attention(
        {desc, qh, kh, vh, product, binary::ProductCounts{}, false, steps, batch});
    observer->on_neuron(name + ".attn_lif", spikes);
  }
  return project(spikes, steps, batch, training, observer, name);
}

template <typename T>
void SpikingSelfAttention<T>::init(std::mt19937_64& rng) {
  q_linear.init(rng);
  k_linear.init(rng);
  v_linear.init(rng);
  proj_linear.init(rng);
}

template <typename T>
void SpikingSelfAttention<T>::collect(
    const std::string& prefix, std::vector<nn::NamedTensor<T>>& out) const {
  q_linear.collect(prefix + ".q_linear", out);
  q_bn.collect(prefix + ".q_bn", out);
  k_linear.collect(prefix + ".k_linear", out);
  k_bn.collect(prefix + ".k_bn", out);
  v_linear.collect(prefix + ".v_linear", out);
  v_bn.collect(prefix + ".v_bn", out);
  proj_linear.collect(prefix + ".proj_linear", out);
  proj_bn.collect(prefix + ".proj_bn", out);
  if (config_.scale_learnable) out.push_back({prefix + ".scale", scale});
}

template <typename T>
void SpikingSelfAttention<T>::collect_buffers(
    const std::string& prefix, std::vector<nn::NamedBuffer<T>>& out) {
  q_bn.collect_buffers(prefix + ".q_bn", out);
  k_bn.collect_buffers(prefix + ".k_bn", out);
  v_bn.collect_buffers(prefix + ".v_bn", out);
  proj_bn.collect_buffers(prefix + ".proj_bn", out);
}

#define SPIKEFORMER_INSTANTIATE_ATTENTION(T)                                   \
  template Tensor<T> qktv_product(const Tensor<T>&, const Tensor<T>&,          \
                                  const Tensor<T>&, AttentionOrder,             \
                                  binary::ProductCounts*, bool*);               \
  template Tensor<T> ssa_core(const Tensor<T>&, const Tensor<T>&,              \
                              const Tensor<T>&, const Tensor<T>&,               \
                              const LifParams&, AttentionOrder, Tensor<T>*,     \
                              binary::ProductCounts*);                          \
  template Tensor<T> split_heads(const Tensor<T>&, std::size_t);               \
  template Tensor<T> merge_heads(const Tensor<T>&);                            \
  template class SpikingSelfAttention<T>;

SPIKEFORMER_INSTANTIATE_ATTENTION(float)
SPIKEFORMER_INSTANTIATE_ATTENTION(double)

}  // namespace spikeformer
