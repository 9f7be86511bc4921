#include "spikeformer/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace spikeformer {

template <typename T>
void adamw_step(std::span<T> param, std::span<const T> grad, std::span<double> m,
                std::span<double> v, std::uint64_t step, double lr,
                const AdamWConfig& c, bool decay) {
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
  const double shrink = decay ? 1.0 - lr * c.weight_decay : 1.0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.empty() ? 0.0 : static_cast<double>(grad[i]);
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    double p = static_cast<double>(param[i]) * shrink;
    p -= lr * mhat / (std::sqrt(vhat) + c.eps);
    param[i] = static_cast<T>(p);
  }
}

double cosine_lr(std::uint64_t step, std::uint64_t total, double base_lr) {
  if (total == 0) return base_lr;
  const double t = static_cast<double>(std::min(step, total)) / static_cast<double>(total);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

template <typename T>
AdamW<T>::AdamW(std::vector<nn::NamedTensor<T>> params, const AdamWConfig& config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
}

template <typename T>
void AdamW<T>::step(double lr) {
  ++steps_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& t = params_[i].tensor;
    const std::span<const T> g = t.has_grad() ? t.grad() : std::span<const T>{};
    adamw_step<T>(t.mutable_values(), g, m_[i], v_[i], steps_, lr, config_, t.rank() >= 2);
  }
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template void adamw_step(std::span<float>, std::span<const float>, std::span<double>,
                         std::span<double>, std::uint64_t, double, const AdamWConfig&, bool);
template void adamw_step(std::span<double>, std::span<const double>, std::span<double>,
                         std::span<double>, std::uint64_t, double, const AdamWConfig&, bool);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace spikeformer
