#include "spikeformer/nn.hpp"

#include <cmath>

namespace spikeformer::nn {

template <typename T>
void truncated_normal_(Tensor<T>& t, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : t.mutable_values()) {
    double z = dist(rng);
    while (std::fabs(z) > 2.0) z = dist(rng);
    v = static_cast<T>(z * std);
  }
}

template <typename T>
Linear<T>::Linear(std::size_t in_features, std::size_t out_features,
                  bool with_bias)
    : weight(Tensor<T>::zeros({in_features, out_features}, true)) {
  if (with_bias) bias = Tensor<T>::zeros({out_features}, true);
}

template <typename T>
void Linear<T>::init(std::mt19937_64& rng, double std) {
  truncated_normal_(weight, std, rng);
  if (bias.defined()) {
    for (auto& v : bias.mutable_values()) v = T(0);
  }
}

template <typename T>
void Linear<T>::collect(const std::string& prefix,
                        std::vector<NamedTensor<T>>& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

template <typename T>
Conv3x3<T>::Conv3x3(std::size_t in_channels, std::size_t out_channels)
    : weight(Tensor<T>::zeros({out_channels, in_channels, 3, 3}, true)) {}

template <typename T>
void Conv3x3<T>::init(std::mt19937_64& rng, double std) {
  truncated_normal_(weight, std, rng);
}

template <typename T>
void Conv3x3<T>::collect(const std::string& prefix,
                         std::vector<NamedTensor<T>>& out) const {
  out.push_back({prefix + ".weight", weight});
}

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels)
    : gamma(Tensor<T>::full({channels}, T(1), true)),
      beta(Tensor<T>::zeros({channels}, true)),
      state(channels) {}

template <typename T>
void BatchNorm<T>::collect(const std::string& prefix,
                           std::vector<NamedTensor<T>>& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

template <typename T>
void BatchNorm<T>::collect_buffers(const std::string& prefix,
                                   std::vector<NamedBuffer<T>>& out) {
  out.push_back({prefix + ".running_mean", &state.running_mean});
  out.push_back({prefix + ".running_var", &state.running_var});
}

template void truncated_normal_(Tensor<float>&, double, std::mt19937_64&);
template void truncated_normal_(Tensor<double>&, double, std::mt19937_64&);
template class Linear<float>;
template class Linear<double>;
template class Conv3x3<float>;
template class Conv3x3<double>;
template class BatchNorm<float>;
template class BatchNorm<double>;

}  // namespace spikeformer::nn
