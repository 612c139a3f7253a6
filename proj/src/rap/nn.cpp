#include "rap/nn.hpp"

#include <cmath>

namespace rap {

template <typename T>
ConvBlock<T>::ConvBlock(std::string name, int in_channels, int out_channels, Rng& rng) : name_(std::move(name)) {
  const double fan_in = 9.0 * in_channels;
  weight_ = uniform_parameter<T>(Shape{3, 3, in_channels, out_channels}, std::sqrt(6.0 / fan_in), rng);
  gamma_ = Tensor<T>::full(Shape{out_channels}, T(1));
  gamma_.set_requires_grad(true);
  beta_ = Tensor<T>::zeros(Shape{out_channels});
  beta_.set_requires_grad(true);
  stats_.running_mean = Tensor<T>::zeros(Shape{out_channels});
  stats_.running_var = Tensor<T>::full(Shape{out_channels}, T(1));
}

template <typename T>
Tensor<T> ConvBlock<T>::forward(const Tensor<T>& x, BnMode mode) {
  return max_pool2x2(relu(batch_norm(conv2d(x, weight_), gamma_, beta_, stats_, mode)));
}

template <typename T>
void ConvBlock<T>::collect(NamedTensors<T>& params, NamedTensors<T>& buffers) {
  params.push_back({name_ + ".conv.weight", weight_});
  params.push_back({name_ + ".bn.weight", gamma_});
  params.push_back({name_ + ".bn.bias", beta_});
  buffers.push_back({name_ + ".bn.running_mean", stats_.running_mean});
  buffers.push_back({name_ + ".bn.running_var", stats_.running_var});
}

template <typename T>
Linear<T>::Linear(std::string name, int in_features, int out_features, Rng& rng) : name_(std::move(name)) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  weight_ = uniform_parameter<T>(Shape{in_features, out_features}, bound, rng);
  bias_ = uniform_parameter<T>(Shape{out_features}, bound, rng);
}

template <typename T>
void Linear<T>::collect(NamedTensors<T>& params) {
  params.push_back({name_ + ".weight", weight_});
  params.push_back({name_ + ".bias", bias_});
}

template class ConvBlock<float>;
template class ConvBlock<double>;
template class Linear<float>;
template class Linear<double>;

}  // namespace rap
