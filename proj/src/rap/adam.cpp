#include "rap/adam.hpp"

#include <cmath>

namespace rap {

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("adam: lr must be positive", "train.lr");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("adam: beta1 must be in [0,1)", "train.beta1");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam: beta2 must be in [0,1)", "train.beta2");
  if (!(eps > 0.0)) throw ConfigError("adam: eps must be positive", "train.eps");
}

template <typename T>
Adam<T>::Adam(const AdamConfig& config, NamedTensors<T> params) : config_(config), params_(std::move(params)) {
  config_.validate();
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.shape());
    v_.emplace_back(p.tensor.shape());
  }
}

template <typename T>
void Adam<T>::step() {
  ++steps_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
  const T step_size = static_cast<T>(config_.lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(config_.eps);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto p = params_[i].tensor.data();
    auto g = params_[i].tensor.grad();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      p[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_c2) + eps);
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
NamedTensors<T> Adam<T>::state() const {
  NamedTensors<T> out;
  for (std::size_t i = 0; i < params_.size(); ++i) out.push_back({"adam.m." + params_[i].name, m_[i]});
  for (std::size_t i = 0; i < params_.size(); ++i) out.push_back({"adam.v." + params_[i].name, v_[i]});
  return out;
}

template <typename T>
void Adam<T>::load_state(std::int64_t steps, const NamedTensors<T>& moments) {
  auto dst = state();
  assign_by_name(dst, moments);
  steps_ = steps;
}

template class Adam<float>;
template class Adam<double>;

}  // namespace rap
