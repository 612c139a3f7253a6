#include "rap/model.hpp"

namespace rap {

template <typename T>
RapModel<T>::RapModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  Rng rng = derived_rng(seed, 0x6d6f64656cULL);
  backbone_ = std::make_unique<Backbone<T>>(config_.backbone, rng);
  policy_ = std::make_unique<Policy<T>>(config_.policy, config_.backbone, rng);
  if (config_.head_classes > 0) {
    head_ = std::make_unique<LinearHead<T>>(config_.backbone.embedding_dim, config_.head_classes, rng);
  }
}

template <typename T>
NamedTensors<T> RapModel<T>::parameters() {
  NamedTensors<T> p, b;
  backbone_->collect(p, b);
  policy_->collect(p, b);
  if (head_) head_->collect(p);
  return p;
}

template <typename T>
NamedTensors<T> RapModel<T>::buffers() {
  NamedTensors<T> p, b;
  backbone_->collect(p, b);
  policy_->collect(p, b);
  return b;
}

template <typename T>
NamedTensors<T> RapModel<T>::state() {
  auto s = parameters();
  for (auto& b : buffers()) s.push_back(std::move(b));
  return s;
}

template <typename T>
NamedTensors<T> RapModel<T>::backbone_parameters() {
  NamedTensors<T> p, b;
  backbone_->collect(p, b);
  return p;
}

template <typename T>
NamedTensors<T> RapModel<T>::policy_parameters() {
  NamedTensors<T> p, b;
  policy_->collect(p, b);
  return p;
}

template class RapModel<float>;
template class RapModel<double>;

}  // namespace rap
