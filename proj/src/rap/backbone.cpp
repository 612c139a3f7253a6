#include "rap/backbone.hpp"

#include <string>

namespace rap {

void BackboneConfig::validate() const {
  if (insertion_block_index < 1 || insertion_block_index > 4) {
    throw ConfigError("backbone: insertion_block_index must be in 1..4, got " +
                          std::to_string(insertion_block_index),
                      "insertion_block");
  }
  for (int c : channels_per_block) {
    if (c < 1) throw ConfigError("backbone: channel counts must be positive", "channels");
  }
  if (embedding_dim != channels_per_block[3]) {
    throw ConfigError("backbone: embedding_dim " + std::to_string(embedding_dim) +
                          " must equal the last block's channel count " + std::to_string(channels_per_block[3]),
                      "embedding_dim");
  }
  if (spatial_after(4) < 1) {
    throw ConfigError("backbone: input_hw " + std::to_string(input_hw) + " too small for four pooling stages",
                      "input_hw");
  }
}

int BackboneConfig::spatial_after(int blocks) const {
  int s = input_hw;
  for (int i = 0; i < blocks; ++i) s /= 2;
  return s;
}

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  int in = 3;
  for (int b = 0; b < 4; ++b) {
    const int out = config_.channels_per_block[static_cast<std::size_t>(b)];
    blocks_.emplace_back("backbone.block" + std::to_string(b + 1), in, out, rng);
    in = out;
  }
}

template <typename T>
Tensor<T> Backbone<T>::forward_to_insertion(const Tensor<T>& images, BnMode mode) {
  const auto hw = config_.input_hw;
  if (images.rank() != 4 || images.dim(1) != hw || images.dim(2) != hw || images.dim(3) != 3) {
    throw ShapeError("backbone: expected images [B," + std::to_string(hw) + "," + std::to_string(hw) +
                     ",3], got " + shape_str(images.shape()));
  }
  Tensor<T> x = images;
  for (int b = 0; b < config_.insertion_block_index; ++b) x = blocks_[static_cast<std::size_t>(b)].forward(x, mode);
  return x;
}

template <typename T>
Tensor<T> Backbone<T>::forward_from_insertion(const Tensor<T>& refined, BnMode mode) {
  const auto h = config_.insertion_hw();
  const auto c = config_.insertion_channels();
  if (refined.rank() != 4 || refined.dim(1) != h || refined.dim(2) != h || refined.dim(3) != c) {
    throw ShapeError("backbone: expected feature map [B," + std::to_string(h) + "," + std::to_string(h) + "," +
                     std::to_string(c) + "], got " + shape_str(refined.shape()));
  }
  Tensor<T> x = refined;
  for (int b = config_.insertion_block_index; b < 4; ++b) x = blocks_[static_cast<std::size_t>(b)].forward(x, mode);
  return global_avg_pool(x);
}

template <typename T>
void Backbone<T>::collect(NamedTensors<T>& params, NamedTensors<T>& buffers) {
  for (auto& b : blocks_) b.collect(params, buffers);
}

template <typename T>
std::size_t Backbone<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) n += b.parameter_count();
  return n;
}

template class Backbone<float>;
template class Backbone<double>;

}  // namespace rap
