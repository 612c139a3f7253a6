#pragma once

#include <array>
#include <vector>

#include "rap/nn.hpp"

namespace rap {

struct BackboneConfig {
  int input_hw = 32;
  std::array<int, 4> channels_per_block{64, 64, 64, 64};
  // 1-based index of the block whose output is attended.
  int insertion_block_index = 2;
  int embedding_dim = 64;

  void validate() const;
  // Spatial extent of the map after `blocks` conv blocks.
  int spatial_after(int blocks) const;
  int insertion_hw() const { return spatial_after(insertion_block_index); }
  int insertion_channels() const { return channels_per_block[static_cast<std::size_t>(insertion_block_index - 1)]; }
  // h*w of the insertion feature map, i.e. the attention dimension.
  int attention_dim() const { return insertion_hw() * insertion_hw(); }
};

// Conv-4 embedding network split at the attention insertion point. The
// embedding is the global average pool of the last block.
template <typename T>
class Backbone {
 public:
  Backbone(const BackboneConfig& config, Rng& rng);

  const BackboneConfig& config() const { return config_; }

  // images [B, hw, hw, 3] -> m [B, h, w, c]
  Tensor<T> forward_to_insertion(const Tensor<T>& images, BnMode mode);
  // refined m [B, h, w, c] -> e [B, embedding_dim]
  Tensor<T> forward_from_insertion(const Tensor<T>& refined, BnMode mode);
  Tensor<T> forward(const Tensor<T>& images, BnMode mode) {
    return forward_from_insertion(forward_to_insertion(images, mode), mode);
  }

  void collect(NamedTensors<T>& params, NamedTensors<T>& buffers);
  std::size_t parameter_count() const;
  std::size_t block_parameter_count(int block) const {
    return blocks_.at(static_cast<std::size_t>(block - 1)).parameter_count();
  }

 private:
  BackboneConfig config_;
  std::vector<ConvBlock<T>> blocks_;
};

}  // namespace rap
