#pragma once

#include <cstdint>

#include "rap/nn.hpp"

namespace rap {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

// Bias-corrected Adam over a fixed, named parameter list. Moment buffers are
// exposed as "adam.m.<param>" / "adam.v.<param>" for checkpointing.
template <typename T>
class Adam {
 public:
  Adam(const AdamConfig& config, NamedTensors<T> params);

  void step();
  void zero_grad();

  std::int64_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  NamedTensors<T> state() const;
  void load_state(std::int64_t steps, const NamedTensors<T>& moments);

 private:
  AdamConfig config_;
  NamedTensors<T> params_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  std::int64_t steps_ = 0;
};

}  // namespace rap
