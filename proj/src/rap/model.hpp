#pragma once

#include <cstdint>
#include <memory>

#include "rap/backbone.hpp"
#include "rap/metalearner.hpp"
#include "rap/policy.hpp"

namespace rap {

struct ModelConfig {
  BackboneConfig backbone;
  PolicyConfig policy;
  // > 0 adds a linear softmax head (image-classification mode).
  int head_classes = 0;
};

// Backbone + policy (+ optional linear head), all drawn from one seeded stream
// in a fixed order so a seed fully determines the initial weights.
template <typename T>
class RapModel {
 public:
  RapModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  Backbone<T>& backbone() { return *backbone_; }
  Policy<T>& policy() { return *policy_; }
  LinearHead<T>* head() { return head_.get(); }

  NamedTensors<T> parameters();
  NamedTensors<T> buffers();
  // Parameters followed by buffers; the checkpointed state.
  NamedTensors<T> state();
  NamedTensors<T> backbone_parameters();
  NamedTensors<T> policy_parameters();

 private:
  ModelConfig config_;
  std::unique_ptr<Backbone<T>> backbone_;
  std::unique_ptr<Policy<T>> policy_;
  std::unique_ptr<LinearHead<T>> head_;
};

}  // namespace rap
