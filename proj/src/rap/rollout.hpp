#pragma once

#include <span>
#include <vector>

#include "rap/model.hpp"

namespace rap {

enum class ActionMode {
  kStochastic,     // a = u + sigma * eps
  kDeterministic,  // a = u
  kIdentity,       // a = 1 everywhere (policy bypassed)
};

// Source of the standard-normal draws behind stochastic actions. A recording
// stream can be rewound to replay the identical draws, which lets a loss be
// re-evaluated at perturbed parameters with the same noise.
class NoiseStream {
 public:
  NoiseStream() = default;
  explicit NoiseStream(Rng& rng, bool record = false) : rng_(&rng), record_(record) {}

  std::span<const double> next(std::size_t n);
  void rewind();

 private:
  Rng* rng_ = nullptr;
  bool record_ = false;
  bool replay_ = false;
  std::size_t cursor_ = 0;
  std::vector<std::vector<double>> blocks_;
  std::vector<double> scratch_;
};

struct RolloutOptions {
  int steps = 5;
  ActionMode action = ActionMode::kStochastic;
  // Mode of every BN layer that does not update running statistics:
  // kEval for inference, kTrainNoUpdate for training passes.
  BnMode mode = BnMode::kEval;
  // When >= 0 (and mode != kEval), the insertion pass, the policy conv pass
  // and the tail pass producing e_{stats_step} run in kTrain and update
  // running statistics once.
  int stats_step = -1;
};

template <typename T>
struct Rollout {
  Tensor<T> m;               // insertion feature map of the unattended image
  Tensor<T> image_features;  // l^I, undefined when steps == 0
  std::vector<Tensor<T>> embeddings;  // e_0 .. e_T
  std::vector<Tensor<T>> policy_inputs;  // detached e_0 .. e_{T-1} fed to the policy
  std::vector<AttentionAction<T>> actions;  // a_1 .. a_T
};

// Observations held fixed when a rollout is replayed at perturbed parameters:
// the policy inputs e_{t-1} and the points where log-densities are taken.
template <typename T>
struct FrozenRollout {
  std::vector<Tensor<T>> policy_inputs;
  std::vector<Tensor<T>> samples;
};

// e_0 is the unattended embedding; for t = 1..T the policy reads
// {image, e_{t-1}} (as an observation, no gradient), the action rescales the
// ORIGINAL map m, and the tail of the backbone yields e_t.
// `frozen`, when given, replaces the detached e_{t-1} values and, if present,
// the log-density points.
template <typename T>
Rollout<T> rollout(RapModel<T>& model, const Tensor<T>& images, const RolloutOptions& options, NoiseStream* noise,
                   const FrozenRollout<T>* frozen = nullptr);

}  // namespace rap
