#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rap/checkpoint.hpp"
#include "rap/config.hpp"
#include "rap/rollout.hpp"

namespace rap {

// r_t = -alpha * l_val,t
std::vector<double> compute_rewards(std::span<const double> val_losses, double alpha);

// -(1/(N*T)) * sum_i sum_t log_prob[i][t] * reward[i][t]; rewards are constants.
template <typename T>
Tensor<T> reinforce_loss(const std::vector<std::vector<Tensor<T>>>& log_probs,
                         const std::vector<std::vector<double>>& rewards);

// l_rein + l_train; throws DivergenceError when either is non-finite or
// larger than `bound` in magnitude.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& rein, const Tensor<T>& train, double bound = 1e4);

// Per-step exponential moving average of rewards, subtracted when enabled.
class RewardBaseline {
 public:
  explicit RewardBaseline(double momentum = 0.9) : momentum_(momentum) {}
  std::vector<double> advantages(std::span<const double> rewards) const;
  void update(std::span<const double> rewards);
  const std::vector<double>& values() const { return values_; }

 private:
  double momentum_;
  std::vector<double> values_;
};

template <typename T>
struct TaskLoss {
  Tensor<T> loss;
  double accuracy = 0.0;
};

// Images plus the meta-learner loss applied to their embeddings.
template <typename T>
struct LossBatch {
  Tensor<T> images;
  std::function<TaskLoss<T>(const Tensor<T>& embeddings)> loss;
  // N in the reinforce normalisation: sequences sharing this batch's reward.
  int sequences = 1;
};

template <typename T>
LossBatch<T> fewshot_batch(Tensor<T> images, const Episode& episode);
template <typename T>
LossBatch<T> classification_batch(Tensor<T> images, std::vector<int> labels, LinearHead<T>& head);

struct LossOptions {
  int steps = 5;
  double alpha = 1e-4;
  ActionMode action = ActionMode::kStochastic;
  BnMode mode = BnMode::kTrainNoUpdate;
  int stats_step = -1;
  bool val_in_train_loss = false;
  double divergence_bound = 1e4;
};

// Values held fixed when a loss is re-evaluated for finite differences:
// the advantages multiplying log-probs plus the rollout observations.
template <typename T>
struct FrozenTerms {
  std::vector<double> advantages;
  FrozenRollout<T> rollout;
};

template <typename T>
struct IterationLosses {
  Tensor<T> total;
  Tensor<T> train;  // step-T meta-learner loss (plus val loss for the fairness baseline)
  Tensor<T> rein;
  double train_accuracy = 0.0;
  std::vector<double> val_losses;  // l_val,1..T
  std::vector<double> rewards;
  std::vector<double> advantages;
  std::vector<Tensor<T>> policy_inputs;
  std::vector<Tensor<T>> samples;  // pre-clamp actions of the train rollout
};

// One iteration's losses. The validation rollout (rewards) runs without a
// tape unless its loss joins l_train.
template <typename T>
IterationLosses<T> iteration_losses(RapModel<T>& model, const LossBatch<T>& train, const LossBatch<T>* val,
                                    const LossOptions& options, NoiseStream* train_noise, NoiseStream* val_noise,
                                    const FrozenTerms<T>* frozen = nullptr, const RewardBaseline* baseline = nullptr);

struct MetricRecord {
  std::int64_t iteration = 0;
  double train_loss = 0.0;
  double rein_loss = 0.0;
  double mean_reward = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> val_accuracy;

  std::string to_json() const;
};

struct TrainHooks {
  // When non-empty: metrics.jsonl, best.rapc and (on divergence) last_good.rapc.
  std::filesystem::path out_dir;
  std::function<void(const MetricRecord&)> on_record;
};

struct TrainResult {
  std::vector<MetricRecord> metrics;
  double best_val_accuracy = -1.0;
  std::int64_t best_iteration = 0;
  Checkpoint best;
  Checkpoint last;
};

Checkpoint make_checkpoint(RapModel<float>& model, const Adam<float>* adam, const std::string& rng_state,
                           const RunConfig& config);
// Rebuilds the model described by the checkpoint's config echo.
std::unique_ptr<RapModel<float>> model_from_checkpoint(const Checkpoint& checkpoint, RunConfig* config_out = nullptr);

// Builds the dataset named by the [data] section.
Dataset load_dataset(const DataConfig& config);

// Runs training; on divergence, persists the last good state and rethrows.
TrainResult train(const RunConfig& config, const Dataset& data, const TrainHooks& hooks = {});

// Accuracy of the final-step prediction over a fixed list of episodes
// (few-shot) or over a split (classification); deterministic inference.
double validation_accuracy(RapModel<float>& model, const Dataset& data, const RunConfig& config,
                           const std::vector<Episode>& pool);

}  // namespace rap
