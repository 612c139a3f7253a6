#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rap/adam.hpp"
#include "rap/data.hpp"
#include "rap/model.hpp"

namespace rap {

enum class TaskMode { kFewShot, kClassification };

struct DataConfig {
  // patchcue | cifar | manifest
  std::string source = "patchcue";
  TaskMode mode = TaskMode::kFewShot;
  // cifar: comma-separated training files; manifest: dataset directory
  std::string path;
  // cifar: held-out test file
  std::string test_path;
  int num_classes = 25;
  int images_per_class = 60;
  int hw = 32;
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  PatchCueOptions patchcue;
  // few-shot: class ratios train:val:test; classification: image ratios
  // train:val applied to the training files
  std::vector<double> ratios{64, 16, 20};
  std::vector<double> image_ratios{4, 1};
};

enum class BnUpdateStep { kInitial, kFinal };

struct TrainConfig {
  int steps = 5;  // T; 0 trains the plain backbone (attention off)
  double alpha = 1e-4;
  AdamConfig adam;
  int iterations = 2000;  // few-shot episodes
  int epochs = 2;         // classification mode
  int batch_size = 128;
  int way = 5;
  int shot = 1;
  int query = 16;
  // Way of validation episodes; 0 = min(way, number of validation classes).
  int val_way = 0;
  std::uint64_t seed = 1;
  bool baseline_subtraction = false;
  double baseline_momentum = 0.9;
  int eval_every = 100;
  int val_episodes = 200;
  bool augment = true;
  // Fairness baseline: add the validation-batch loss to the training loss.
  bool val_in_train_loss = false;
  // Which tail pass of the T-step recurrence updates BN running statistics.
  // kFinal matches the step-T pass that evaluation predicts from.
  BnUpdateStep bn_update_step = BnUpdateStep::kFinal;
  double divergence_bound = 1e4;
};

struct EvalConfig {
  int way = 5;
  int shot = 1;
  int query = 16;
  int episodes = 600;
  std::uint64_t seed = 0;
  Split split = Split::kTest;
  int threads = 0;  // 0 = all available, capped by RAP_THREADS
  int batch_size = 256;
};

struct RunConfig {
  DataConfig data;
  BackboneConfig backbone;
  PolicyConfig policy;
  TrainConfig train;
  EvalConfig eval;

  // Throws ConfigError naming "section.key" for unknown keys or bad values.
  void set(const std::string& section, const std::string& key, const std::string& value);
  std::string get(const std::string& section, const std::string& key) const;
  // Every key with its effective value, in a fixed order, re-parseable.
  std::string echo() const;
  void validate() const;
  ModelConfig model_config() const;

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  // Applies "section.key=value" overrides.
  void apply_override(const std::string& assignment);
};

const char* task_mode_name(TaskMode mode);

}  // namespace rap
