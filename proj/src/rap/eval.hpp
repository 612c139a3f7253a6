#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "rap/config.hpp"
#include "rap/rollout.hpp"

namespace rap {

struct EvalReport {
  TaskMode mode = TaskMode::kFewShot;
  std::size_t count = 0;  // episodes, or test images in classification mode
  double mean = 0.0;      // accuracy at the final step
  double half_width = 0.0;
  // Accuracy after t attention steps, t = 0..T; curve[0] is identity attention.
  std::vector<double> curve;
  std::vector<double> curve_half_width;
  std::vector<double> per_episode;  // final-step accuracy of every episode

  std::string to_json() const;
};

// Mean and 1.96 * sample standard deviation / sqrt(n).
std::pair<double, double> mean_and_half_width(const std::vector<double>& values);

// Worker count: `requested` (0 = hardware concurrency), capped by RAP_THREADS.
int worker_count(int requested);

// Maps a batch of images to embeddings e_0..e_T. Called concurrently from the
// worker pool, so it must not mutate shared state.
using EmbedFn = std::function<std::vector<TensorF>(const TensorF& images)>;

EmbedFn model_embedder(RapModel<float>& model, int steps, ActionMode action = ActionMode::kDeterministic);

struct EpisodeEvalOptions {
  int way = 5;
  int shot = 1;
  int query = 16;
  int episodes = 600;
  std::uint64_t seed = 0;
  Split split = Split::kTest;
  int threads = 0;
};

// Few-shot evaluation: episode i draws from derived_rng(seed, i), so the report
// is independent of the number of workers.
EvalReport evaluate_episodes(const Dataset& data, const EpisodeEvalOptions& options, const EmbedFn& embed);

// Plain classification accuracy through the model's linear head.
EvalReport evaluate_classification(RapModel<float>& model, const Dataset& data, Split split, int steps,
                                   int batch_size, ActionMode action = ActionMode::kDeterministic);

// Evaluates `model` on the split named by config.eval.
EvalReport evaluate(RapModel<float>& model, const Dataset& data, const RunConfig& config,
                    ActionMode action = ActionMode::kDeterministic);

struct AblationCell {
  int steps = 5;
  double alpha = 1e-4;
  bool attention = true;

  std::string label() const;
};

struct AblationRow {
  AblationCell cell;
  std::vector<double> seed_accuracy;  // test accuracy per seed; empty entries for diverged seeds are skipped
  double mean = 0.0;
  double half_width = 0.0;
  bool diverged = false;
  std::string message;

  std::string to_json() const;
};

struct AblationOptions {
  int seeds = 5;
  // Seeds are base.train.seed + s for s in [0, seeds).
  std::function<void(const AblationRow&)> on_row;
  // Per-run progress (cell index, seed index).
  std::function<void(std::size_t, int)> on_run;
};

// Trains and evaluates every cell for every seed. Attention-off cells train
// the plain backbone (T = 0). Diverged runs mark the row DIVERGED and the grid
// continues.
std::vector<AblationRow> ablate(const RunConfig& base, const Dataset& data, const std::vector<AblationCell>& cells,
                                const AblationOptions& options);

// Fixed-width table: model, setting, accuracy (mean +- half width, percent).
void write_ablation_table(std::ostream& os, const std::vector<AblationRow>& rows);

// Fraction of attention mass on the ground-truth patch, weighting each
// attention cell by the share of its pixels the patch covers.
double patch_hit_score(std::span<const float> attention, int h, int w, int image_hw, const PatchBox& box);
// The same score for uniform attention: the covered cell fraction.
double uniform_hit_score(int h, int w, int image_hw, const PatchBox& box);

struct AttentionDump {
  int h = 0;
  int w = 0;
  std::vector<std::size_t> images;
  std::vector<std::vector<std::vector<float>>> maps;  // [image][step][h*w], steps 1..T
  std::vector<double> hit_per_step;                    // mean over images
  double uniform_hit = 0.0;                            // mean over images
};

// Deterministic rollout over `images`, recording the clamped action maps.
AttentionDump dump_attention(RapModel<float>& model, const Dataset& data, const std::vector<std::size_t>& images,
                             int steps, int batch_size = 64);

}  // namespace rap
