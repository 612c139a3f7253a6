#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rap/rng.hpp"
#include "rap/tensor.hpp"

namespace rap {

enum class Split : std::uint8_t { kTrain = 0, kVal = 1, kTest = 2, kNone = 255 };

const char* split_name(Split s);
Split parse_split(const std::string& name);

// Top-left corner of the class patch; row < 0 when the image has none.
struct PatchBox {
  int row = -1;
  int col = -1;
  int size = 0;
};

// Images are NHWC floats in [0,1]. Few-shot datasets assign whole classes to
// splits (class_split); image-classification datasets assign single images
// (image_split).
struct Dataset {
  int hw = 32;
  int num_classes = 0;
  std::vector<float> images;
  std::vector<int> labels;
  std::vector<PatchBox> patches;
  std::vector<Split> class_split;
  std::vector<Split> image_split;
  // Generator / provenance parameters echoed into manifests.
  std::map<std::string, std::string> provenance;

  std::size_t count() const { return labels.size(); }
  std::size_t image_size() const { return static_cast<std::size_t>(hw) * hw * 3; }
  std::span<const float> image(std::size_t i) const {
    return std::span<const float>(images).subspan(i * image_size(), image_size());
  }
  std::vector<int> classes_in(Split split) const;
  std::vector<std::size_t> images_of_class(int label) const;
  std::vector<std::size_t> images_in(Split split) const;
  void validate() const;
};

struct Episode {
  int way = 0;
  int shot = 0;
  int query = 0;
  std::vector<int> class_ids;  // dataset label of each episode-local class
  std::vector<std::size_t> support;
  std::vector<int> support_labels;  // episode-local 0..way-1
  std::vector<std::size_t> queries;
  std::vector<int> query_labels;

  // support followed by query indices, the row order used for embeddings
  std::vector<std::size_t> all_indices() const;
};

// Uniform class and image sampling without replacement.
Episode sample_episode(const Dataset& data, Split split, int way, int shot, int query, Rng& rng);

struct AugmentOptions {
  int pad = 4;
  bool flip = true;
};

// Gathers images into [B, hw, hw, 3]; with an rng, each image gets a random
// padded crop and horizontal flip.
template <typename T>
Tensor<T> gather_images(const Dataset& data, std::span<const std::size_t> indices, Rng* augment_rng = nullptr,
                        const AugmentOptions& augment = {});

// Assigns classes to buckets by largest remainder over `ratios`
// (train:val[:test]); every bucket receives at least one class.
std::vector<Split> split_classes(int num_classes, std::span<const double> ratios, Rng& rng);
// Per-image split for classification mode.
std::vector<Split> split_images(std::size_t count, std::span<const double> ratios, Rng& rng);

struct PatchCueOptions {
  int patch = 6;
  double noise = 0.2;       // i.i.d. uniform clutter half-width
  double low_freq = 0.15;   // amplitude of each low-frequency clutter wave
  double patch_noise = 0.03;
  int distractors = 0;      // class-agnostic texture patches per image
  std::array<double, 3> ratios{64, 16, 20};
};

// Deterministic class signature [patch, patch, 3].
std::vector<float> patchcue_template(int label, int num_classes, int patch);

Dataset generate_patchcue(int num_classes, int images_per_class, int hw, Rng& rng, const PatchCueOptions& options = {},
                          std::uint64_t split_seed = 0);

// CIFAR-10 binary: 3073-byte records, label then channel-planar R,G,B.
inline constexpr std::size_t kCifarRecordBytes = 3073;
Dataset load_cifar_binary(const std::filesystem::path& path, int num_classes = 10);
void write_cifar_binary(const Dataset& data, const std::filesystem::path& path);
// Concatenates datasets with equal geometry.
Dataset concat_datasets(const std::vector<Dataset>& parts);

// Manifest directory: manifest.txt (key=value) plus raw tensor files.
void save_manifest(const Dataset& data, const std::filesystem::path& dir);
Dataset load_manifest(const std::filesystem::path& dir);

}  // namespace rap
