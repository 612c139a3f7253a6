#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "rap/backbone.hpp"
#include "rap/nn.hpp"

namespace rap {

struct PolicyConfig {
  std::array<int, 3> conv_channels{8, 8, 8};
  double sigma = 0.1;
  bool deterministic_eval = true;
  // Clamp sampled actions to [0,1] before they scale the feature map.
  bool clamp_actions = true;

  void validate() const;
};

// Policy conv parameters must stay below the backbone's first block.
std::size_t policy_conv_parameter_count(const PolicyConfig& config);
std::size_t backbone_block1_parameter_count(const BackboneConfig& config);
void validate_policy_against_backbone(const PolicyConfig& policy, const BackboneConfig& backbone);

template <typename T>
struct PolicyState {
  Tensor<T> image;      // [B, hw, hw, 3], fixed over one sequence
  Tensor<T> embedding;  // [B, embedding_dim], e_t
  int step = 0;
};

template <typename T>
struct AttentionAction {
  Tensor<T> mean;      // u_t [B, h*w] in (0,1)
  Tensor<T> sample;    // pre-clamp a^v_t = u_t + sigma * eps
  Tensor<T> clamped;   // sample restricted to [0,1]
  Tensor<T> log_prob;  // scalar, summed over batch rows and dimensions
  int h = 0;
  int w = 0;

  // a_t [B, h, w, c]: the clamped vector reshaped and repeated over channels.
  Tensor<T> broadcast(int channels) const;
};

// Maps {image, embedding} to the Gaussian mean over spatial attention.
template <typename T>
class Policy {
 public:
  Policy(const PolicyConfig& config, const BackboneConfig& backbone, Rng& rng);

  const PolicyConfig& config() const { return config_; }

  // l^I: conv block + global average pool of the image. Constant over a
  // sequence, so rollouts compute it once.
  Tensor<T> image_features(const Tensor<T>& images, BnMode mode);
  // u_t = sigmoid(FC([l^I, e_t]))
  Tensor<T> mean_from_features(const Tensor<T>& image_features, const Tensor<T>& embedding);
  Tensor<T> forward(const PolicyState<T>& state, BnMode mode) {
    return mean_from_features(image_features(state.image, mode), state.embedding);
  }

  Linear<T>& head() { return fc_; }
  void collect(NamedTensors<T>& params, NamedTensors<T>& buffers);
  std::size_t conv_parameter_count() const;
  int attention_h() const { return h_; }
  int attention_w() const { return w_; }

 private:
  PolicyConfig config_;
  int image_hw_;
  int embedding_dim_;
  int h_;
  int w_;
  std::vector<ConvBlock<T>> convs_;
  Linear<T> fc_;
};

// a = u + sigma * noise; log-density is taken at the pre-clamp sample, which
// is treated as a constant (the pathwise route through `sample` stays open).
// `density_point`, when given, replaces the sample as the log-density argument.
template <typename T>
AttentionAction<T> sample_action(const Tensor<T>& mean, double sigma, std::span<const double> noise, int h, int w,
                                 bool clamp_actions = true, const Tensor<T>* density_point = nullptr);
template <typename T>
AttentionAction<T> sample_action(const Tensor<T>& mean, double sigma, Rng& rng, int h, int w,
                                 bool clamp_actions = true);
// Deterministic evaluation action: sample == clamped == mean.
template <typename T>
AttentionAction<T> mean_action(const Tensor<T>& mean, double sigma, int h, int w);
// All-ones action (identity attention), log_prob left undefined.
template <typename T>
AttentionAction<T> identity_action(std::int64_t batch, int h, int w);

// Eq. m_t = a_t (x) m, with a_t the channel broadcast of the clamped action.
template <typename T>
Tensor<T> apply_attention(const AttentionAction<T>& action, const Tensor<T>& m);

// Text dump of per-step attention maps: a `step=<t>` header followed by h
// rows of w values, one block per step.
void write_attention_steps(std::ostream& os, const std::vector<std::vector<float>>& steps, int h, int w);

}  // namespace rap
