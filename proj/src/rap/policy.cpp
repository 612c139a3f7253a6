#include "rap/policy.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <string>

namespace rap {

void PolicyConfig::validate() const {
  for (int c : conv_channels) {
    if (c < 1) throw ConfigError("policy: conv channels must be positive", "conv_channels");
  }
  if (!(sigma > 0.0)) throw ConfigError("policy: sigma must be positive", "sigma");
}

std::size_t policy_conv_parameter_count(const PolicyConfig& config) {
  std::size_t n = 0;
  int in = 3;
  for (int c : config.conv_channels) {
    n += static_cast<std::size_t>(9 * in * c + 2 * c);
    in = c;
  }
  return n;
}

std::size_t backbone_block1_parameter_count(const BackboneConfig& config) {
  const int c = config.channels_per_block[0];
  return static_cast<std::size_t>(9 * 3 * c + 2 * c);
}

void validate_policy_against_backbone(const PolicyConfig& policy, const BackboneConfig& backbone) {
  policy.validate();
  const auto p = policy_conv_parameter_count(policy);
  const auto b = backbone_block1_parameter_count(backbone);
  if (p >= b) {
    throw ConfigError("policy: conv block has " + std::to_string(p) +
                          " parameters; it must be shallower than backbone block 1 (" + std::to_string(b) + ")",
                      "conv_channels");
  }
  if (backbone.input_hw / 8 < 1) throw ConfigError("policy: input too small for three pooling stages", "input_hw");
}

template <typename T>
Tensor<T> AttentionAction<T>::broadcast(int channels) const {
  const auto B = clamped.dim(0);
  Tensor<T> ones(Shape{B, h, w, channels}, T(1));
  return mul_spatial(clamped, ones);
}

template <typename T>
Policy<T>::Policy(const PolicyConfig& config, const BackboneConfig& backbone, Rng& rng)
    : config_(config),
      image_hw_(backbone.input_hw),
      embedding_dim_(backbone.embedding_dim),
      h_(backbone.insertion_hw()),
      w_(backbone.insertion_hw()) {
  validate_policy_against_backbone(config, backbone);
  int in = 3;
  for (std::size_t i = 0; i < 3; ++i) {
    convs_.emplace_back("policy.conv" + std::to_string(i + 1), in, config_.conv_channels[i], rng);
    in = config_.conv_channels[i];
  }
  fc_ = Linear<T>("policy.fc", in + embedding_dim_, h_ * w_, rng);
}

template <typename T>
Tensor<T> Policy<T>::image_features(const Tensor<T>& images, BnMode mode) {
  if (images.rank() != 4 || images.dim(1) != image_hw_ || images.dim(2) != image_hw_ || images.dim(3) != 3) {
    throw ShapeError("policy: expected images [B," + std::to_string(image_hw_) + "," + std::to_string(image_hw_) +
                     ",3], got " + shape_str(images.shape()));
  }
  Tensor<T> x = images;
  for (auto& c : convs_) x = c.forward(x, mode);
  return global_avg_pool(x);
}

template <typename T>
Tensor<T> Policy<T>::mean_from_features(const Tensor<T>& image_features, const Tensor<T>& embedding) {
  if (embedding.rank() != 2 || embedding.dim(1) != embedding_dim_) {
    throw ShapeError("policy: expected embedding [B," + std::to_string(embedding_dim_) + "], got " +
                     shape_str(embedding.shape()));
  }
  return sigmoid(fc_.forward(concat_cols(image_features, embedding)));
}

template <typename T>
void Policy<T>::collect(NamedTensors<T>& params, NamedTensors<T>& buffers) {
  for (auto& c : convs_) c.collect(params, buffers);
  fc_.collect(params);
}

template <typename T>
std::size_t Policy<T>::conv_parameter_count() const {
  std::size_t n = 0;
  for (const auto& c : convs_) n += c.parameter_count();
  return n;
}

template <typename T>
AttentionAction<T> sample_action(const Tensor<T>& mean, double sigma, std::span<const double> noise, int h, int w,
                                 bool clamp_actions, const Tensor<T>* density_point) {
  if (noise.size() != mean.numel()) {
    throw ShapeError("sample_action: " + std::to_string(noise.size()) + " noise values for mean " +
                     shape_str(mean.shape()));
  }
  Tensor<T> eps(mean.shape());
  auto e = eps.data();
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = static_cast<T>(sigma * noise[i]);
  AttentionAction<T> a;
  a.h = h;
  a.w = w;
  a.mean = mean;
  a.sample = add(mean, eps);
  a.clamped = clamp_actions ? clamp(a.sample, T(0), T(1)) : a.sample;
  a.log_prob = gaussian_log_prob(mean, density_point ? density_point->detach() : a.sample.detach(), static_cast<T>(sigma));
  return a;
}

template <typename T>
AttentionAction<T> sample_action(const Tensor<T>& mean, double sigma, Rng& rng, int h, int w, bool clamp_actions) {
  const auto noise = standard_normal(rng, mean.numel());
  return sample_action(mean, sigma, std::span<const double>(noise), h, w, clamp_actions);
}

template <typename T>
AttentionAction<T> mean_action(const Tensor<T>& mean, double sigma, int h, int w) {
  AttentionAction<T> a;
  a.h = h;
  a.w = w;
  a.mean = mean;
  a.sample = mean;
  a.clamped = mean;
  a.log_prob = gaussian_log_prob(mean, mean.detach(), static_cast<T>(sigma));
  return a;
}

template <typename T>
AttentionAction<T> identity_action(std::int64_t batch, int h, int w) {
  AttentionAction<T> a;
  a.h = h;
  a.w = w;
  a.mean = Tensor<T>(Shape{batch, static_cast<std::int64_t>(h) * w}, T(1));
  a.sample = a.mean;
  a.clamped = a.mean;
  return a;
}

template <typename T>
Tensor<T> apply_attention(const AttentionAction<T>& action, const Tensor<T>& m) {
  if (m.rank() != 4 || m.dim(1) != action.h || m.dim(2) != action.w) {
    throw ShapeError("apply_attention: action " + std::to_string(action.h) + "x" + std::to_string(action.w) +
                     " does not match feature map " + shape_str(m.shape()));
  }
  return mul_spatial(action.clamped, m);
}

void write_attention_steps(std::ostream& os, const std::vector<std::vector<float>>& steps, int h, int w) {
  const auto flags = os.flags();
  os << std::setprecision(6);
  for (std::size_t t = 0; t < steps.size(); ++t) {
    os << "step=" << (t + 1) << '\n';
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        if (j) os << ' ';
        os << steps[t].at(static_cast<std::size_t>(i * w + j));
      }
      os << '\n';
    }
  }
  os.flags(flags);
}

#define RAP_INSTANTIATE_POLICY(T)                                                                              \
  template struct AttentionAction<T>;                                                                          \
  template class Policy<T>;                                                                                    \
  template AttentionAction<T> sample_action(const Tensor<T>&, double, std::span<const double>, int, int, bool, \
                                           const Tensor<T>*);                                                  \
  template AttentionAction<T> sample_action(const Tensor<T>&, double, Rng&, int, int, bool);                   \
  template AttentionAction<T> mean_action(const Tensor<T>&, double, int, int);                                 \
  template AttentionAction<T> identity_action(std::int64_t, int, int);                                         \
  template Tensor<T> apply_attention(const AttentionAction<T>&, const Tensor<T>&);

RAP_INSTANTIATE_POLICY(float)
RAP_INSTANTIATE_POLICY(double)

}  // namespace rap
