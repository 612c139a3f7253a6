#pragma once

// Model-level oracles shared by the unit tests and the acceptance suite:
// the Gaussian bandit, the score-function estimate, full-model finite
// differences and the zero-reward gradient.

#include <algorithm>
#include <cmath>
#include <vector>

#include "op_cases.hpp"
#include "rap/adam.hpp"
#include "rap/trainer.hpp"

namespace rap::testing {

inline ModelConfig tiny_model_config() {
  ModelConfig mc;
  mc.backbone.input_hw = 16;
  mc.backbone.channels_per_block = {8, 8, 8, 8};
  mc.backbone.embedding_dim = 8;
  mc.policy.conv_channels = {2, 2, 2};
  return mc;
}

// Attention collapses to a single cell when the insertion point is the last
// block of a 16x16 backbone.
inline ModelConfig bandit_model_config() {
  ModelConfig mc = tiny_model_config();
  mc.backbone.insertion_block_index = 4;
  return mc;
}

inline constexpr double kBanditTarget = 0.8;

inline double bandit_reward(double a) { return -(a - kBanditTarget) * (a - kBanditTarget); }

struct BanditPolicy {
  RapModel<double> model;
  TensorD images;
  TensorD embedding;

  explicit BanditPolicy(std::uint64_t seed, std::int64_t batch = 8)
      : model(bandit_model_config(), seed), images(Shape{batch, 16, 16, 3}), embedding(Shape{batch, 8}) {
    Rng rng(seed + 1);
    for (auto& v : images.data()) v = uniform01(rng);
  }
  TensorD mean() { return model.policy().forward({images, embedding, 0}, BnMode::kEval); }
  double mean_action() {
    NoGradScope<double> off;
    const TensorD u = mean();
    double s = 0;
    for (double v : u.values()) s += v;
    return s / static_cast<double>(u.numel());
  }
};

// Adam on the reinforce loss alone; every batch row is a one-step sequence
// rewarded by -(a - 0.8)^2 at its unclamped sample. Returns the final mean.
inline double run_bandit(int steps, std::uint64_t seed, double lr = 0.01) {
  BanditPolicy b(seed);
  AdamConfig ac;
  ac.lr = lr;
  Adam<double> adam(ac, b.model.policy_parameters());
  Rng noise(seed + 2);
  const double sigma = b.model.policy().config().sigma;
  for (int s = 0; s < steps; ++s) {
    Tape<double> tape;
    TapeScope<double> scope(&tape);
    const TensorD u = b.mean();
    std::vector<std::vector<TensorD>> lp;
    std::vector<std::vector<double>> rewards;
    for (std::int64_t i = 0; i < u.dim(0); ++i) {
      const auto eps = standard_normal(noise, 1);
      auto a = sample_action(slice_rows(u, i, 1), sigma, eps, 1, 1, false);
      lp.push_back({a.log_prob});
      rewards.push_back({bandit_reward(a.sample.item())});
    }
    adam.zero_grad();
    tape.backward(reinforce_loss(lp, rewards));
    adam.step();
  }
  return b.mean_action();
}

struct ScoreFunctionCheck {
  double empirical = 0.0;
  double analytic = 0.0;
  double rel_error() const { return std::abs(empirical - analytic) / std::abs(analytic); }
};

// Gradient of the reinforce loss on the policy's output bias from `samples`
// draws at fixed parameters, against d/db E[(a - 0.8)^2] = 2(u - 0.8) u(1-u).
inline ScoreFunctionCheck score_function_check(std::size_t samples, std::uint64_t seed) {
  BanditPolicy b(seed, 1);
  auto& bias = b.model.policy().head().bias();
  bias.data()[0] = -0.8;  // start away from the optimum so the gradient is large
  const double sigma = b.model.policy().config().sigma;
  Rng noise(seed + 3);
  Tape<double> tape;
  TapeScope<double> scope(&tape);
  const TensorD u = b.mean();
  std::vector<std::vector<TensorD>> lp;
  std::vector<std::vector<double>> rewards;
  lp.reserve(samples);
  rewards.reserve(samples);
  for (std::size_t k = 0; k < samples; ++k) {
    const auto eps = standard_normal(noise, 1);
    auto a = sample_action(u, sigma, eps, 1, 1, false);
    lp.push_back({a.log_prob});
    rewards.push_back({bandit_reward(a.sample.item())});
  }
  for (auto& p : b.model.policy_parameters()) p.tensor.zero_grad();
  tape.backward(reinforce_loss(lp, rewards));
  const double uu = u.item();
  return {bias.grad()[0], 2.0 * (uu - kBanditTarget) * uu * (1.0 - uu)};
}

inline Episode tiny_episode(int way, int shot, int query, std::size_t offset) {
  Episode ep;
  ep.way = way;
  ep.shot = shot;
  ep.query = query;
  for (int n = 0; n < way; ++n) {
    ep.class_ids.push_back(n);
    for (int k = 0; k < shot; ++k) ep.support_labels.push_back(n);
    for (int q = 0; q < query; ++q) ep.query_labels.push_back(n);
  }
  for (std::size_t i = 0; i < ep.support_labels.size(); ++i) ep.support.push_back(offset + i);
  for (std::size_t i = 0; i < ep.query_labels.size(); ++i) ep.queries.push_back(offset + ep.support.size() + i);
  return ep;
}

// Random train and validation episodes for the tiny model.
struct TinyProblem {
  Episode train_ep = tiny_episode(2, 1, 2, 0);
  Episode val_ep = tiny_episode(2, 1, 2, 6);
  TensorD train_images;
  TensorD val_images;

  explicit TinyProblem(std::uint64_t seed) {
    Rng rng(seed);
    train_images = random_tensor(Shape{6, 16, 16, 3}, rng, 0, 1);
    val_images = random_tensor(Shape{6, 16, 16, 3}, rng, 0, 1);
  }
  LossBatch<double> train() const { return fewshot_batch(train_images, train_ep); }
  LossBatch<double> val() const { return fewshot_batch(val_images, val_ep); }
};

// Finite differences of the full total loss (train + reinforce) against the
// tape gradient, with noise replayed and observations frozen.
inline GradCheckReport full_model_gradcheck(std::uint64_t seed, double alpha, std::size_t coords_per_leaf = 24) {
  RapModel<double> model(tiny_model_config(), seed);
  TinyProblem problem(seed + 1);
  const auto train = problem.train();
  const auto val = problem.val();
  LossOptions lo;
  lo.steps = 3;
  lo.alpha = alpha;
  Rng nrng(seed + 2), vrng(seed + 3);
  NoiseStream noise(nrng, true), val_noise(vrng, true);
  FrozenTerms<double> frozen;
  {
    NoGradScope<double> off;
    auto first = iteration_losses<double>(model, train, &val, lo, &noise, &val_noise);
    frozen.advantages = first.advantages;
    frozen.rollout.policy_inputs = first.policy_inputs;
    frozen.rollout.samples = first.samples;
  }
  auto loss = [&] {
    noise.rewind();
    val_noise.rewind();
    return iteration_losses<double>(model, train, &val, lo, &noise, &val_noise, &frozen).total;
  };
  std::vector<TensorD> leaves;
  for (auto& p : model.parameters()) leaves.push_back(p.tensor);
  GradCheckOptions o;
  o.step = 1e-5;
  o.tolerance = 1e-3;
  o.max_coords_per_leaf = coords_per_leaf;
  return grad_check_leaves(loss, leaves, o);
}

// Largest |gradient| the reinforce loss alone puts on any policy parameter
// (and, separately, on any backbone parameter).
struct RoutingReport {
  double policy_max = 0.0;
  double backbone_max = 0.0;
  bool all_finite = true;
};

inline RoutingReport reinforce_gradient(std::uint64_t seed, double alpha) {
  RapModel<double> model(tiny_model_config(), seed);
  TinyProblem problem(seed + 1);
  const auto train = problem.train();
  const auto val = problem.val();
  LossOptions lo;
  lo.steps = 5;
  lo.alpha = alpha;
  Rng nrng(seed + 2), vrng(seed + 3);
  NoiseStream noise(nrng), val_noise(vrng);
  Tape<double> tape;
  TapeScope<double> scope(&tape);
  auto l = iteration_losses<double>(model, train, &val, lo, &noise, &val_noise);
  for (auto& p : model.parameters()) p.tensor.zero_grad();
  tape.backward(l.rein);
  RoutingReport r;
  auto scan = [&](NamedTensors<double> params, double& out) {
    for (auto& p : params) {
      for (double g : p.tensor.grad()) {
        if (!std::isfinite(g)) r.all_finite = false;
        out = std::max(out, std::abs(g));
      }
    }
  };
  scan(model.policy_parameters(), r.policy_max);
  scan(model.backbone_parameters(), r.backbone_max);
  return r;
}

}  // namespace rap::testing
