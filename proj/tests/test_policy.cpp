#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "op_cases.hpp"
#include "rap/model.hpp"
#include "rap/policy.hpp"
#include "rap/rollout.hpp"

using namespace rap;

namespace {

BackboneConfig tiny_backbone() {
  BackboneConfig c;
  c.input_hw = 16;
  c.channels_per_block = {8, 8, 8, 8};
  c.embedding_dim = 8;
  return c;
}

PolicyConfig tiny_policy() {
  PolicyConfig p;
  p.conv_channels = {2, 2, 2};
  return p;
}

TensorF images(std::int64_t b, int hw, Rng& rng) {
  TensorF x(Shape{b, hw, hw, 3});
  for (auto& v : x.data()) v = static_cast<float>(uniform01(rng));
  return x;
}

TensorF to_float(const TensorD& t) { return TensorF(t.shape(), std::vector<float>(t.values().begin(), t.values().end())); }

}  // namespace

TEST_CASE("policy mean lies strictly inside (0,1) and is a pure function") {
  Rng rng(1);
  Policy<float> pol(tiny_policy(), tiny_backbone(), rng);
  PolicyState<float> st{images(3, 16, rng), to_float(testing::random_tensor(Shape{3, 8}, rng, -5, 5)), 0};
  TensorF u = pol.forward(st, BnMode::kEval);
  CHECK(u.shape() == Shape{3, 16});
  for (float v : u.values()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
  CHECK(pol.forward(st, BnMode::kEval).values() == u.values());
}

TEST_CASE("zero-weight linear block gives a mean of exactly one half") {
  Rng rng(2);
  Policy<float> pol(tiny_policy(), tiny_backbone(), rng);
  for (auto& v : pol.head().weight().data()) v = 0.0f;
  for (auto& v : pol.head().bias().data()) v = 0.0f;
  PolicyState<float> st{images(2, 16, rng), TensorF::full(Shape{2, 8}, 3.0f), 1};
  const TensorF u = pol.forward(st, BnMode::kEval);
  for (float v : u.values()) CHECK(v == 0.5f);
}

TEST_CASE("mean action log-density has the closed form") {
  TensorF u = TensorF::full(Shape{1, 64}, 0.3f);
  auto a = mean_action(u, 0.1, 8, 8);
  CHECK(a.clamped.values() == u.values());
  const double expected = 64.0 * (-std::log(0.1) - 0.5 * std::log(2.0 * std::numbers::pi));
  CHECK(a.log_prob.item() == doctest::Approx(expected).epsilon(1e-5));
  CHECK(expected == doctest::Approx(88.553).epsilon(1e-4));

  auto b = mean_action(TensorF::full(Shape{1, 1}, 0.5f), 1.0, 1, 1);
  CHECK(b.log_prob.item() == doctest::Approx(-0.918939).epsilon(1e-5));
}

TEST_CASE("stochastic sample is mean plus sigma times the noise, clamped afterwards") {
  TensorF u(Shape{1, 4}, {0.1f, 0.5f, 0.9f, 0.5f});
  std::vector<double> eps{-2.0, 0.3, 2.0, 0.0};
  auto a = sample_action(u, 0.1, eps, 2, 2);
  const std::vector<float> pre{-0.1f, 0.53f, 1.1f, 0.5f};
  for (std::size_t i = 0; i < 4; ++i) CHECK(a.sample.values()[i] == doctest::Approx(pre[i]).epsilon(1e-6));
  CHECK(a.clamped.values()[0] == 0.0f);
  CHECK(a.clamped.values()[2] == 1.0f);
  CHECK(a.clamped.values()[1] == doctest::Approx(0.53f));
  // log-density at the pre-clamp sample
  double lp = 0;
  for (double e : eps) lp += -0.5 * e * e - std::log(0.1 * std::sqrt(2.0 * std::numbers::pi));
  CHECK(a.log_prob.item() == doctest::Approx(lp).epsilon(1e-5));
}

TEST_CASE("log-prob gradient equals (sample - mean) / sigma^2") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    TensorD u = testing::random_tensor(Shape{2, 5}, rng, 0.05, 0.95);
    u.set_requires_grad(true);
    const double sigma = 0.05 + uniform01(rng);
    auto eps = standard_normal(rng, 10);
    Tape<double> tape;
    TapeScope<double> scope(&tape);
    auto a = sample_action(u, sigma, eps, 1, 5);
    tape.backward(a.log_prob);
    for (std::size_t d = 0; d < 10; ++d) {
      const double want = (a.sample.values()[d] - u.values()[d]) / (sigma * sigma);
      CHECK(u.grad()[d] == doctest::Approx(want).epsilon(1e-4));
    }
  }
}

TEST_CASE("broadcast duplicates the clamped map over channels") {
  TensorF u(Shape{1, 4}, {0.5f, 1.0f, 0.0f, 1.0f});
  auto a = mean_action(u, 0.1, 2, 2);
  TensorF m = TensorF::full(Shape{1, 2, 2, 3}, 1.0f);
  TensorF out = apply_attention(a, m);
  const std::vector<float> want{0.5f, 1.0f, 0.0f, 1.0f};
  for (int p = 0; p < 4; ++p) {
    for (int k = 0; k < 3; ++k) CHECK(out.values()[static_cast<std::size_t>(p * 3 + k)] == want[static_cast<std::size_t>(p)]);
  }
  TensorF bc = a.broadcast(3);
  CHECK(bc.shape() == Shape{1, 2, 2, 3});
  CHECK(bc.values() == out.values());
}

TEST_CASE("identity and zero actions") {
  Rng rng(4);
  TensorF m = to_float(testing::random_tensor(Shape{2, 3, 3, 4}, rng));
  CHECK(apply_attention(identity_action<float>(2, 3, 3), m).values() == m.values());
  auto zero = mean_action(TensorF::zeros(Shape{2, 9}), 0.1, 3, 3);
  const TensorF out = apply_attention(zero, m);
  for (float v : out.values()) CHECK(v == 0.0f);
  auto wrong = identity_action<float>(2, 2, 2);
  CHECK_THROWS_AS(apply_attention(wrong, m), ShapeError);
}

TEST_CASE("raising a mean component with fixed noise never shrinks the refined magnitude") {
  Rng rng(5);
  TensorF m = to_float(testing::random_tensor(Shape{1, 2, 2, 3}, rng));
  auto eps = standard_normal(rng, 4);
  for (int d = 0; d < 4; ++d) {
    TensorF u(Shape{1, 4}, {0.3f, 0.4f, 0.5f, 0.6f});
    TensorF lo = apply_attention(sample_action(u, 0.1, eps, 2, 2), m);
    u.values()[static_cast<std::size_t>(d)] += 0.2f;
    TensorF hi = apply_attention(sample_action(u, 0.1, eps, 2, 2), m);
    for (std::size_t i = 0; i < lo.numel(); ++i) CHECK(std::abs(hi.values()[i]) >= std::abs(lo.values()[i]));
  }
}

TEST_CASE("stochastic rollouts approach the deterministic one as sigma shrinks") {
  ModelConfig mc;
  mc.backbone = tiny_backbone();
  mc.policy = tiny_policy();
  mc.policy.clamp_actions = false;
  Rng rng(6);
  TensorF x = images(3, 16, rng);
  double previous = INFINITY;
  for (double sigma : {0.1, 0.01, 0.001}) {
    mc.policy.sigma = sigma;
    RapModel<float> model(mc, 11);
    RolloutOptions det;
    det.steps = 3;
    det.action = ActionMode::kDeterministic;
    RolloutOptions sto = det;
    sto.action = ActionMode::kStochastic;
    Rng nrng(99);
    NoiseStream noise(nrng);
    const auto a = rollout(model, x, det, nullptr).embeddings.back();
    const auto b = rollout(model, x, sto, &noise).embeddings.back();
    double gap = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) gap = std::max(gap, double(std::abs(a.values()[i] - b.values()[i])));
    CHECK(gap < previous);
    previous = gap;
  }
  CHECK(previous < 1e-2);
}

TEST_CASE("policy must be shallower than the first backbone block") {
  PolicyConfig p;
  p.conv_channels = {8, 16, 32};
  CHECK_THROWS_AS(validate_policy_against_backbone(p, BackboneConfig{}), ConfigError);
  CHECK_NOTHROW(validate_policy_against_backbone(PolicyConfig{}, BackboneConfig{}));
  CHECK(policy_conv_parameter_count(PolicyConfig{}) < backbone_block1_parameter_count(BackboneConfig{}));
  p = PolicyConfig{};
  p.sigma = 0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("attention dump writes one header per step and h rows of w values") {
  std::ostringstream os;
  write_attention_steps(os, {{0.0f, 0.25f, 0.5f, 1.0f}, {1, 1, 1, 1}}, 2, 2);
  std::istringstream is(os.str());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line)) lines.push_back(line);
  REQUIRE(lines.size() == 6);
  CHECK(lines[0] == "step=1");
  CHECK(lines[3] == "step=2");
  std::istringstream row(lines[1]);
  float a = -1, b = -1;
  row >> a >> b;
  CHECK(a == 0.0f);
  CHECK(b == 0.25f);
}
