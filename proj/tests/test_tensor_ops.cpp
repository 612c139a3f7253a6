#include <doctest.h>

#include <cmath>

#include "op_cases.hpp"
#include "rap/ops.hpp"

using namespace rap;

TEST_CASE("mul by ones is the identity") {
  TensorF x(Shape{3}, std::vector<float>{1, 2, 3});
  TensorF y = mul(x, TensorF::full(Shape{3}, 1.0f));
  CHECK(y.values() == std::vector<float>{1, 2, 3});
}

TEST_CASE("sigmoid of zero is one half") {
  CHECK(sigmoid(TensorD::scalar(0.0)).item() == doctest::Approx(0.5));
}

TEST_CASE("conv of ones with a ones kernel counts in-bounds taps") {
  TensorF x = TensorF::full(Shape{1, 5, 5, 1}, 1.0f);
  TensorF w = TensorF::full(Shape{3, 3, 1, 1}, 1.0f);
  TensorF y = conv2d(x, w);
  REQUIRE(y.shape() == Shape{1, 5, 5, 1});
  CHECK(y.values()[2 * 5 + 2] == 9.0f);
  CHECK(y.values()[0] == 4.0f);
  CHECK(y.values()[1] == 6.0f);
  CHECK(y.values()[24] == 4.0f);
}

TEST_CASE("conv matches a direct nested-loop convolution") {
  Rng rng(3);
  TensorD x = testing::random_tensor(Shape{2, 4, 5, 3}, rng);
  TensorD w = testing::random_tensor(Shape{3, 3, 3, 2}, rng);
  TensorD y = conv2d(x, w);
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 5; ++j)
        for (int o = 0; o < 2; ++o) {
          double acc = 0;
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj) {
              const int r = i + di, c = j + dj;
              if (r < 0 || r >= 4 || c < 0 || c >= 5) continue;
              for (int ci = 0; ci < 3; ++ci)
                acc += x.values()[((b * 4 + r) * 5 + c) * 3 + ci] * w.values()[(((di + 1) * 3 + dj + 1) * 3 + ci) * 2 + o];
            }
          CHECK(y.values()[((b * 4 + i) * 5 + j) * 2 + o] == doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("gradient of sum of squares") {
  Tape<double> tape;
  TapeScope<double> scope(&tape);
  TensorD x(Shape{2}, std::vector<double>{1, 2});
  x.set_requires_grad(true);
  tape.backward(sum(mul(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("leaf not reachable from the loss has zero gradient") {
  Tape<double> tape;
  TapeScope<double> scope(&tape);
  TensorD x(Shape{2}, std::vector<double>{1, 2});
  TensorD z(Shape{2}, std::vector<double>{5, 6});
  x.set_requires_grad(true);
  z.set_requires_grad(true);
  TensorD unused = mul(z, z);
  tape.backward(sum(x));
  CHECK(z.grad()[0] == 0.0);
  CHECK(z.grad()[1] == 0.0);
}

TEST_CASE("gradients accumulate across uses of a tensor") {
  Tape<double> tape;
  TapeScope<double> scope(&tape);
  TensorD x(Shape{1}, std::vector<double>{3});
  x.set_requires_grad(true);
  tape.backward(sum(add(mul(x, x), scale(x, 2.0))));
  CHECK(x.grad()[0] == doctest::Approx(8.0));
}

TEST_CASE("backward rejects non-scalar and stale losses") {
  Tape<double> tape;
  TapeScope<double> scope(&tape);
  TensorD x(Shape{2}, std::vector<double>{1, 2});
  x.set_requires_grad(true);
  TensorD y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), GraphError);
  TensorD l = sum(y);
  tape.clear();
  CHECK_THROWS_AS(tape.backward(l), GraphError);
}

TEST_CASE("no tape means no recording") {
  TensorD x(Shape{2}, std::vector<double>{1, 2});
  x.set_requires_grad(true);
  TensorD y = mul(x, x);
  CHECK(y.node() == -1);
  Tape<double> tape;
  TapeScope<double> scope(&tape);
  {
    NoGradScope<double> off;
    TensorD z = mul(x, x);
    CHECK(z.node() == -1);
  }
  CHECK(tape.size() == 0);
}

TEST_CASE("shape mismatches name the op and both shapes") {
  TensorF a(Shape{2, 3}), b(Shape{3, 2});
  try {
    (void)add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[3,2]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  CHECK_THROWS_AS(conv2d(TensorF(Shape{1, 4, 4, 2}), TensorF(Shape{3, 3, 3, 1})), ShapeError);
  CHECK_THROWS_AS(mul_spatial(TensorF(Shape{1, 3, 3}), TensorF(Shape{1, 4, 4, 2})), ShapeError);
  CHECK_THROWS_AS(TensorF(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST_CASE("batch norm in train mode standardizes each channel") {
  Rng rng(11);
  TensorD x = testing::random_tensor(Shape{4, 3, 3, 2}, rng, -5, 9);
  BatchNormStats<double> st{TensorD::zeros(Shape{2}), TensorD::full(Shape{2}, 1.0)};
  TensorD y = batch_norm(x, TensorD::full(Shape{2}, 1.0), TensorD::zeros(Shape{2}), st, BnMode::kTrain);
  for (int c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (std::size_t i = c; i < y.numel(); i += 2) m += y.values()[i];
    m /= 36;
    for (std::size_t i = c; i < y.numel(); i += 2) v += (y.values()[i] - m) * (y.values()[i] - m);
    v /= 36;
    CHECK(std::abs(m) < 1e-4);
    CHECK(std::abs(v - 1.0) < 1e-4);
  }
  // running stats moved toward the batch statistics; no-update mode leaves them.
  CHECK(st.running_mean.values()[0] != 0.0);
  const auto before = st.running_mean.values();
  batch_norm(x, TensorD::full(Shape{2}, 1.0), TensorD::zeros(Shape{2}), st, BnMode::kTrainNoUpdate);
  CHECK(st.running_mean.values() == before);
}

TEST_CASE("batch norm eval mode uses running statistics") {
  TensorD x(Shape{1, 1, 1, 1}, std::vector<double>{3.0});
  BatchNormStats<double> st{TensorD::full(Shape{1}, 1.0), TensorD::full(Shape{1}, 4.0)};
  TensorD y = batch_norm(x, TensorD::full(Shape{1}, 2.0), TensorD::full(Shape{1}, 0.5), st, BnMode::kEval);
  CHECK(y.item() == doctest::Approx(2.0 * 2.0 / std::sqrt(4.0 + kBnEpsilon) + 0.5));
}

TEST_CASE("max pool floors odd extents") {
  TensorF x(Shape{1, 3, 3, 1}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  TensorF y = max_pool2x2(x);
  REQUIRE(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == 5.0f);
}

TEST_CASE("softmax cross entropy matches a hand computation") {
  TensorD z(Shape{1, 3}, std::vector<double>{1, 2, 3});
  const std::vector<int> y{2};
  const double expect = -3 + std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  CHECK(softmax_cross_entropy(z, y).item() == doctest::Approx(expect));
}

TEST_CASE("gaussian log prob matches the closed form") {
  TensorD m(Shape{2}, std::vector<double>{0.5, 0.2});
  TensorD s(Shape{2}, std::vector<double>{0.6, 0.0});
  const double sig = 0.1;
  double expect = 0;
  for (int i = 0; i < 2; ++i) {
    const double d = s.values()[i] - m.values()[i];
    expect += -0.5 * d * d / (sig * sig) - std::log(sig) - 0.5 * std::log(2 * M_PI);
  }
  CHECK(gaussian_log_prob(m, s, sig).item() == doctest::Approx(expect));
}

TEST_CASE("forward results are bit-identical across runs") {
  auto run = [] {
    Rng rng(5);
    TensorF x(Shape{2, 6, 6, 3});
    for (auto& v : x.data()) v = static_cast<float>(uniform01(rng));
    TensorF w(Shape{3, 3, 3, 4});
    for (auto& v : w.data()) v = static_cast<float>(uniform01(rng) - 0.5);
    return global_avg_pool(max_pool2x2(relu(conv2d(x, w)))).values();
  };
  CHECK(run() == run());
}

TEST_CASE("every op passes finite-difference checks on random instances") {
  Rng rng(20240101);
  for (const auto& op : testing::op_cases()) {
    CAPTURE(op.name);
    for (int i = 0; i < 20; ++i) {
      const GradCheckReport r = op.run(rng);
      CAPTURE(r.message);
      CHECK(r.passed);
    }
  }
}
