#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "rap/eval.hpp"
#include "rap/trainer.hpp"

using namespace rap;

namespace {

// Every image is a flat color encoding its label; all classes are test classes.
Dataset label_colored(int classes, int per_class, bool shuffle_labels, std::uint64_t seed) {
  Dataset d;
  d.hw = 16;
  d.num_classes = classes;
  Rng rng(seed);
  for (int c = 0; c < classes; ++c) {
    for (int k = 0; k < per_class; ++k) {
      const float v = shuffle_labels ? static_cast<float>(uniform01(rng)) : static_cast<float>(c) / classes;
      d.labels.push_back(c);
      d.images.insert(d.images.end(), d.image_size(), v);
    }
  }
  d.class_split.assign(static_cast<std::size_t>(classes), Split::kTest);
  return d;
}

EmbedFn pixel_embedder() {
  return [](const TensorF& images) {
    const auto n = images.dim(0);
    const auto stride = images.numel() / static_cast<std::size_t>(n);
    TensorF e(Shape{n, 1});
    for (std::int64_t i = 0; i < n; ++i) e.values()[static_cast<std::size_t>(i)] = images.values()[static_cast<std::size_t>(i) * stride];
    return std::vector<TensorF>{e};
  };
}

}  // namespace

TEST_CASE("mean and half width") {
  auto [m, hw] = mean_and_half_width({1.0, 1.0, 1.0});
  CHECK(m == 1.0);
  CHECK(hw == 0.0);
  auto [m2, hw2] = mean_and_half_width({0.0, 1.0});
  CHECK(m2 == 0.5);
  CHECK(hw2 == doctest::Approx(1.96 * std::sqrt(0.5) / std::sqrt(2.0)));
}

TEST_CASE("separable toy embedding scores 1 with zero half width") {
  const Dataset d = label_colored(10, 20, false, 1);
  EpisodeEvalOptions o;
  o.episodes = 50;
  const auto r = evaluate_episodes(d, o, pixel_embedder());
  CHECK(r.mean == 1.0);
  CHECK(r.half_width == 0.0);
  CHECK(r.count == 50);
}

TEST_CASE("random labels sit at chance") {
  const Dataset d = label_colored(20, 20, true, 2);
  EpisodeEvalOptions o;
  o.episodes = 1000;
  const auto r = evaluate_episodes(d, o, pixel_embedder());
  CHECK(std::abs(r.mean - 0.2) <= 0.02);
}

TEST_CASE("reports do not depend on worker count and repeat exactly") {
  const Dataset d = label_colored(20, 20, true, 3);
  EpisodeEvalOptions o;
  o.episodes = 64;
  o.threads = 1;
  const auto a = evaluate_episodes(d, o, pixel_embedder());
  o.threads = 4;
  const auto b = evaluate_episodes(d, o, pixel_embedder());
  const auto c = evaluate_episodes(d, o, pixel_embedder());
  CHECK(a.per_episode == b.per_episode);
  CHECK(b.to_json() == c.to_json());
}

TEST_CASE("half width shrinks as one over root n") {
  const Dataset d = label_colored(20, 20, true, 4);
  EpisodeEvalOptions o;
  o.episodes = 400;
  const double h1 = evaluate_episodes(d, o, pixel_embedder()).half_width;
  o.episodes = 1600;
  const double h4 = evaluate_episodes(d, o, pixel_embedder()).half_width;
  CHECK(std::abs(h1 / h4 - 2.0) <= 0.3);
}

TEST_CASE("insufficient data is an error") {
  const Dataset d = label_colored(3, 20, false, 5);
  EpisodeEvalOptions o;
  o.episodes = 2;
  CHECK_THROWS_AS(evaluate_episodes(d, o, pixel_embedder()), DataError);
}

TEST_CASE("RAP_THREADS caps the worker pool") {
  setenv("RAP_THREADS", "2", 1);
  CHECK(worker_count(8) == 2);
  CHECK(worker_count(1) == 1);
  unsetenv("RAP_THREADS");
  CHECK(worker_count(3) == 3);
}

TEST_CASE("acc(0) of a RAP model equals the identity-attention evaluation exactly") {
  RunConfig cfg;
  for (const char* kv : {"data.num_classes=25", "data.images_per_class=20", "data.hw=16", "backbone.channels=8,8,8,8",
                         "backbone.embedding_dim=8", "policy.conv_channels=2,2,2", "eval.episodes=30", "eval.query=3"}) {
    cfg.apply_override(kv);
  }
  const Dataset data = load_dataset(cfg.data);
  RapModel<float> model(cfg.model_config(), 3);
  const auto rap = evaluate(model, data, cfg);
  const auto identity = evaluate(model, data, cfg, ActionMode::kIdentity);
  REQUIRE(rap.curve.size() == 6);
  CHECK(rap.curve[0] == identity.curve[0]);
  CHECK(identity.curve.back() == identity.curve[0]);
  for (double a : rap.curve) {
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
  CHECK(rap.mean == rap.curve.back());
  CHECK_THROWS_AS(model_embedder(model, 5, ActionMode::kStochastic), ConfigError);
}

TEST_CASE("uniform attention scores the covered cell fraction") {
  const PatchBox box{8, 8, 6};
  CHECK(uniform_hit_score(8, 8, 32, box) == doctest::Approx(36.0 / 1024.0));
  std::vector<float> flat(64, 0.3f);
  CHECK(patch_hit_score(flat, 8, 8, 32, box) == doctest::Approx(36.0 / 1024.0));
  // All mass on one fully covered cell.
  std::vector<float> peak(64, 0.0f);
  peak[2 * 8 + 2] = 1.0f;
  CHECK(patch_hit_score(peak, 8, 8, 32, box) == doctest::Approx(1.0));
  CHECK(patch_hit_score(peak, 8, 8, 32, PatchBox{}) == 0.0);
}

TEST_CASE("ablation table format") {
  AblationRow a;
  a.cell = {5, 1e-4, true};
  a.mean = 0.5671;
  a.half_width = 0.0081;
  AblationRow b;
  b.cell = {0, 0, false};
  b.diverged = true;
  std::ostringstream os;
  write_ablation_table(os, {a, b});
  const auto s = os.str();
  CHECK(s.find("Model") == 0);
  CHECK(s.find("T=5 alpha=0.0001") != std::string::npos);
  CHECK(s.find("56.71 +- 0.81") != std::string::npos);
  CHECK(s.find("attention off") != std::string::npos);
  CHECK(s.find("DIVERGED") != std::string::npos);
  CHECK(a.to_json().find("\"accuracy\":0.5671") != std::string::npos);
}
