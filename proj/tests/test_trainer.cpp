#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "oracles.hpp"
#include "rap/eval.hpp"

using namespace rap;
using namespace rap::testing;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run() {
  RunConfig c;
  for (const char* kv : {"data.num_classes=25", "data.images_per_class=20", "data.hw=16", "backbone.channels=8,8,8,8",
                         "backbone.embedding_dim=8", "policy.conv_channels=2,2,2", "train.iterations=6",
                         "train.eval_every=3", "train.val_episodes=4", "train.query=3", "eval.episodes=20",
                         "eval.query=3", "eval.threads=1"}) {
    c.apply_override(kv);
  }
  return c;
}

std::string file_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("rap_test_trainer_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("rewards are -alpha times the validation loss") {
  const std::vector<double> l{2.0, 0.0, 1.5};
  const auto r = compute_rewards(l, 1e-4);
  CHECK(r[0] == doctest::Approx(-2e-4));
  CHECK(r[1] == 0.0);
  for (double v : compute_rewards(l, 0.0)) CHECK(v == 0.0);
  for (double v : r) CHECK(v <= 0.0);
}

TEST_CASE("reinforce loss arithmetic and validation") {
  TensorD lp = TensorD::scalar(-1.0);
  CHECK(reinforce_loss<double>({{lp}}, {{-0.5}}).item() == doctest::Approx(-0.5));
  // Two sequences of two steps average over N*T = 4 terms.
  TensorD a = TensorD::scalar(2.0), b = TensorD::scalar(4.0);
  CHECK(reinforce_loss<double>({{a, b}, {b, a}}, {{1.0, 1.0}, {0.0, -1.0}}).item() == doctest::Approx(-(2 + 4 - 2) / 4.0));
  CHECK_THROWS_AS(reinforce_loss<double>({{lp}}, {{-0.5, 1.0}}), ShapeError);
  CHECK_THROWS_AS(reinforce_loss<double>({{lp}}, {}), ShapeError);
}

TEST_CASE("total loss adds and guards against divergence") {
  CHECK(total_loss(TensorD::scalar(-0.5), TensorD::scalar(1.6094)).item() == doctest::Approx(1.1094));
  CHECK_THROWS_AS(total_loss(TensorD::scalar(NAN), TensorD::scalar(1.0)), DivergenceError);
  CHECK_THROWS_AS(total_loss(TensorD::scalar(0.0), TensorD::scalar(2e4)), DivergenceError);
  CHECK_THROWS_WITH(total_loss(TensorD::scalar(0.0), TensorD::scalar(INFINITY)), doctest::Contains("train_loss=inf"));
}

TEST_CASE("zero reward gives exactly zero reinforce gradient everywhere") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto r = reinforce_gradient(seed, 0.0);
    CHECK(r.all_finite);
    CHECK(r.policy_max == 0.0);
    CHECK(r.backbone_max == 0.0);
  }
}

TEST_CASE("reinforce gradient reaches the policy only") {
  const auto r = reinforce_gradient(4, 1.0);
  CHECK(r.policy_max > 0.0);
  CHECK(r.backbone_max == 0.0);
}

TEST_CASE("train loss reaches both backbone and policy") {
  RapModel<double> model(tiny_model_config(), 5);
  TinyProblem problem(6);
  const auto train = problem.train();
  LossOptions lo;
  lo.alpha = 0.0;
  Rng nrng(7);
  NoiseStream noise(nrng);
  Tape<double> tape;
  TapeScope<double> scope(&tape);
  auto l = iteration_losses<double>(model, train, nullptr, lo, &noise, nullptr);
  tape.backward(l.total);
  auto nonzero = [](NamedTensors<double> ps) {
    for (auto& p : ps)
      for (double g : p.tensor.grad())
        if (g != 0.0) return true;
    return false;
  };
  CHECK(nonzero(model.backbone_parameters()));
  CHECK(nonzero(model.policy_parameters()));
}

TEST_CASE("total gradient is the sum of the train and reinforce gradients") {
  RapModel<double> model(tiny_model_config(), 8);
  TinyProblem problem(9);
  const auto train = problem.train();
  const auto val = problem.val();
  LossOptions lo;
  lo.alpha = 0.5;
  Rng nrng(10), vrng(11);
  NoiseStream noise(nrng, true), val_noise(vrng, true);
  auto params = model.parameters();
  // Each part is differentiated on its own tape over an identical replay.
  auto grads_of = [&](TensorD IterationLosses<double>::*part) {
    noise.rewind();
    val_noise.rewind();
    for (auto& p : params) p.tensor.zero_grad();
    Tape<double> tape;
    TapeScope<double> scope(&tape);
    auto l = iteration_losses<double>(model, train, &val, lo, &noise, &val_noise);
    tape.backward(l.*part);
    std::vector<std::vector<double>> g;
    for (auto& p : params) g.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
    return g;
  };
  {
    NoGradScope<double> off;
    iteration_losses<double>(model, train, &val, lo, &noise, &val_noise);
  }
  const auto gt = grads_of(&IterationLosses<double>::train);
  const auto gr = grads_of(&IterationLosses<double>::rein);
  const auto gsum = grads_of(&IterationLosses<double>::total);
  double worst = 0;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < gsum[i].size(); ++j)
      worst = std::max(worst, std::abs(gsum[i][j] - gt[i][j] - gr[i][j]) / std::max(1e-8, std::abs(gsum[i][j])));
  CHECK(worst < 1e-9);
}

TEST_CASE("full-model total loss matches finite differences") {
  for (double alpha : {1e-4, 1.0}) {
    const auto report = full_model_gradcheck(12, alpha);
    CHECK_MESSAGE(report.passed, report.message);
  }
}

TEST_CASE("rollout shapes and identities") {
  ModelConfig mc = tiny_model_config();
  RapModel<float> model(mc, 13);
  Rng rng(14);
  TensorF x(Shape{3, 16, 16, 3});
  for (auto& v : x.data()) v = static_cast<float>(uniform01(rng));

  RolloutOptions o;
  o.steps = 5;
  Rng nrng(15);
  NoiseStream noise(nrng);
  auto r = rollout(model, x, o, &noise);
  CHECK(r.actions.size() == 5);
  CHECK(r.embeddings.size() == 6);

  o.action = ActionMode::kIdentity;
  auto id = rollout(model, x, o, nullptr);
  CHECK(id.embeddings.back().values() == id.embeddings.front().values());

  for (auto& v : model.policy().head().weight().data()) v = 0.0f;
  for (auto& v : model.policy().head().bias().data()) v = 0.0f;
  o.steps = 1;
  o.action = ActionMode::kDeterministic;
  auto half = rollout(model, x, o, nullptr);
  for (float v : half.actions[0].clamped.values()) CHECK(v == 0.5f);
  TensorF expected = model.backbone().forward_from_insertion(scale(half.m, 0.5f), BnMode::kEval);
  CHECK(half.embeddings[1].values() == expected.values());

  o.action = ActionMode::kStochastic;
  CHECK_THROWS_AS(rollout(model, x, o, nullptr), GraphError);
}

TEST_CASE("running statistics come from the configured tail pass") {
  RunConfig defaults;
  CHECK(defaults.train.bn_update_step == BnUpdateStep::kFinal);
  TensorF x(Shape{4, 16, 16, 3});
  Rng rng(16);
  for (auto& v : x.data()) v = static_cast<float>(uniform01(rng));
  auto buffers_after = [&](ActionMode action, int stats_step) {
    RapModel<float> model(tiny_model_config(), 17);
    RolloutOptions o;
    o.steps = 3;
    o.action = action;
    o.mode = BnMode::kTrainNoUpdate;
    o.stats_step = stats_step;
    rollout(model, x, o, nullptr);
    std::map<std::string, std::vector<float>> out;
    for (auto& b : model.buffers()) out[b.name] = b.tensor.values();
    return out;
  };
  const auto first = buffers_after(ActionMode::kDeterministic, 0);
  const auto last = buffers_after(ActionMode::kDeterministic, 3);
  // Insertion at block 2: blocks 1-2 and the policy see the same input either
  // way; blocks 3-4 see the attended map only on the final pass.
  for (const auto& [name, values] : first) {
    CAPTURE(name);
    const bool tail = name.rfind("backbone.block3", 0) == 0 || name.rfind("backbone.block4", 0) == 0;
    if (tail) {
      CHECK(values != last.at(name));
    } else {
      CHECK(values == last.at(name));
    }
  }
  CHECK(buffers_after(ActionMode::kIdentity, 0) == buffers_after(ActionMode::kIdentity, 3));
}

TEST_CASE("noise stream replays recorded draws and rejects mismatches") {
  Rng rng(1);
  NoiseStream s(rng, true);
  auto first = s.next(3);
  const std::vector<double> a(first.begin(), first.end());
  s.rewind();
  auto again = s.next(3);
  const std::vector<double> b(again.begin(), again.end());
  CHECK(a == b);
  CHECK_THROWS_AS(s.next(4), GraphError);
}

TEST_CASE("moving-average baseline") {
  RewardBaseline b(0.5);
  const std::vector<double> r1{-1.0, -2.0};
  CHECK(b.advantages(r1) == r1);
  b.update(r1);
  const std::vector<double> r2{-3.0, -2.0};
  b.update(r2);
  CHECK(b.values() == std::vector<double>{-2.0, -2.0});
  CHECK(b.advantages(r2) == std::vector<double>{-1.0, 0.0});
}

TEST_CASE("Gaussian bandit converges to the analytic optimum") {
  const double mean = run_bandit(2000, 21);
  CHECK(std::abs(mean - kBanditTarget) <= 0.05);
}

TEST_CASE("score-function gradient matches the analytic gradient") {
  const auto c = score_function_check(100000, 22);
  CHECK(c.rel_error() < 0.05);
}

TEST_CASE("training is deterministic and checkpoints round-trip") {
  const RunConfig cfg = tiny_run();
  const Dataset data = load_dataset(cfg.data);
  const auto d1 = temp_dir("a"), d2 = temp_dir("b");
  auto r1 = train(cfg, data, {d1, {}});
  auto r2 = train(cfg, data, {d2, {}});
  CHECK(file_text(d1 / "metrics.jsonl") == file_text(d2 / "metrics.jsonl"));
  CHECK(file_text(d1 / "best.rapc") == file_text(d2 / "best.rapc"));
  CHECK(r1.metrics.size() == 6);
  CHECK(r1.metrics[2].val_accuracy.has_value());
  CHECK_FALSE(r1.metrics[0].val_accuracy.has_value());

  auto loaded = Checkpoint::load(d1 / "best.rapc");
  CHECK(loaded.to_bytes() == file_text(d1 / "best.rapc"));
  CHECK(loaded.to_bytes() == r1.best.to_bytes());

  RunConfig back;
  auto model = model_from_checkpoint(loaded, &back);
  CHECK(back.echo() == cfg.echo());
  auto direct = model_from_checkpoint(r1.best);
  const auto a = evaluate(*model, data, cfg);
  const auto b = evaluate(*direct, data, cfg);
  CHECK(a.mean == b.mean);
  CHECK(a.per_episode == b.per_episode);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("divergence aborts with the last good checkpoint") {
  RunConfig cfg = tiny_run();
  cfg.apply_override("train.divergence_bound=1e-3");
  const Dataset data = load_dataset(cfg.data);
  const auto dir = temp_dir("div");
  CHECK_THROWS_WITH_AS(train(cfg, data, {dir, {}}), doctest::Contains("iteration 1"), DivergenceError);
  CHECK(fs::exists(dir / "last_good.rapc"));
  CHECK_NOTHROW(Checkpoint::load(dir / "last_good.rapc"));
  fs::remove_all(dir);
}

TEST_CASE("corrupt checkpoints are rejected") {
  Checkpoint c;
  c.tensors.push_back({"w", TensorF(Shape{2}, {1.0f, 2.0f})});
  c.config = "[train]\nsteps = 5\n";
  const std::string bytes = c.to_bytes();
  CHECK(Checkpoint::from_bytes(bytes).to_bytes() == bytes);
  CHECK_THROWS_AS(Checkpoint::from_bytes("XXXX" + bytes.substr(4)), IoError);
  CHECK_THROWS_AS(Checkpoint::from_bytes(bytes.substr(0, bytes.size() - 3)), IoError);
  CHECK_THROWS_AS(Checkpoint::from_bytes(bytes + "x"), IoError);
  CHECK_THROWS_AS(Checkpoint::load("/nonexistent/best.rapc"), IoError);
}

TEST_CASE("classification mode trains a linear head") {
  RunConfig cfg = tiny_run();
  cfg.apply_override("data.mode=classification");
  cfg.apply_override("data.num_classes=5");
  cfg.apply_override("train.epochs=1");
  cfg.apply_override("train.batch_size=16");
  cfg.apply_override("train.steps=2");
  const Dataset data = load_dataset(cfg.data);
  auto r = train(cfg, data);
  CHECK_FALSE(r.metrics.empty());
  CHECK(r.metrics.back().val_accuracy.has_value());
  auto model = model_from_checkpoint(r.best);
  REQUIRE(model->head() != nullptr);
}

TEST_CASE("CIFAR classification data keeps the train:val split beside a test file") {
  const auto dir = temp_dir("cifar_cls");
  Rng rng(9);
  write_cifar_binary(generate_patchcue(10, 10, 32, rng), dir / "train.bin");
  write_cifar_binary(generate_patchcue(10, 3, 32, rng), dir / "test.bin");
  RunConfig cfg;
  cfg.apply_override("data.source=cifar");
  cfg.apply_override("data.mode=classification");
  cfg.apply_override("data.num_classes=10");
  cfg.data.path = (dir / "train.bin").string();
  cfg.data.test_path = (dir / "test.bin").string();
  const Dataset d = load_dataset(cfg.data);
  CHECK(d.count() == 130);
  CHECK(d.images_in(Split::kTrain).size() == 80);
  CHECK(d.images_in(Split::kVal).size() == 20);
  CHECK(d.images_in(Split::kTest).size() == 30);
  fs::remove_all(dir);
}
