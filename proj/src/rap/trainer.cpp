#include "rap/trainer.hpp"

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

#include "json.hpp"

namespace rap {

std::vector<double> compute_rewards(std::span<const double> val_losses, double alpha) {
  std::vector<double> r(val_losses.size());
  for (std::size_t t = 0; t < r.size(); ++t) r[t] = -alpha * val_losses[t];
  return r;
}

template <typename T>
Tensor<T> reinforce_loss(const std::vector<std::vector<Tensor<T>>>& log_probs,
                         const std::vector<std::vector<double>>& rewards) {
  if (log_probs.size() != rewards.size()) {
    throw ShapeError("reinforce_loss: " + std::to_string(log_probs.size()) + " log-prob sequences but " +
                     std::to_string(rewards.size()) + " reward sequences");
  }
  std::size_t terms = 0;
  for (std::size_t i = 0; i < log_probs.size(); ++i) {
    if (log_probs[i].size() != rewards[i].size()) {
      throw ShapeError("reinforce_loss: sequence " + std::to_string(i) + " has " +
                       std::to_string(log_probs[i].size()) + " log-probs and " + std::to_string(rewards[i].size()) +
                       " rewards");
    }
    terms += log_probs[i].size();
  }
  if (terms == 0) return Tensor<T>::scalar(T(0));
  const std::size_t steps = log_probs.front().size();
  const double norm = static_cast<double>(log_probs.size() * steps);
  Tensor<T> acc;
  for (std::size_t i = 0; i < log_probs.size(); ++i) {
    for (std::size_t t = 0; t < log_probs[i].size(); ++t) {
      Tensor<T> term = scale(log_probs[i][t], static_cast<T>(-rewards[i][t] / norm));
      acc = acc.defined() ? add(acc, term) : term;
    }
  }
  return acc;
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& rein, const Tensor<T>& train, double bound) {
  const double r = static_cast<double>(rein.item());
  const double l = static_cast<double>(train.item());
  if (!std::isfinite(r) || !std::isfinite(l) || std::abs(r) > bound || std::abs(l) > bound) {
    std::ostringstream os;
    os << "loss diverged: rein_loss=" << r << " train_loss=" << l << " (bound " << bound << ")";
    throw DivergenceError(os.str());
  }
  return add(rein, train);
}

std::vector<double> RewardBaseline::advantages(std::span<const double> rewards) const {
  std::vector<double> a(rewards.begin(), rewards.end());
  if (values_.size() == a.size()) {
    for (std::size_t t = 0; t < a.size(); ++t) a[t] -= values_[t];
  }
  return a;
}

void RewardBaseline::update(std::span<const double> rewards) {
  if (values_.size() != rewards.size()) {
    values_.assign(rewards.begin(), rewards.end());
    return;
  }
  for (std::size_t t = 0; t < rewards.size(); ++t) values_[t] = momentum_ * values_[t] + (1.0 - momentum_) * rewards[t];
}

template <typename T>
LossBatch<T> fewshot_batch(Tensor<T> images, const Episode& episode) {
  LossBatch<T> b;
  b.images = std::move(images);
  b.loss = [support = episode.support_labels, query = episode.query_labels, way = episode.way,
            shot = episode.shot](const Tensor<T>& e) {
    auto p = protonet_episode(e, support, query, way, shot);
    return TaskLoss<T>{p.loss, p.accuracy};
  };
  return b;
}

template <typename T>
LossBatch<T> classification_batch(Tensor<T> images, std::vector<int> labels, LinearHead<T>& head) {
  LossBatch<T> b;
  b.images = std::move(images);
  b.sequences = static_cast<int>(labels.size());
  b.loss = [labels = std::move(labels), &head](const Tensor<T>& e) {
    auto r = head.loss(e, labels);
    return TaskLoss<T>{r.loss, r.accuracy};
  };
  return b;
}

template <typename T>
IterationLosses<T> iteration_losses(RapModel<T>& model, const LossBatch<T>& train, const LossBatch<T>* val,
                                    const LossOptions& options, NoiseStream* train_noise, NoiseStream* val_noise,
                                    const FrozenTerms<T>* frozen, const RewardBaseline* baseline) {
  RolloutOptions ro;
  ro.steps = options.steps;
  ro.action = options.action;
  ro.mode = options.mode;
  ro.stats_step = options.stats_step;

  IterationLosses<T> out;
  Rollout<T> tr = rollout(model, train.images, ro, train_noise, frozen ? &frozen->rollout : nullptr);
  TaskLoss<T> tl = train.loss(tr.embeddings.back());
  out.train = tl.loss;
  out.train_accuracy = tl.accuracy;
  out.policy_inputs = tr.policy_inputs;
  for (const auto& a : tr.actions) out.samples.push_back(a.sample.detach());

  if (val && (options.steps > 0 || options.val_in_train_loss)) {
    RolloutOptions vo = ro;
    vo.stats_step = -1;
    std::optional<NoGradScope<T>> off;
    if (!options.val_in_train_loss) off.emplace();
    Rollout<T> vr = rollout(model, val->images, vo, val_noise);
    {
      NoGradScope<T> values_only;
      for (int t = 1; t <= options.steps; ++t) {
        const double lv = static_cast<double>(val->loss(vr.embeddings[static_cast<std::size_t>(t)]).loss.item());
        if (!std::isfinite(lv) || std::abs(lv) > options.divergence_bound) {
          throw DivergenceError("loss diverged: validation loss at step " + std::to_string(t) + " is " +
                                std::to_string(lv));
        }
        out.val_losses.push_back(lv);
      }
    }
    if (options.val_in_train_loss) out.train = add(out.train, val->loss(vr.embeddings.back()).loss);
  }

  out.rewards = compute_rewards(out.val_losses, options.alpha);
  if (frozen) {
    out.advantages = frozen->advantages;
  } else if (baseline) {
    out.advantages = baseline->advantages(out.rewards);
  } else {
    out.advantages = out.rewards;
  }

  if (options.steps > 0 && options.action != ActionMode::kIdentity && !out.advantages.empty()) {
    std::vector<Tensor<T>> lp;
    for (const auto& a : tr.actions) lp.push_back(a.log_prob);
    out.rein = reinforce_loss<T>({lp}, {out.advantages});
    // Sequences in a batch share the reward, so the sum over them factors.
    if (train.sequences > 1) out.rein = scale(out.rein, static_cast<T>(1.0 / train.sequences));
  } else {
    out.rein = Tensor<T>::scalar(T(0));
  }
  out.total = total_loss(out.rein, out.train, options.divergence_bound);
  return out;
}

std::string MetricRecord::to_json() const {
  nlohmann::ordered_json j;
  j["iteration"] = iteration;
  j["train_loss"] = train_loss;
  j["rein_loss"] = rein_loss;
  j["mean_reward"] = mean_reward;
  j["train_acc"] = train_accuracy;
  j["val_acc"] = val_accuracy ? nlohmann::ordered_json(*val_accuracy) : nlohmann::ordered_json(nullptr);
  return j.dump();
}

Checkpoint make_checkpoint(RapModel<float>& model, const Adam<float>* adam, const std::string& rng_state,
                           const RunConfig& config) {
  Checkpoint c;
  for (auto& t : model.state()) c.tensors.push_back({t.name, t.tensor.detach()});
  if (adam) {
    c.optimizer_step = adam->steps();
    for (auto& t : adam->state()) c.optimizer.push_back({t.name, t.tensor.detach()});
  }
  c.rng_state = rng_state;
  c.config = config.echo();
  return c;
}

std::unique_ptr<RapModel<float>> model_from_checkpoint(const Checkpoint& checkpoint, RunConfig* config_out) {
  RunConfig cfg = RunConfig::parse(checkpoint.config);
  auto model = std::make_unique<RapModel<float>>(cfg.model_config(), cfg.train.seed);
  auto state = model->state();
  if (state.size() != checkpoint.tensors.size()) {
    throw IoError("checkpoint: holds " + std::to_string(checkpoint.tensors.size()) + " tensors, model expects " +
                  std::to_string(state.size()));
  }
  assign_by_name(state, checkpoint.tensors);
  if (config_out) *config_out = cfg;
  return model;
}

Dataset load_dataset(const DataConfig& config) {
  Dataset d;
  if (config.source == "patchcue") {
    PatchCueOptions o = config.patchcue;
    if (config.mode == TaskMode::kFewShot) {
      if (config.ratios.size() != 3) throw ConfigError("config: data.ratios needs train:val:test", "data.ratios");
      o.ratios = {config.ratios[0], config.ratios[1], config.ratios[2]};
    }
    Rng rng(config.seed);
    d = generate_patchcue(config.num_classes, config.images_per_class, config.hw, rng, o, config.split_seed);
    if (config.mode == TaskMode::kClassification) {
      Rng split_rng = derived_rng(config.split_seed, 2);
      d.class_split.clear();
      d.image_split = split_images(d.count(), config.image_ratios, split_rng);
    }
  } else if (config.source == "cifar") {
    std::vector<Dataset> parts;
    std::stringstream ss(config.path);
    std::string file;
    while (std::getline(ss, file, ',')) {
      if (!file.empty()) parts.push_back(load_cifar_binary(file, config.num_classes));
    }
    if (parts.empty()) throw ConfigError("config: data.path lists no CIFAR files", "data.path");
    d = concat_datasets(parts);
    Rng split_rng = derived_rng(config.split_seed, 2);
    if (config.mode == TaskMode::kClassification) {
      d.image_split = split_images(d.count(), config.image_ratios, split_rng);
      if (!config.test_path.empty()) {
        Dataset test = load_cifar_binary(config.test_path, config.num_classes);
        test.image_split.assign(test.count(), Split::kTest);
        d = concat_datasets({d, test});
      }
    } else {
      d.class_split = split_classes(d.num_classes, config.ratios, split_rng);
    }
    if (d.hw != config.hw) {
      throw ConfigError("config: CIFAR images are " + std::to_string(d.hw) + "x" + std::to_string(d.hw) +
                            " but data.hw is " + std::to_string(config.hw),
                        "data.hw");
    }
  } else if (config.source == "manifest") {
    d = load_manifest(config.path);
    if (d.hw != config.hw) {
      throw ConfigError("config: manifest images are " + std::to_string(d.hw) + " pixels wide but data.hw is " +
                            std::to_string(config.hw),
                        "data.hw");
    }
    if (d.num_classes != config.num_classes) {
      throw ConfigError("config: manifest has " + std::to_string(d.num_classes) + " classes but data.num_classes is " +
                            std::to_string(config.num_classes),
                        "data.num_classes");
    }
  } else {
    throw ConfigError("config: unknown data.source '" + config.source + "'", "data.source");
  }
  d.validate();
  return d;
}

namespace {

int resolve_val_way(const RunConfig& cfg, const Dataset& data) {
  if (cfg.train.val_way > 0) return cfg.train.val_way;
  const int available = static_cast<int>(data.classes_in(Split::kVal).size());
  return std::min(cfg.train.way, available);
}

std::vector<Episode> validation_pool(const RunConfig& cfg, const Dataset& data) {
  std::vector<Episode> pool;
  const int way = resolve_val_way(cfg, data);
  for (int i = 0; i < cfg.train.val_episodes; ++i) {
    Rng r = derived_rng(cfg.train.seed ^ 0x76616cULL, static_cast<std::uint64_t>(i));
    pool.push_back(sample_episode(data, Split::kVal, way, cfg.train.shot, cfg.train.query, r));
  }
  return pool;
}

// Deterministic final-step embeddings with frozen statistics.
TensorF infer_embeddings(RapModel<float>& model, const TensorF& images, int steps) {
  NoGradScope<float> off;
  RolloutOptions ro;
  ro.steps = steps;
  ro.action = ActionMode::kDeterministic;
  ro.mode = BnMode::kEval;
  return rollout(model, images, ro, nullptr).embeddings.back();
}

struct TrainStreams {
  Rng sampling;
  Rng augment;
  Rng noise;
  Rng val_noise;

  explicit TrainStreams(std::uint64_t seed)
      : sampling(derived_rng(seed, 1)), augment(derived_rng(seed, 2)), noise(derived_rng(seed, 3)),
        val_noise(derived_rng(seed, 4)) {}

  std::string state() const {
    return rng_state(sampling) + "\n" + rng_state(augment) + "\n" + rng_state(noise) + "\n" + rng_state(val_noise);
  }
};

class Run {
 public:
  Run(const RunConfig& cfg, const Dataset& data, const TrainHooks& hooks)
      : cfg_(cfg), data_(data), hooks_(hooks), model_(cfg.model_config(), cfg.train.seed),
        adam_(cfg.train.adam, model_.parameters()), streams_(cfg.train.seed),
        noise_(streams_.noise), val_noise_(streams_.val_noise), baseline_(cfg.train.baseline_momentum) {
    options_.steps = cfg.train.steps;
    options_.alpha = cfg.train.alpha;
    options_.action = ActionMode::kStochastic;
    options_.mode = BnMode::kTrainNoUpdate;
    options_.stats_step = cfg.train.bn_update_step == BnUpdateStep::kInitial ? 0 : cfg.train.steps;
    options_.val_in_train_loss = cfg.train.val_in_train_loss;
    options_.divergence_bound = cfg.train.divergence_bound;
    if (!hooks_.out_dir.empty()) {
      std::filesystem::create_directories(hooks_.out_dir);
      metrics_.open(hooks_.out_dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
      if (!metrics_) throw IoError("train: cannot write " + (hooks_.out_dir / "metrics.jsonl").string());
    }
  }

  TrainResult run() {
    if (cfg_.data.mode == TaskMode::kFewShot) {
      run_fewshot();
    } else {
      run_classification();
    }
    result_.last = snapshot();
    if (result_.best_val_accuracy < 0.0) {
      result_.best_val_accuracy = validation_accuracy(model_, data_, cfg_, pool_);
      result_.best = result_.last;
    }
    if (!hooks_.out_dir.empty()) result_.best.save(hooks_.out_dir / "best.rapc");
    return std::move(result_);
  }

 private:
  Checkpoint snapshot() { return make_checkpoint(model_, &adam_, streams_.state(), cfg_); }

  void step(const LossBatch<float>& train, const LossBatch<float>& val) {
    Tape<float> tape;
    TapeScope<float> scope(&tape);
    IterationLosses<float> l;
    try {
      l = iteration_losses<float>(model_, train, &val, options_, &noise_, &val_noise_, nullptr,
                           cfg_.train.baseline_subtraction ? &baseline_ : nullptr);
    } catch (const DivergenceError& e) {
      diverged(e.what());
    }
    adam_.zero_grad();
    tape.backward(l.total);
    adam_.step();
    if (cfg_.train.baseline_subtraction) baseline_.update(l.rewards);

    ++iteration_;
    MetricRecord rec;
    rec.iteration = iteration_;
    rec.train_loss = static_cast<double>(l.train.item());
    rec.rein_loss = static_cast<double>(l.rein.item());
    double sum = 0;
    for (double r : l.rewards) sum += r;
    rec.mean_reward = l.rewards.empty() ? 0.0 : sum / static_cast<double>(l.rewards.size());
    rec.train_accuracy = l.train_accuracy;
    pending_ = rec;
  }

  void finish_record(bool evaluate) {
    if (evaluate) {
      const double acc = validation_accuracy(model_, data_, cfg_, pool_);
      pending_.val_accuracy = acc;
      if (acc > result_.best_val_accuracy) {
        result_.best_val_accuracy = acc;
        result_.best_iteration = iteration_;
        result_.best = snapshot();
      }
    }
    result_.metrics.push_back(pending_);
    if (metrics_.is_open()) {
      metrics_ << pending_.to_json() << '\n';
      metrics_.flush();
    }
    if (hooks_.on_record) hooks_.on_record(pending_);
  }

  [[noreturn]] void diverged(const std::string& what) {
    const std::string msg = "iteration " + std::to_string(iteration_ + 1) + ": " + what;
    if (!hooks_.out_dir.empty()) {
      snapshot().save(hooks_.out_dir / "last_good.rapc");
      if (result_.best_val_accuracy >= 0.0) result_.best.save(hooks_.out_dir / "best.rapc");
    }
    throw DivergenceError(msg);
  }

  void run_fewshot() {
    pool_ = validation_pool(cfg_, data_);
    const int val_way = resolve_val_way(cfg_, data_);
    const auto& t = cfg_.train;
    for (int it = 1; it <= t.iterations; ++it) {
      const Episode ep = sample_episode(data_, Split::kTrain, t.way, t.shot, t.query, streams_.sampling);
      const Episode vep = sample_episode(data_, Split::kVal, val_way, t.shot, t.query, streams_.sampling);
      const auto idx = ep.all_indices();
      const auto vidx = vep.all_indices();
      auto train = fewshot_batch(gather_images<float>(data_, idx, t.augment ? &streams_.augment : nullptr), ep);
      auto val = fewshot_batch(gather_images<float>(data_, vidx), vep);
      step(train, val);
      finish_record(it % t.eval_every == 0 || it == t.iterations);
    }
  }

  void run_classification() {
    const auto& t = cfg_.train;
    auto* head = model_.head();
    if (!head) throw ConfigError("train: classification mode needs a linear head", "data.mode");
    auto train_idx = data_.images_in(Split::kTrain);
    auto val_idx = data_.images_in(Split::kVal);
    if (train_idx.size() < static_cast<std::size_t>(t.batch_size) || val_idx.size() < static_cast<std::size_t>(t.batch_size)) {
      throw DataError("train: classification needs at least " + std::to_string(t.batch_size) +
                      " training and validation images, have " + std::to_string(train_idx.size()) + " and " +
                      std::to_string(val_idx.size()));
    }
    const auto B = static_cast<std::size_t>(t.batch_size);
    const std::size_t per_epoch = train_idx.size() / B;
    for (int epoch = 0; epoch < t.epochs; ++epoch) {
      std::shuffle(train_idx.begin(), train_idx.end(), streams_.sampling);
      for (std::size_t b = 0; b < per_epoch; ++b) {
        std::vector<std::size_t> bi(train_idx.begin() + static_cast<std::ptrdiff_t>(b * B),
                                    train_idx.begin() + static_cast<std::ptrdiff_t>((b + 1) * B));
        for (std::size_t i = 0; i < B; ++i) {
          std::swap(val_idx[i], val_idx[i + uniform_index(streams_.sampling, val_idx.size() - i)]);
        }
        std::vector<std::size_t> vi(val_idx.begin(), val_idx.begin() + static_cast<std::ptrdiff_t>(B));
        std::vector<int> labels, vlabels;
        for (auto i : bi) labels.push_back(data_.labels[i]);
        for (auto i : vi) vlabels.push_back(data_.labels[i]);
        auto train = classification_batch(gather_images<float>(data_, bi, t.augment ? &streams_.augment : nullptr),
                                          std::move(labels), *head);
        auto val = classification_batch(gather_images<float>(data_, vi), std::move(vlabels), *head);
        step(train, val);
        const bool epoch_end = b + 1 == per_epoch;
        finish_record(iteration_ % t.eval_every == 0 || epoch_end);
      }
    }
  }

  const RunConfig& cfg_;
  const Dataset& data_;
  const TrainHooks& hooks_;
  RapModel<float> model_;
  Adam<float> adam_;
  TrainStreams streams_;
  NoiseStream noise_;
  NoiseStream val_noise_;
  RewardBaseline baseline_;
  LossOptions options_;
  std::vector<Episode> pool_;
  std::ofstream metrics_;
  std::int64_t iteration_ = 0;
  MetricRecord pending_;
  TrainResult result_;
};

}  // namespace

double validation_accuracy(RapModel<float>& model, const Dataset& data, const RunConfig& config,
                           const std::vector<Episode>& pool) {
  const int steps = config.train.steps;
  if (config.data.mode == TaskMode::kFewShot) {
    if (pool.empty()) return 0.0;
    double acc = 0;
    for (const auto& ep : pool) {
      const auto idx = ep.all_indices();
      TensorF e = infer_embeddings(model, gather_images<float>(data, idx), steps);
      acc += protonet_episode(e, ep.support_labels, ep.query_labels, ep.way, ep.shot).accuracy;
    }
    return acc / static_cast<double>(pool.size());
  }
  auto* head = model.head();
  const auto idx = data.images_in(Split::kVal);
  if (!head || idx.empty()) return 0.0;
  std::size_t hits = 0;
  const auto B = static_cast<std::size_t>(std::max(config.eval.batch_size, 1));
  for (std::size_t s = 0; s < idx.size(); s += B) {
    std::vector<std::size_t> bi(idx.begin() + static_cast<std::ptrdiff_t>(s),
                                idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), s + B)));
    TensorF e = infer_embeddings(model, gather_images<float>(data, bi), steps);
    NoGradScope<float> off;
    TensorF logits = head->logits(e);
    const auto pred = argmax_rows(std::span<const float>(logits.data()), bi.size(), static_cast<std::size_t>(logits.dim(1)));
    for (std::size_t i = 0; i < bi.size(); ++i) hits += pred[i] == data.labels[bi[i]] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(idx.size());
}

TrainResult train(const RunConfig& config, const Dataset& data, const TrainHooks& hooks) {
  config.validate();
  Run run(config, data, hooks);
  return run.run();
}

#define RAP_INSTANTIATE_TRAINER(T)                                                                                 \
  template Tensor<T> reinforce_loss(const std::vector<std::vector<Tensor<T>>>&,                                   \
                                    const std::vector<std::vector<double>>&);                                     \
  template Tensor<T> total_loss(const Tensor<T>&, const Tensor<T>&, double);                                      \
  template LossBatch<T> fewshot_batch(Tensor<T>, const Episode&);                                                 \
  template LossBatch<T> classification_batch(Tensor<T>, std::vector<int>, LinearHead<T>&);                        \
  template IterationLosses<T> iteration_losses(RapModel<T>&, const LossBatch<T>&, const LossBatch<T>*,             \
                                               const LossOptions&, NoiseStream*, NoiseStream*,                    \
                                               const FrozenTerms<T>*, const RewardBaseline*);

RAP_INSTANTIATE_TRAINER(float)
RAP_INSTANTIATE_TRAINER(double)

}  // namespace rap
