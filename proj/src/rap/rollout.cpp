#include "rap/rollout.hpp"

namespace rap {

std::span<const double> NoiseStream::next(std::size_t n) {
  if (replay_) {
    if (cursor_ >= blocks_.size() || blocks_[cursor_].size() != n) {
      throw GraphError("noise stream: replay does not match the recorded draws");
    }
    return blocks_[cursor_++];
  }
  if (!rng_) throw GraphError("noise stream: no generator attached");
  scratch_ = standard_normal(*rng_, n);
  if (record_) {
    blocks_.push_back(scratch_);
    return blocks_.back();
  }
  return scratch_;
}

void NoiseStream::rewind() {
  replay_ = true;
  cursor_ = 0;
}

template <typename T>
Rollout<T> rollout(RapModel<T>& model, const Tensor<T>& images, const RolloutOptions& options, NoiseStream* noise,
                   const FrozenRollout<T>* frozen) {
  if (options.steps < 0) throw ConfigError("rollout: steps must be >= 0", "train.steps");
  const bool update = options.mode != BnMode::kEval && options.stats_step >= 0;
  const BnMode head_mode = update ? BnMode::kTrain : options.mode;
  auto tail_mode = [&](int t) { return update && t == options.stats_step ? BnMode::kTrain : options.mode; };

  auto& backbone = model.backbone();
  auto& policy = model.policy();
  Rollout<T> r;
  r.m = backbone.forward_to_insertion(images, head_mode);
  r.embeddings.push_back(backbone.forward_from_insertion(r.m, tail_mode(0)));
  if (options.steps == 0) return r;

  r.image_features = policy.image_features(images, head_mode);
  const int h = policy.attention_h(), w = policy.attention_w();
  const double sigma = policy.config().sigma;
  for (int t = 1; t <= options.steps; ++t) {
    const auto k = static_cast<std::size_t>(t - 1);
    Tensor<T> state = frozen ? frozen->policy_inputs.at(k) : r.embeddings.back().detach();
    r.policy_inputs.push_back(state);
    AttentionAction<T> a;
    if (options.action == ActionMode::kIdentity) {
      a = identity_action<T>(images.dim(0), h, w);
    } else {
      Tensor<T> u = policy.mean_from_features(r.image_features, state);
      if (options.action == ActionMode::kDeterministic) {
        a = mean_action(u, sigma, h, w);
      } else {
        if (!noise) throw GraphError("rollout: stochastic actions need a noise stream");
        const Tensor<T>* point = frozen && !frozen->samples.empty() ? &frozen->samples.at(k) : nullptr;
        a = sample_action(u, sigma, noise->next(u.numel()), h, w, policy.config().clamp_actions, point);
      }
    }
    r.embeddings.push_back(backbone.forward_from_insertion(apply_attention(a, r.m), tail_mode(t)));
    r.actions.push_back(std::move(a));
  }
  return r;
}

template Rollout<float> rollout(RapModel<float>&, const Tensor<float>&, const RolloutOptions&, NoiseStream*,
                                const FrozenRollout<float>*);
template Rollout<double> rollout(RapModel<double>&, const Tensor<double>&, const RolloutOptions&, NoiseStream*,
                                 const FrozenRollout<double>*);

}  // namespace rap
