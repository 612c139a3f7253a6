#include "rap/eval.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "rap/trainer.hpp"

namespace rap {

std::pair<double, double> mean_and_half_width(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(values.size());
  double mean = 0;
  for (double v : values) mean += v;
  mean /= n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  return {mean, 1.96 * sd / std::sqrt(n)};
}

int worker_count(int requested) {
  int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* env = std::getenv("RAP_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, cap);
  }
  return n;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = task_mode_name(mode);
  j["count"] = count;
  j["accuracy"] = mean;
  j["half_width"] = half_width;
  j["curve"] = curve;
  j["curve_half_width"] = curve_half_width;
  return j.dump();
}

EmbedFn model_embedder(RapModel<float>& model, int steps, ActionMode action) {
  if (action == ActionMode::kStochastic) {
    throw ConfigError("evaluation uses deterministic or identity actions", "policy.deterministic_eval");
  }
  return [&model, steps, action](const TensorF& images) {
    NoGradScope<float> off;
    RolloutOptions ro;
    ro.steps = steps;
    ro.action = action;
    ro.mode = BnMode::kEval;
    return rollout(model, images, ro, nullptr).embeddings;
  };
}

EvalReport evaluate_episodes(const Dataset& data, const EpisodeEvalOptions& options, const EmbedFn& embed) {
  if (options.episodes < 1) throw ConfigError("evaluate: need at least one episode", "eval.episodes");
  {
    // Fail fast (and on this thread) when the split cannot supply episodes.
    Rng probe = derived_rng(options.seed, 0);
    (void)sample_episode(data, options.split, options.way, options.shot, options.query, probe);
  }
  const auto n = static_cast<std::size_t>(options.episodes);
  std::vector<std::vector<double>> acc(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    try {
      for (std::size_t i = next++; i < n; i = next++) {
        Rng rng = derived_rng(options.seed, i);
        const Episode ep = sample_episode(data, options.split, options.way, options.shot, options.query, rng);
        const auto idx = ep.all_indices();
        const auto embeddings = embed(gather_images<float>(data, idx));
        for (const auto& e : embeddings) {
          acc[i].push_back(protonet_episode(e, ep.support_labels, ep.query_labels, ep.way, ep.shot).accuracy);
        }
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
      next = n;
    }
  };
  const int workers = std::min<int>(worker_count(options.threads), options.episodes);
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (error) std::rethrow_exception(error);

  EvalReport r;
  r.mode = TaskMode::kFewShot;
  r.count = n;
  const std::size_t steps = acc.front().size();
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = acc[i].at(t);
    const auto [m, hw] = mean_and_half_width(col);
    r.curve.push_back(m);
    r.curve_half_width.push_back(hw);
    if (t + 1 == steps) {
      r.mean = m;
      r.half_width = hw;
      r.per_episode = std::move(col);
    }
  }
  return r;
}

EvalReport evaluate_classification(RapModel<float>& model, const Dataset& data, Split split, int steps,
                                   int batch_size, ActionMode action) {
  auto* head = model.head();
  if (!head) throw ConfigError("evaluate: classification needs a model with a linear head", "data.mode");
  const auto idx = data.images_in(split);
  if (idx.empty()) throw DataError(std::string("evaluate: split '") + split_name(split) + "' has no images");
  const auto embed = model_embedder(model, steps, action);
  std::vector<std::vector<double>> hits(static_cast<std::size_t>(steps) + 1);
  const auto B = static_cast<std::size_t>(std::max(batch_size, 1));
  for (std::size_t s = 0; s < idx.size(); s += B) {
    std::vector<std::size_t> bi(idx.begin() + static_cast<std::ptrdiff_t>(s),
                                idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), s + B)));
    const auto embeddings = embed(gather_images<float>(data, bi));
    NoGradScope<float> off;
    for (std::size_t t = 0; t < embeddings.size(); ++t) {
      TensorF logits = head->logits(embeddings[t]);
      const auto pred =
          argmax_rows(std::span<const float>(logits.data()), bi.size(), static_cast<std::size_t>(logits.dim(1)));
      for (std::size_t i = 0; i < bi.size(); ++i) hits[t].push_back(pred[i] == data.labels[bi[i]] ? 1.0 : 0.0);
    }
  }
  EvalReport r;
  r.mode = TaskMode::kClassification;
  r.count = idx.size();
  for (const auto& h : hits) {
    const auto [m, hw] = mean_and_half_width(h);
    r.curve.push_back(m);
    r.curve_half_width.push_back(hw);
  }
  r.mean = r.curve.back();
  r.half_width = r.curve_half_width.back();
  return r;
}

EvalReport evaluate(RapModel<float>& model, const Dataset& data, const RunConfig& config, ActionMode action) {
  if (config.data.mode == TaskMode::kClassification) {
    return evaluate_classification(model, data, config.eval.split, config.train.steps, config.eval.batch_size, action);
  }
  EpisodeEvalOptions o;
  o.way = config.eval.way;
  o.shot = config.eval.shot;
  o.query = config.eval.query;
  o.episodes = config.eval.episodes;
  o.seed = config.eval.seed;
  o.split = config.eval.split;
  o.threads = config.eval.threads;
  return evaluate_episodes(data, o, model_embedder(model, config.train.steps, action));
}

namespace {

std::string fmt_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

std::string AblationCell::label() const {
  if (!attention) return "attention off";
  return "T=" + std::to_string(steps) + " alpha=" + fmt_number(alpha);
}

std::string AblationRow::to_json() const {
  nlohmann::ordered_json j;
  j["model"] = cell.attention ? "RAP" : "baseline";
  j["steps"] = cell.attention ? cell.steps : 0;
  j["alpha"] = cell.alpha;
  j["attention"] = cell.attention;
  j["seed_accuracy"] = seed_accuracy;
  j["accuracy"] = mean;
  j["half_width"] = half_width;
  j["diverged"] = diverged;
  if (!message.empty()) j["message"] = message;
  return j.dump();
}

std::vector<AblationRow> ablate(const RunConfig& base, const Dataset& data, const std::vector<AblationCell>& cells,
                                const AblationOptions& options) {
  std::vector<AblationRow> rows;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    AblationRow row;
    row.cell = cells[c];
    for (int s = 0; s < options.seeds; ++s) {
      if (options.on_run) options.on_run(c, s);
      RunConfig cfg = base;
      cfg.train.seed = base.train.seed + static_cast<std::uint64_t>(s);
      cfg.train.steps = row.cell.attention ? row.cell.steps : 0;
      cfg.train.alpha = row.cell.alpha;
      try {
        TrainResult result = train(cfg, data);
        auto model = model_from_checkpoint(result.best);
        row.seed_accuracy.push_back(evaluate(*model, data, cfg).mean);
      } catch (const DivergenceError& e) {
        row.diverged = true;
        if (row.message.empty()) row.message = "seed " + std::to_string(cfg.train.seed) + ": " + e.what();
      }
    }
    const auto [m, hw] = mean_and_half_width(row.seed_accuracy);
    row.mean = m;
    row.half_width = hw;
    if (options.on_row) options.on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_table(std::ostream& os, const std::vector<AblationRow>& rows) {
  const auto flags = os.flags();
  os << std::left << std::setw(10) << "Model" << std::setw(24) << "Setting" << "Accuracy (%)\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(10) << (r.cell.attention ? "RAP" : "Baseline") << std::setw(24) << r.cell.label();
    if (r.diverged) {
      os << "DIVERGED";
      if (!r.seed_accuracy.empty()) {
        os << " (" << std::fixed << std::setprecision(2) << 100.0 * r.mean << " over " << r.seed_accuracy.size()
           << " seeds)";
      }
    } else {
      os << std::fixed << std::setprecision(2) << 100.0 * r.mean << " +- " << 100.0 * r.half_width;
    }
    os.unsetf(std::ios::floatfield);
    os << '\n';
  }
  os.flags(flags);
}

namespace {

double overlap(double a0, double a1, double b0, double b1) { return std::max(0.0, std::min(a1, b1) - std::max(a0, b0)); }

// Share of each attention cell covered by the patch.
std::vector<double> coverage(int h, int w, int image_hw, const PatchBox& box) {
  std::vector<double> cov(static_cast<std::size_t>(h * w), 0.0);
  if (box.row < 0 || box.size <= 0) return cov;
  const double sy = static_cast<double>(image_hw) / h, sx = static_cast<double>(image_hw) / w;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const double oy = overlap(i * sy, (i + 1) * sy, box.row, box.row + box.size);
      const double ox = overlap(j * sx, (j + 1) * sx, box.col, box.col + box.size);
      cov[static_cast<std::size_t>(i * w + j)] = oy * ox / (sy * sx);
    }
  }
  return cov;
}

}  // namespace

double patch_hit_score(std::span<const float> attention, int h, int w, int image_hw, const PatchBox& box) {
  if (attention.size() != static_cast<std::size_t>(h * w)) {
    throw ShapeError("patch_hit_score: " + std::to_string(attention.size()) + " attention values for a " +
                     std::to_string(h) + "x" + std::to_string(w) + " map");
  }
  const auto cov = coverage(h, w, image_hw, box);
  double hit = 0, total = 0;
  for (std::size_t c = 0; c < cov.size(); ++c) {
    hit += attention[c] * cov[c];
    total += attention[c];
  }
  return total > 0 ? hit / total : 0.0;
}

double uniform_hit_score(int h, int w, int image_hw, const PatchBox& box) {
  const auto cov = coverage(h, w, image_hw, box);
  double s = 0;
  for (double c : cov) s += c;
  return s / static_cast<double>(h * w);
}

AttentionDump dump_attention(RapModel<float>& model, const Dataset& data, const std::vector<std::size_t>& images,
                             int steps, int batch_size) {
  AttentionDump d;
  d.h = model.policy().attention_h();
  d.w = model.policy().attention_w();
  d.images = images;
  d.hit_per_step.assign(static_cast<std::size_t>(steps), 0.0);
  std::size_t scored = 0;
  const auto B = static_cast<std::size_t>(std::max(batch_size, 1));
  const auto cells = static_cast<std::size_t>(d.h * d.w);
  for (std::size_t s = 0; s < images.size(); s += B) {
    std::vector<std::size_t> bi(images.begin() + static_cast<std::ptrdiff_t>(s),
                                images.begin() + static_cast<std::ptrdiff_t>(std::min(images.size(), s + B)));
    NoGradScope<float> off;
    RolloutOptions ro;
    ro.steps = steps;
    ro.action = ActionMode::kDeterministic;
    ro.mode = BnMode::kEval;
    const auto r = rollout(model, gather_images<float>(data, bi), ro, nullptr);
    for (std::size_t i = 0; i < bi.size(); ++i) {
      std::vector<std::vector<float>> maps;
      for (const auto& a : r.actions) {
        auto v = a.clamped.data().subspan(i * cells, cells);
        maps.emplace_back(v.begin(), v.end());
      }
      const bool has_patch = !data.patches.empty() && data.patches[bi[i]].row >= 0;
      if (has_patch) {
        const auto& box = data.patches[bi[i]];
        for (std::size_t t = 0; t < maps.size(); ++t) d.hit_per_step[t] += patch_hit_score(maps[t], d.h, d.w, data.hw, box);
        d.uniform_hit += uniform_hit_score(d.h, d.w, data.hw, box);
        ++scored;
      }
      d.maps.push_back(std::move(maps));
    }
  }
  if (scored > 0) {
    for (auto& v : d.hit_per_step) v /= static_cast<double>(scored);
    d.uniform_hit /= static_cast<double>(scored);
  }
  return d;
}

}  // namespace rap
