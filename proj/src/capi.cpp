#include "rap/rap.h"

#include <cstring>
#include <fstream>
#include <sstream>

#include "rap/eval.hpp"
#include "rap/trainer.hpp"

struct rap_config {
  rap::RunConfig config;
};

struct rap_dataset {
  rap::Dataset data;
};

struct rap_model {
  rap::RunConfig config;
  std::unique_ptr<rap::RapModel<float>> model;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_error_key;

rap_status fail(rap_status status, const std::string& message, const std::string& key = {}) {
  g_error = message;
  g_error_key = key;
  return status;
}

template <typename F>
rap_status guarded(F&& body) {
  g_error.clear();
  g_error_key.clear();
  try {
    body();
    return RAP_OK;
  } catch (const rap::ConfigError& e) {
    return fail(RAP_ERR_CONFIG, e.what(), e.key());
  } catch (const rap::IoError& e) {
    return fail(RAP_ERR_IO, e.what());
  } catch (const rap::DataError& e) {
    return fail(RAP_ERR_DATA, e.what());
  } catch (const rap::ShapeError& e) {
    return fail(RAP_ERR_SHAPE, e.what());
  } catch (const rap::DivergenceError& e) {
    return fail(RAP_ERR_DIVERGED, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(RAP_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(RAP_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(RAP_ERR_INTERNAL, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::pair<std::string, std::string> split_key(const char* key) {
  const std::string k(key);
  const auto dot = k.find('.');
  if (dot == std::string::npos) throw rap::ConfigError("config: key '" + k + "' is not section.key", k);
  return {k.substr(0, dot), k.substr(dot + 1)};
}

#define RAP_REQUIRE(cond, what) \
  if (!(cond)) return fail(RAP_ERR_ARGUMENT, what)

}  // namespace

extern "C" {

const char* rap_version(void) { return "1.0.0"; }

const char* rap_status_name(rap_status status) {
  switch (status) {
    case RAP_OK: return "ok";
    case RAP_ERR_ARGUMENT: return "invalid argument";
    case RAP_ERR_CONFIG: return "configuration error";
    case RAP_ERR_IO: return "I/O error";
    case RAP_ERR_DATA: return "data error";
    case RAP_ERR_SHAPE: return "shape error";
    case RAP_ERR_DIVERGED: return "training diverged";
    case RAP_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* rap_last_error(void) { return g_error.c_str(); }
const char* rap_last_error_key(void) { return g_error_key.c_str(); }
void rap_string_free(char* s) { std::free(s); }

rap_status rap_config_new(rap_config** out) {
  RAP_REQUIRE(out, "rap_config_new: null output");
  return guarded([&] { *out = new rap_config{}; });
}

rap_status rap_config_load(const char* path, rap_config** out) {
  RAP_REQUIRE(path && out, "rap_config_load: null argument");
  return guarded([&] { *out = new rap_config{rap::RunConfig::load(path)}; });
}

rap_status rap_config_parse(const char* text, rap_config** out) {
  RAP_REQUIRE(text && out, "rap_config_parse: null argument");
  return guarded([&] { *out = new rap_config{rap::RunConfig::parse(text)}; });
}

rap_status rap_config_clone(const rap_config* config, rap_config** out) {
  RAP_REQUIRE(config && out, "rap_config_clone: null argument");
  return guarded([&] { *out = new rap_config{config->config}; });
}

rap_status rap_config_set(rap_config* config, const char* key, const char* value) {
  RAP_REQUIRE(config && key && value, "rap_config_set: null argument");
  return guarded([&] {
    const auto [section, name] = split_key(key);
    config->config.set(section, name, value);
  });
}

rap_status rap_config_get(const rap_config* config, const char* key, char** value) {
  RAP_REQUIRE(config && key && value, "rap_config_get: null argument");
  return guarded([&] {
    const auto [section, name] = split_key(key);
    *value = dup_string(config->config.get(section, name));
  });
}

rap_status rap_config_copy_section(rap_config* dst, const rap_config* src, const char* section) {
  RAP_REQUIRE(dst && src && section, "rap_config_copy_section: null argument");
  return guarded([&] {
    const std::string want(section);
    if (want == "data") {
      dst->config.data = src->config.data;
    } else if (want == "backbone") {
      dst->config.backbone = src->config.backbone;
    } else if (want == "policy") {
      dst->config.policy = src->config.policy;
    } else if (want == "train") {
      dst->config.train = src->config.train;
    } else if (want == "eval") {
      dst->config.eval = src->config.eval;
    } else {
      throw rap::ConfigError("config: unknown section '[" + want + "]'", want);
    }
  });
}

rap_status rap_config_echo(const rap_config* config, char** text) {
  RAP_REQUIRE(config && text, "rap_config_echo: null argument");
  return guarded([&] { *text = dup_string(config->config.echo()); });
}

rap_status rap_config_validate(const rap_config* config) {
  RAP_REQUIRE(config, "rap_config_validate: null config");
  return guarded([&] { config->config.validate(); });
}

void rap_config_free(rap_config* config) { delete config; }

rap_status rap_dataset_load(const rap_config* config, rap_dataset** out) {
  RAP_REQUIRE(config && out, "rap_dataset_load: null argument");
  return guarded([&] { *out = new rap_dataset{rap::load_dataset(config->config.data)}; });
}

rap_status rap_dataset_info_get(const rap_dataset* dataset, rap_dataset_info* info) {
  RAP_REQUIRE(dataset && info, "rap_dataset_info_get: null argument");
  return guarded([&] {
    const auto& d = dataset->data;
    info->count = d.count();
    info->hw = d.hw;
    info->num_classes = d.num_classes;
    info->train_classes = static_cast<int32_t>(d.classes_in(rap::Split::kTrain).size());
    info->val_classes = static_cast<int32_t>(d.classes_in(rap::Split::kVal).size());
    info->test_classes = static_cast<int32_t>(d.classes_in(rap::Split::kTest).size());
    info->train_images = d.images_in(rap::Split::kTrain).size();
    info->val_images = d.images_in(rap::Split::kVal).size();
    info->test_images = d.images_in(rap::Split::kTest).size();
  });
}

rap_status rap_dataset_save_manifest(const rap_dataset* dataset, const char* dir) {
  RAP_REQUIRE(dataset && dir, "rap_dataset_save_manifest: null argument");
  return guarded([&] { rap::save_manifest(dataset->data, dir); });
}

rap_status rap_dataset_save_cifar(const rap_dataset* dataset, const char* path) {
  RAP_REQUIRE(dataset && path, "rap_dataset_save_cifar: null argument");
  return guarded([&] { rap::write_cifar_binary(dataset->data, path); });
}

void rap_dataset_free(rap_dataset* dataset) { delete dataset; }

rap_status rap_train(const rap_config* config, const rap_dataset* dataset, const char* out_dir, rap_line_fn on_metric,
                     void* user, rap_train_summary* summary) {
  RAP_REQUIRE(config && dataset, "rap_train: null argument");
  return guarded([&] {
    rap::TrainHooks hooks;
    if (out_dir) hooks.out_dir = out_dir;
    if (on_metric) {
      hooks.on_record = [&](const rap::MetricRecord& r) { on_metric(r.to_json().c_str(), user); };
    }
    const auto result = rap::train(config->config, dataset->data, hooks);
    if (summary) {
      summary->iterations = result.metrics.empty() ? 0 : result.metrics.back().iteration;
      summary->best_iteration = result.best_iteration;
      summary->best_val_accuracy = result.best_val_accuracy;
    }
  });
}

rap_status rap_model_new(const rap_config* config, uint64_t seed, rap_model** out) {
  RAP_REQUIRE(config && out, "rap_model_new: null argument");
  return guarded([&] {
    rap::RunConfig cfg = config->config;
    cfg.train.seed = seed;
    cfg.validate();
    auto model = std::make_unique<rap::RapModel<float>>(cfg.model_config(), seed);
    *out = new rap_model{cfg, std::move(model)};
  });
}

rap_status rap_model_load(const char* checkpoint_path, rap_model** out) {
  RAP_REQUIRE(checkpoint_path && out, "rap_model_load: null argument");
  return guarded([&] {
    const auto ckpt = rap::Checkpoint::load(checkpoint_path);
    rap::RunConfig cfg;
    auto model = rap::model_from_checkpoint(ckpt, &cfg);
    *out = new rap_model{cfg, std::move(model)};
  });
}

rap_status rap_model_save(const rap_model* model, const char* checkpoint_path) {
  RAP_REQUIRE(model && checkpoint_path, "rap_model_save: null argument");
  return guarded([&] {
    rap::make_checkpoint(*model->model, nullptr, "", model->config).save(checkpoint_path);
  });
}

rap_status rap_model_config(const rap_model* model, rap_config** out) {
  RAP_REQUIRE(model && out, "rap_model_config: null argument");
  return guarded([&] { *out = new rap_config{model->config}; });
}

void rap_model_free(rap_model* model) { delete model; }

rap_status rap_evaluate(rap_model* model, const rap_dataset* dataset, const rap_config* config, int identity,
                        rap_eval_summary* summary, char** report) {
  RAP_REQUIRE(model && dataset, "rap_evaluate: null argument");
  return guarded([&] {
    rap::RunConfig cfg = model->config;
    if (config) cfg.eval = config->config.eval;
    cfg.validate();
    const auto r = rap::evaluate(*model->model, dataset->data, cfg,
                                 identity ? rap::ActionMode::kIdentity : rap::ActionMode::kDeterministic);
    if (summary) {
      summary->count = r.count;
      summary->accuracy = r.mean;
      summary->half_width = r.half_width;
      summary->identity_accuracy = r.curve.empty() ? r.mean : r.curve.front();
    }
    if (report) *report = dup_string(r.to_json());
  });
}

rap_status rap_ablate(const rap_config* base, const rap_dataset* dataset, const rap_ablation_cell* cells,
                      size_t cell_count, int seeds, rap_line_fn on_row, void* user, char** table) {
  RAP_REQUIRE(base && dataset && (cells || cell_count == 0), "rap_ablate: null argument");
  RAP_REQUIRE(seeds >= 1, "rap_ablate: seeds must be >= 1");
  return guarded([&] {
    std::vector<rap::AblationCell> grid;
    for (size_t i = 0; i < cell_count; ++i) grid.push_back({cells[i].steps, cells[i].alpha, cells[i].attention != 0});
    rap::AblationOptions o;
    o.seeds = seeds;
    if (on_row) o.on_row = [&](const rap::AblationRow& r) { on_row(r.to_json().c_str(), user); };
    const auto rows = rap::ablate(base->config, dataset->data, grid, o);
    if (table) {
      std::ostringstream os;
      rap::write_ablation_table(os, rows);
      *table = dup_string(os.str());
    }
  });
}

rap_status rap_inspect_attention(rap_model* model, const rap_dataset* dataset, const char* split, size_t images,
                                 const char* dump_path, rap_attention_summary* summary) {
  RAP_REQUIRE(model && dataset && split, "rap_inspect_attention: null argument");
  return guarded([&] {
    const auto& data = dataset->data;
    const auto pool = data.images_in(rap::parse_split(split));
    if (pool.empty()) throw rap::DataError(std::string("inspect-attention: split '") + split + "' has no images");
    // Evenly spaced picks keep every class represented.
    const std::size_t n = std::min(images, pool.size());
    std::vector<std::size_t> picked;
    for (std::size_t i = 0; i < n; ++i) picked.push_back(pool[i * pool.size() / n]);
    const int steps = model->config.train.steps;
    const auto dump = rap::dump_attention(*model->model, data, picked, steps, model->config.eval.batch_size);
    if (dump_path) {
      std::ofstream out(dump_path);
      if (!out) throw rap::IoError(std::string("inspect-attention: cannot write ") + dump_path);
      for (std::size_t i = 0; i < dump.images.size(); ++i) {
        out << "image=" << dump.images[i] << " label=" << data.labels[dump.images[i]] << '\n';
        rap::write_attention_steps(out, dump.maps[i], dump.h, dump.w);
      }
      if (!out) throw rap::IoError(std::string("inspect-attention: failed writing ") + dump_path);
    }
    if (summary) {
      summary->steps = steps;
      summary->h = dump.h;
      summary->w = dump.w;
      summary->images = dump.images.size();
      summary->hit_first = dump.hit_per_step.empty() ? dump.uniform_hit : dump.hit_per_step.front();
      summary->hit_last = dump.hit_per_step.empty() ? dump.uniform_hit : dump.hit_per_step.back();
      summary->uniform_hit = dump.uniform_hit;
    }
  });
}

}  // extern "C"
