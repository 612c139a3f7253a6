// Command-line front end. Talks to the library through the C API only.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rap/rap.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;

struct Failure {
  int code;
};

int exit_code(rap_status s) {
  switch (s) {
    case RAP_OK: return kExitOk;
    case RAP_ERR_DIVERGED: return kExitDiverged;
    case RAP_ERR_ARGUMENT:
    case RAP_ERR_CONFIG:
    case RAP_ERR_IO:
    case RAP_ERR_DATA: return kExitUsage;
    default: return kExitInternal;
  }
}

void check(rap_status s) {
  if (s == RAP_OK) return;
  std::cerr << "rap: " << rap_status_name(s) << ": " << rap_last_error() << '\n';
  throw Failure{exit_code(s)};
}

struct ConfigDeleter {
  void operator()(rap_config* c) const { rap_config_free(c); }
};
struct DatasetDeleter {
  void operator()(rap_dataset* d) const { rap_dataset_free(d); }
};
struct ModelDeleter {
  void operator()(rap_model* m) const { rap_model_free(m); }
};
using ConfigPtr = std::unique_ptr<rap_config, ConfigDeleter>;
using DatasetPtr = std::unique_ptr<rap_dataset, DatasetDeleter>;
using ModelPtr = std::unique_ptr<rap_model, ModelDeleter>;

std::string take(char* s) {
  std::string out = s ? s : "";
  rap_string_free(s);
  return out;
}

ConfigPtr load_config(const std::string& path) {
  rap_config* c = nullptr;
  if (path.empty()) {
    check(rap_config_new(&c));
  } else {
    check(rap_config_load(path.c_str(), &c));
  }
  return ConfigPtr(c);
}

void set(rap_config* c, const std::string& key, const std::string& value) { check(rap_config_set(c, key.c_str(), value.c_str())); }

void apply_sets(rap_config* c, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      std::cerr << "rap: --set expects section.key=value, got '" << s << "'\n";
      throw Failure{kExitUsage};
    }
    set(c, s.substr(0, eq), s.substr(eq + 1));
  }
}

DatasetPtr load_data(const rap_config* c) {
  rap_dataset* d = nullptr;
  check(rap_dataset_load(c, &d));
  return DatasetPtr(d);
}

ModelPtr load_model(const std::string& path) {
  rap_model* m = nullptr;
  check(rap_model_load(path.c_str(), &m));
  return ModelPtr(m);
}

// Checkpoint config, with [data] and [eval] replaced from --config when given.
ConfigPtr model_run_config(rap_model* model, const std::string& config_path) {
  rap_config* c = nullptr;
  check(rap_model_config(model, &c));
  ConfigPtr cfg(c);
  if (!config_path.empty()) {
    auto file = load_config(config_path);
    check(rap_config_copy_section(cfg.get(), file.get(), "data"));
    check(rap_config_copy_section(cfg.get(), file.get(), "eval"));
  }
  return cfg;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    std::cerr << "rap: cannot write " << path << '\n';
    throw Failure{kExitUsage};
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct TrainArgs {
  std::string config;
  std::string out = "run";
  long long seed = -1;
  std::vector<std::string> sets;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  auto cfg = load_config(a.config);
  apply_sets(cfg.get(), a.sets);
  if (a.seed >= 0) set(cfg.get(), "train.seed", std::to_string(a.seed));
  check(rap_config_validate(cfg.get()));
  auto data = load_data(cfg.get());
  auto print = [](const char* line, void* quiet) {
    if (!*static_cast<bool*>(quiet) && std::string(line).find("\"val_acc\":null") == std::string::npos) {
      std::cout << line << '\n' << std::flush;
    }
  };
  bool quiet = a.quiet;
  rap_train_summary s{};
  const rap_status st = rap_train(cfg.get(), data.get(), a.out.c_str(), print, &quiet, &s);
  if (st == RAP_ERR_DIVERGED) {
    std::cerr << "rap: training diverged: " << rap_last_error() << "\nrap: last good state saved to "
              << (std::filesystem::path(a.out) / "last_good.rapc").string() << '\n';
    return kExitDiverged;
  }
  check(st);
  std::cout << "best val accuracy " << s.best_val_accuracy << " at iteration " << s.best_iteration << "; wrote "
            << (std::filesystem::path(a.out) / "best.rapc").string() << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string config;
  std::string split;
  int episodes = 0;
  long long seed = -1;
  bool identity = false;
  std::string out;
  std::string curve;
  std::vector<std::string> sets;
};

// step,accuracy,half_width for t = 0..T.
std::string curve_csv(const std::string& report) {
  const auto j = nlohmann::json::parse(report);
  std::ostringstream os;
  os.precision(10);
  os << "step,accuracy,half_width\n";
  const auto& acc = j.at("curve");
  const auto& hw = j.at("curve_half_width");
  for (std::size_t t = 0; t < acc.size(); ++t) {
    os << t << ',' << acc[t].get<double>() << ',' << hw[t].get<double>() << '\n';
  }
  return os.str();
}

int cmd_eval(const EvalArgs& a) {
  auto model = load_model(a.checkpoint);
  auto cfg = model_run_config(model.get(), a.config);
  apply_sets(cfg.get(), a.sets);
  if (!a.split.empty()) set(cfg.get(), "eval.split", a.split);
  if (a.episodes > 0) set(cfg.get(), "eval.episodes", std::to_string(a.episodes));
  if (a.seed >= 0) set(cfg.get(), "eval.seed", std::to_string(a.seed));
  auto data = load_data(cfg.get());
  rap_eval_summary s{};
  char* report = nullptr;
  check(rap_evaluate(model.get(), data.get(), cfg.get(), a.identity ? 1 : 0, &s, &report));
  const std::string json = take(report);
  std::cout << json << '\n';
  if (!a.out.empty()) write_file(a.out, json + "\n");
  if (!a.curve.empty()) write_file(a.curve, curve_csv(json));
  return kExitOk;
}

struct AblateArgs {
  std::string config;
  std::string out = "ablation";
  std::string steps = "2,5";
  std::string alphas = "0.0001";
  bool baseline = false;
  int seeds = 5;
  std::vector<std::string> sets;
};

int cmd_ablate(const AblateArgs& a) {
  auto cfg = load_config(a.config);
  apply_sets(cfg.get(), a.sets);
  check(rap_config_validate(cfg.get()));
  std::vector<rap_ablation_cell> cells;
  for (const auto& t : split_list(a.steps)) {
    for (const auto& al : split_list(a.alphas)) {
      rap_ablation_cell c{};
      try {
        c.steps = std::stoi(t);
        c.alpha = std::stod(al);
      } catch (const std::exception&) {
        std::cerr << "rap: bad grid value '" << t << "' / '" << al << "'\n";
        return kExitUsage;
      }
      c.attention = 1;
      cells.push_back(c);
    }
  }
  if (a.baseline) cells.push_back(rap_ablation_cell{0, 0.0, 0});
  auto data = load_data(cfg.get());
  std::filesystem::create_directories(a.out);
  const auto rows_path = (std::filesystem::path(a.out) / "ablation.jsonl").string();
  std::ofstream rows(rows_path, std::ios::binary | std::ios::trunc);
  if (!rows) {
    std::cerr << "rap: cannot write " << rows_path << '\n';
    return kExitUsage;
  }
  auto on_row = [](const char* line, void* user) {
    auto& os = *static_cast<std::ofstream*>(user);
    os << line << '\n' << std::flush;
    std::cerr << line << '\n';
  };
  char* table = nullptr;
  check(rap_ablate(cfg.get(), data.get(), cells.data(), cells.size(), a.seeds, on_row, &rows, &table));
  const std::string text = take(table);
  write_file((std::filesystem::path(a.out) / "ablation.txt").string(), text);
  std::cout << text;
  return kExitOk;
}

struct SynthArgs {
  std::string config;
  std::string out;
  int num_classes = 0;
  int images_per_class = 0;
  int hw = 0;
  long long seed = -1;
  std::string cifar;
  std::vector<std::string> sets;
};

int cmd_make_synth(const SynthArgs& a) {
  auto cfg = load_config(a.config);
  apply_sets(cfg.get(), a.sets);
  set(cfg.get(), "data.source", "patchcue");
  if (a.num_classes > 0) set(cfg.get(), "data.num_classes", std::to_string(a.num_classes));
  if (a.images_per_class > 0) set(cfg.get(), "data.images_per_class", std::to_string(a.images_per_class));
  if (a.hw > 0) set(cfg.get(), "data.hw", std::to_string(a.hw));
  if (a.seed >= 0) set(cfg.get(), "data.seed", std::to_string(a.seed));
  check(rap_config_validate(cfg.get()));
  auto data = load_data(cfg.get());
  check(rap_dataset_save_manifest(data.get(), a.out.c_str()));
  if (!a.cifar.empty()) check(rap_dataset_save_cifar(data.get(), a.cifar.c_str()));
  rap_dataset_info info{};
  check(rap_dataset_info_get(data.get(), &info));
  std::cout << "wrote " << info.count << " images of " << info.num_classes << " classes (" << info.train_classes
            << " train / " << info.val_classes << " val / " << info.test_classes << " test) to " << a.out << '\n';
  return kExitOk;
}

struct InspectArgs {
  std::string checkpoint;
  std::string config;
  std::string split = "test";
  std::size_t images = 200;
  std::string out;
};

int cmd_inspect(const InspectArgs& a) {
  auto model = load_model(a.checkpoint);
  auto cfg = model_run_config(model.get(), a.config);
  auto data = load_data(cfg.get());
  rap_attention_summary s{};
  check(rap_inspect_attention(model.get(), data.get(), a.split.c_str(), a.images, a.out.empty() ? nullptr : a.out.c_str(), &s));
  std::cout << "{\"images\":" << s.images << ",\"steps\":" << s.steps << ",\"h\":" << s.h << ",\"w\":" << s.w
            << ",\"hit_first\":" << s.hit_first << ",\"hit_last\":" << s.hit_last << ",\"uniform_hit\":" << s.uniform_hit
            << "}\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reinforced attention policy: train, evaluate and inspect few-shot models", "rap"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(rap_version()));

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model and write metrics.jsonl and best.rapc");
  train->add_option("--config", ta.config, "Run configuration file")->required();
  train->add_option("--seed", ta.seed, "Override train.seed");
  train->add_option("--out", ta.out, "Output directory")->capture_default_str();
  train->add_option("--set", ta.sets, "Override a config value, section.key=value (repeatable)");
  train->add_flag("--quiet", ta.quiet, "Do not print validation records");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and print a JSON report");
  eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint file (.rapc)")->required();
  eval->add_option("--config", ea.config, "Take [data] and [eval] from this file instead of the checkpoint");
  eval->add_option("--split", ea.split, "Split to evaluate: train, val or test");
  eval->add_option("--episodes", ea.episodes, "Number of few-shot episodes");
  eval->add_option("--seed", ea.seed, "Episode sampling seed");
  eval->add_flag("--identity", ea.identity, "Force all-ones attention");
  eval->add_option("--out", ea.out, "Also write the report to this file");
  eval->add_option("--curve", ea.curve, "Write accuracy per attention step as CSV");
  eval->add_option("--set", ea.sets, "Override a config value, section.key=value (repeatable)");

  AblateArgs aa;
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate a grid over steps and alpha");
  ablate->add_option("--config", aa.config, "Base run configuration file")->required();
  ablate->add_option("--out", aa.out, "Output directory for ablation.jsonl and ablation.txt")->capture_default_str();
  ablate->add_option("--steps", aa.steps, "Comma-separated step counts")->capture_default_str();
  ablate->add_option("--alphas", aa.alphas, "Comma-separated reward coefficients")->capture_default_str();
  ablate->add_flag("--baseline", aa.baseline, "Add an attention-off row");
  ablate->add_option("--seeds", aa.seeds, "Seeds per cell")->capture_default_str()->check(CLI::PositiveNumber);
  ablate->add_option("--set", aa.sets, "Override a config value, section.key=value (repeatable)");

  SynthArgs sa;
  auto* synth = app.add_subcommand("make-synth", "Generate a patch-cue dataset manifest");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--config", sa.config, "Take [data] settings from this file");
  synth->add_option("--num-classes", sa.num_classes, "Number of classes");
  synth->add_option("--images-per-class", sa.images_per_class, "Images per class");
  synth->add_option("--hw", sa.hw, "Image height and width");
  synth->add_option("--seed", sa.seed, "Generator seed");
  synth->add_option("--cifar", sa.cifar, "Also write the images as a CIFAR binary file");
  synth->add_option("--set", sa.sets, "Override a config value, section.key=value (repeatable)");

  InspectArgs ia;
  auto* inspect = app.add_subcommand("inspect-attention", "Dump per-step attention maps and patch-hit scores");
  inspect->add_option("--checkpoint", ia.checkpoint, "Checkpoint file (.rapc)")->required();
  inspect->add_option("--config", ia.config, "Take [data] and [eval] from this file instead of the checkpoint");
  inspect->add_option("--split", ia.split, "Split to draw images from")->capture_default_str();
  inspect->add_option("--images", ia.images, "Number of images")->capture_default_str();
  inspect->add_option("--out", ia.out, "Attention matrix dump file");

  app.footer("Environment: RAP_THREADS caps evaluation worker threads.");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_eval(ea);
    if (*ablate) return cmd_ablate(aa);
    if (*synth) return cmd_make_synth(sa);
    if (*inspect) return cmd_inspect(ia);
  } catch (const Failure& f) {
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "rap: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}
