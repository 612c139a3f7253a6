#include "rap/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace rap {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config: invalid value '" + value + "' for " + key + " (expected " + expected + ")", key);
}

template <typename I>
I parse_int(const std::string& key, const std::string& value) {
  I out{};
  const auto* end = value.data() + value.size();
  auto [p, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || p != end) bad_value(key, value, "an integer");
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0;
  const auto* end = value.data() + value.size();
  auto [p, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || p != end) bad_value(key, value, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "on" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "off" || value == "0" || value == "no") return false;
  bad_value(key, value, "true or false");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : value) {
    if (c == ',' || c == ':') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::vector<double> parse_doubles(const std::string& key, const std::string& value) {
  std::vector<double> out;
  for (const auto& s : split_list(value)) out.push_back(parse_double(key, s));
  return out;
}

template <std::size_t N>
std::array<int, N> parse_ints(const std::string& key, const std::string& value) {
  const auto parts = split_list(value);
  if (parts.size() != N) bad_value(key, value, (std::to_string(N) + " comma-separated integers").c_str());
  std::array<int, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = parse_int<int>(key, parts[i]);
  return out;
}

template <typename C>
std::string join(const C& values, const char* sep = ",") {
  std::string out;
  for (const auto& v : values) {
    if (!out.empty()) out += sep;
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>) {
      out += fmt_double(v);
    } else {
      out += std::to_string(v);
    }
  }
  return out;
}

struct Entry {
  const char* section;
  const char* key;
  std::function<void(const std::string& full_key, const std::string&)> set;
  std::function<std::string()> get;
};

template <typename I>
Entry int_entry(const char* s, const char* k, I& field) {
  return {s, k, [&field](const std::string& fk, const std::string& v) { field = parse_int<I>(fk, v); },
          [&field] { return std::to_string(field); }};
}

Entry double_entry(const char* s, const char* k, double& field) {
  return {s, k, [&field](const std::string& fk, const std::string& v) { field = parse_double(fk, v); },
          [&field] { return fmt_double(field); }};
}

Entry bool_entry(const char* s, const char* k, bool& field) {
  return {s, k, [&field](const std::string& fk, const std::string& v) { field = parse_bool(fk, v); },
          [&field] { return std::string(field ? "true" : "false"); }};
}

Entry string_entry(const char* s, const char* k, std::string& field) {
  return {s, k, [&field](const std::string&, const std::string& v) { field = v; }, [&field] { return field; }};
}

// The registry is rebuilt per call and binds to `cfg`; const access goes
// through a const_cast but only ever calls getters.
std::vector<Entry> registry(RunConfig& cfg) {
  auto& d = cfg.data;
  auto& b = cfg.backbone;
  auto& p = cfg.policy;
  auto& t = cfg.train;
  auto& e = cfg.eval;
  return {
      string_entry("data", "source", d.source),
      {"data", "mode",
       [&d](const std::string& fk, const std::string& v) {
         if (v == "fewshot") d.mode = TaskMode::kFewShot;
         else if (v == "classification") d.mode = TaskMode::kClassification;
         else bad_value(fk, v, "fewshot or classification");
       },
       [&d] { return std::string(task_mode_name(d.mode)); }},
      string_entry("data", "path", d.path),
      string_entry("data", "test_path", d.test_path),
      int_entry("data", "num_classes", d.num_classes),
      int_entry("data", "images_per_class", d.images_per_class),
      int_entry("data", "hw", d.hw),
      int_entry("data", "seed", d.seed),
      int_entry("data", "split_seed", d.split_seed),
      int_entry("data", "patch", d.patchcue.patch),
      double_entry("data", "noise", d.patchcue.noise),
      double_entry("data", "low_freq", d.patchcue.low_freq),
      double_entry("data", "patch_noise", d.patchcue.patch_noise),
      int_entry("data", "distractors", d.patchcue.distractors),
      {"data", "ratios", [&d](const std::string& fk, const std::string& v) { d.ratios = parse_doubles(fk, v); },
       [&d] { return join(d.ratios, ":"); }},
      {"data", "image_ratios",
       [&d](const std::string& fk, const std::string& v) { d.image_ratios = parse_doubles(fk, v); },
       [&d] { return join(d.image_ratios, ":"); }},

      {"backbone", "channels",
       [&b](const std::string& fk, const std::string& v) { b.channels_per_block = parse_ints<4>(fk, v); },
       [&b] { return join(b.channels_per_block); }},
      int_entry("backbone", "insertion_block", b.insertion_block_index),
      int_entry("backbone", "embedding_dim", b.embedding_dim),

      {"policy", "conv_channels",
       [&p](const std::string& fk, const std::string& v) { p.conv_channels = parse_ints<3>(fk, v); },
       [&p] { return join(p.conv_channels); }},
      double_entry("policy", "sigma", p.sigma),
      bool_entry("policy", "deterministic_eval", p.deterministic_eval),
      bool_entry("policy", "clamp", p.clamp_actions),

      int_entry("train", "steps", t.steps),
      double_entry("train", "alpha", t.alpha),
      double_entry("train", "lr", t.adam.lr),
      double_entry("train", "beta1", t.adam.beta1),
      double_entry("train", "beta2", t.adam.beta2),
      double_entry("train", "eps", t.adam.eps),
      int_entry("train", "iterations", t.iterations),
      int_entry("train", "epochs", t.epochs),
      int_entry("train", "batch_size", t.batch_size),
      int_entry("train", "way", t.way),
      int_entry("train", "shot", t.shot),
      int_entry("train", "query", t.query),
      int_entry("train", "val_way", t.val_way),
      int_entry("train", "seed", t.seed),
      bool_entry("train", "baseline_subtraction", t.baseline_subtraction),
      double_entry("train", "baseline_momentum", t.baseline_momentum),
      int_entry("train", "eval_every", t.eval_every),
      int_entry("train", "val_episodes", t.val_episodes),
      bool_entry("train", "augment", t.augment),
      bool_entry("train", "val_in_train_loss", t.val_in_train_loss),
      {"train", "bn_update_step",
       [&t](const std::string& fk, const std::string& v) {
         if (v == "initial") t.bn_update_step = BnUpdateStep::kInitial;
         else if (v == "final") t.bn_update_step = BnUpdateStep::kFinal;
         else bad_value(fk, v, "initial or final");
       },
       [&t] { return std::string(t.bn_update_step == BnUpdateStep::kInitial ? "initial" : "final"); }},
      double_entry("train", "divergence_bound", t.divergence_bound),

      int_entry("eval", "way", e.way),
      int_entry("eval", "shot", e.shot),
      int_entry("eval", "query", e.query),
      int_entry("eval", "episodes", e.episodes),
      int_entry("eval", "seed", e.seed),
      {"eval", "split",
       [&e](const std::string& fk, const std::string& v) {
         const Split s = parse_split(v);
         if (s == Split::kNone) bad_value(fk, v, "train, val or test");
         e.split = s;
       },
       [&e] { return std::string(split_name(e.split)); }},
      int_entry("eval", "threads", e.threads),
      int_entry("eval", "batch_size", e.batch_size),
  };
}

const char* const kSections[] = {"data", "backbone", "policy", "train", "eval"};

}  // namespace

const char* task_mode_name(TaskMode mode) { return mode == TaskMode::kFewShot ? "fewshot" : "classification"; }

void RunConfig::set(const std::string& section, const std::string& key, const std::string& value) {
  const std::string full = section + "." + key;
  for (auto& e : registry(*this)) {
    if (section == e.section && key == e.key) {
      e.set(full, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + full + "'", full);
}

std::string RunConfig::get(const std::string& section, const std::string& key) const {
  for (auto& e : registry(const_cast<RunConfig&>(*this))) {
    if (section == e.section && key == e.key) return e.get();
  }
  throw ConfigError("config: unknown key '" + section + "." + key + "'", section + "." + key);
}

std::string RunConfig::echo() const {
  std::ostringstream os;
  const auto entries = registry(const_cast<RunConfig&>(*this));
  for (const char* section : kSections) {
    os << '[' << section << "]\n";
    for (const auto& e : entries) {
      if (std::string(e.section) == section) os << e.key << " = " << e.get() << '\n';
    }
  }
  return os.str();
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config: line " + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const char* s : kSections) known = known || section == s;
      if (!known) throw ConfigError("config: unknown section '[" + section + "]'", section);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(lineno) + ": expected key = value", trim(line));
    }
    const std::string key = trim(line.substr(0, eq));
    if (section.empty()) throw ConfigError("config: key '" + key + "' appears before any section", key);
    cfg.set(section, key, trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("config: override '" + assignment + "' is not section.key=value", assignment);
  }
  set(trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)), trim(assignment.substr(eq + 1)));
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.backbone = backbone;
  m.backbone.input_hw = data.hw;
  m.policy = policy;
  m.head_classes = data.mode == TaskMode::kClassification ? data.num_classes : 0;
  return m;
}

void RunConfig::validate() const {
  if (data.source != "patchcue" && data.source != "cifar" && data.source != "manifest") {
    throw ConfigError("config: data.source must be patchcue, cifar or manifest", "data.source");
  }
  if ((data.source == "cifar" || data.source == "manifest") && data.path.empty()) {
    throw ConfigError("config: data.path is required for source " + data.source, "data.path");
  }
  if (data.num_classes < 2) throw ConfigError("config: data.num_classes must be >= 2", "data.num_classes");
  if (data.images_per_class < 1) throw ConfigError("config: data.images_per_class must be >= 1", "data.images_per_class");
  if (data.hw < 16) throw ConfigError("config: data.hw must be >= 16", "data.hw");
  const auto m = model_config();
  m.backbone.validate();
  validate_policy_against_backbone(m.policy, m.backbone);
  train.adam.validate();
  if (train.steps < 0) throw ConfigError("config: train.steps must be >= 0", "train.steps");
  if (!(train.alpha >= 0.0)) throw ConfigError("config: train.alpha must be >= 0", "train.alpha");
  if (train.way < 2 || train.shot < 1 || train.query < 1) {
    throw ConfigError("config: train.way >= 2, train.shot >= 1 and train.query >= 1 required", "train.way");
  }
  if (train.iterations < 0) throw ConfigError("config: train.iterations must be >= 0", "train.iterations");
  if (train.eval_every < 1) throw ConfigError("config: train.eval_every must be >= 1", "train.eval_every");
  if (train.val_episodes < 1) throw ConfigError("config: train.val_episodes must be >= 1", "train.val_episodes");
  if (train.batch_size < 2) throw ConfigError("config: train.batch_size must be >= 2", "train.batch_size");
  if (eval.way < 2 || eval.shot < 1 || eval.query < 1 || eval.episodes < 1) {
    throw ConfigError("config: eval.way >= 2, eval.shot, eval.query and eval.episodes >= 1 required", "eval.way");
  }
  if (eval.threads < 0) throw ConfigError("config: eval.threads must be >= 0", "eval.threads");
}

}  // namespace rap
