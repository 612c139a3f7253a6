#include "rap/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "rap/binio.hpp"

namespace rap {
namespace fs = std::filesystem;

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kNone: break;
  }
  return "none";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)", "split");
}

std::vector<int> Dataset::classes_in(Split split) const {
  std::vector<int> out;
  if (!class_split.empty()) {
    for (int c = 0; c < num_classes; ++c) {
      if (class_split[static_cast<std::size_t>(c)] == split) out.push_back(c);
    }
    return out;
  }
  std::vector<bool> seen(static_cast<std::size_t>(num_classes), false);
  for (std::size_t i = 0; i < count(); ++i) {
    if (image_split.empty() || image_split[i] == split) seen[static_cast<std::size_t>(labels[i])] = true;
  }
  for (int c = 0; c < num_classes; ++c) {
    if (seen[static_cast<std::size_t>(c)]) out.push_back(c);
  }
  return out;
}

std::vector<std::size_t> Dataset::images_of_class(int label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < count(); ++i) {
    if (labels[i] == label) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Dataset::images_in(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < count(); ++i) {
    const Split s = !image_split.empty() ? image_split[i]
                    : !class_split.empty() ? class_split[static_cast<std::size_t>(labels[i])]
                                           : Split::kNone;
    if (s == split) out.push_back(i);
  }
  return out;
}

void Dataset::validate() const {
  if (images.size() != count() * image_size()) {
    throw DataError("dataset: " + std::to_string(images.size()) + " pixel values for " + std::to_string(count()) +
                    " images of " + std::to_string(hw) + "x" + std::to_string(hw) + "x3");
  }
  for (std::size_t i = 0; i < count(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw DataError("dataset: image " + std::to_string(i) + " has label " + std::to_string(labels[i]) +
                      " outside 0.." + std::to_string(num_classes - 1));
    }
  }
  if (!class_split.empty() && class_split.size() != static_cast<std::size_t>(num_classes)) {
    throw DataError("dataset: class split covers " + std::to_string(class_split.size()) + " of " +
                    std::to_string(num_classes) + " classes");
  }
  if (!image_split.empty() && image_split.size() != count()) {
    throw DataError("dataset: image split covers " + std::to_string(image_split.size()) + " of " +
                    std::to_string(count()) + " images");
  }
  if (!patches.empty() && patches.size() != count()) throw DataError("dataset: patch list length mismatch");
}

std::vector<std::size_t> Episode::all_indices() const {
  std::vector<std::size_t> out(support);
  out.insert(out.end(), queries.begin(), queries.end());
  return out;
}

Episode sample_episode(const Dataset& data, Split split, int way, int shot, int query, Rng& rng) {
  if (way < 1 || shot < 1 || query < 1) {
    throw DataError("sample_episode: way, shot and query must be positive");
  }
  const auto need = static_cast<std::size_t>(shot + query);
  std::vector<int> eligible;
  std::vector<std::vector<std::size_t>> pools;
  const auto split_images = data.images_in(split);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(data.num_classes));
  for (auto i : split_images) by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
  for (int c = 0; c < data.num_classes; ++c) {
    if (by_class[static_cast<std::size_t>(c)].size() >= need) eligible.push_back(c);
  }
  if (eligible.size() < static_cast<std::size_t>(way)) {
    throw DataError("sample_episode: split '" + std::string(split_name(split)) + "' has " +
                    std::to_string(eligible.size()) + " classes with at least " + std::to_string(need) +
                    " images; a " + std::to_string(way) + "-way episode needs " +
                    std::to_string(static_cast<std::size_t>(way) - eligible.size()) + " more");
  }
  // Partial Fisher-Yates: first `way` entries are a uniform draw without replacement.
  for (std::size_t i = 0; i < static_cast<std::size_t>(way); ++i) {
    const auto j = i + uniform_index(rng, eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
  }
  Episode ep;
  ep.way = way;
  ep.shot = shot;
  ep.query = query;
  ep.class_ids.assign(eligible.begin(), eligible.begin() + way);
  std::vector<std::vector<std::size_t>> picked(static_cast<std::size_t>(way));
  for (int n = 0; n < way; ++n) {
    auto pool = by_class[static_cast<std::size_t>(ep.class_ids[static_cast<std::size_t>(n)])];
    for (std::size_t i = 0; i < need; ++i) {
      const auto j = i + uniform_index(rng, pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    picked[static_cast<std::size_t>(n)].assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(need));
  }
  for (int n = 0; n < way; ++n) {
    const auto& p = picked[static_cast<std::size_t>(n)];
    for (int k = 0; k < shot; ++k) {
      ep.support.push_back(p[static_cast<std::size_t>(k)]);
      ep.support_labels.push_back(n);
    }
  }
  for (int n = 0; n < way; ++n) {
    const auto& p = picked[static_cast<std::size_t>(n)];
    for (int q = 0; q < query; ++q) {
      ep.queries.push_back(p[static_cast<std::size_t>(shot + q)]);
      ep.query_labels.push_back(n);
    }
  }
  return ep;
}

template <typename T>
Tensor<T> gather_images(const Dataset& data, std::span<const std::size_t> indices, Rng* augment_rng,
                        const AugmentOptions& augment) {
  const auto hw = static_cast<std::int64_t>(data.hw);
  const auto B = static_cast<std::int64_t>(indices.size());
  Tensor<T> out(Shape{B, hw, hw, 3});
  auto o = out.data();
  const std::size_t sz = data.image_size();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= data.count()) throw DataError("gather_images: index " + std::to_string(indices[b]) + " out of range");
    auto src = data.image(indices[b]);
    T* dst = o.data() + b * sz;
    if (!augment_rng) {
      for (std::size_t i = 0; i < sz; ++i) dst[i] = static_cast<T>(src[i]);
      continue;
    }
    const int pad = augment.pad;
    const auto dy = static_cast<int>(uniform_index(*augment_rng, static_cast<std::size_t>(2 * pad + 1))) - pad;
    const auto dx = static_cast<int>(uniform_index(*augment_rng, static_cast<std::size_t>(2 * pad + 1))) - pad;
    const bool flip = augment.flip && uniform01(*augment_rng) < 0.5;
    for (int y = 0; y < data.hw; ++y) {
      for (int x = 0; x < data.hw; ++x) {
        const int sy = y + dy;
        const int sx0 = flip ? data.hw - 1 - x : x;
        const int sx = sx0 + dx;
        for (int c = 0; c < 3; ++c) {
          const auto di = static_cast<std::size_t>((y * data.hw + x) * 3 + c);
          if (sy < 0 || sy >= data.hw || sx < 0 || sx >= data.hw) {
            dst[di] = T(0);
          } else {
            dst[di] = static_cast<T>(src[static_cast<std::size_t>((sy * data.hw + sx) * 3 + c)]);
          }
        }
      }
    }
  }
  return out;
}

template Tensor<float> gather_images(const Dataset&, std::span<const std::size_t>, Rng*, const AugmentOptions&);
template Tensor<double> gather_images(const Dataset&, std::span<const std::size_t>, Rng*, const AugmentOptions&);

namespace {

std::vector<std::size_t> bucket_sizes(std::size_t n, std::span<const double> ratios) {
  if (ratios.size() < 2 || ratios.size() > 3) {
    throw ConfigError("split ratios need 2 (train:val) or 3 (train:val:test) entries", "ratios");
  }
  for (double r : ratios) {
    if (!(r > 0.0)) throw ConfigError("split ratios must be positive", "ratios");
  }
  if (n < ratios.size()) {
    throw ConfigError("cannot split " + std::to_string(n) + " items into " + std::to_string(ratios.size()) +
                          " non-empty buckets",
                      "ratios");
  }
  const double total = std::accumulate(ratios.begin(), ratios.end(), 0.0);
  std::vector<std::size_t> sizes(ratios.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    const double exact = static_cast<double>(n) * ratios[i] / total;
    sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    assigned += sizes[i];
    remainders.emplace_back(exact - static_cast<double>(sizes[i]), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[remainders[k % remainders.size()].second];
  for (auto& s : sizes) {
    if (s == 0) {
      auto big = std::max_element(sizes.begin(), sizes.end());
      --*big;
      s = 1;
    }
  }
  return sizes;
}

std::vector<Split> assign_buckets(std::size_t n, std::span<const double> ratios, Rng& rng) {
  const auto sizes = bucket_sizes(n, ratios);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Split> out(n, Split::kNone);
  std::size_t pos = 0;
  for (std::size_t b = 0; b < sizes.size(); ++b) {
    for (std::size_t k = 0; k < sizes[b]; ++k) out[order[pos++]] = static_cast<Split>(b);
  }
  return out;
}

std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int i = static_cast<int>(std::floor(hh)) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = 0, g = 0, b = 0;
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

constexpr std::array<std::array<int, 2>, 8> kPatternFreqs{{{1, 0}, {0, 1}, {1, 1}, {1, -1}, {2, 0}, {0, 2}, {2, 1}, {1, 2}}};

std::vector<float> texture(const std::array<float, 3>& color, std::array<int, 2> freq, int patch) {
  std::vector<float> out(static_cast<std::size_t>(patch * patch * 3));
  for (int i = 0; i < patch; ++i) {
    for (int j = 0; j < patch; ++j) {
      const double p = 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * (freq[0] * i + freq[1] * j) / patch);
      for (int c = 0; c < 3; ++c) {
        const double col = color[static_cast<std::size_t>(c)];
        out[static_cast<std::size_t>((i * patch + j) * 3 + c)] =
            static_cast<float>(0.1 + 0.8 * (p * col + (1.0 - p) * (1.0 - col)));
      }
    }
  }
  return out;
}

void paste(std::vector<float>& img, int hw, const std::vector<float>& tex, int patch, int row, int col,
           double noise, Rng& rng) {
  std::normal_distribution<double> dist(0.0, noise);
  for (int i = 0; i < patch; ++i) {
    for (int j = 0; j < patch; ++j) {
      for (int c = 0; c < 3; ++c) {
        double v = tex[static_cast<std::size_t>((i * patch + j) * 3 + c)];
        if (noise > 0) v += dist(rng);
        img[static_cast<std::size_t>(((row + i) * hw + col + j) * 3 + c)] =
            static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
}

}  // namespace

std::vector<Split> split_classes(int num_classes, std::span<const double> ratios, Rng& rng) {
  if (num_classes < 1) throw ConfigError("split_classes: no classes to split", "classes");
  return assign_buckets(static_cast<std::size_t>(num_classes), ratios, rng);
}

std::vector<Split> split_images(std::size_t count, std::span<const double> ratios, Rng& rng) {
  return assign_buckets(count, ratios, rng);
}

std::vector<float> patchcue_template(int label, int num_classes, int patch) {
  const double hue = static_cast<double>(label) / static_cast<double>(std::max(num_classes, 1));
  const auto color = hsv_to_rgb(hue, 0.9, 0.95);
  return texture(color, kPatternFreqs[static_cast<std::size_t>((label * 3) % 8)], patch);
}

Dataset generate_patchcue(int num_classes, int images_per_class, int hw, Rng& rng, const PatchCueOptions& options,
                          std::uint64_t split_seed) {
  if (options.patch > hw) {
    throw DataError("generate_patchcue: patch " + std::to_string(options.patch) + " larger than image " +
                    std::to_string(hw));
  }
  if (num_classes < 3 || images_per_class < 1) {
    throw DataError("generate_patchcue: need at least 3 classes and 1 image per class");
  }
  Dataset d;
  d.hw = hw;
  d.num_classes = num_classes;
  const auto n = static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(images_per_class);
  d.images.resize(n * d.image_size());
  d.labels.resize(n);
  d.patches.resize(n);
  std::vector<std::vector<float>> templates;
  for (int c = 0; c < num_classes; ++c) templates.push_back(patchcue_template(c, num_classes, options.patch));

  std::uniform_real_distribution<double> freq(-2.0, 2.0), phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> iid(-options.noise, options.noise);
  std::vector<float> img(d.image_size());
  std::size_t idx = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (int k = 0; k < images_per_class; ++k, ++idx) {
      std::array<std::array<double, 4>, 9> waves{};
      for (auto& w : waves) w = {freq(rng), freq(rng), phase(rng), 0.0};
      for (int y = 0; y < hw; ++y) {
        for (int x = 0; x < hw; ++x) {
          for (int ch = 0; ch < 3; ++ch) {
            double v = 0.5;
            for (int q = 0; q < 3; ++q) {
              const auto& w = waves[static_cast<std::size_t>(ch * 3 + q)];
              v += options.low_freq * std::sin(2.0 * std::numbers::pi * (w[0] * y + w[1] * x) / hw + w[2]);
            }
            v += iid(rng);
            img[static_cast<std::size_t>((y * hw + x) * 3 + ch)] = static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
        }
      }
      for (int q = 0; q < options.distractors; ++q) {
        const auto color = hsv_to_rgb(uniform01(rng), 0.9, 0.95);
        const auto f = kPatternFreqs[uniform_index(rng, kPatternFreqs.size())];
        const auto tex = texture(color, f, options.patch);
        const int r = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(hw - options.patch + 1)));
        const int cc = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(hw - options.patch + 1)));
        paste(img, hw, tex, options.patch, r, cc, options.patch_noise, rng);
      }
      const int row = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(hw - options.patch + 1)));
      const int col = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(hw - options.patch + 1)));
      paste(img, hw, templates[static_cast<std::size_t>(c)], options.patch, row, col, options.patch_noise, rng);
      std::copy(img.begin(), img.end(), d.images.begin() + static_cast<std::ptrdiff_t>(idx * d.image_size()));
      d.labels[idx] = c;
      d.patches[idx] = PatchBox{row, col, options.patch};
    }
  }
  Rng split_rng(split_seed);
  d.class_split = split_classes(num_classes, options.ratios, split_rng);
  auto num = [](double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  };
  d.provenance = {{"generator", "patchcue"},
                  {"generator.images_per_class", std::to_string(images_per_class)},
                  {"generator.patch", std::to_string(options.patch)},
                  {"generator.noise", num(options.noise)},
                  {"generator.low_freq", num(options.low_freq)},
                  {"generator.patch_noise", num(options.patch_noise)},
                  {"generator.distractors", std::to_string(options.distractors)},
                  {"generator.ratios", num(options.ratios[0]) + ":" + num(options.ratios[1]) + ":" + num(options.ratios[2])},
                  {"split_seed", std::to_string(split_seed)}};
  return d;
}

Dataset load_cifar_binary(const fs::path& path, int num_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open CIFAR file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % kCifarRecordBytes != 0) {
    const auto full = bytes.size() / kCifarRecordBytes;
    throw DataError("CIFAR file " + path.string() + " is truncated: record " + std::to_string(full) +
                    " starts at byte offset " + std::to_string(full * kCifarRecordBytes) + " but only " +
                    std::to_string(bytes.size() - full * kCifarRecordBytes) + " bytes remain");
  }
  Dataset d;
  d.hw = 32;
  d.num_classes = num_classes;
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  d.labels.resize(n);
  d.images.resize(n * d.image_size());
  constexpr std::size_t plane = 32 * 32;
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] >= num_classes) {
      throw DataError("CIFAR file " + path.string() + ": label " + std::to_string(rec[0]) + " at byte offset " +
                      std::to_string(r * kCifarRecordBytes) + " exceeds class count " + std::to_string(num_classes));
    }
    d.labels[r] = rec[0];
    float* dst = d.images.data() + r * d.image_size();
    for (std::size_t p = 0; p < plane; ++p) {
      for (std::size_t c = 0; c < 3; ++c) dst[p * 3 + c] = static_cast<float>(rec[1 + c * plane + p]) / 255.0f;
    }
  }
  d.provenance = {{"source", "cifar-binary"}, {"path", path.string()}};
  return d;
}

void write_cifar_binary(const Dataset& data, const fs::path& path) {
  if (data.hw != 32) throw DataError("write_cifar_binary: CIFAR records are 32x32, dataset is " + std::to_string(data.hw));
  if (data.num_classes > 256) throw DataError("write_cifar_binary: labels must fit in one byte");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write CIFAR file " + path.string());
  constexpr std::size_t plane = 32 * 32;
  std::vector<unsigned char> rec(kCifarRecordBytes);
  for (std::size_t r = 0; r < data.count(); ++r) {
    rec[0] = static_cast<unsigned char>(data.labels[r]);
    auto img = data.image(r);
    for (std::size_t p = 0; p < plane; ++p) {
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(img[p * 3 + c], 0.0f, 1.0f);
        rec[1 + c * plane + p] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
    out.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
  }
  if (!out) throw IoError("failed writing CIFAR file " + path.string());
}

Dataset concat_datasets(const std::vector<Dataset>& parts) {
  Dataset d;
  if (parts.empty()) return d;
  d.hw = parts.front().hw;
  for (const auto& p : parts) {
    if (p.hw != d.hw) throw DataError("concat_datasets: image sizes differ");
    d.num_classes = std::max(d.num_classes, p.num_classes);
    d.images.insert(d.images.end(), p.images.begin(), p.images.end());
    d.labels.insert(d.labels.end(), p.labels.begin(), p.labels.end());
  }
  // Per-image splits survive only when every part carries one.
  if (std::all_of(parts.begin(), parts.end(), [](const Dataset& p) { return p.image_split.size() == p.count(); })) {
    for (const auto& p : parts) d.image_split.insert(d.image_split.end(), p.image_split.begin(), p.image_split.end());
  }
  d.provenance = parts.front().provenance;
  return d;
}

namespace {

std::string join_classes(const Dataset& d, Split s) {
  std::string out;
  for (int c : d.classes_in(s)) {
    if (!out.empty()) out += ',';
    out += std::to_string(c);
  }
  return out;
}

}  // namespace

void save_manifest(const Dataset& data, const fs::path& dir) {
  data.validate();
  fs::create_directories(dir);
  {
    std::ofstream img(dir / "images.f32", std::ios::binary);
    if (!img) throw IoError("cannot write " + (dir / "images.f32").string());
    for (float v : data.images) binio::put_f32(img, v);
    std::ofstream lab(dir / "labels.u16", std::ios::binary);
    for (int l : data.labels) {
      const unsigned char b[2] = {static_cast<unsigned char>(l), static_cast<unsigned char>(l >> 8)};
      lab.write(reinterpret_cast<const char*>(b), 2);
    }
    if (!data.patches.empty()) {
      std::ofstream pat(dir / "patches.i32", std::ios::binary);
      for (const auto& p : data.patches) {
        binio::put_u32(pat, static_cast<std::uint32_t>(p.row));
        binio::put_u32(pat, static_cast<std::uint32_t>(p.col));
        binio::put_u32(pat, static_cast<std::uint32_t>(p.size));
      }
    }
    if (!data.image_split.empty()) {
      std::ofstream sp(dir / "image_split.u8", std::ios::binary);
      for (auto s : data.image_split) sp.put(static_cast<char>(s));
    }
  }
  std::ofstream m(dir / "manifest.txt");
  if (!m) throw IoError("cannot write " + (dir / "manifest.txt").string());
  m << "format=rap-dataset\n";
  m << "version=1\n";
  m << "count=" << data.count() << '\n';
  m << "hw=" << data.hw << '\n';
  m << "classes=" << data.num_classes << '\n';
  m << "images=images.f32\n";
  m << "labels=labels.u16\n";
  if (!data.patches.empty()) m << "patches=patches.i32\n";
  if (!data.image_split.empty()) m << "image_split=image_split.u8\n";
  if (!data.class_split.empty()) {
    m << "split.train=" << join_classes(data, Split::kTrain) << '\n';
    m << "split.val=" << join_classes(data, Split::kVal) << '\n';
    m << "split.test=" << join_classes(data, Split::kTest) << '\n';
  }
  for (const auto& [k, v] : data.provenance) m << k << '=' << v << '\n';
}

Dataset load_manifest(const fs::path& dir) {
  std::ifstream m(dir / "manifest.txt");
  if (!m) throw IoError("cannot open dataset manifest " + (dir / "manifest.txt").string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(m, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("manifest: malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw DataError("manifest: missing key '" + k + "'");
    return it->second;
  };
  if (need("format") != "rap-dataset") throw DataError("manifest: unsupported format '" + kv["format"] + "'");
  Dataset d;
  const auto count = static_cast<std::size_t>(std::stoull(need("count")));
  d.hw = std::stoi(need("hw"));
  d.num_classes = std::stoi(need("classes"));
  {
    std::ifstream img(dir / need("images"), std::ios::binary);
    if (!img) throw IoError("cannot open " + (dir / need("images")).string());
    d.images.resize(count * d.image_size());
    for (auto& v : d.images) v = binio::get_f32(img, "manifest images");
    std::ifstream lab(dir / need("labels"), std::ios::binary);
    if (!lab) throw IoError("cannot open " + (dir / need("labels")).string());
    d.labels.resize(count);
    for (auto& l : d.labels) {
      unsigned char b[2];
      binio::read_exact(lab, b, 2, "manifest labels");
      l = b[0] | (b[1] << 8);
    }
  }
  if (kv.count("patches")) {
    std::ifstream pat(dir / kv["patches"], std::ios::binary);
    d.patches.resize(count);
    for (auto& p : d.patches) {
      p.row = static_cast<int>(binio::get_u32(pat, "manifest patches"));
      p.col = static_cast<int>(binio::get_u32(pat, "manifest patches"));
      p.size = static_cast<int>(binio::get_u32(pat, "manifest patches"));
    }
  }
  if (kv.count("image_split")) {
    std::ifstream sp(dir / kv["image_split"], std::ios::binary);
    d.image_split.resize(count);
    for (auto& s : d.image_split) {
      char c = 0;
      binio::read_exact(sp, &c, 1, "manifest image split");
      s = static_cast<Split>(static_cast<unsigned char>(c));
    }
  }
  if (kv.count("split.train")) {
    d.class_split.assign(static_cast<std::size_t>(d.num_classes), Split::kNone);
    for (auto s : {Split::kTrain, Split::kVal, Split::kTest}) {
      std::istringstream is(kv["split." + std::string(split_name(s))]);
      std::string tok;
      while (std::getline(is, tok, ',')) {
        if (tok.empty()) continue;
        const int c = std::stoi(tok);
        if (c < 0 || c >= d.num_classes) throw DataError("manifest: split lists unknown class " + tok);
        d.class_split[static_cast<std::size_t>(c)] = s;
      }
    }
  }
  for (const auto& [k, v] : kv) {
    if (k.rfind("generator", 0) == 0 || k == "split_seed" || k == "source") d.provenance[k] = v;
  }
  d.validate();
  return d;
}

}  // namespace rap
