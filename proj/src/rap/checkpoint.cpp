#include "rap/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "rap/binio.hpp"

namespace rap {
namespace {

void write_records(std::ostream& os, const NamedTensors<float>& tensors) {
  binio::put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    binio::put_bytes(os, t.name);
    binio::put_u32(os, static_cast<std::uint32_t>(t.tensor.rank()));
    for (auto e : t.tensor.shape()) binio::put_u64(os, static_cast<std::uint64_t>(e));
    for (float v : t.tensor.data()) binio::put_f32(os, v);
  }
}

NamedTensors<float> read_records(std::istream& is, const char* section) {
  const auto n = binio::get_u32(is, section);
  NamedTensors<float> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedTensor<float> t;
    t.name = binio::get_bytes(is, "tensor name", 4096);
    const auto rank = binio::get_u32(is, "tensor rank");
    if (rank > 8) throw IoError("checkpoint: tensor '" + t.name + "' has implausible rank " + std::to_string(rank));
    Shape shape(rank);
    std::uint64_t count = 1;
    for (auto& e : shape) {
      const auto v = binio::get_u64(is, "tensor extent");
      if (v > (1ULL << 32)) throw IoError("checkpoint: tensor '" + t.name + "' has implausible extent");
      e = static_cast<std::int64_t>(v);
      count *= v;
    }
    if (count > (1ULL << 30)) throw IoError("checkpoint: tensor '" + t.name + "' is implausibly large");
    std::vector<float> values(count);
    for (auto& v : values) v = binio::get_f32(is, "tensor payload");
    t.tensor = TensorF(std::move(shape), std::move(values));
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

std::string Checkpoint::to_bytes() const {
  std::ostringstream os(std::ios::binary);
  os.write(kCheckpointMagic, 4);
  binio::put_u32(os, kCheckpointVersion);
  write_records(os, tensors);
  binio::put_u64(os, static_cast<std::uint64_t>(optimizer_step));
  write_records(os, optimizer);
  binio::put_bytes(os, rng_state);
  binio::put_bytes(os, config);
  return os.str();
}

Checkpoint Checkpoint::from_bytes(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  char magic[4];
  binio::read_exact(is, magic, 4, "checkpoint magic");
  if (std::string(magic, 4) != std::string(kCheckpointMagic, 4)) throw IoError("checkpoint: bad magic (not a RAPC file)");
  const auto version = binio::get_u32(is, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint c;
  c.tensors = read_records(is, "parameter section");
  c.optimizer_step = static_cast<std::int64_t>(binio::get_u64(is, "optimizer step"));
  c.optimizer = read_records(is, "optimizer section");
  c.rng_state = binio::get_bytes(is, "rng section");
  c.config = binio::get_bytes(is, "config section");
  if (is.peek() != std::char_traits<char>::eof()) throw IoError("checkpoint: trailing bytes after config section");
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const auto bytes = to_bytes();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("checkpoint: write failed for " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_bytes(ss.str());
}

}  // namespace rap
