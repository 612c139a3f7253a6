#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;  // stdout and stderr interleaved
};

Result run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " '" RAP_CLI_PATH "' " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.output.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Scratch directory holding a tiny configuration.
struct Workspace {
  fs::path dir;
  explicit Workspace(const std::string& name) : dir(fs::temp_directory_path() / ("rap_test_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "tiny.cfg") << "[data]\nnum_classes = 25\nimages_per_class = 20\nhw = 16\n"
                                       "[backbone]\nchannels = 8,8,8,8\nembedding_dim = 8\n"
                                       "[policy]\nconv_channels = 2,2,2\n"
                                       "[train]\niterations = 2\neval_every = 1\nval_episodes = 3\nquery = 3\n"
                                       "[eval]\nepisodes = 100\nquery = 3\n";
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return "'" + (dir / name).string() + "'"; }
};

}  // namespace

TEST_CASE("--help output matches the golden files") {
  CHECK(run("--help").output == read_file(fs::path(RAP_GOLDEN_DIR) / "help.txt"));
  for (const char* cmd : {"train", "eval", "ablate", "make-synth", "inspect-attention"}) {
    CAPTURE(cmd);
    const auto r = run(std::string(cmd) + " --help");
    CHECK(r.code == 0);
    CHECK(r.output == read_file(fs::path(RAP_GOLDEN_DIR) / ("help_" + std::string(cmd) + ".txt")));
  }
}

TEST_CASE("usage errors exit 2") {
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("train").code == 2);
}

TEST_CASE("missing config file exits 2 naming the path") {
  const auto r = run("train --config /nonexistent/dir/run.cfg");
  CHECK(r.code == 2);
  CHECK(r.output.find("/nonexistent/dir/run.cfg") != std::string::npos);
}

TEST_CASE("unknown config key exits 2 naming the key") {
  Workspace w("badkey");
  std::ofstream(w.dir / "bad.cfg") << "[policy]\nsigmaa = 0.1\n";
  const auto r = run("train --config " + w.path("bad.cfg"));
  CHECK(r.code == 2);
  CHECK(r.output.find("policy.sigmaa") != std::string::npos);
  const auto s = run("train --config " + w.path("tiny.cfg") + " --set train.nothing=1");
  CHECK(s.code == 2);
  CHECK(s.output.find("train.nothing") != std::string::npos);
}

TEST_CASE("tiny run writes metrics and checkpoint; same seed gives identical bytes") {
  Workspace w("train");
  const auto a = run("train --config " + w.path("tiny.cfg") + " --seed 7 --out " + w.path("a"));
  REQUIRE(a.code == 0);
  CHECK(fs::exists(w.dir / "a" / "metrics.jsonl"));
  CHECK(fs::exists(w.dir / "a" / "best.rapc"));
  std::istringstream lines(read_file(w.dir / "a" / "metrics.jsonl"));
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("iteration"));
    CHECK(j.contains("rein_loss"));
    ++n;
  }
  CHECK(n == 2);
  REQUIRE(run("train --config " + w.path("tiny.cfg") + " --seed 7 --out " + w.path("b") + " --quiet").code == 0);
  CHECK(read_file(w.dir / "a" / "best.rapc") == read_file(w.dir / "b" / "best.rapc"));
  CHECK(read_file(w.dir / "a" / "metrics.jsonl") == read_file(w.dir / "b" / "metrics.jsonl"));
  REQUIRE(run("train --config " + w.path("tiny.cfg") + " --seed 8 --out " + w.path("c") + " --quiet").code == 0);
  CHECK(read_file(w.dir / "a" / "best.rapc") != read_file(w.dir / "c" / "best.rapc"));
}

TEST_CASE("divergence exits 3 and keeps the last good checkpoint") {
  Workspace w("diverge");
  const auto r = run("train --config " + w.path("tiny.cfg") + " --set train.divergence_bound=0.001 --out " + w.path("d"));
  CHECK(r.code == 3);
  CHECK(r.output.find("diverged") != std::string::npos);
  CHECK(fs::exists(w.dir / "d" / "last_good.rapc"));
}

TEST_CASE("missing checkpoint exits 2") {
  CHECK(run("eval --checkpoint /nonexistent/best.rapc").code == 2);
  CHECK(run("inspect-attention --checkpoint /nonexistent/best.rapc").code == 2);
}

TEST_CASE("untrained checkpoint evaluates near chance and is thread-count independent") {
  Workspace w("eval");
  REQUIRE(run("train --config " + w.path("tiny.cfg") + " --set train.iterations=0 --out " + w.path("fresh")).code == 0);
  const auto ckpt = w.path("fresh/best.rapc");
  const auto r = run("eval --checkpoint " + ckpt + " --out " + w.path("report.json"), "RAP_THREADS=1");
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(read_file(w.dir / "report.json"));
  CHECK(j["count"] == 100);
  const double acc = j["accuracy"];
  CHECK(acc >= 0.15);
  CHECK(acc <= 0.45);
  const auto many = run("eval --checkpoint " + ckpt, "RAP_THREADS=3");
  CHECK(many.output == r.output);
  REQUIRE(run("eval --checkpoint " + ckpt + " --curve " + w.path("curve.csv")).code == 0);
  std::istringstream csv(read_file(w.dir / "curve.csv"));
  std::string header, row0;
  std::getline(csv, header);
  std::getline(csv, row0);
  CHECK(header == "step,accuracy,half_width");
  CHECK(row0.rfind("0,", 0) == 0);
  CHECK(std::stod(row0.substr(2)) == doctest::Approx(j["curve"][0].get<double>()).epsilon(1e-9));
  const auto id = run("eval --identity --checkpoint " + ckpt);
  CHECK(nlohmann::json::parse(id.output)["accuracy"] == j["curve"][0]);
}

TEST_CASE("make-synth writes a manifest listing every class") {
  Workspace w("synth");
  const auto r = run("make-synth --num-classes 25 --images-per-class 4 --hw 16 --out " + w.path("syn"));
  REQUIRE(r.code == 0);
  const auto manifest = read_file(w.dir / "syn" / "manifest.txt");
  CHECK(manifest.find("classes=25\n") != std::string::npos);
  CHECK(manifest.find("count=100\n") != std::string::npos);
  // A manifest source trains like the generator it came from.
  std::ofstream(w.dir / "m.cfg") << read_file(w.dir / "tiny.cfg") << "";
  const auto t = run("train --config " + w.path("tiny.cfg") + " --set data.source=manifest --set data.path=" +
                     (w.dir / "syn").string() + " --set data.images_per_class=4 --set train.query=2 --set eval.query=2"
                     " --out " + w.path("m"));
  CHECK(t.code == 0);
}

TEST_CASE("ablate over a 2x2 grid gives 4 rows") {
  Workspace w("ablate");
  const auto r = run("ablate --config " + w.path("tiny.cfg") + " --steps 1,2 --alphas 0,0.0001 --seeds 1 --out " +
                     w.path("abl"));
  REQUIRE(r.code == 0);
  std::istringstream rows(read_file(w.dir / "abl" / "ablation.jsonl"));
  std::string line;
  int n = 0;
  while (std::getline(rows, line)) ++n;
  CHECK(n == 4);
  CHECK(read_file(w.dir / "abl" / "ablation.txt").find("T=2 alpha=0.0001") != std::string::npos);
}

TEST_CASE("inspect-attention dumps one block per step") {
  Workspace w("inspect");
  REQUIRE(run("train --config " + w.path("tiny.cfg") + " --out " + w.path("t") + " --quiet").code == 0);
  const auto r = run("inspect-attention --checkpoint " + w.path("t/best.rapc") + " --images 10 --out " + w.path("att.txt"));
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.output);
  CHECK(j["images"] == 10);
  const auto dump = read_file(w.dir / "att.txt");
  std::size_t blocks = 0;
  for (auto p = dump.find("step="); p != std::string::npos; p = dump.find("step=", p + 1)) ++blocks;
  CHECK(blocks == 50);
}
