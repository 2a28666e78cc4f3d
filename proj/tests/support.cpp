#include "support.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <random>
#include <sys/wait.h>

namespace support {

namespace {

std::string quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

}  // namespace

CommandResult run_cli(const std::vector<std::string>& args, const std::string& env) {
  std::string cmd = env.empty() ? "" : env + " ";
  cmd += quote(LINGAGG_CLI_PATH);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " 2>&1";
  CommandResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t got = 0;
  while ((got = std::fread(buf, 1, sizeof(buf), pipe)) > 0) r.output.append(buf, got);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::current_path() / "scratch" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

lingagg::LayeredDataset random_dataset(std::uint32_t n, std::uint32_t layers, std::uint32_t dim,
                                       std::uint32_t classes, std::uint64_t seed, bool with_snr) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::uniform_int_distribution<std::uint32_t> label(0, classes - 1);
  lingagg::LayeredDataset ds;
  ds.n_frames = n;
  ds.n_layers = layers;
  ds.dim = dim;
  ds.features.resize(std::size_t{n} * layers * dim);
  for (auto& v : ds.features) v = normal(rng);
  ds.labels.resize(n);
  for (auto& y : ds.labels) y = label(rng);
  for (std::uint32_t k = 0; k < classes; ++k) ds.vocab.push_back("k" + std::to_string(k));
  if (with_snr) {
    const float levels[] = {-5.0f, 0.0f, 5.0f};
    ds.snr_db.emplace(n);
    for (std::uint32_t i = 0; i < n; ++i) (*ds.snr_db)[i] = levels[i % 3];
    ds.meta["snr_levels"] = {-5.0, 0.0, 5.0};
  }
  return ds;
}

}  // namespace support
