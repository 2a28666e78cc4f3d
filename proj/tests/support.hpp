#pragma once

// Shared fixtures: running the CLI binary, scratch directories, small
// hand-made datasets.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lingagg/lfa.hpp"

namespace support {

struct CommandResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

/// Runs the lingagg binary with `args`. `env` is prefixed verbatim
/// (e.g. "LING_AGG_SEED=5").
CommandResult run_cli(const std::vector<std::string>& args, const std::string& env = "");

/// Empty directory under the working directory, recreated on every call.
std::filesystem::path scratch_dir(const std::string& name);

std::string read_file(const std::filesystem::path& path);

/// Random features, uniform labels, optional SNR track cycling over levels.
lingagg::LayeredDataset random_dataset(std::uint32_t n, std::uint32_t layers, std::uint32_t dim,
                                       std::uint32_t classes, std::uint64_t seed, bool with_snr = false);

}  // namespace support
