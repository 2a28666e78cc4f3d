#pragma once

// Layered Feature Archive (LFA v1): a self-describing little-endian container
// for N frames x L layers x D dims of f32 features with per-frame labels and an
// optional per-frame SNR track.
//
//   "LFA1" | u32 version | u32 N | u32 L | u32 D | u8 flags | u32 json_len |
//   json metadata | f32 features[N*L*D] | u32 labels[N] | [f32 snr[N]]
//
// flags bit0 marks the SNR track. Features are frame-major (frame, layer, dim).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lingagg/error.hpp"
#include "lingagg/json_io.hpp"

namespace lingagg {

inline constexpr std::uint32_t kLfaVersion = 1;
inline constexpr std::size_t kLfaHeaderBytes = 25;

enum class LfaErrc { io, bad_magic, unsupported_version, truncated, non_finite, invalid };

class LfaError : public InputError {
 public:
  LfaError(LfaErrc kind, const std::string& what) : InputError(what), kind_(kind) {}
  LfaErrc kind() const noexcept { return kind_; }

 private:
  LfaErrc kind_;
};

struct LayeredDataset {
  std::uint32_t n_frames = 0;
  std::uint32_t n_layers = 0;
  std::uint32_t dim = 0;
  std::vector<float> features;  // [N][L][D]
  std::vector<std::uint32_t> labels;
  std::optional<std::vector<float>> snr_db;
  std::vector<std::string> vocab;
  // Free-form metadata: "model", "layers", "snr_levels", "utt_bounds" and any
  // extra keys. "vocab" lives in the field above, not here.
  json meta = json::object();

  std::size_t vocab_size() const noexcept { return vocab.size(); }
  std::size_t frame_stride() const noexcept { return std::size_t{n_layers} * dim; }

  std::span<const float> frame(std::size_t i) const {
    return {features.data() + i * frame_stride(), frame_stride()};
  }
  std::span<const float> layer(std::size_t i, std::size_t l) const {
    return {features.data() + i * frame_stride() + l * dim, dim};
  }

  // Bitwise on features/snr; metadata compared after default-filling.
  bool operator==(const LayeredDataset& other) const;
};

/// Metadata as it is written to disk: defaults filled for "model", "layers"
/// and "snr_levels", plus "vocab".
json normalized_meta(const LayeredDataset& ds);

struct InvariantCheck {
  std::string name;
  bool ok = true;
  std::string detail;
};

/// Evaluates every dataset invariant without throwing.
std::vector<InvariantCheck> check_invariants(const LayeredDataset& ds);

/// Throws LfaError (non_finite or invalid) on the first failed invariant.
void validate(const LayeredDataset& ds);

std::vector<std::uint8_t> encode_lfa(const LayeredDataset& ds);
/// Structural decode. With `check` the invariants are re-validated as well.
LayeredDataset decode_lfa(std::span<const std::uint8_t> bytes, bool check = true);

void write_lfa(const LayeredDataset& ds, const std::filesystem::path& path);
LayeredDataset read_lfa(const std::filesystem::path& path);
LayeredDataset read_lfa_unchecked(const std::filesystem::path& path);

/// Content hash over shape, features, labels, SNR and vocab.
std::string dataset_hash(const LayeredDataset& ds);

struct SplitSpec {
  double eval_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train;  // ascending
  std::vector<std::size_t> eval;   // ascending
  std::uint64_t train_id = 0;
  std::uint64_t eval_id = 0;
};

/// Seeded frame-level partition; |eval| = round(n * eval_fraction).
SplitIndices split_indices(std::size_t n, const SplitSpec& spec);

LayeredDataset subset(const LayeredDataset& ds, std::span<const std::size_t> frames);

std::pair<LayeredDataset, LayeredDataset> split(const LayeredDataset& ds, const SplitSpec& spec);

struct SnrBin {
  double level = 0.0;
  std::vector<std::size_t> frames;
};

/// Assigns every frame to the nearest SNR level (ties to the lower level).
/// Returns one bin per level, ascending, including empty ones.
std::vector<SnrBin> group_by_snr(const LayeredDataset& ds, std::span<const double> levels);

/// Levels from metadata "snr_levels" if present, otherwise the distinct SNR
/// values observed.
std::vector<double> snr_levels_of(const LayeredDataset& ds);

}  // namespace lingagg
