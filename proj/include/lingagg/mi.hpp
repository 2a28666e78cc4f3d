#pragma once

// Probe-based lower bound on I(Z;Y): H(Y) minus the held-out cross-entropy of
// a trained classifier q(y|z). Everything is in nats unless a name says bits.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lingagg/json_io.hpp"
#include "lingagg/kernels.hpp"
#include "lingagg/lfa.hpp"

namespace lingagg {

enum class Precision { f32, f64 };

struct TrainConfig {
  int epochs = 15;
  double lr = 1e-3;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  double eval_fraction = 0.2;
  std::vector<std::size_t> hidden{256, 256};
  double dropout = 0.1;
  bool linear_probe = false;
  Precision precision = Precision::f32;
  unsigned threads = 1;

  void validate() const;
  ProbeShape probe_shape(std::size_t in_dim, std::size_t classes) const;
  SplitSpec split_spec() const { return {eval_fraction, seed}; }
  json to_json() const;
};

struct MIEstimate {
  std::string context;  // "layer", "snr", "layer_avg", or an aggregator id
  std::optional<std::size_t> layer;
  std::optional<double> snr_bin;
  double h_y = 0.0;
  double ce = 0.0;
  double bound = 0.0;
  std::size_t n_eval = 0;
  bool present = true;  // false for an empty SNR bin

  double bits() const noexcept { return bound / std::numbers::ln2; }
};

struct MIReport {
  std::vector<MIEstimate> entries;
  std::string averaging;
  std::size_t n_layers = 0;
  std::vector<double> snr_bins;

  const MIEstimate* find(std::string_view context, std::optional<std::size_t> layer,
                         std::optional<double> snr_bin = std::nullopt) const;
  /// Bounds of the "layer" entries ordered by layer index.
  std::vector<double> layer_bounds() const;
};

/// Plug-in entropy of the label histogram, nats.
double empirical_entropy(std::span<const std::uint32_t> labels);

template <typename T>
struct TrainedProbe {
  Probe<T> probe;
  std::vector<double> history;  // mean train CE per epoch
};

/// Seeded-shuffle minibatch Adam on cross-entropy.
template <typename T>
TrainedProbe<T> train_probe(const Matrix<T>& features, std::span<const std::uint32_t> labels, std::size_t n_classes,
                            const TrainConfig& cfg);

/// H(labels) - CE of the probe in eval mode. When both the probe and the
/// caller supply split ids they must differ.
template <typename T>
MIEstimate mi_bound(const Probe<T>& probe, const Matrix<T>& features, std::span<const std::uint32_t> labels,
                    std::optional<std::uint64_t> eval_split = std::nullopt);

/// One independently seeded probe per layer (seed xor layer), all scored on
/// the same eval split. Entries have context "layer".
MIReport layerwise_analysis(const LayeredDataset& ds, const TrainConfig& cfg);

/// Per-layer probes trained on all SNRs pooled, scored per SNR bin ("snr"
/// entries, layer x bin), plus per-layer means over non-empty bins
/// ("layer_avg").
MIReport snr_analysis(const LayeredDataset& ds, std::span<const double> levels, const TrainConfig& cfg);

/// layerwise_analysis and snr_analysis from a single set of probes. With no
/// SNR track this equals layerwise_analysis.
MIReport full_analysis(const LayeredDataset& ds, std::span<const double> levels, const TrainConfig& cfg);

std::string report_csv_header(bool with_bits);
std::string estimate_csv_row(const MIEstimate& e, bool with_bits);
void write_report_csv(const MIReport& report, std::ostream& out, bool with_bits);

// Shared by the aggregation trainers.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);
std::uint64_t dropout_seed(std::uint64_t seed, int epoch, std::size_t batch);
std::vector<std::uint32_t> gather_labels(const LayeredDataset& ds, std::span<const std::size_t> frames);
template <typename T>
Matrix<T> gather_layer(const LayeredDataset& ds, std::size_t layer, std::span<const std::size_t> frames);
/// Frames as [n x L*D] rows.
template <typename T>
Matrix<T> gather_frames(const LayeredDataset& ds, std::span<const std::size_t> frames);
template <typename T>
Matrix<T> gather_rows(const Matrix<T>& m, std::span<const std::size_t> rows);

}  // namespace lingagg
