#pragma once

// Layer aggregators: the static weighted sum (fixed simplex weights over
// layers) and the dynamic weighted sum (per-frame single-head attention over
// the layer axis with a global layer bias). Both can be pre-trained jointly
// with a probe to maximize the MI lower bound, frozen, and exported as JSON.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lingagg/json_io.hpp"
#include "lingagg/kernels.hpp"
#include "lingagg/lfa.hpp"
#include "lingagg/mi.hpp"

namespace lingagg {

inline constexpr const char* kAggregatorFormat = "ling-agg/1";

// acoustic: weights produced elsewhere (imported for comparison only).
// linguistic: MI-maximizing, fully frozen.
// hybrid: linguistic weights with only the layer-0 parameter left trainable.
enum class AggMode { acoustic, linguistic, hybrid };

std::string to_string(AggMode m);
AggMode agg_mode_from_string(const std::string& s);

struct Provenance {
  std::uint64_t seed = 0;
  std::string dataset_hash;
  bool operator==(const Provenance&) const = default;
};

struct WSAggregator {
  std::size_t n_layers = 0;
  std::size_t dim = 0;
  std::vector<double> logits;  // weights = softmax(logits)
  // Imported unnormalized weights. When set they are used verbatim and
  // `logits` is ignored.
  std::optional<std::vector<double>> raw_weights;
  AggMode mode = AggMode::linguistic;
  std::vector<bool> trainable;
  bool frozen = false;
  Provenance provenance;

  /// Zero logits (uniform weights), everything trainable.
  static WSAggregator uniform(std::size_t n_layers, std::size_t dim);

  /// Weights used for fusion.
  std::vector<double> weights() const;
  /// Weights rescaled to sum to one, for display and comparison.
  std::vector<double> display_weights() const;
  /// Shape and mode/mask invariants; throws InputError.
  void check() const;

  bool operator==(const WSAggregator&) const = default;
};

struct DWSAggregator {
  std::size_t n_layers = 0;
  std::size_t dim = 0;
  std::size_t key_dim = 0;
  Matrix<double> w_q;  // [D x d_k]
  Matrix<double> w_k;  // [D x d_k]
  std::vector<double> bias;
  AggMode mode = AggMode::linguistic;
  bool train_w_q = true;
  bool train_w_k = true;
  std::vector<bool> train_bias;
  bool frozen = false;
  Provenance provenance;

  /// Glorot-uniform projections, zero bias (uniform prior over layers).
  static DWSAggregator init(std::size_t n_layers, std::size_t dim, std::size_t key_dim, std::uint64_t seed);

  template <typename T>
  AttentionParams<T> params() const;

  void check() const;

  bool operator==(const DWSAggregator&) const = default;
};

using Aggregator = std::variant<WSAggregator, DWSAggregator>;

std::size_t aggregator_layers(const Aggregator& agg);
std::size_t aggregator_dim(const Aggregator& agg);
/// FNV-1a over every parameter, mask and mode.
std::uint64_t parameter_hash(const Aggregator& agg);
/// "ws:linguistic:<hash>" style identifier.
std::string aggregator_id(const Aggregator& agg);

/// Marks the aggregator hybrid: only layer 0 (WS) / only b_0 (DWS) stays
/// trainable downstream.
void make_hybrid(WSAggregator& agg);
void make_hybrid(DWSAggregator& agg);
/// Linguistic export state: every mask false, frozen.
void freeze(WSAggregator& agg);
void freeze(DWSAggregator& agg);

template <typename T>
struct FusedView {
  Matrix<T> features;  // [N x D]
  std::string aggregator_id;
  std::string dataset_hash;
};

template <typename T>
FusedView<T> ws_fuse(const WSAggregator& agg, const LayeredDataset& ds);

template <typename T>
struct DynamicFusion {
  FusedView<T> view;
  Matrix<T> layer_weights;  // [N x L], attention column mass per frame
};

template <typename T>
DynamicFusion<T> dws_fuse(const DWSAggregator& agg, const LayeredDataset& ds);

template <typename T>
FusedView<T> fuse(const Aggregator& agg, const LayeredDataset& ds);

template <typename Agg, typename T>
struct LinguisticResult {
  Agg aggregator;  // frozen
  Probe<T> probe;
  std::vector<double> history;  // mean train CE per epoch
  MIEstimate heldout;           // trained probe on the eval split
};

/// Joint Adam over the WS logits and a probe, minimizing CE on the train
/// split. Logits start at zero.
template <typename T>
LinguisticResult<WSAggregator, T> train_linguistic_ws(const LayeredDataset& ds, const TrainConfig& cfg);

/// Joint Adam over W_Q, W_K, b and a probe. `key_dim` 0 means D.
template <typename T>
LinguisticResult<DWSAggregator, T> train_linguistic_dws(const LayeredDataset& ds, const TrainConfig& cfg,
                                                        std::size_t key_dim = 0);

/// Fuses with a frozen copy of the aggregator, trains a fresh probe on the
/// train split of the fused view and reports the bound on the eval split.
MIEstimate evaluate_aggregator(const Aggregator& agg, const LayeredDataset& ds, const TrainConfig& cfg);

json aggregator_to_json(const Aggregator& agg);
Aggregator aggregator_from_json(const json& j);
void export_aggregator(const Aggregator& agg, const std::filesystem::path& path);
Aggregator import_aggregator(const std::filesystem::path& path);

struct WeightRow {
  std::string label;
  std::string type;
  std::string mode;
  bool normalized_from_raw = false;
  std::vector<double> weights;  // sums to 1
};

/// Per-layer normalized weights for each aggregator. DWS rows are mean
/// per-frame weights over `reference`, which is then required.
std::vector<WeightRow> compare_weights(std::span<const Aggregator> aggs, std::span<const std::string> labels,
                                       const LayeredDataset* reference = nullptr);

void write_weight_table_csv(std::span<const WeightRow> rows, std::ostream& out);

/// `frame,snr_db,w_0,...,w_{L-1}`; snr_db is empty without an SNR track.
void write_dynamic_weights_csv(const LayeredDataset& ds, const Matrix<float>& weights, std::ostream& out);

}  // namespace lingagg
