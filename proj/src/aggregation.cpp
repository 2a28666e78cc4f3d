#include "lingagg/aggregation.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>

#include "lingagg/error.hpp"

namespace lingagg {
namespace {

constexpr std::uint64_t kDwsInitStream = 0xa77e;

std::string format_weight(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

bool hybrid_mask(const std::vector<bool>& mask) {
  if (mask.empty() || !mask[0]) return false;
  for (std::size_t i = 1; i < mask.size(); ++i) {
    if (mask[i]) return false;
  }
  return true;
}

bool none_set(const std::vector<bool>& mask) {
  for (bool b : mask) {
    if (b) return false;
  }
  return true;
}

void check_dataset_shape(std::size_t layers, std::size_t dim, const LayeredDataset& ds) {
  if (layers != ds.n_layers) {
    throw ShapeError("aggregator has " + std::to_string(layers) + " layers, dataset has " +
                     std::to_string(ds.n_layers));
  }
  if (dim != 0 && dim != ds.dim) {
    throw ShapeError("aggregator dim " + std::to_string(dim) + " does not match dataset dim " +
                     std::to_string(ds.dim));
  }
}

void check_trainable_data(const LayeredDataset& ds) {
  validate(ds);
  if (ds.n_layers < 2) throw InputError("aggregation needs at least two layers");
  bool two_classes = false;
  for (auto y : ds.labels) two_classes = two_classes || y != ds.labels[0];
  if (!two_classes) throw InputError("dataset contains a single class");
}

template <typename T>
std::vector<T> cast_vector(std::span<const double> v) {
  return std::vector<T>(v.begin(), v.end());
}

template <typename T>
void append_probe_slots(Probe<T>& probe, const ProbeGrads<T>& grads, std::vector<ParamSlot<T>>& slots) {
  for (std::size_t l = 0; l < probe.layers.size(); ++l) {
    slots.push_back(
        {"probe." + std::to_string(l) + ".weight", probe.layers[l].weight.values(), grads.layers[l].weight.values()});
    slots.push_back({"probe." + std::to_string(l) + ".bias", probe.layers[l].bias, grads.layers[l].bias});
  }
}

template <typename T>
std::vector<std::uint32_t> batch_labels(std::span<const std::uint32_t> labels, std::span<const std::size_t> idx) {
  std::vector<std::uint32_t> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(labels[i]);
  return out;
}

template <typename T>
Matrix<T> dws_fuse_rows(const AttentionParams<T>& params, const Matrix<T>& frames) {
  Matrix<T> out(frames.rows(), params.dim());
  for (std::size_t r = 0; r < frames.rows(); ++r) {
    const auto f = layer_attention_forward(params, std::span<const T>(frames.row(r)));
    std::copy(f.fused.begin(), f.fused.end(), out.row(r).begin());
  }
  return out;
}

template <typename T>
MIEstimate evaluate_typed(const Aggregator& agg, const LayeredDataset& ds, const TrainConfig& cfg) {
  const FusedView<T> view = fuse<T>(agg, ds);
  const SplitIndices split = split_indices(ds.n_frames, cfg.split_spec());
  const Matrix<T> x_train = gather_rows(view.features, split.train);
  const Matrix<T> x_eval = gather_rows(view.features, split.eval);
  TrainedProbe<T> trained = train_probe<T>(x_train, gather_labels(ds, split.train), ds.vocab_size(), cfg);
  trained.probe.train_split = split.train_id;
  MIEstimate e = mi_bound(trained.probe, x_eval, gather_labels(ds, split.eval), split.eval_id);
  e.context = view.aggregator_id;
  return e;
}

json matrix_to_json(const Matrix<double>& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

template <typename V>
V required(const json& j, const char* key) {
  if (!j.contains(key)) throw InputError(std::string("aggregator JSON is missing \"") + key + "\"");
  try {
    return j.at(key).get<V>();
  } catch (const json::exception&) {
    throw InputError(std::string("aggregator JSON field \"") + key + "\" has the wrong type");
  }
}

Matrix<double> matrix_from_json(const json& j, const char* key, std::size_t rows, std::size_t cols) {
  const auto nested = required<std::vector<std::vector<double>>>(j, key);
  if (nested.size() != rows) throw ShapeError(std::string(key) + " must have " + std::to_string(rows) + " rows");
  Matrix<double> m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (nested[r].size() != cols) {
      throw ShapeError(std::string(key) + " row " + std::to_string(r) + " must have " + std::to_string(cols) +
                       " columns");
    }
    std::copy(nested[r].begin(), nested[r].end(), m.row(r).begin());
  }
  return m;
}

Provenance provenance_from_json(const json& j) {
  Provenance p;
  if (!j.contains("provenance")) return p;
  const json& pj = j.at("provenance");
  if (!pj.is_object()) throw InputError("aggregator JSON field \"provenance\" must be an object");
  p.seed = pj.value("seed", std::uint64_t{0});
  p.dataset_hash = pj.value("dataset_hash", std::string{});
  return p;
}

void hash_doubles(Fnv1a& h, std::span<const double> v) {
  for (double x : v) h.update_value(x);
}

void hash_mask(Fnv1a& h, const std::vector<bool>& mask) {
  for (bool b : mask) h.update_value(static_cast<std::uint8_t>(b));
}

}  // namespace

std::string to_string(AggMode m) {
  switch (m) {
    case AggMode::acoustic:
      return "acoustic";
    case AggMode::linguistic:
      return "linguistic";
    case AggMode::hybrid:
      return "hybrid";
  }
  return "linguistic";
}

AggMode agg_mode_from_string(const std::string& s) {
  if (s == "acoustic") return AggMode::acoustic;
  if (s == "linguistic") return AggMode::linguistic;
  if (s == "hybrid") return AggMode::hybrid;
  throw InputError("unknown aggregator mode '" + s + "' (expected acoustic, linguistic or hybrid)");
}

WSAggregator WSAggregator::uniform(std::size_t n_layers, std::size_t dim) {
  WSAggregator agg;
  agg.n_layers = n_layers;
  agg.dim = dim;
  agg.logits.assign(n_layers, 0.0);
  agg.trainable.assign(n_layers, true);
  return agg;
}

std::vector<double> WSAggregator::weights() const {
  if (raw_weights) return *raw_weights;
  return softmax<double>(logits);
}

std::vector<double> WSAggregator::display_weights() const {
  std::vector<double> w = weights();
  std::vector<double> scratch = w;
  const double total = canonical_sum<double>(scratch);
  if (!(total > 0.0)) throw InputError("aggregator weights do not have a positive sum");
  for (double& x : w) x /= total;
  return w;
}

void WSAggregator::check() const {
  if (n_layers == 0) throw ShapeError("WS aggregator has no layers");
  if (raw_weights) {
    if (raw_weights->size() != n_layers) throw ShapeError("WS weight vector length differs from L");
    if (!all_finite(*raw_weights)) throw InputError("WS weights must be finite");
    for (double w : *raw_weights) {
      if (w < 0.0) throw InputError("raw WS weights must be non-negative");
    }
    display_weights();
  } else {
    if (logits.size() != n_layers) throw ShapeError("WS logit vector length differs from L");
    if (!all_finite(logits)) throw InputError("WS logits must be finite");
  }
  if (trainable.size() != n_layers) throw ShapeError("WS trainable mask length differs from L");
  if (mode == AggMode::hybrid && !hybrid_mask(trainable)) {
    throw InputError("hybrid WS aggregator must mark exactly layer 0 trainable");
  }
  if (mode == AggMode::linguistic && (!frozen || !none_set(trainable))) {
    throw InputError("linguistic WS aggregator must be frozen with an all-false trainable mask");
  }
}

DWSAggregator DWSAggregator::init(std::size_t n_layers, std::size_t dim, std::size_t key_dim, std::uint64_t seed) {
  if (n_layers == 0 || dim == 0 || key_dim == 0) throw ShapeError("DWS aggregator dimensions must be positive");
  DWSAggregator agg;
  agg.n_layers = n_layers;
  agg.dim = dim;
  agg.key_dim = key_dim;
  agg.w_q = Matrix<double>(dim, key_dim);
  agg.w_k = Matrix<double>(dim, key_dim);
  Rng rng(seed);
  glorot_uniform(agg.w_q, rng);
  glorot_uniform(agg.w_k, rng);
  agg.bias.assign(n_layers, 0.0);
  agg.train_bias.assign(n_layers, true);
  return agg;
}

template <typename T>
AttentionParams<T> DWSAggregator::params() const {
  AttentionParams<T> p;
  p.w_q = w_q.cast<T>();
  p.w_k = w_k.cast<T>();
  p.bias = cast_vector<T>(bias);
  return p;
}

template AttentionParams<float> DWSAggregator::params<float>() const;
template AttentionParams<double> DWSAggregator::params<double>() const;

void DWSAggregator::check() const {
  if (n_layers == 0 || dim == 0 || key_dim == 0) throw ShapeError("DWS aggregator dimensions must be positive");
  if (w_q.rows() != dim || w_q.cols() != key_dim) throw ShapeError("W_Q must be D x d_k");
  if (w_k.rows() != dim || w_k.cols() != key_dim) throw ShapeError("W_K must be D x d_k");
  if (bias.size() != n_layers) throw ShapeError("DWS bias length differs from L");
  if (train_bias.size() != n_layers) throw ShapeError("DWS bias mask length differs from L");
  if (!all_finite(w_q.values()) || !all_finite(w_k.values()) || !all_finite(bias)) {
    throw InputError("DWS parameters must be finite");
  }
  if (mode == AggMode::hybrid && (train_w_q || train_w_k || !hybrid_mask(train_bias))) {
    throw InputError("hybrid DWS aggregator must mark exactly b_0 trainable");
  }
  if (mode == AggMode::linguistic && (!frozen || train_w_q || train_w_k || !none_set(train_bias))) {
    throw InputError("linguistic DWS aggregator must be frozen with an all-false trainable mask");
  }
}

std::size_t aggregator_layers(const Aggregator& agg) {
  return std::visit([](const auto& a) { return a.n_layers; }, agg);
}

std::size_t aggregator_dim(const Aggregator& agg) {
  return std::visit([](const auto& a) { return a.dim; }, agg);
}

std::uint64_t parameter_hash(const Aggregator& agg) {
  Fnv1a h;
  if (const auto* ws = std::get_if<WSAggregator>(&agg)) {
    h.update("ws", 2);
    h.update_value(static_cast<std::uint8_t>(ws->mode));
    h.update_value(static_cast<std::uint64_t>(ws->n_layers));
    h.update_value(static_cast<std::uint64_t>(ws->dim));
    h.update_value(static_cast<std::uint8_t>(ws->raw_weights.has_value()));
    hash_doubles(h, ws->raw_weights ? std::span<const double>(*ws->raw_weights) : std::span<const double>(ws->logits));
    hash_mask(h, ws->trainable);
    h.update_value(static_cast<std::uint8_t>(ws->frozen));
  } else {
    const auto& dws = std::get<DWSAggregator>(agg);
    h.update("dws", 3);
    h.update_value(static_cast<std::uint8_t>(dws.mode));
    h.update_value(static_cast<std::uint64_t>(dws.n_layers));
    h.update_value(static_cast<std::uint64_t>(dws.dim));
    h.update_value(static_cast<std::uint64_t>(dws.key_dim));
    hash_doubles(h, dws.w_q.values());
    hash_doubles(h, dws.w_k.values());
    hash_doubles(h, dws.bias);
    h.update_value(static_cast<std::uint8_t>(dws.train_w_q));
    h.update_value(static_cast<std::uint8_t>(dws.train_w_k));
    hash_mask(h, dws.train_bias);
    h.update_value(static_cast<std::uint8_t>(dws.frozen));
  }
  return h.digest();
}

std::string aggregator_id(const Aggregator& agg) {
  const bool ws = std::holds_alternative<WSAggregator>(agg);
  const AggMode mode = std::visit([](const auto& a) { return a.mode; }, agg);
  return std::string(ws ? "ws:" : "dws:") + to_string(mode) + ":" + hex64(parameter_hash(agg));
}

void make_hybrid(WSAggregator& agg) {
  agg.mode = AggMode::hybrid;
  agg.trainable.assign(agg.n_layers, false);
  if (!agg.trainable.empty()) agg.trainable[0] = true;
  agg.frozen = false;
}

void make_hybrid(DWSAggregator& agg) {
  agg.mode = AggMode::hybrid;
  agg.train_w_q = false;
  agg.train_w_k = false;
  agg.train_bias.assign(agg.n_layers, false);
  if (!agg.train_bias.empty()) agg.train_bias[0] = true;
  agg.frozen = false;
}

void freeze(WSAggregator& agg) {
  agg.trainable.assign(agg.n_layers, false);
  agg.frozen = true;
}

void freeze(DWSAggregator& agg) {
  agg.train_w_q = false;
  agg.train_w_k = false;
  agg.train_bias.assign(agg.n_layers, false);
  agg.frozen = true;
}

template <typename T>
FusedView<T> ws_fuse(const WSAggregator& agg, const LayeredDataset& ds) {
  check_dataset_shape(agg.n_layers, agg.dim, ds);
  std::vector<T> w;
  if (agg.raw_weights) {
    w = cast_vector<T>(*agg.raw_weights);
  } else {
    const auto logits = cast_vector<T>(agg.logits);
    w = softmax<T>(logits);
  }
  FusedView<T> view{Matrix<T>(ds.n_frames, ds.dim), aggregator_id(agg), dataset_hash(ds)};
  std::vector<T> frame(ds.frame_stride());
  for (std::size_t i = 0; i < ds.n_frames; ++i) {
    const auto src = ds.frame(i);
    std::copy(src.begin(), src.end(), frame.begin());
    weighted_sum<T>(w, frame, view.features.row(i));
  }
  return view;
}

template <typename T>
DynamicFusion<T> dws_fuse(const DWSAggregator& agg, const LayeredDataset& ds) {
  check_dataset_shape(agg.n_layers, agg.dim, ds);
  const AttentionParams<T> params = agg.params<T>();
  DynamicFusion<T> out{{Matrix<T>(ds.n_frames, ds.dim), aggregator_id(agg), dataset_hash(ds)},
                       Matrix<T>(ds.n_frames, ds.n_layers)};
  std::vector<T> frame(ds.frame_stride());
  for (std::size_t i = 0; i < ds.n_frames; ++i) {
    const auto src = ds.frame(i);
    std::copy(src.begin(), src.end(), frame.begin());
    const auto f = layer_attention_forward(params, std::span<const T>(frame));
    std::copy(f.fused.begin(), f.fused.end(), out.view.features.row(i).begin());
    const auto mass = column_mass(f.attention());
    std::copy(mass.begin(), mass.end(), out.layer_weights.row(i).begin());
  }
  return out;
}

template <typename T>
FusedView<T> fuse(const Aggregator& agg, const LayeredDataset& ds) {
  if (const auto* ws = std::get_if<WSAggregator>(&agg)) return ws_fuse<T>(*ws, ds);
  return dws_fuse<T>(std::get<DWSAggregator>(agg), ds).view;
}

template <typename T>
LinguisticResult<WSAggregator, T> train_linguistic_ws(const LayeredDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  check_trainable_data(ds);
  const SplitIndices split = split_indices(ds.n_frames, cfg.split_spec());
  const Matrix<T> x_train = gather_frames<T>(ds, split.train);
  const auto y_train = gather_labels(ds, split.train);
  const std::size_t n = x_train.rows();

  std::vector<T> theta(ds.n_layers, T{0});
  Probe<T> probe = make_probe<T>(cfg.probe_shape(ds.dim, ds.vocab_size()), cfg.seed);
  AdamState<T> adam{AdamConfig{cfg.lr}};
  std::vector<double> history;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(n, cfg.seed, epoch);
    std::vector<double> losses;
    losses.reserve(n);
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(n, start + cfg.batch_size) - start);
      const Matrix<T> xb = gather_rows(x_train, idx);
      const auto yb = batch_labels<T>(y_train, idx);

      const std::vector<T> w = softmax<T>(theta);
      const Matrix<T> fused = weighted_sum_forward<T>(w, xb);
      auto fwd = probe_forward(probe, fused, Mode::train, dropout_seed(cfg.seed, epoch, batch_index));
      auto ce = cross_entropy(fwd.logits, yb);
      if (!std::isfinite(ce.loss)) throw DivergenceError(epoch + 1, "joint WS cross-entropy is not finite");
      const auto grads = probe_backward(probe, fwd.cache, ce.d_logits);
      std::vector<T> d_theta(ds.n_layers, T{0});
      weighted_sum_backward<T>(w, xb, grads.input, d_theta);

      std::vector<ParamSlot<T>> slots{{"ws.logits", theta, d_theta}};
      append_probe_slots(probe, grads, slots);
      try {
        adam_step<T>(slots, adam);
      } catch (const NumericalError& e) {
        throw DivergenceError(epoch + 1, e.what());
      }
      probe.touch();
      losses.insert(losses.end(), ce.per_example.begin(), ce.per_example.end());
    }
    const double mean = pairwise_sum(losses) / static_cast<double>(n);
    if (!std::isfinite(mean)) throw DivergenceError(epoch + 1, "epoch loss is not finite");
    history.push_back(mean);
  }

  WSAggregator agg = WSAggregator::uniform(ds.n_layers, ds.dim);
  agg.logits.assign(theta.begin(), theta.end());
  agg.mode = AggMode::linguistic;
  freeze(agg);
  agg.provenance = {cfg.seed, dataset_hash(ds)};
  probe.train_split = split.train_id;

  const std::vector<T> w = softmax<T>(theta);
  const Matrix<T> x_eval = weighted_sum_forward<T>(w, gather_frames<T>(ds, split.eval));
  MIEstimate heldout = mi_bound(probe, x_eval, gather_labels(ds, split.eval), split.eval_id);
  heldout.context = aggregator_id(agg);
  return {std::move(agg), std::move(probe), std::move(history), heldout};
}

template <typename T>
LinguisticResult<DWSAggregator, T> train_linguistic_dws(const LayeredDataset& ds, const TrainConfig& cfg,
                                                        std::size_t key_dim) {
  cfg.validate();
  check_trainable_data(ds);
  if (key_dim == 0) key_dim = ds.dim;
  const SplitIndices split = split_indices(ds.n_frames, cfg.split_spec());
  const Matrix<T> x_train = gather_frames<T>(ds, split.train);
  const auto y_train = gather_labels(ds, split.train);
  const std::size_t n = x_train.rows();

  DWSAggregator agg = DWSAggregator::init(ds.n_layers, ds.dim, key_dim, derive_seed(cfg.seed, kDwsInitStream));
  AttentionParams<T> params = agg.params<T>();
  Probe<T> probe = make_probe<T>(cfg.probe_shape(ds.dim, ds.vocab_size()), cfg.seed);
  AdamState<T> adam{AdamConfig{cfg.lr}};
  std::vector<double> history;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(n, cfg.seed, epoch);
    std::vector<double> losses;
    losses.reserve(n);
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(n, start + cfg.batch_size) - start);
      const Matrix<T> xb = gather_rows(x_train, idx);
      const auto yb = batch_labels<T>(y_train, idx);

      Matrix<T> fused(xb.rows(), ds.dim);
      std::vector<AttentionCache<T>> caches;
      caches.reserve(xb.rows());
      for (std::size_t r = 0; r < xb.rows(); ++r) {
        auto f = layer_attention_forward(params, std::span<const T>(xb.row(r)));
        std::copy(f.fused.begin(), f.fused.end(), fused.row(r).begin());
        caches.push_back(std::move(f.cache));
      }
      auto fwd = probe_forward(probe, fused, Mode::train, dropout_seed(cfg.seed, epoch, batch_index));
      auto ce = cross_entropy(fwd.logits, yb);
      if (!std::isfinite(ce.loss)) throw DivergenceError(epoch + 1, "joint DWS cross-entropy is not finite");
      const auto grads = probe_backward(probe, fwd.cache, ce.d_logits);
      AttentionGrads<T> ag = zero_attention_grads(params);
      for (std::size_t r = 0; r < xb.rows(); ++r) {
        layer_attention_backward(params, caches[r], std::span<const T>(grads.input.row(r)), ag);
      }

      std::vector<ParamSlot<T>> slots{{"dws.W_Q", params.w_q.values(), ag.w_q.values()},
                                      {"dws.W_K", params.w_k.values(), ag.w_k.values()},
                                      {"dws.bias", params.bias, ag.bias}};
      append_probe_slots(probe, grads, slots);
      try {
        adam_step<T>(slots, adam);
      } catch (const NumericalError& e) {
        throw DivergenceError(epoch + 1, e.what());
      }
      params.touch();
      probe.touch();
      losses.insert(losses.end(), ce.per_example.begin(), ce.per_example.end());
    }
    const double mean = pairwise_sum(losses) / static_cast<double>(n);
    if (!std::isfinite(mean)) throw DivergenceError(epoch + 1, "epoch loss is not finite");
    history.push_back(mean);
  }

  agg.w_q = params.w_q.template cast<double>();
  agg.w_k = params.w_k.template cast<double>();
  agg.bias.assign(params.bias.begin(), params.bias.end());
  agg.mode = AggMode::linguistic;
  freeze(agg);
  agg.provenance = {cfg.seed, dataset_hash(ds)};
  probe.train_split = split.train_id;

  const Matrix<T> x_eval = dws_fuse_rows(params, gather_frames<T>(ds, split.eval));
  MIEstimate heldout = mi_bound(probe, x_eval, gather_labels(ds, split.eval), split.eval_id);
  heldout.context = aggregator_id(agg);
  return {std::move(agg), std::move(probe), std::move(history), heldout};
}

MIEstimate evaluate_aggregator(const Aggregator& agg, const LayeredDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  validate(ds);
  if (cfg.precision == Precision::f64) return evaluate_typed<double>(agg, ds, cfg);
  return evaluate_typed<float>(agg, ds, cfg);
}

json aggregator_to_json(const Aggregator& agg) {
  std::visit([](const auto& a) { a.check(); }, agg);
  json j;
  j["format"] = kAggregatorFormat;
  if (const auto* ws = std::get_if<WSAggregator>(&agg)) {
    j["type"] = "ws";
    j["mode"] = to_string(ws->mode);
    j["L"] = ws->n_layers;
    j["D"] = ws->dim;
    if (ws->raw_weights) {
      j["weights"] = *ws->raw_weights;
      j["trainable_mask"] = json{{"weights", ws->trainable}};
    } else {
      j["logits"] = ws->logits;
      j["trainable_mask"] = json{{"logits", ws->trainable}};
    }
    j["frozen"] = ws->frozen;
    j["provenance"] = json{{"seed", ws->provenance.seed}, {"dataset_hash", ws->provenance.dataset_hash}};
  } else {
    const auto& dws = std::get<DWSAggregator>(agg);
    j["type"] = "dws";
    j["mode"] = to_string(dws.mode);
    j["L"] = dws.n_layers;
    j["D"] = dws.dim;
    j["d_k"] = dws.key_dim;
    j["W_Q"] = matrix_to_json(dws.w_q);
    j["W_K"] = matrix_to_json(dws.w_k);
    j["bias"] = dws.bias;
    j["trainable_mask"] = json{{"W_Q", dws.train_w_q}, {"W_K", dws.train_w_k}, {"bias", dws.train_bias}};
    j["frozen"] = dws.frozen;
    j["provenance"] = json{{"seed", dws.provenance.seed}, {"dataset_hash", dws.provenance.dataset_hash}};
  }
  return j;
}

Aggregator aggregator_from_json(const json& j) {
  if (!j.is_object()) throw InputError("aggregator JSON must be an object");
  const auto format = required<std::string>(j, "format");
  if (format != kAggregatorFormat) throw InputError("unsupported aggregator format '" + format + "'");
  const auto type = required<std::string>(j, "type");
  const AggMode mode = agg_mode_from_string(required<std::string>(j, "mode"));
  const json mask = j.value("trainable_mask", json::object());
  if (!mask.is_object()) throw InputError("aggregator JSON field \"trainable_mask\" must be an object");

  if (type == "ws") {
    WSAggregator ws;
    ws.mode = mode;
    ws.dim = j.contains("D") ? required<std::size_t>(j, "D") : 0;
    const char* key = j.contains("weights") ? "weights" : "logits";
    auto values = required<std::vector<double>>(j, key);
    ws.n_layers = j.contains("L") ? required<std::size_t>(j, "L") : values.size();
    if (values.size() != ws.n_layers) throw ShapeError(std::string(key) + " length differs from L");
    if (std::string(key) == "weights") {
      ws.raw_weights = std::move(values);
    } else {
      ws.logits = std::move(values);
    }
    ws.frozen = j.contains("frozen") ? required<bool>(j, "frozen") : true;
    ws.trainable = mask.contains(key) ? required<std::vector<bool>>(mask, key) : std::vector<bool>(ws.n_layers, false);
    ws.provenance = provenance_from_json(j);
    ws.check();
    return ws;
  }
  if (type == "dws") {
    DWSAggregator dws;
    dws.mode = mode;
    dws.n_layers = required<std::size_t>(j, "L");
    dws.dim = required<std::size_t>(j, "D");
    dws.key_dim = required<std::size_t>(j, "d_k");
    dws.w_q = matrix_from_json(j, "W_Q", dws.dim, dws.key_dim);
    dws.w_k = matrix_from_json(j, "W_K", dws.dim, dws.key_dim);
    dws.bias = required<std::vector<double>>(j, "bias");
    dws.frozen = j.contains("frozen") ? required<bool>(j, "frozen") : true;
    dws.train_w_q = mask.contains("W_Q") ? required<bool>(mask, "W_Q") : false;
    dws.train_w_k = mask.contains("W_K") ? required<bool>(mask, "W_K") : false;
    dws.train_bias =
        mask.contains("bias") ? required<std::vector<bool>>(mask, "bias") : std::vector<bool>(dws.n_layers, false);
    dws.provenance = provenance_from_json(j);
    dws.check();
    return dws;
  }
  throw InputError("unknown aggregator type tag '" + type + "' (expected ws or dws)");
}

void export_aggregator(const Aggregator& agg, const std::filesystem::path& path) {
  const std::string text = dump_json(aggregator_to_json(agg)) + "\n";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("failed writing " + path.string());
}

Aggregator import_aggregator(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(path.string() + ": malformed JSON: " + e.what());
  }
  return aggregator_from_json(j);
}

std::vector<WeightRow> compare_weights(std::span<const Aggregator> aggs, std::span<const std::string> labels,
                                       const LayeredDataset* reference) {
  if (aggs.size() != labels.size()) throw InputError("one label is needed per aggregator");
  std::vector<WeightRow> rows;
  for (std::size_t a = 0; a < aggs.size(); ++a) {
    if (aggregator_layers(aggs[a]) != aggregator_layers(aggs[0])) {
      throw ShapeError("aggregators have mixed layer counts (" + std::to_string(aggregator_layers(aggs[0])) +
                       " vs " + std::to_string(aggregator_layers(aggs[a])) + ")");
    }
    WeightRow row;
    row.label = labels[a];
    if (const auto* ws = std::get_if<WSAggregator>(&aggs[a])) {
      row.type = "ws";
      row.mode = to_string(ws->mode);
      row.normalized_from_raw = ws->raw_weights.has_value();
      row.weights = ws->display_weights();
    } else {
      const auto& dws = std::get<DWSAggregator>(aggs[a]);
      if (!reference) throw InputError("DWS weights are compared on a reference dataset; none was given");
      row.type = "dws";
      row.mode = to_string(dws.mode);
      const auto dyn = dws_fuse<float>(dws, *reference);
      std::vector<double> mean(dws.n_layers);
      std::vector<double> column(reference->n_frames);
      for (std::size_t l = 0; l < dws.n_layers; ++l) {
        for (std::size_t i = 0; i < reference->n_frames; ++i) column[i] = dyn.layer_weights(i, l);
        mean[l] = pairwise_sum(column) / static_cast<double>(reference->n_frames);
      }
      std::vector<double> scratch = mean;
      const double total = canonical_sum<double>(scratch);
      for (double& w : mean) w /= total;
      row.weights = std::move(mean);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_weight_table_csv(std::span<const WeightRow> rows, std::ostream& out) {
  const std::size_t n_layers = rows.empty() ? 0 : rows[0].weights.size();
  out << "label,type,mode,normalized_from_raw";
  for (std::size_t l = 0; l < n_layers; ++l) out << ",w_" << l;
  out << '\n';
  for (const auto& row : rows) {
    out << row.label << ',' << row.type << ',' << row.mode << ',' << (row.normalized_from_raw ? 1 : 0);
    for (double w : row.weights) out << ',' << format_weight(w);
    out << '\n';
  }
}

void write_dynamic_weights_csv(const LayeredDataset& ds, const Matrix<float>& weights, std::ostream& out) {
  if (weights.rows() != ds.n_frames || weights.cols() != ds.n_layers) {
    throw ShapeError("per-frame weights do not match the dataset");
  }
  out << "frame,snr_db";
  for (std::size_t l = 0; l < ds.n_layers; ++l) out << ",w_" << l;
  out << '\n';
  for (std::size_t i = 0; i < ds.n_frames; ++i) {
    out << i << ',';
    if (ds.snr_db) out << format_weight((*ds.snr_db)[i]);
    for (std::size_t l = 0; l < ds.n_layers; ++l) out << ',' << format_weight(weights(i, l));
    out << '\n';
  }
}

#define LINGAGG_INSTANTIATE(T)                                                                                   \
  template FusedView<T> ws_fuse<T>(const WSAggregator&, const LayeredDataset&);                                \
  template DynamicFusion<T> dws_fuse<T>(const DWSAggregator&, const LayeredDataset&);                          \
  template FusedView<T> fuse<T>(const Aggregator&, const LayeredDataset&);                                     \
  template LinguisticResult<WSAggregator, T> train_linguistic_ws<T>(const LayeredDataset&, const TrainConfig&); \
  template LinguisticResult<DWSAggregator, T> train_linguistic_dws<T>(const LayeredDataset&, const TrainConfig&, \
                                                                     std::size_t);

LINGAGG_INSTANTIATE(float)
LINGAGG_INSTANTIATE(double)

#undef LINGAGG_INSTANTIATE

}  // namespace lingagg
