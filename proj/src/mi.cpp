#include "lingagg/mi.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <ostream>
#include <thread>

#include "lingagg/error.hpp"

namespace lingagg {
namespace {

constexpr std::size_t kEvalChunk = 1024;

// Runs fn(i) for i in [0, n) on up to `threads` workers. Exceptions are
// rethrown in index order.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const unsigned workers = std::min<unsigned>(threads, static_cast<unsigned>(n));
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

template <typename T>
MIReport run_analysis(const LayeredDataset& ds, std::span<const double> levels, bool per_layer, bool per_snr,
                      const TrainConfig& cfg) {
  cfg.validate();
  validate(ds);
  if (ds.n_layers == 0) throw InputError("dataset has no layers");
  const SplitIndices split = split_indices(ds.n_frames, cfg.split_spec());
  const auto y_train = gather_labels(ds, split.train);
  const auto y_eval = gather_labels(ds, split.eval);

  std::vector<SnrBin> bins;
  if (per_snr) {
    bins = group_by_snr(ds, levels);
    // Keep only eval frames in each bin.
    std::vector<std::uint8_t> is_eval(ds.n_frames, 0);
    for (std::size_t i : split.eval) is_eval[i] = 1;
    for (auto& b : bins) std::erase_if(b.frames, [&](std::size_t i) { return !is_eval[i]; });
  }

  const std::size_t n_layers = ds.n_layers;
  std::vector<std::vector<MIEstimate>> per_layer_entries(n_layers);
  parallel_for(n_layers, cfg.threads, [&](std::size_t layer) {
    TrainConfig layer_cfg = cfg;
    layer_cfg.seed = cfg.seed ^ static_cast<std::uint64_t>(layer);
    const Matrix<T> x_train = gather_layer<T>(ds, layer, split.train);
    TrainedProbe<T> trained = train_probe<T>(x_train, y_train, ds.vocab_size(), layer_cfg);
    trained.probe.train_split = split.train_id;

    auto& out = per_layer_entries[layer];
    if (per_layer) {
      const Matrix<T> x_eval = gather_layer<T>(ds, layer, split.eval);
      MIEstimate e = mi_bound(trained.probe, x_eval, y_eval, split.eval_id);
      e.context = "layer";
      e.layer = layer;
      out.push_back(e);
    }
    if (per_snr) {
      std::vector<MIEstimate> bin_entries;
      for (const auto& b : bins) {
        MIEstimate e;
        if (b.frames.empty()) {
          e.present = false;
        } else {
          const Matrix<T> xb = gather_layer<T>(ds, layer, b.frames);
          e = mi_bound(trained.probe, xb, gather_labels(ds, b.frames), split.eval_id);
        }
        e.context = "snr";
        e.layer = layer;
        e.snr_bin = b.level;
        bin_entries.push_back(e);
      }
      MIEstimate avg;
      avg.context = "layer_avg";
      avg.layer = layer;
      std::size_t present = 0;
      for (const auto& e : bin_entries) {
        if (!e.present) continue;
        avg.h_y += e.h_y;
        avg.ce += e.ce;
        avg.n_eval += e.n_eval;
        ++present;
      }
      if (present == 0) {
        avg.present = false;
      } else {
        avg.h_y /= static_cast<double>(present);
        avg.ce /= static_cast<double>(present);
        avg.bound = avg.h_y - avg.ce;
      }
      out.insert(out.end(), bin_entries.begin(), bin_entries.end());
      out.push_back(avg);
    }
  });

  MIReport report;
  report.n_layers = n_layers;
  for (const auto& b : bins) report.snr_bins.push_back(b.level);
  report.averaging = per_snr ? "layer_avg = unweighted mean over non-empty SNR bins" : "none";
  for (auto& v : per_layer_entries) report.entries.insert(report.entries.end(), v.begin(), v.end());
  return report;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw InputError("epochs must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw InputError("learning rate must be positive");
  if (batch_size < 1) throw InputError("batch size must be >= 1");
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) throw InputError("eval fraction must lie in (0, 1)");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InputError("dropout must lie in [0, 1)");
  for (std::size_t h : hidden) {
    if (h == 0) throw InputError("hidden widths must be positive");
  }
}

ProbeShape TrainConfig::probe_shape(std::size_t in_dim, std::size_t classes) const {
  ProbeShape s;
  s.in_dim = in_dim;
  s.classes = classes;
  s.dropout = dropout;
  s.hidden = linear_probe ? std::vector<std::size_t>{} : hidden;
  return s;
}

json TrainConfig::to_json() const {
  return json{{"epochs", epochs},
              {"lr", lr},
              {"batch_size", batch_size},
              {"seed", seed},
              {"eval_fraction", eval_fraction},
              {"hidden", hidden},
              {"dropout", dropout},
              {"probe", linear_probe ? "linear" : "mlp"},
              {"precision", precision == Precision::f32 ? "f32" : "f64"},
              {"threads", threads}};
}

const MIEstimate* MIReport::find(std::string_view context, std::optional<std::size_t> layer,
                                 std::optional<double> snr_bin) const {
  for (const auto& e : entries) {
    if (e.context == context && e.layer == layer && e.snr_bin == snr_bin) return &e;
  }
  return nullptr;
}

std::vector<double> MIReport::layer_bounds() const {
  std::vector<double> out(n_layers, 0.0);
  for (const auto& e : entries) {
    if (e.context == "layer" && e.layer) out.at(*e.layer) = e.bound;
  }
  return out;
}

double empirical_entropy(std::span<const std::uint32_t> labels) {
  if (labels.empty()) throw InputError("entropy of an empty label set");
  std::map<std::uint32_t, std::size_t> counts;
  for (auto y : labels) ++counts[y];
  const double n = static_cast<double>(labels.size());
  std::vector<double> terms;
  terms.reserve(counts.size());
  for (const auto& [label, c] : counts) {
    const double p = static_cast<double>(c) / n;
    terms.push_back(-p * std::log(p));
  }
  return pairwise_sum(terms);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(derive_seed(seed, 0x5f0ff1e), static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  return order;
}

std::uint64_t dropout_seed(std::uint64_t seed, int epoch, std::size_t batch) {
  return derive_seed(derive_seed(derive_seed(seed, 0xd209), static_cast<std::uint64_t>(epoch)), batch);
}

std::vector<std::uint32_t> gather_labels(const LayeredDataset& ds, std::span<const std::size_t> frames) {
  std::vector<std::uint32_t> out;
  out.reserve(frames.size());
  for (std::size_t i : frames) out.push_back(ds.labels.at(i));
  return out;
}

template <typename T>
Matrix<T> gather_layer(const LayeredDataset& ds, std::size_t layer, std::span<const std::size_t> frames) {
  if (layer >= ds.n_layers) throw ShapeError("layer " + std::to_string(layer) + " out of range");
  Matrix<T> out(frames.size(), ds.dim);
  for (std::size_t r = 0; r < frames.size(); ++r) {
    const auto src = ds.layer(frames[r], layer);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

template <typename T>
Matrix<T> gather_frames(const LayeredDataset& ds, std::span<const std::size_t> frames) {
  Matrix<T> out(frames.size(), ds.frame_stride());
  for (std::size_t r = 0; r < frames.size(); ++r) {
    const auto src = ds.frame(frames[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

template <typename T>
Matrix<T> gather_rows(const Matrix<T>& m, std::span<const std::size_t> rows) {
  Matrix<T> out(rows.size(), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = m.row(rows[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

template <typename T>
TrainedProbe<T> train_probe(const Matrix<T>& features, std::span<const std::uint32_t> labels, std::size_t n_classes,
                            const TrainConfig& cfg) {
  cfg.validate();
  if (features.rows() != labels.size()) throw ShapeError("feature rows and label count differ");
  if (features.rows() == 0) throw InputError("no training frames");
  for (auto y : labels) {
    if (y >= n_classes) throw InputError("label " + std::to_string(y) + " out of range");
  }
  bool two_classes = false;
  for (auto y : labels) two_classes = two_classes || y != labels[0];
  if (!two_classes) throw InputError("training data contains a single class");

  TrainedProbe<T> out{make_probe<T>(cfg.probe_shape(features.cols(), n_classes), cfg.seed), {}};
  Probe<T>& probe = out.probe;
  AdamState<T> adam{AdamConfig{cfg.lr}};
  const std::size_t n = features.rows();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(n, cfg.seed, epoch);
    std::vector<double> losses;
    losses.reserve(n);
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Matrix<T> xb = gather_rows(features, idx);
      std::vector<std::uint32_t> yb;
      yb.reserve(idx.size());
      for (std::size_t i : idx) yb.push_back(labels[i]);

      auto fwd = probe_forward(probe, xb, Mode::train, dropout_seed(cfg.seed, epoch, batch_index));
      auto ce = cross_entropy(fwd.logits, yb);
      if (!std::isfinite(ce.loss)) throw DivergenceError(epoch + 1, "probe cross-entropy is not finite");
      auto grads = probe_backward(probe, fwd.cache, ce.d_logits);

      std::vector<ParamSlot<T>> slots;
      for (std::size_t l = 0; l < probe.layers.size(); ++l) {
        slots.push_back({"probe." + std::to_string(l) + ".weight", probe.layers[l].weight.values(),
                         grads.layers[l].weight.values()});
        slots.push_back({"probe." + std::to_string(l) + ".bias", probe.layers[l].bias, grads.layers[l].bias});
      }
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
    out.history.push_back(mean);
  }
  return out;
}

template <typename T>
MIEstimate mi_bound(const Probe<T>& probe, const Matrix<T>& features, std::span<const std::uint32_t> labels,
                    std::optional<std::uint64_t> eval_split) {
  if (features.rows() == 0) throw InputError("empty evaluation set");
  if (features.rows() != labels.size()) throw ShapeError("feature rows and label count differ");
  if (features.cols() != probe.in_dim()) throw ShapeError("probe input width does not match features");
  if (eval_split && probe.train_split && *eval_split == *probe.train_split) {
    throw InputError("evaluation frames are the probe's training frames");
  }
  std::vector<double> nll;
  nll.reserve(features.rows());
  for (std::size_t start = 0; start < features.rows(); start += kEvalChunk) {
    const std::size_t stop = std::min(features.rows(), start + kEvalChunk);
    Matrix<T> chunk(stop - start, features.cols());
    std::copy(features.data() + start * features.cols(), features.data() + stop * features.cols(), chunk.data());
    const auto fwd = probe_forward(probe, chunk, Mode::eval);
    const auto part = negative_log_likelihood(fwd.logits, labels.subspan(start, stop - start));
    nll.insert(nll.end(), part.begin(), part.end());
  }
  MIEstimate e;
  e.h_y = empirical_entropy(labels);
  e.ce = pairwise_sum(nll) / static_cast<double>(nll.size());
  if (!std::isfinite(e.ce)) throw NumericalError("held-out cross-entropy is not finite");
  e.bound = e.h_y - e.ce;
  e.n_eval = features.rows();
  return e;
}

MIReport layerwise_analysis(const LayeredDataset& ds, const TrainConfig& cfg) {
  if (cfg.precision == Precision::f64) return run_analysis<double>(ds, {}, true, false, cfg);
  return run_analysis<float>(ds, {}, true, false, cfg);
}

MIReport snr_analysis(const LayeredDataset& ds, std::span<const double> levels, const TrainConfig& cfg) {
  if (!ds.snr_db) throw InputError("dataset has no per-frame SNR track");
  if (cfg.precision == Precision::f64) return run_analysis<double>(ds, levels, false, true, cfg);
  return run_analysis<float>(ds, levels, false, true, cfg);
}

MIReport full_analysis(const LayeredDataset& ds, std::span<const double> levels, const TrainConfig& cfg) {
  const bool per_snr = ds.snr_db.has_value() && !levels.empty();
  if (cfg.precision == Precision::f64) return run_analysis<double>(ds, levels, true, per_snr, cfg);
  return run_analysis<float>(ds, levels, true, per_snr, cfg);
}

std::string report_csv_header(bool with_bits) {
  return with_bits ? "context,layer,snr_bin,h_y_nats,ce_nats,mi_nats,mi_bits,n_eval"
                   : "context,layer,snr_bin,h_y_nats,ce_nats,mi_nats,n_eval";
}

std::string estimate_csv_row(const MIEstimate& e, bool with_bits) {
  std::string row = e.context + ",";
  if (e.layer) row += std::to_string(*e.layer);
  row += ",";
  if (e.snr_bin) row += format_number(*e.snr_bin);
  row += ",";
  // Absent estimates keep their row with empty value fields.
  if (e.present) {
    row += format_number(e.h_y) + "," + format_number(e.ce) + "," + format_number(e.bound) + ",";
    if (with_bits) row += format_number(e.bits()) + ",";
  } else {
    row += with_bits ? ",,,," : ",,,";
  }
  row += std::to_string(e.n_eval);
  return row;
}

void write_report_csv(const MIReport& report, std::ostream& out, bool with_bits) {
  out << report_csv_header(with_bits) << '\n';
  for (const auto& e : report.entries) out << estimate_csv_row(e, with_bits) << '\n';
}

#define LINGAGG_INSTANTIATE(T)                                                                                    \
  template TrainedProbe<T> train_probe<T>(const Matrix<T>&, std::span<const std::uint32_t>, std::size_t,          \
                                          const TrainConfig&);                                                   \
  template MIEstimate mi_bound<T>(const Probe<T>&, const Matrix<T>&, std::span<const std::uint32_t>,              \
                                  std::optional<std::uint64_t>);                                                 \
  template Matrix<T> gather_layer<T>(const LayeredDataset&, std::size_t, std::span<const std::size_t>);           \
  template Matrix<T> gather_frames<T>(const LayeredDataset&, std::span<const std::size_t>);                       \
  template Matrix<T> gather_rows<T>(const Matrix<T>&, std::span<const std::size_t>);

LINGAGG_INSTANTIATE(float)
LINGAGG_INSTANTIATE(double)

#undef LINGAGG_INSTANTIATE

}  // namespace lingagg
