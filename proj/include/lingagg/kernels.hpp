#pragma once

// Differentiable building blocks with hand-written gradients. Everything is
// templated on the scalar type: float for training, double for gradient
// checks. Explicit instantiations for both live in kernels.cpp.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lingagg/matrix.hpp"
#include "lingagg/numeric.hpp"

namespace lingagg {

enum class Mode { train, eval };

// ---------------------------------------------------------------------------
// Probe (MLP classifier)
// ---------------------------------------------------------------------------

template <typename T>
struct Affine {
  Matrix<T> weight;  // [in x out]
  std::vector<T> bias;
};

struct ProbeShape {
  std::size_t in_dim = 0;
  std::vector<std::size_t> hidden{256, 256};  // empty: linear probe
  std::size_t classes = 0;
  double dropout = 0.1;
};

template <typename T>
struct Probe {
  std::vector<Affine<T>> layers;
  double dropout_rate = 0.1;
  // Incremented on every parameter write; forward caches remember it.
  std::uint64_t revision = 0;
  // Identity of the frames the probe was fitted on, when known.
  std::optional<std::uint64_t> train_split;

  std::size_t in_dim() const { return layers.front().weight.rows(); }
  std::size_t classes() const { return layers.back().weight.cols(); }
  void touch() noexcept { ++revision; }
};

/// Glorot-uniform weights, zero biases.
template <typename T>
Probe<T> make_probe(const ProbeShape& shape, std::uint64_t seed);

template <typename T>
void glorot_uniform(Matrix<T>& w, Rng& rng);

template <typename T>
struct ProbeCache {
  const Probe<T>* owner = nullptr;
  std::uint64_t revision = 0;
  std::vector<Matrix<T>> inputs;  // input of every affine layer
  std::vector<Matrix<T>> gates;   // hidden layers: relu'(z) times the dropout scale
};

template <typename T>
struct ProbeForward {
  Matrix<T> logits;
  ProbeCache<T> cache;
};

/// Eval mode is deterministic and dropout-free. Train mode applies inverted
/// dropout after each hidden ReLU with masks drawn from `rng_seed`.
template <typename T>
ProbeForward<T> probe_forward(const Probe<T>& probe, const Matrix<T>& batch, Mode mode, std::uint64_t rng_seed = 0);

template <typename T>
struct ProbeGrads {
  std::vector<Affine<T>> layers;
  Matrix<T> input;
};

template <typename T>
ProbeGrads<T> probe_backward(const Probe<T>& probe, const ProbeCache<T>& cache, const Matrix<T>& d_logits);

// ---------------------------------------------------------------------------
// Softmax cross-entropy
// ---------------------------------------------------------------------------

template <typename T>
struct CrossEntropy {
  double loss = 0.0;                 // mean over the batch, nats
  Matrix<T> d_logits;                // (softmax - onehot) / B
  std::vector<double> per_example;   // -log softmax(logits)[label]
};

template <typename T>
CrossEntropy<T> cross_entropy(const Matrix<T>& logits, std::span<const std::uint32_t> labels);

/// Per-example negative log-likelihood only. Every entry is >= 0.
template <typename T>
std::vector<double> negative_log_likelihood(const Matrix<T>& logits, std::span<const std::uint32_t> labels);

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct ParamSlot {
  std::string name;
  std::span<T> value;
  std::span<const T> grad;
  std::span<const std::uint8_t> mask{};  // empty: every entry trainable
};

template <typename T>
struct AdamState {
  explicit AdamState(AdamConfig c = {}) : config(c) {}

  AdamConfig config;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;
};

/// Bias-corrected Adam update over all slots. Moments are allocated on the
/// first call; the slot list must keep the same order and shapes afterwards.
/// Gradients are checked for finiteness before anything is written.
template <typename T>
void adam_step(std::span<const ParamSlot<T>> params, AdamState<T>& state);

// ---------------------------------------------------------------------------
// Weighted sum over layers
// ---------------------------------------------------------------------------

/// Softmax with a permutation-invariant denominator.
template <typename T>
std::vector<T> softmax(std::span<const T> logits);

/// out[d] = sum_l weights[l] * frame[l*D + d], summed in canonical order so the
/// result is invariant under a joint permutation of layers and weights.
template <typename T>
void weighted_sum(std::span<const T> weights, std::span<const T> frame, std::span<T> out);

/// Batched forward: frames [B x L*D] -> [B x D].
template <typename T>
Matrix<T> weighted_sum_forward(std::span<const T> weights, const Matrix<T>& frames);

/// Gradient of a batch of weighted sums w.r.t. the softmax logits (adds into
/// `d_logits`) and optionally the frames.
template <typename T>
void weighted_sum_backward(std::span<const T> weights, const Matrix<T>& frames, const Matrix<T>& d_fused,
                           std::span<T> d_logits, Matrix<T>* d_frames = nullptr);

// ---------------------------------------------------------------------------
// Single-head attention over the layer axis
// ---------------------------------------------------------------------------

template <typename T>
struct AttentionParams {
  Matrix<T> w_q;        // [D x d_k]
  Matrix<T> w_k;        // [D x d_k]
  std::vector<T> bias;  // [L], added to every row of the score matrix
  std::uint64_t revision = 0;

  std::size_t layers() const noexcept { return bias.size(); }
  std::size_t dim() const noexcept { return w_q.rows(); }
  std::size_t key_dim() const noexcept { return w_q.cols(); }
  void touch() noexcept { ++revision; }
};

template <typename T>
struct AttentionCache {
  const AttentionParams<T>* owner = nullptr;
  std::uint64_t revision = 0;
  Matrix<T> x;          // [L x D]
  Matrix<T> q;          // [L x d_k]
  Matrix<T> k;          // [L x d_k]
  Matrix<T> attention;  // [L x L], rows sum to 1
};

template <typename T>
struct AttentionForward {
  std::vector<T> fused;  // [D]
  AttentionCache<T> cache;

  const Matrix<T>& attention() const noexcept { return cache.attention; }
};

/// A = softmax_rows(X W_Q (X W_K)^T / sqrt(D) + b), fused = mean_rows(A X).
/// The score scale uses the feature width D, not d_k.
template <typename T>
AttentionForward<T> layer_attention_forward(const AttentionParams<T>& params, std::span<const T> frame);

template <typename T>
struct AttentionGrads {
  Matrix<T> w_q;
  Matrix<T> w_k;
  std::vector<T> bias;
  Matrix<T> input;  // [L x D] for the last frame processed
};

template <typename T>
AttentionGrads<T> zero_attention_grads(const AttentionParams<T>& params);

/// Adds parameter gradients into `grads`; overwrites grads.input.
template <typename T>
void layer_attention_backward(const AttentionParams<T>& params, const AttentionCache<T>& cache,
                              std::span<const T> d_fused, AttentionGrads<T>& grads);

template <typename T>
AttentionGrads<T> layer_attention_backward(const AttentionParams<T>& params, const AttentionCache<T>& cache,
                                           std::span<const T> d_fused);

/// Mass each layer receives: column means of the attention matrix. Sums to 1.
template <typename T>
std::vector<T> column_mass(const Matrix<T>& attention);

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
};

struct CheckedParam {
  std::string name;
  std::span<double> values;
  std::span<const double> analytic;
};

/// |a - n| / max(|a|, |n|, 1e-12)
double relative_error(double analytic, double numeric);

/// Central differences for every scalar in `params`; `loss` must read the
/// parameters through the spans. Values are restored afterwards.
GradCheckReport finite_diff_check(const std::function<double()>& loss, std::span<const CheckedParam> params,
                                  double eps = 1e-5);

}  // namespace lingagg
