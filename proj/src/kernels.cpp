#include "lingagg/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "lingagg/error.hpp"

namespace lingagg {
namespace {

// Z = X W + b, rows of Z built by axpy over rows of W.
template <typename T>
Matrix<T> affine_forward(const Matrix<T>& x, const Affine<T>& a) {
  const std::size_t out_dim = a.weight.cols();
  Matrix<T> z(x.rows(), out_dim);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    T* zr = z.row(i).data();
    std::copy(a.bias.begin(), a.bias.end(), zr);
    const T* xr = x.row(i).data();
    for (std::size_t k = 0; k < x.cols(); ++k) {
      const T xv = xr[k];
      if (xv == T{0}) continue;
      const T* wr = a.weight.row(k).data();
      for (std::size_t j = 0; j < out_dim; ++j) zr[j] += xv * wr[j];
    }
  }
  return z;
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& m) {
  Matrix<T> t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

template <typename T>
void check_cache(const void* owner, std::uint64_t revision, const void* params, std::uint64_t current) {
  if (owner != params) throw StaleCacheError("cache was produced by different parameters");
  if (revision != current) throw StaleCacheError("parameters changed since the forward pass");
}

}  // namespace

// ---------------------------------------------------------------------------
// Probe
// ---------------------------------------------------------------------------

template <typename T>
void glorot_uniform(Matrix<T>& w, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  for (auto& v : w.values()) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * limit);
}

template <typename T>
Probe<T> make_probe(const ProbeShape& shape, std::uint64_t seed) {
  if (shape.in_dim == 0 || shape.classes == 0) throw ShapeError("probe needs non-zero input and output width");
  if (!(shape.dropout >= 0.0 && shape.dropout < 1.0)) throw InputError("dropout rate must lie in [0, 1)");
  Probe<T> probe;
  probe.dropout_rate = shape.dropout;
  Rng rng(derive_seed(seed, 0x1417));
  std::size_t in = shape.in_dim;
  std::vector<std::size_t> widths = shape.hidden;
  widths.push_back(shape.classes);
  for (std::size_t out : widths) {
    if (out == 0) throw ShapeError("probe layer width must be positive");
    Affine<T> a{Matrix<T>(in, out), std::vector<T>(out, T{0})};
    glorot_uniform(a.weight, rng);
    probe.layers.push_back(std::move(a));
    in = out;
  }
  return probe;
}

template <typename T>
ProbeForward<T> probe_forward(const Probe<T>& probe, const Matrix<T>& batch, Mode mode, std::uint64_t rng_seed) {
  if (batch.cols() != probe.in_dim()) {
    throw ShapeError("probe expects input width " + std::to_string(probe.in_dim()) + ", got " +
                     std::to_string(batch.cols()));
  }
  ProbeForward<T> out;
  out.cache.owner = &probe;
  out.cache.revision = probe.revision;
  const bool drop = mode == Mode::train && probe.dropout_rate > 0.0;
  const T keep_scale = drop ? static_cast<T>(1.0 / (1.0 - probe.dropout_rate)) : T{1};
  Rng rng(rng_seed);

  Matrix<T> h = batch;
  for (std::size_t l = 0; l < probe.layers.size(); ++l) {
    Matrix<T> z = affine_forward(h, probe.layers[l]);
    out.cache.inputs.push_back(std::move(h));
    if (l + 1 == probe.layers.size()) {
      out.logits = std::move(z);
      break;
    }
    Matrix<T> gate(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.size(); ++i) {
      T g = z.values()[i] > T{0} ? T{1} : T{0};
      if (drop) g = rng.uniform() < probe.dropout_rate ? T{0} : g * keep_scale;
      gate.values()[i] = g;
      z.values()[i] *= g;
    }
    out.cache.gates.push_back(std::move(gate));
    h = std::move(z);
  }
  return out;
}

template <typename T>
ProbeGrads<T> probe_backward(const Probe<T>& probe, const ProbeCache<T>& cache, const Matrix<T>& d_logits) {
  check_cache<T>(cache.owner, cache.revision, &probe, probe.revision);
  if (cache.inputs.size() != probe.layers.size()) throw StaleCacheError("cache depth does not match probe");
  if (d_logits.rows() != cache.inputs.front().rows() || d_logits.cols() != probe.classes()) {
    throw ShapeError("d_logits shape does not match forward batch");
  }
  ProbeGrads<T> grads;
  grads.layers.resize(probe.layers.size());
  Matrix<T> g = d_logits;
  for (std::size_t l = probe.layers.size(); l-- > 0;) {
    const Affine<T>& a = probe.layers[l];
    const Matrix<T>& x = cache.inputs[l];
    const std::size_t in_dim = a.weight.rows();
    const std::size_t out_dim = a.weight.cols();

    Affine<T>& ga = grads.layers[l];
    ga.weight = Matrix<T>(in_dim, out_dim);
    ga.bias.assign(out_dim, T{0});
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const T* gr = g.row(i).data();
      for (std::size_t j = 0; j < out_dim; ++j) ga.bias[j] += gr[j];
      const T* xr = x.row(i).data();
      for (std::size_t k = 0; k < in_dim; ++k) {
        const T xv = xr[k];
        if (xv == T{0}) continue;
        T* wr = ga.weight.row(k).data();
        for (std::size_t j = 0; j < out_dim; ++j) wr[j] += xv * gr[j];
      }
    }

    const Matrix<T> wt = transpose(a.weight);
    Matrix<T> dx(x.rows(), in_dim);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      T* dr = dx.row(i).data();
      const T* gr = g.row(i).data();
      for (std::size_t j = 0; j < out_dim; ++j) {
        const T gv = gr[j];
        if (gv == T{0}) continue;
        const T* wr = wt.row(j).data();
        for (std::size_t k = 0; k < in_dim; ++k) dr[k] += gv * wr[k];
      }
    }
    if (l > 0) {
      const Matrix<T>& gate = cache.gates[l - 1];
      for (std::size_t i = 0; i < dx.size(); ++i) dx.values()[i] *= gate.values()[i];
      g = std::move(dx);
    } else {
      grads.input = std::move(dx);
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Cross-entropy
// ---------------------------------------------------------------------------

template <typename T>
std::vector<double> negative_log_likelihood(const Matrix<T>& logits, std::span<const std::uint32_t> labels) {
  if (labels.size() != logits.rows()) throw ShapeError("label count does not match logits rows");
  std::vector<double> nll(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (labels[i] >= logits.cols()) {
      throw InputError("label " + std::to_string(labels[i]) + " out of range for " + std::to_string(logits.cols()) +
                       " classes");
    }
    const auto r = logits.row(i);
    double mx = r[0];
    for (T v : r) mx = std::max(mx, static_cast<double>(v));
    double s = 0.0;
    for (T v : r) s += std::exp(static_cast<double>(v) - mx);
    // (mx - z_y) >= 0 and log(s) >= 0 because s includes exp(0).
    nll[i] = (mx - static_cast<double>(r[labels[i]])) + std::log(s);
  }
  return nll;
}

template <typename T>
CrossEntropy<T> cross_entropy(const Matrix<T>& logits, std::span<const std::uint32_t> labels) {
  CrossEntropy<T> out;
  out.per_example = negative_log_likelihood(logits, labels);
  if (logits.rows() == 0) throw ShapeError("cross-entropy of an empty batch");
  out.loss = pairwise_sum(out.per_example) / static_cast<double>(logits.rows());
  out.d_logits = Matrix<T>(logits.rows(), logits.cols());
  const double inv_b = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row(i);
    double mx = r[0];
    for (T v : r) mx = std::max(mx, static_cast<double>(v));
    double s = 0.0;
    for (T v : r) s += std::exp(static_cast<double>(v) - mx);
    auto d = out.d_logits.row(i);
    for (std::size_t c = 0; c < r.size(); ++c) {
      const double p = std::exp(static_cast<double>(r[c]) - mx) / s;
      d[c] = static_cast<T>((p - (c == labels[i] ? 1.0 : 0.0)) * inv_b);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
void adam_step(std::span<const ParamSlot<T>> params, AdamState<T>& state) {
  for (const auto& p : params) {
    if (p.value.size() != p.grad.size()) throw ShapeError("gradient shape mismatch for '" + p.name + "'");
    if (!p.mask.empty() && p.mask.size() != p.value.size()) throw ShapeError("mask shape mismatch for '" + p.name + "'");
    for (std::size_t i = 0; i < p.grad.size(); ++i) {
      if (!std::isfinite(static_cast<double>(p.grad[i]))) {
        throw NumericalError("non-finite gradient in '" + p.name + "' at index " + std::to_string(i));
      }
    }
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.size(), 0.0);
      state.v.emplace_back(p.value.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("Adam state does not match parameter list");

  ++state.t;
  const AdamConfig& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t s = 0; s < params.size(); ++s) {
    const auto& p = params[s];
    auto& m = state.m[s];
    auto& v = state.v[s];
    if (m.size() != p.value.size()) throw ShapeError("Adam moment shape mismatch for '" + p.name + "'");
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      if (!p.mask.empty() && !p.mask[i]) continue;
      const double g = p.grad[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - c.lr * m_hat / (std::sqrt(v_hat) + c.eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Weighted sum
// ---------------------------------------------------------------------------

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  if (logits.empty()) return {};
  const T mx = *std::max_element(logits.begin(), logits.end());
  std::vector<T> e(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) e[i] = std::exp(logits[i] - mx);
  std::vector<T> scratch = e;
  const T denom = canonical_sum(std::span<T>(scratch));
  for (auto& v : e) v /= denom;
  return e;
}

template <typename T>
void weighted_sum(std::span<const T> weights, std::span<const T> frame, std::span<T> out) {
  const std::size_t n_layers = weights.size();
  const std::size_t dim = out.size();
  if (frame.size() != n_layers * dim) throw ShapeError("frame size does not match weights x dim");
  T scratch[64];
  std::vector<T> big;
  T* s = scratch;
  if (n_layers > 64) {
    big.resize(n_layers);
    s = big.data();
  }
  for (std::size_t d = 0; d < dim; ++d) {
    for (std::size_t l = 0; l < n_layers; ++l) s[l] = weights[l] * frame[l * dim + d];
    out[d] = canonical_sum(std::span<T>(s, n_layers));
  }
}

template <typename T>
Matrix<T> weighted_sum_forward(std::span<const T> weights, const Matrix<T>& frames) {
  if (weights.empty() || frames.cols() % weights.size() != 0) throw ShapeError("frame width is not a multiple of L");
  const std::size_t dim = frames.cols() / weights.size();
  Matrix<T> out(frames.rows(), dim);
  for (std::size_t b = 0; b < frames.rows(); ++b) weighted_sum<T>(weights, frames.row(b), out.row(b));
  return out;
}

template <typename T>
void weighted_sum_backward(std::span<const T> weights, const Matrix<T>& frames, const Matrix<T>& d_fused,
                           std::span<T> d_logits, Matrix<T>* d_frames) {
  const std::size_t n_layers = weights.size();
  const std::size_t dim = d_fused.cols();
  if (frames.cols() != n_layers * dim || frames.rows() != d_fused.rows() || d_logits.size() != n_layers) {
    throw ShapeError("weighted-sum backward shape mismatch");
  }
  std::vector<double> dw(n_layers, 0.0);
  for (std::size_t l = 0; l < n_layers; ++l) {
    double acc = 0.0;
    for (std::size_t b = 0; b < frames.rows(); ++b) {
      const T* x = frames.row(b).data() + l * dim;
      const T* g = d_fused.row(b).data();
      for (std::size_t d = 0; d < dim; ++d) acc += static_cast<double>(x[d]) * static_cast<double>(g[d]);
    }
    dw[l] = acc;
  }
  double dot = 0.0;
  for (std::size_t l = 0; l < n_layers; ++l) dot += static_cast<double>(weights[l]) * dw[l];
  for (std::size_t l = 0; l < n_layers; ++l) {
    d_logits[l] += static_cast<T>(static_cast<double>(weights[l]) * (dw[l] - dot));
  }
  if (d_frames) {
    *d_frames = Matrix<T>(frames.rows(), frames.cols());
    for (std::size_t b = 0; b < frames.rows(); ++b)
      for (std::size_t l = 0; l < n_layers; ++l)
        for (std::size_t d = 0; d < dim; ++d) (*d_frames)(b, l * dim + d) = weights[l] * d_fused(b, d);
  }
}

// ---------------------------------------------------------------------------
// Layer attention
// ---------------------------------------------------------------------------

template <typename T>
AttentionForward<T> layer_attention_forward(const AttentionParams<T>& params, std::span<const T> frame) {
  const std::size_t n_layers = params.layers();
  const std::size_t dim = params.dim();
  const std::size_t dk = params.key_dim();
  if (params.w_k.rows() != dim || params.w_k.cols() != dk) throw ShapeError("W_Q and W_K shapes differ");
  if (frame.size() != n_layers * dim) {
    throw ShapeError("attention expects " + std::to_string(n_layers) + "x" + std::to_string(dim) + " frame, got " +
                     std::to_string(frame.size()) + " values");
  }
  AttentionForward<T> out;
  AttentionCache<T>& c = out.cache;
  c.owner = &params;
  c.revision = params.revision;
  c.x = Matrix<T>(n_layers, dim);
  std::copy(frame.begin(), frame.end(), c.x.data());
  c.q = Matrix<T>(n_layers, dk);
  c.k = Matrix<T>(n_layers, dk);
  for (std::size_t i = 0; i < n_layers; ++i) {
    for (std::size_t d = 0; d < dim; ++d) {
      const T xv = c.x(i, d);
      const T* wq = params.w_q.row(d).data();
      const T* wk = params.w_k.row(d).data();
      T* qr = c.q.row(i).data();
      T* kr = c.k.row(i).data();
      for (std::size_t j = 0; j < dk; ++j) {
        qr[j] += xv * wq[j];
        kr[j] += xv * wk[j];
      }
    }
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  c.attention = Matrix<T>(n_layers, n_layers);
  std::vector<double> row(n_layers);
  for (std::size_t i = 0; i < n_layers; ++i) {
    double mx = -HUGE_VAL;
    for (std::size_t j = 0; j < n_layers; ++j) {
      double s = 0.0;
      for (std::size_t a = 0; a < dk; ++a) s += static_cast<double>(c.q(i, a)) * static_cast<double>(c.k(j, a));
      row[j] = s * scale + static_cast<double>(params.bias[j]);
      mx = std::max(mx, row[j]);
    }
    double z = 0.0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      z += v;
    }
    for (std::size_t j = 0; j < n_layers; ++j) c.attention(i, j) = static_cast<T>(row[j] / z);
  }
  const std::vector<T> mass = column_mass(c.attention);
  out.fused.assign(dim, T{0});
  for (std::size_t j = 0; j < n_layers; ++j)
    for (std::size_t d = 0; d < dim; ++d) out.fused[d] += mass[j] * c.x(j, d);
  return out;
}

template <typename T>
AttentionGrads<T> zero_attention_grads(const AttentionParams<T>& params) {
  AttentionGrads<T> g;
  g.w_q = Matrix<T>(params.dim(), params.key_dim());
  g.w_k = Matrix<T>(params.dim(), params.key_dim());
  g.bias.assign(params.layers(), T{0});
  g.input = Matrix<T>(params.layers(), params.dim());
  return g;
}

template <typename T>
void layer_attention_backward(const AttentionParams<T>& params, const AttentionCache<T>& cache,
                              std::span<const T> d_fused, AttentionGrads<T>& grads) {
  check_cache<T>(cache.owner, cache.revision, &params, params.revision);
  const std::size_t n_layers = params.layers();
  const std::size_t dim = params.dim();
  const std::size_t dk = params.key_dim();
  if (d_fused.size() != dim) throw ShapeError("d_fused width does not match D");
  if (grads.w_q.rows() != dim || grads.bias.size() != n_layers) throw ShapeError("gradient buffers have wrong shape");

  const Matrix<T>& a = cache.attention;
  const Matrix<T>& x = cache.x;
  const double inv_l = 1.0 / static_cast<double>(n_layers);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  const std::vector<T> mass = column_mass(a);

  // fused = sum_j mass_j x_j, mass_j = mean_i A_ij
  grads.input = Matrix<T>(n_layers, dim);
  std::vector<double> d_mass(n_layers, 0.0);
  for (std::size_t j = 0; j < n_layers; ++j) {
    double s = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      s += static_cast<double>(x(j, d)) * static_cast<double>(d_fused[d]);
      grads.input(j, d) = mass[j] * d_fused[d];
    }
    d_mass[j] = s;
  }
  // Row softmax: dS_ij = A_ij (dA_ij - sum_k A_ik dA_ik), with dA_ij = d_mass_j / L.
  Matrix<double> ds(n_layers, n_layers);
  for (std::size_t i = 0; i < n_layers; ++i) {
    double dot = 0.0;
    for (std::size_t k = 0; k < n_layers; ++k) dot += static_cast<double>(a(i, k)) * d_mass[k] * inv_l;
    for (std::size_t j = 0; j < n_layers; ++j) ds(i, j) = static_cast<double>(a(i, j)) * (d_mass[j] * inv_l - dot);
  }
  for (std::size_t j = 0; j < n_layers; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n_layers; ++i) s += ds(i, j);
    grads.bias[j] += static_cast<T>(s);
  }
  // dQ = dS K * scale, dK = dS^T Q * scale
  Matrix<double> dq(n_layers, dk);
  Matrix<double> dkm(n_layers, dk);
  for (std::size_t i = 0; i < n_layers; ++i) {
    for (std::size_t j = 0; j < n_layers; ++j) {
      const double sij = ds(i, j) * scale;
      for (std::size_t c = 0; c < dk; ++c) {
        dq(i, c) += sij * static_cast<double>(cache.k(j, c));
        dkm(j, c) += sij * static_cast<double>(cache.q(i, c));
      }
    }
  }
  for (std::size_t i = 0; i < n_layers; ++i) {
    for (std::size_t d = 0; d < dim; ++d) {
      const double xv = x(i, d);
      T* gq = grads.w_q.row(d).data();
      T* gk = grads.w_k.row(d).data();
      double dx = 0.0;
      for (std::size_t c = 0; c < dk; ++c) {
        gq[c] += static_cast<T>(xv * dq(i, c));
        gk[c] += static_cast<T>(xv * dkm(i, c));
        dx += dq(i, c) * static_cast<double>(params.w_q(d, c)) + dkm(i, c) * static_cast<double>(params.w_k(d, c));
      }
      grads.input(i, d) += static_cast<T>(dx);
    }
  }
}

template <typename T>
AttentionGrads<T> layer_attention_backward(const AttentionParams<T>& params, const AttentionCache<T>& cache,
                                           std::span<const T> d_fused) {
  AttentionGrads<T> g = zero_attention_grads(params);
  layer_attention_backward(params, cache, d_fused, g);
  return g;
}

template <typename T>
std::vector<T> column_mass(const Matrix<T>& attention) {
  std::vector<T> mass(attention.cols(), T{0});
  for (std::size_t j = 0; j < attention.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < attention.rows(); ++i) s += static_cast<double>(attention(i, j));
    mass[j] = static_cast<T>(s / static_cast<double>(attention.rows()));
  }
  return mass;
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_diff_check(const std::function<double()>& loss, std::span<const CheckedParam> params,
                                  double eps) {
  if (!(eps > 0.0)) throw InputError("finite-difference step must be positive");
  GradCheckReport report;
  for (const auto& p : params) {
    if (p.values.size() != p.analytic.size()) throw ShapeError("analytic gradient shape mismatch for " + p.name);
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      const double saved = p.values[i];
      p.values[i] = saved + eps;
      const double up = loss();
      p.values[i] = saved - eps;
      const double down = loss();
      p.values[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericalError("non-finite loss while perturbing " + p.name + "[" + std::to_string(i) + "]");
      }
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(p.analytic[i], numeric);
      ++report.checked;
      if (report.worst_param.empty() || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

#define LINGAGG_INSTANTIATE(T)                                                                                      \
  template void glorot_uniform<T>(Matrix<T>&, Rng&);                                                                \
  template Probe<T> make_probe<T>(const ProbeShape&, std::uint64_t);                                               \
  template ProbeForward<T> probe_forward<T>(const Probe<T>&, const Matrix<T>&, Mode, std::uint64_t);               \
  template ProbeGrads<T> probe_backward<T>(const Probe<T>&, const ProbeCache<T>&, const Matrix<T>&);               \
  template std::vector<double> negative_log_likelihood<T>(const Matrix<T>&, std::span<const std::uint32_t>);       \
  template CrossEntropy<T> cross_entropy<T>(const Matrix<T>&, std::span<const std::uint32_t>);                     \
  template void adam_step<T>(std::span<const ParamSlot<T>>, AdamState<T>&);                                        \
  template std::vector<T> softmax<T>(std::span<const T>);                                                          \
  template void weighted_sum<T>(std::span<const T>, std::span<const T>, std::span<T>);                             \
  template Matrix<T> weighted_sum_forward<T>(std::span<const T>, const Matrix<T>&);                                \
  template void weighted_sum_backward<T>(std::span<const T>, const Matrix<T>&, const Matrix<T>&, std::span<T>,     \
                                         Matrix<T>*);                                                              \
  template AttentionForward<T> layer_attention_forward<T>(const AttentionParams<T>&, std::span<const T>);          \
  template AttentionGrads<T> zero_attention_grads<T>(const AttentionParams<T>&);                                   \
  template void layer_attention_backward<T>(const AttentionParams<T>&, const AttentionCache<T>&,                   \
                                            std::span<const T>, AttentionGrads<T>&);                               \
  template AttentionGrads<T> layer_attention_backward<T>(const AttentionParams<T>&, const AttentionCache<T>&,      \
                                                         std::span<const T>);                                      \
  template std::vector<T> column_mass<T>(const Matrix<T>&);

LINGAGG_INSTANTIATE(float)
LINGAGG_INSTANTIATE(double)

#undef LINGAGG_INSTANTIATE

}  // namespace lingagg
