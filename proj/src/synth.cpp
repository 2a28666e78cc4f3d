#include "lingagg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lingagg/error.hpp"
#include "lingagg/numeric.hpp"

namespace lingagg {
namespace {

constexpr double kBitStepDb = 12.0;

enum Stream : std::uint64_t { kCodebook = 1, kLabels = 2, kFeatures = 3, kFlips = 4 };

std::vector<std::string> class_names(std::uint32_t k) {
  std::vector<std::string> v;
  for (std::uint32_t c = 0; c < k; ++c) v.push_back("c" + std::to_string(c));
  return v;
}


LayeredDataset skeleton(const SynthSpec& spec, std::uint32_t classes) {
  LayeredDataset ds;
  ds.n_frames = spec.n;
  ds.n_layers = spec.layers;
  ds.dim = spec.dim;
  ds.vocab = class_names(classes);
  ds.features.resize(std::size_t{spec.n} * spec.layers * spec.dim);
  ds.labels.resize(spec.n);
  ds.meta = json::object();
  ds.meta["model"] = "synthetic:" + to_string(spec.family);
  json layers = json::array();
  for (std::uint32_t l = 0; l < spec.layers; ++l) layers.push_back(std::to_string(l));
  ds.meta["layers"] = layers;
  ds.meta["snr_levels"] = json::array();
  ds.meta["synth_spec"] = spec.to_json();
  return ds;
}

void draw_labels(LayeredDataset& ds, std::uint32_t classes, std::uint64_t seed) {
  Rng rng(derive_seed(seed, kLabels));
  for (auto& y : ds.labels) y = static_cast<std::uint32_t>(rng.index(classes));
}

// Shared body of the deterministic and layer-switching families.
LayeredDataset planted(const SynthSpec& spec, const std::vector<std::uint32_t>& informative, std::uint32_t segment,
                       double marker) {
  const bool marked = marker > 0.0;
  const std::uint32_t code_dim = marked ? spec.dim - 2 : spec.dim;
  const auto codebook = make_codebook(spec.classes, code_dim, spec.seed);
  LayeredDataset ds = skeleton(spec, spec.classes);
  draw_labels(ds, spec.classes, spec.seed);

  Rng rng(derive_seed(spec.seed, kFeatures));
  json active = json::array();
  const std::size_t stride = ds.frame_stride();
  for (std::size_t i = 0; i < spec.n; ++i) {
    const std::uint32_t live = informative[(i / segment) % informative.size()];
    active.push_back(live);
    for (std::uint32_t l = 0; l < spec.layers; ++l) {
      float* x = ds.features.data() + i * stride + std::size_t{l} * spec.dim;
      if (l == live) {
        const auto& code = codebook[ds.labels[i]];
        if (marked) {
          x[0] = 1.0f;
          x[1] = static_cast<float>(marker);
          std::copy(code.begin(), code.end(), x + 2);
        } else {
          std::copy(code.begin(), code.end(), x);
        }
      } else {
        for (std::uint32_t d = 0; d < spec.dim; ++d) x[d] = static_cast<float>(rng.normal());
        if (marked) x[0] = 1.0f;
      }
    }
  }
  if (informative.size() > 1 || segment < spec.n) {
    ds.meta["active_layer"] = std::move(active);
    json bounds = json::array();
    for (std::uint32_t s = 0; s < spec.n; s += segment) bounds.push_back(s);
    ds.meta["utt_bounds"] = std::move(bounds);
  }
  return ds;
}

}  // namespace

std::vector<std::vector<float>> graded_codebook(std::uint32_t classes, std::uint32_t dim) {
  std::uint32_t bits = 1;
  while ((1u << bits) < classes) ++bits;
  if (bits > dim) {
    throw InputError("noisy_snr needs dim >= " + std::to_string(bits) + " for " + std::to_string(classes) +
                     " classes; use a larger dim");
  }
  std::vector<std::vector<float>> book(classes, std::vector<float>(dim, 0.0f));
  for (std::uint32_t c = 0; c < classes; ++c) {
    for (std::uint32_t j = 0; j < bits; ++j) {
      const double amplitude = std::pow(10.0, -kBitStepDb * j / 20.0);
      book[c][j] = static_cast<float>(((c >> j) & 1u) ? amplitude : -amplitude);
    }
  }
  return book;
}

std::string to_string(Family f) {
  switch (f) {
    case Family::deterministic: return "deterministic";
    case Family::independent: return "independent";
    case Family::binary_channel: return "binary_channel";
    case Family::noisy_snr: return "noisy_snr";
    case Family::layer_switching: return "layer_switching";
  }
  return "unknown";
}

Family family_from_string(const std::string& name) {
  for (Family f : {Family::deterministic, Family::independent, Family::binary_channel, Family::noisy_snr,
                   Family::layer_switching}) {
    if (to_string(f) == name) return f;
  }
  throw InputError("unknown synthetic family '" + name + "'");
}

void SynthSpec::validate() const {
  if (n < 1) throw InputError("n must be >= 1");
  if (layers < 1) throw InputError("layers must be >= 1");
  if (dim < 1) throw InputError("dim must be >= 1");
  if (classes < 2) throw InputError("classes must be >= 2");
  for (auto l : informative) {
    if (l >= layers) throw InputError("informative layer " + std::to_string(l) + " out of range");
  }
  switch (family) {
    case Family::deterministic:
      if (informative.empty()) throw InputError("deterministic family needs an informative layer");
      break;
    case Family::independent:
      break;
    case Family::binary_channel:
      if (classes != 2) throw InputError("binary_channel requires classes = 2");
      if (!(flip_p > 0.0 && flip_p <= 0.5)) throw InputError("flip probability must lie in (0, 0.5]");
      if (informative.empty()) throw InputError("binary_channel needs an informative layer");
      break;
    case Family::noisy_snr:
      if (snr_levels.empty()) throw InputError("noisy_snr needs a non-empty SNR schedule");
      if (informative.empty()) throw InputError("noisy_snr needs a peak layer");
      if (segment < 1) throw InputError("segment length must be >= 1");
      if (!(decay_db >= 0.0)) throw InputError("decay_db must be >= 0");
      break;
    case Family::layer_switching:
      if (informative.size() < 2) throw InputError("layer_switching needs at least two informative layers");
      if (segment < 1) throw InputError("segment length must be >= 1");
      if (segment > n) throw InputError("segment length exceeds n");
      if (marker > 0.0 && dim < 3) throw InputError("marker channels need dim >= 3");
      break;
  }
}

json SynthSpec::to_json() const {
  return json{{"family", to_string(family)}, {"n", n},
              {"layers", layers},            {"dim", dim},
              {"classes", classes},          {"flip_p", flip_p},
              {"snr_levels", snr_levels},    {"informative", informative},
              {"decay_db", decay_db},        {"segment", segment},
              {"marker", marker},            {"seed", seed}};
}

SynthSpec SynthSpec::from_json(const json& j) {
  SynthSpec s;
  try {
    s.family = family_from_string(j.at("family").get<std::string>());
    s.n = j.value("n", s.n);
    s.layers = j.value("layers", s.layers);
    s.dim = j.value("dim", s.dim);
    s.classes = j.value("classes", s.classes);
    s.flip_p = j.value("flip_p", s.flip_p);
    s.snr_levels = j.value("snr_levels", s.snr_levels);
    s.informative = j.value("informative", s.informative);
    s.decay_db = j.value("decay_db", s.decay_db);
    s.segment = j.value("segment", s.segment);
    s.marker = j.value("marker", s.marker);
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed synth spec: ") + e.what());
  }
  return s;
}

std::vector<std::vector<float>> make_codebook(std::uint32_t classes, std::uint32_t dim, std::uint64_t seed,
                                              double min_distance) {
  constexpr int kMaxTries = 1000;
  Rng rng(derive_seed(seed, kCodebook));
  std::vector<std::vector<float>> book;
  for (std::uint32_t c = 0; c < classes; ++c) {
    std::vector<float> code(dim);
    bool placed = false;
    for (int attempt = 0; attempt < kMaxTries && !placed; ++attempt) {
      for (auto& v : code) v = static_cast<float>(rng.normal());
      placed = std::all_of(book.begin(), book.end(), [&](const std::vector<float>& other) {
        double d2 = 0.0;
        for (std::uint32_t d = 0; d < dim; ++d) {
          const double diff = static_cast<double>(code[d]) - other[d];
          d2 += diff * diff;
        }
        return std::sqrt(d2) >= min_distance;
      });
    }
    if (!placed) {
      throw InputError("codebook collision: cannot place " + std::to_string(classes) + " classes " +
                       std::to_string(min_distance) + " apart in " + std::to_string(dim) +
                       " dims; use a larger dim");
    }
    book.push_back(std::move(code));
  }
  return book;
}

double binary_entropy(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -p * std::log(p) - (1.0 - p) * std::log(1.0 - p);
}

double binary_channel_mi(double flip_p) { return std::numbers::ln2 - binary_entropy(flip_p); }

LayeredDataset generate(const SynthSpec& spec) {
  switch (spec.family) {
    case Family::deterministic: return gen_deterministic(spec);
    case Family::independent: return gen_independent(spec);
    case Family::binary_channel: return gen_binary_channel(spec);
    case Family::noisy_snr: return gen_noisy_snr(spec);
    case Family::layer_switching: return gen_layer_switching(spec);
  }
  throw InputError("unknown family");
}

LayeredDataset gen_deterministic(const SynthSpec& spec) {
  SynthSpec s = spec;
  s.family = Family::deterministic;
  s.validate();
  return planted(s, {s.informative.front()}, s.n, 0.0);
}

LayeredDataset gen_layer_switching(const SynthSpec& spec) {
  SynthSpec s = spec;
  s.family = Family::layer_switching;
  s.validate();
  return planted(s, s.informative, s.segment, s.marker);
}

LayeredDataset gen_independent(const SynthSpec& spec) {
  SynthSpec s = spec;
  s.family = Family::independent;
  s.validate();
  LayeredDataset ds = skeleton(s, s.classes);
  draw_labels(ds, s.classes, s.seed);
  Rng rng(derive_seed(s.seed, kFeatures));
  for (auto& v : ds.features) v = static_cast<float>(rng.normal());
  return ds;
}

LayeredDataset gen_binary_channel(const SynthSpec& spec) {
  SynthSpec s = spec;
  s.family = Family::binary_channel;
  s.validate();
  LayeredDataset ds = skeleton(s, 2);
  draw_labels(ds, 2, s.seed);
  Rng noise(derive_seed(s.seed, kFeatures));
  Rng flips(derive_seed(s.seed, kFlips));
  const std::uint32_t live = s.informative.front();
  for (std::size_t i = 0; i < s.n; ++i) {
    const bool flip = flips.uniform() < s.flip_p;
    const std::uint32_t observed = ds.labels[i] ^ (flip ? 1u : 0u);
    for (std::uint32_t l = 0; l < s.layers; ++l) {
      float* x = ds.features.data() + i * ds.frame_stride() + std::size_t{l} * s.dim;
      for (std::uint32_t d = 0; d < s.dim; ++d) x[d] = static_cast<float>(noise.normal());
      if (l == live) x[0] = observed ? 1.0f : -1.0f;
    }
  }
  return ds;
}

LayeredDataset gen_noisy_snr(const SynthSpec& spec) {
  SynthSpec s = spec;
  s.family = Family::noisy_snr;
  s.validate();
  const auto codebook = graded_codebook(s.classes, s.dim);
  LayeredDataset ds = skeleton(s, s.classes);
  ds.meta["snr_levels"] = s.snr_levels;
  draw_labels(ds, s.classes, s.seed);
  Rng rng(derive_seed(s.seed, kFeatures));
  const std::uint32_t peak = s.informative.front();
  std::vector<float> snr(s.n);
  std::vector<double> noise(s.dim);
  for (std::size_t i = 0; i < s.n; ++i) {
    const double level = s.snr_levels[(i / s.segment) % s.snr_levels.size()];
    snr[i] = static_cast<float>(level);
    const auto& code = codebook[ds.labels[i]];
    double signal_power = 0.0;
    for (float v : code) signal_power += static_cast<double>(v) * v;
    const double noise_power = signal_power * std::pow(10.0, -level / 10.0);
    for (std::uint32_t l = 0; l < s.layers; ++l) {
      const double distance = std::abs(static_cast<double>(l) - static_cast<double>(peak));
      const double gain = std::pow(10.0, -s.decay_db * distance / 20.0);
      double norm2 = 0.0;
      for (auto& v : noise) {
        v = rng.normal();
        norm2 += v * v;
      }
      const double scale = std::sqrt(noise_power / norm2);
      float* x = ds.features.data() + i * ds.frame_stride() + std::size_t{l} * s.dim;
      for (std::uint32_t d = 0; d < s.dim; ++d) x[d] = static_cast<float>(gain * code[d] + scale * noise[d]);
    }
  }
  ds.snr_db = std::move(snr);
  json bounds = json::array();
  for (std::uint32_t b = 0; b < s.n; b += s.segment) bounds.push_back(b);
  ds.meta["utt_bounds"] = std::move(bounds);
  return ds;
}

}  // namespace lingagg
