#pragma once

// Synthetic layered datasets whose label information is known analytically
// or ordered by construction. These are the oracles for the estimator and
// the aggregators.
//
// Randomness comes from std::mt19937_64 (sequence fixed by the standard) with
// local uniform/normal transforms, so the parameters plus seed pin the dataset.

#include <cstdint>
#include <string>
#include <vector>

#include "lingagg/json_io.hpp"
#include "lingagg/lfa.hpp"

namespace lingagg {

enum class Family { deterministic, independent, binary_channel, noisy_snr, layer_switching };

std::string to_string(Family f);
Family family_from_string(const std::string& name);

struct SynthSpec {
  Family family = Family::deterministic;
  std::uint32_t n = 10000;
  std::uint32_t layers = 4;
  std::uint32_t dim = 16;
  std::uint32_t classes = 10;
  // binary_channel: probability that the informative sign is flipped.
  double flip_p = 0.1;
  // noisy_snr: per-frame SNR schedule (dB) at the peak layer.
  std::vector<double> snr_levels{-10, -5, 0, 5, 10, 15, 20};
  // Informative layer(s). noisy_snr uses the first as its peak; the switching
  // family rotates through all of them.
  std::vector<std::uint32_t> informative{1};
  // noisy_snr: signal attenuation per layer of distance from the peak, dB.
  double decay_db = 6.0;
  // Frames per SNR block (noisy_snr) or per segment (layer_switching).
  std::uint32_t segment = 50;
  // layer_switching: when > 0 every layer carries a constant 1 in dim 0 and
  // the informative layer carries this value in dim 1 (noise layers draw dim 1
  // from N(0,1)), giving attention a per-frame cue for which layer is live.
  double marker = 2.0;
  std::uint64_t seed = 0;

  /// Throws InputError on out-of-range parameters.
  void validate() const;
  json to_json() const;
  static SynthSpec from_json(const json& j);
};

/// Dispatches on spec.family.
LayeredDataset generate(const SynthSpec& spec);

/// Uniform labels; layer informative[0] is the class embedding from a seeded
/// codebook (pairwise distance >= 1), other layers i.i.d. N(0,1).
LayeredDataset gen_deterministic(const SynthSpec& spec);
/// Uniform labels, every layer i.i.d. N(0,1).
LayeredDataset gen_independent(const SynthSpec& spec);
/// K=2. Dim 0 of the informative layer is +-1 encoding the label flipped with
/// probability p; every other value is N(0,1). I = ln2 - H_b(p).
LayeredDataset gen_binary_channel(const SynthSpec& spec);
/// Graded binary class code (bit j on axis j, 12 dB below bit j-1) plus
/// isotropic noise of exactly the power that gives the frame's SNR at the
/// peak layer; other layers see the signal attenuated by decay_db per layer of
/// distance.
LayeredDataset gen_noisy_snr(const SynthSpec& spec);
/// Segments of `segment` frames; in segment m only layer
/// informative[m % |informative|] carries the class embedding. The active
/// layer per frame is recorded in meta["active_layer"].
LayeredDataset gen_layer_switching(const SynthSpec& spec);

/// Exact I(Z;Y) of the binary channel, nats.
double binary_channel_mi(double flip_p);
/// Binary entropy in nats.
double binary_entropy(double p);

/// Class c gets bit j of c on axis j with amplitude +-10^(-12j/20); needs
/// dim >= ceil(log2 classes). Bits drown one at a time as the SNR falls.
std::vector<std::vector<float>> graded_codebook(std::uint32_t classes, std::uint32_t dim);

/// Codebook with enforced minimum pairwise distance; throws InputError when
/// the dimension is too small to place `classes` separated points.
std::vector<std::vector<float>> make_codebook(std::uint32_t classes, std::uint32_t dim, std::uint64_t seed,
                                              double min_distance = 1.0);

}  // namespace lingagg
