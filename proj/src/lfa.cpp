#include "lingagg/lfa.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "lingagg/numeric.hpp"

namespace lingagg {
namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

float get_f32(const std::uint8_t* p) { return std::bit_cast<float>(get_u32(p)); }

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LfaError(LfaErrc::io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw LfaError(LfaErrc::io, "read failed: " + path.string());
  return bytes;
}

}  // namespace

json normalized_meta(const LayeredDataset& ds) {
  json meta = ds.meta.is_object() ? ds.meta : json::object();
  meta.erase("vocab");
  if (!meta.contains("model")) meta["model"] = "";
  if (!meta.contains("layers")) {
    json layers = json::array();
    for (std::uint32_t l = 0; l < ds.n_layers; ++l) layers.push_back(std::to_string(l));
    meta["layers"] = layers;
  }
  if (!meta.contains("snr_levels")) meta["snr_levels"] = json::array();
  meta["vocab"] = ds.vocab;
  return meta;
}

bool LayeredDataset::operator==(const LayeredDataset& other) const {
  const auto same_bits = [](std::span<const float> a, std::span<const float> b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
  };
  if (n_frames != other.n_frames || n_layers != other.n_layers || dim != other.dim) return false;
  if (!same_bits(features, other.features) || labels != other.labels || vocab != other.vocab) return false;
  if (snr_db.has_value() != other.snr_db.has_value()) return false;
  if (snr_db && !same_bits(*snr_db, *other.snr_db)) return false;
  return normalized_meta(*this) == normalized_meta(other);
}

std::vector<InvariantCheck> check_invariants(const LayeredDataset& ds) {
  std::vector<InvariantCheck> checks;
  const std::size_t n = ds.n_frames;

  const std::size_t expected = n * ds.frame_stride();
  checks.push_back({"feature_shape", ds.features.size() == expected,
                    "expected " + std::to_string(expected) + " values, have " +
                        std::to_string(ds.features.size())});
  checks.push_back({"label_count", ds.labels.size() == n,
                    "expected " + std::to_string(n) + " labels, have " + std::to_string(ds.labels.size())});
  checks.push_back({"vocab_nonempty", !ds.vocab.empty(), "vocab is empty"});

  {
    InvariantCheck c{"labels_in_vocab", true, ""};
    for (std::size_t i = 0; i < ds.labels.size(); ++i) {
      if (ds.labels[i] >= ds.vocab.size()) {
        c.ok = false;
        c.detail = "frame " + std::to_string(i) + " has label " + std::to_string(ds.labels[i]) +
                   " but vocab_size is " + std::to_string(ds.vocab.size());
        break;
      }
    }
    checks.push_back(c);
  }
  {
    InvariantCheck c{"features_finite", true, ""};
    for (std::size_t i = 0; i < ds.features.size(); ++i) {
      if (!std::isfinite(ds.features[i])) {
        c.ok = false;
        c.detail = "non-finite feature at flat index " + std::to_string(i);
        break;
      }
    }
    checks.push_back(c);
  }
  if (ds.snr_db) {
    checks.push_back({"snr_length", ds.snr_db->size() == n,
                      "expected " + std::to_string(n) + " SNR values, have " + std::to_string(ds.snr_db->size())});
    const bool finite = std::all_of(ds.snr_db->begin(), ds.snr_db->end(), [](float v) { return std::isfinite(v); });
    checks.push_back({"snr_finite", finite, "non-finite SNR value"});
  }
  for (auto& c : checks) {
    if (c.ok) c.detail.clear();
  }
  return checks;
}

void validate(const LayeredDataset& ds) {
  for (const auto& c : check_invariants(ds)) {
    if (c.ok) continue;
    const auto kind = (c.name == "features_finite" || c.name == "snr_finite") ? LfaErrc::non_finite : LfaErrc::invalid;
    throw LfaError(kind, "invariant '" + c.name + "' violated: " + c.detail);
  }
}

std::vector<std::uint8_t> encode_lfa(const LayeredDataset& ds) {
  validate(ds);
  const std::string meta = normalized_meta(ds).dump();
  const std::size_t n = ds.n_frames;

  std::vector<std::uint8_t> out;
  out.reserve(kLfaHeaderBytes + meta.size() + ds.features.size() * 4 + n * 8);
  for (char c : {'L', 'F', 'A', '1'}) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, kLfaVersion);
  put_u32(out, ds.n_frames);
  put_u32(out, ds.n_layers);
  put_u32(out, ds.dim);
  out.push_back(ds.snr_db ? 1 : 0);
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out.insert(out.end(), meta.begin(), meta.end());
  for (float v : ds.features) put_f32(out, v);
  for (std::uint32_t v : ds.labels) put_u32(out, v);
  if (ds.snr_db) {
    for (float v : *ds.snr_db) put_f32(out, v);
  }
  return out;
}

LayeredDataset decode_lfa(std::span<const std::uint8_t> bytes, bool check) {
  if (bytes.size() < 4) {
    throw LfaError(LfaErrc::truncated, "truncated header: expected at least " + std::to_string(kLfaHeaderBytes) +
                                           " bytes, got " + std::to_string(bytes.size()));
  }
  if (std::memcmp(bytes.data(), "LFA1", 4) != 0) {
    throw LfaError(LfaErrc::bad_magic, "bad magic '" + std::string(bytes.begin(), bytes.begin() + 4) + "'");
  }
  if (bytes.size() < kLfaHeaderBytes) {
    throw LfaError(LfaErrc::truncated, "truncated header: expected " + std::to_string(kLfaHeaderBytes) +
                                           " bytes, got " + std::to_string(bytes.size()));
  }
  const std::uint8_t* p = bytes.data();
  const std::uint32_t version = get_u32(p + 4);
  if (version != kLfaVersion) {
    throw LfaError(LfaErrc::unsupported_version, "unsupported LFA version " + std::to_string(version));
  }
  LayeredDataset ds;
  ds.n_frames = get_u32(p + 8);
  ds.n_layers = get_u32(p + 12);
  ds.dim = get_u32(p + 16);
  const std::uint8_t flags = p[20];
  const std::uint32_t json_len = get_u32(p + 21);
  if (flags & ~1u) throw LfaError(LfaErrc::invalid, "unknown flag bits " + std::to_string(flags));
  const bool has_snr = flags & 1u;

  const std::uint64_t n = ds.n_frames;
  const std::uint64_t n_feat = n * ds.n_layers * ds.dim;
  const std::uint64_t expected = kLfaHeaderBytes + std::uint64_t{json_len} + 4 * n_feat + 4 * n + (has_snr ? 4 * n : 0);
  if (bytes.size() < expected) {
    throw LfaError(LfaErrc::truncated, "truncated payload: expected " + std::to_string(expected) + " bytes, got " +
                                           std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw LfaError(LfaErrc::invalid, "trailing data: expected " + std::to_string(expected) + " bytes, got " +
                                         std::to_string(bytes.size()));
  }

  p += kLfaHeaderBytes;
  json meta;
  try {
    meta = json::parse(p, p + json_len);
  } catch (const json::exception& e) {
    throw LfaError(LfaErrc::invalid, std::string("malformed metadata JSON: ") + e.what());
  }
  p += json_len;
  if (!meta.is_object() || !meta.contains("vocab") || !meta["vocab"].is_array()) {
    throw LfaError(LfaErrc::invalid, "metadata lacks a 'vocab' array");
  }
  for (const auto& v : meta["vocab"]) {
    if (!v.is_string()) throw LfaError(LfaErrc::invalid, "vocab entries must be strings");
    ds.vocab.push_back(v.get<std::string>());
  }
  meta.erase("vocab");
  ds.meta = std::move(meta);

  ds.features.resize(n_feat);
  for (auto& v : ds.features) {
    v = get_f32(p);
    p += 4;
  }
  ds.labels.resize(n);
  for (auto& v : ds.labels) {
    v = get_u32(p);
    p += 4;
  }
  if (has_snr) {
    std::vector<float> snr(n);
    for (auto& v : snr) {
      v = get_f32(p);
      p += 4;
    }
    ds.snr_db = std::move(snr);
  }
  if (check) validate(ds);
  return ds;
}

void write_lfa(const LayeredDataset& ds, const std::filesystem::path& path) {
  const auto bytes = encode_lfa(ds);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LfaError(LfaErrc::io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LfaError(LfaErrc::io, "write failed: " + path.string());
}

LayeredDataset read_lfa(const std::filesystem::path& path) { return decode_lfa(slurp(path), true); }

LayeredDataset read_lfa_unchecked(const std::filesystem::path& path) { return decode_lfa(slurp(path), false); }

std::string dataset_hash(const LayeredDataset& ds) {
  Fnv1a h;
  h.update_value(ds.n_frames);
  h.update_value(ds.n_layers);
  h.update_value(ds.dim);
  h.update(ds.features.data(), ds.features.size() * sizeof(float));
  h.update(ds.labels.data(), ds.labels.size() * sizeof(std::uint32_t));
  if (ds.snr_db) h.update(ds.snr_db->data(), ds.snr_db->size() * sizeof(float));
  for (const auto& v : ds.vocab) {
    h.update(v.data(), v.size());
    h.update_value('\0');
  }
  return h.hex();
}

SplitIndices split_indices(std::size_t n, const SplitSpec& spec) {
  if (!(spec.eval_fraction > 0.0 && spec.eval_fraction < 1.0)) {
    throw InputError("eval fraction must lie in (0, 1), got " + std::to_string(spec.eval_fraction));
  }
  if (n < 2) throw InputError("split needs at least 2 frames, got " + std::to_string(n));
  const auto n_eval = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.eval_fraction));
  if (n_eval == 0) throw InputError("split leaves the eval side empty");
  if (n_eval >= n) throw InputError("split leaves the train side empty");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(spec.seed, 0x5b17));
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);

  SplitIndices out;
  out.eval.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_eval));
  out.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_eval), order.end());
  std::sort(out.eval.begin(), out.eval.end());
  std::sort(out.train.begin(), out.train.end());

  const auto side_id = [&](const std::vector<std::size_t>& idx, std::uint64_t tag) {
    Fnv1a h;
    h.update_value(tag);
    h.update_value(std::uint64_t{n});
    h.update(idx.data(), idx.size() * sizeof(std::size_t));
    return h.digest();
  };
  out.train_id = side_id(out.train, 1);
  out.eval_id = side_id(out.eval, 2);
  return out;
}

LayeredDataset subset(const LayeredDataset& ds, std::span<const std::size_t> frames) {
  LayeredDataset out;
  out.n_frames = static_cast<std::uint32_t>(frames.size());
  out.n_layers = ds.n_layers;
  out.dim = ds.dim;
  out.vocab = ds.vocab;
  out.meta = ds.meta;
  // Per-frame side channels no longer line up with the subset.
  out.meta.erase("utt_bounds");
  out.meta.erase("active_layer");
  out.features.reserve(frames.size() * ds.frame_stride());
  out.labels.reserve(frames.size());
  if (ds.snr_db) out.snr_db.emplace();
  for (std::size_t i : frames) {
    if (i >= ds.n_frames) throw InputError("frame index " + std::to_string(i) + " out of range");
    const auto f = ds.frame(i);
    out.features.insert(out.features.end(), f.begin(), f.end());
    out.labels.push_back(ds.labels[i]);
    if (ds.snr_db) out.snr_db->push_back((*ds.snr_db)[i]);
  }
  return out;
}

std::pair<LayeredDataset, LayeredDataset> split(const LayeredDataset& ds, const SplitSpec& spec) {
  const auto idx = split_indices(ds.n_frames, spec);
  return {subset(ds, idx.train), subset(ds, idx.eval)};
}

std::vector<SnrBin> group_by_snr(const LayeredDataset& ds, std::span<const double> levels) {
  if (!ds.snr_db) throw InputError("dataset has no per-frame SNR track");
  if (levels.empty()) throw InputError("no SNR levels given");
  std::vector<double> sorted(levels.begin(), levels.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  std::vector<SnrBin> bins;
  for (double v : sorted) bins.push_back({v, {}});
  for (std::size_t i = 0; i < ds.n_frames; ++i) {
    const double s = (*ds.snr_db)[i];
    std::size_t best = 0;
    double best_dist = std::abs(s - sorted[0]);
    for (std::size_t b = 1; b < sorted.size(); ++b) {
      const double d = std::abs(s - sorted[b]);
      if (d < best_dist) {
        best = b;
        best_dist = d;
      }
    }
    bins[best].frames.push_back(i);
  }
  return bins;
}

std::vector<double> snr_levels_of(const LayeredDataset& ds) {
  std::vector<double> levels;
  if (ds.meta.is_object() && ds.meta.contains("snr_levels") && ds.meta["snr_levels"].is_array()) {
    for (const auto& v : ds.meta["snr_levels"]) {
      if (v.is_number()) levels.push_back(v.get<double>());
    }
  }
  if (levels.empty() && ds.snr_db) {
    std::set<float> seen(ds.snr_db->begin(), ds.snr_db->end());
    levels.assign(seen.begin(), seen.end());
  }
  std::sort(levels.begin(), levels.end());
  return levels;
}

}  // namespace lingagg
