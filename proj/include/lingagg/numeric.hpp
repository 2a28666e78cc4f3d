#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>

namespace lingagg {

/// Sum in a fixed pairwise tree order. The result depends only on the
/// sequence, never on threading or blocking.
double pairwise_sum(std::span<const double> values);

/// Order-independent sum: sorts `scratch` ascending and accumulates. Any
/// permutation of the same multiset yields the same bits.
template <typename T>
T canonical_sum(std::span<T> scratch) {
  std::sort(scratch.begin(), scratch.end());
  T acc = T{0};
  for (T v : scratch) acc += v;
  return acc;
}

/// splitmix64 finalizer; derives independent stream seeds from a base seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Seeded random source over std::mt19937_64, whose output sequence is fixed
/// by the C++ standard. Distributions are implemented here rather than taken
/// from <random> because the standard distributions are not portable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n), unbiased.
  std::size_t index(std::size_t n);
  /// Standard normal via Box-Muller.
  double normal();

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

/// 64-bit FNV-1a.
class Fnv1a {
 public:
  void update(const void* data, std::size_t len);
  template <typename T>
  void update_value(const T& v) { update(&v, sizeof(T)); }
  std::uint64_t digest() const noexcept { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hex64(std::uint64_t v);

}  // namespace lingagg
