#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace magic {

/// 64-bit FNV-1a over a byte string.
std::uint64_t fnv1a(std::string_view bytes);

std::uint64_t splitmix64(std::uint64_t x);

/// Derive an independent seed for a named stream of randomness. Every random
/// draw in the project descends from one root seed through these names
/// ("data", "init", "shuffle", "corruption", ...).
std::uint64_t substream_seed(std::uint64_t root, std::string_view name);

/// Thin wrapper over mt19937_64. Distributions are implemented here rather than
/// through <random> distribution objects so that the produced sequences do not
/// depend on the standard library vendor.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  Rng substream(std::string_view name) { return Rng(substream_seed(engine_(), name)); }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi] (inclusive).
  int uniform_int(int lo, int hi);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(0, static_cast<int>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Index drawn proportionally to non-negative weights.
  std::size_t categorical(const std::vector<double>& weights);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace magic
