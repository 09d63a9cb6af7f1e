#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace fairdiff {

/// splitmix64 finaliser; used to derive independent seed streams.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) noexcept {
  return mix_seed(mix_seed(mix_seed(base) ^ a) ^ (b * 0x2545f4914f6cdd1dULL));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }

  void fill_normal(std::span<double> out, double scale = 1.0) {
    for (double& v : out) v = scale * normal_(engine_);
  }
  std::vector<double> normal_vector(std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    fill_normal(v, scale);
    return v;
  }

  /// Draws an index from a discrete distribution given by non-negative weights.
  std::size_t categorical(std::span<const double> probs);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// FNV-1a over raw bytes; content digest for parameter blobs and noise batches.
std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept;

inline std::uint64_t digest(std::span<const double> values, std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept {
  return fnv1a(values.data(), values.size_bytes(), seed);
}

}  // namespace fairdiff
