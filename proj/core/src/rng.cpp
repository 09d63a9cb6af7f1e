#include "fairdiff/rng.hpp"

#include <numeric>

namespace fairdiff {

std::size_t Rng::categorical(std::span<const double> probs) {
  const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
  double u = uniform() * total;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (u < probs[k]) return k;
    u -= probs[k];
  }
  // Rounding can leave u marginally above the last bucket.
  for (std::size_t k = probs.size(); k-- > 0;) {
    if (probs[k] > 0.0) return k;
  }
  return 0;
}

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed) noexcept {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace fairdiff
