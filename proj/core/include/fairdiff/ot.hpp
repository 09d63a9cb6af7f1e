#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fairdiff {

using ProbMatrix = std::vector<std::vector<double>>;

/// Target distribution over K classes. `conditional_on`, when set, names the index of
/// another aligned attribute whose (frozen-model) classes partition the batch; the
/// target then holds within every partition.
struct TargetDistribution {
  std::vector<double> probs;
  std::vector<std::string> classes;
  std::optional<int> conditional_on;

  int num_classes() const { return static_cast<int>(probs.size()); }
  void validate() const;

  static TargetDistribution uniform(int k);
};

struct OtMethod {
  enum class Kind { kExactEnumeration, kMonteCarlo };
  Kind kind = Kind::kExactEnumeration;
  long draws = 10000;
  std::uint64_t seed = 0;

  static OtMethod exact() { return {}; }
  static OtMethod monte_carlo(long draws, std::uint64_t seed) { return {Kind::kMonteCarlo, draws, seed}; }
};

struct OTTargetBatch {
  ProbMatrix q;
  std::vector<int> y;     // 0-based class index
  std::vector<double> c;  // max of q
  OtMethod method;
};

/// Ceiling on the number of distinct target multisets summed by the exact method.
inline constexpr long kExactEnumerationBudget = 200000;

/// Euclidean transport cost of assigning class label[i] to sample i.
double ot_cost(const ProbMatrix& probs, std::span<const int> labels);

/// Min-cost assignment of a label multiset (counts[k] copies of class k) to samples.
/// Ties resolve toward lower class labels on lower sample indices.
std::vector<int> ot_assign(const ProbMatrix& probs, std::span<const int> counts);

/// General-K route through the Hungarian method; ot_assign uses it for K > 2.
std::vector<int> ot_assign_hungarian(const ProbMatrix& probs, std::span<const int> counts);

/// Number of multisets of size n over k classes, saturating at `cap`.
long count_compositions(int n, int k, long cap);

/// Expected optimal-transport targets q^(i) = E_u[u^(sigma*_i)] with u i.i.d. from target.
OTTargetBatch expected_ot_targets(const ProbMatrix& probs, const TargetDistribution& target, const OtMethod& method);

/// Square min-cost assignment; returns column assigned to each row.
std::vector<int> hungarian(const std::vector<std::vector<double>>& cost);

}  // namespace fairdiff
