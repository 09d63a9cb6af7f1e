#include "fairdiff/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "fairdiff/errors.hpp"
#include "fairdiff/rng.hpp"

namespace fairdiff {

void TargetDistribution::validate() const {
  if (probs.empty()) throw ConfigError("target distribution is empty");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw ConfigError("target probabilities must be >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("target probabilities must sum to 1");
  if (!classes.empty() && classes.size() != probs.size()) throw ConfigError("target class names do not match K");
}

TargetDistribution TargetDistribution::uniform(int k) {
  if (k < 1) throw ConfigError("uniform target needs K >= 1");
  TargetDistribution t;
  t.probs.assign(static_cast<std::size_t>(k), 1.0 / k);
  return t;
}

namespace {

double point_cost(std::span<const double> p, int label) {
  double acc = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double diff = p[k] - (static_cast<int>(k) == label ? 1.0 : 0.0);
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

std::size_t check_batch(const ProbMatrix& probs) {
  if (probs.empty()) throw ArgumentError("empty probability batch");
  const std::size_t k = probs.front().size();
  if (k == 0) throw ArgumentError("probability vectors are empty");
  for (const auto& row : probs) {
    if (row.size() != k) throw ArgumentError("probability vectors have different lengths");
  }
  return k;
}

void check_counts(std::span<const int> counts, std::size_t n, std::size_t k) {
  if (counts.size() != k) throw ArgumentError("count vector length differs from K");
  long total = 0;
  for (int c : counts) {
    if (c < 0) throw ArgumentError("class counts must be >= 0");
    total += c;
  }
  if (total != static_cast<long>(n)) throw ArgumentError("class counts must sum to the batch size");
}

std::vector<int> assign_two_class(const ProbMatrix& probs, std::span<const int> counts) {
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs[a][0] > probs[b][0]; });
  std::vector<int> labels(probs.size(), 1);
  for (int i = 0; i < counts[0]; ++i) labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 0;
  return labels;
}

// Swaps labels toward (lower sample, lower class) whenever cost does not increase.
void canonicalise(const ProbMatrix& probs, std::vector<int>& labels) {
  const std::size_t n = labels.size();
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (labels[i] <= labels[j]) continue;
        const double current = point_cost(probs[i], labels[i]) + point_cost(probs[j], labels[j]);
        const double swapped = point_cost(probs[i], labels[j]) + point_cost(probs[j], labels[i]);
        if (swapped <= current + 1e-12 * std::max(1.0, current)) {
          std::swap(labels[i], labels[j]);
          changed = true;
        }
      }
    }
  }
}

// Samples with identical probability vectors are interchangeable: under an ordered
// draw each arrangement of their labels is equally likely, so their expected targets
// are the group mean.
void average_tie_groups(const ProbMatrix& probs, ProbMatrix& q) {
  const std::size_t n = probs.size();
  std::vector<bool> done(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (done[i]) continue;
    std::vector<std::size_t> group{i};
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!done[j] && probs[j] == probs[i]) group.push_back(j);
    }
    if (group.size() > 1) {
      std::vector<double> mean(q[i].size(), 0.0);
      for (auto g : group) {
        for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += q[g][k];
      }
      for (double& m : mean) m /= static_cast<double>(group.size());
      for (auto g : group) q[g] = mean;
    }
    for (auto g : group) done[g] = true;
  }
}

bool next_composition(std::vector<int>& counts) {
  // Enumerates compositions of n into k parts in reverse-lexicographic order.
  const std::size_t k = counts.size();
  if (k < 2) return false;
  std::size_t i = k - 1;
  while (i > 0 && counts[i - 1] == 0) --i;
  if (i == 0) return false;
  // counts[i-1] > 0: move one unit right and gather the tail.
  const int tail = std::accumulate(counts.begin() + static_cast<std::ptrdiff_t>(i), counts.end(), 0);
  --counts[i - 1];
  std::fill(counts.begin() + static_cast<std::ptrdiff_t>(i), counts.end(), 0);
  counts[i] = tail + 1;
  return true;
}

double log_multinomial(std::span<const int> counts, std::span<const double> probs) {
  int n = 0;
  double acc = 0.0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    n += counts[k];
    if (counts[k] > 0) {
      if (probs[k] <= 0.0) return -std::numeric_limits<double>::infinity();
      acc += counts[k] * std::log(probs[k]) - std::lgamma(counts[k] + 1.0);
    }
  }
  return acc + std::lgamma(n + 1.0);
}

OTTargetBatch finish(ProbMatrix q, const ProbMatrix& probs, const OtMethod& method) {
  average_tie_groups(probs, q);
  OTTargetBatch out;
  out.method = method;
  for (const auto& row : q) {
    const auto it = std::max_element(row.begin(), row.end());
    out.y.push_back(static_cast<int>(it - row.begin()));
    out.c.push_back(*it);
  }
  out.q = std::move(q);
  return out;
}

}  // namespace

double ot_cost(const ProbMatrix& probs, std::span<const int> labels) {
  if (labels.size() != probs.size()) throw ArgumentError("label count differs from batch size");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) total += point_cost(probs[i], labels[i]);
  return total;
}

std::vector<int> hungarian(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  if (n == 0) return {};
  for (const auto& row : cost) {
    if (row.size() != n) throw ArgumentError("hungarian needs a square cost matrix");
  }
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // Potentials method, 1-based with a virtual column 0.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(n, -1);
  for (std::size_t j = 1; j <= n; ++j) assignment[p[j] - 1] = static_cast<int>(j - 1);
  return assignment;
}

std::vector<int> ot_assign_hungarian(const ProbMatrix& probs, std::span<const int> counts) {
  const std::size_t k = check_batch(probs);
  const std::size_t n = probs.size();
  check_counts(counts, n, k);
  std::vector<int> slot_class;
  slot_class.reserve(n);
  for (std::size_t c = 0; c < k; ++c) slot_class.insert(slot_class.end(), static_cast<std::size_t>(counts[c]), static_cast<int>(c));
  std::vector<std::vector<double>> cost(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t s = 0; s < n; ++s) cost[i][s] = point_cost(probs[i], slot_class[s]);
  }
  const auto slots = hungarian(cost);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = slot_class[static_cast<std::size_t>(slots[i])];
  canonicalise(probs, labels);
  return labels;
}

std::vector<int> ot_assign(const ProbMatrix& probs, std::span<const int> counts) {
  const std::size_t k = check_batch(probs);
  check_counts(counts, probs.size(), k);
  if (k == 1) return std::vector<int>(probs.size(), 0);
  if (k == 2) return assign_two_class(probs, counts);
  return ot_assign_hungarian(probs, counts);
}

long count_compositions(int n, int k, long cap) {
  if (n < 0 || k < 1) return 0;
  // C(n + k - 1, k - 1), computed incrementally and saturated at cap.
  double value = 1.0;
  for (int i = 1; i < k; ++i) {
    value = value * (n + i) / i;
    if (value > static_cast<double>(cap)) return cap;
  }
  return static_cast<long>(std::llround(value));
}

OTTargetBatch expected_ot_targets(const ProbMatrix& probs, const TargetDistribution& target, const OtMethod& method) {
  const std::size_t k = check_batch(probs);
  target.validate();
  if (static_cast<std::size_t>(target.num_classes()) != k) throw ArgumentError("target K differs from classifier K");
  const std::size_t n = probs.size();
  ProbMatrix q(n, std::vector<double>(k, 0.0));

  if (method.kind == OtMethod::Kind::kExactEnumeration) {
    if (count_compositions(static_cast<int>(n), static_cast<int>(k), kExactEnumerationBudget + 1) >
        kExactEnumerationBudget) {
      throw ResourceError("exact OT enumeration exceeds the budget for N=" + std::to_string(n) +
                          ", K=" + std::to_string(k) + "; use monte_carlo");
    }
    std::vector<int> counts(k, 0);
    counts[0] = static_cast<int>(n);
    do {
      const double lp = log_multinomial(counts, target.probs);
      if (std::isfinite(lp)) {
        const double w = std::exp(lp);
        const auto labels = ot_assign(probs, counts);
        for (std::size_t i = 0; i < n; ++i) q[i][static_cast<std::size_t>(labels[i])] += w;
      }
    } while (next_composition(counts));
    return finish(std::move(q), probs, method);
  }

  if (method.draws < 1) throw ConfigError("monte_carlo needs draws >= 1");
  Rng rng(derive_seed(method.seed, 0x07));
  std::map<std::vector<int>, long> tally;
  std::vector<int> counts(k);
  for (long m = 0; m < method.draws; ++m) {
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) ++counts[rng.categorical(target.probs)];
    ++tally[counts];
  }
  const double inv = 1.0 / static_cast<double>(method.draws);
  for (const auto& [c, hits] : tally) {
    const auto labels = ot_assign(probs, c);
    for (std::size_t i = 0; i < n; ++i) q[i][static_cast<std::size_t>(labels[i])] += hits * inv;
  }
  return finish(std::move(q), probs, method);
}

}  // namespace fairdiff
