#pragma once

#include <cmath>
#include <cstddef>
#include <span>

namespace fairdiff::detail {

/// y = W x (+ y when accumulate), W row-major rows x cols.
inline void matvec(const double* w, std::size_t rows, std::size_t cols, const double* x, double* y,
                   bool accumulate = false) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = w + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] = accumulate ? y[r] + acc : acc;
  }
}

/// y (+)= W^T g.
inline void matvec_t(const double* w, std::size_t rows, std::size_t cols, const double* g, double* y,
                     bool accumulate = false) {
  if (!accumulate) {
    for (std::size_t c = 0; c < cols; ++c) y[c] = 0.0;
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const double gr = g[r];
    if (gr == 0.0) continue;
    const double* row = w + r * cols;
    for (std::size_t c = 0; c < cols; ++c) y[c] += gr * row[c];
  }
}

/// G += g x^T.
inline void add_outer(double* gw, std::size_t rows, std::size_t cols, const double* g, const double* x) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double gr = g[r];
    if (gr == 0.0) continue;
    double* row = gw + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += gr * x[c];
  }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu(double x) { return x * sigmoid(x); }
inline double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace fairdiff::detail
