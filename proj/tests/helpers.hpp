#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fairdiff/denoiser.hpp"
#include "fairdiff/rng.hpp"
#include "fairdiff/schedule.hpp"

namespace fairdiff::testing {

inline DenoiserShape tiny_shape(int data_dim = 2, int contexts = 2) {
  DenoiserShape s;
  s.data_dim = data_dim;
  s.num_contexts = contexts;
  s.token_dim = 2;
  s.prefix_len = 1;
  s.embed_dim = 3;
  s.time_dim = 2;
  s.hidden = 4;
  s.max_timestep = 4;
  return s;
}

inline NoiseSchedule tiny_schedule() { return NoiseSchedule::from_betas({0.1, 0.2, 0.3, 0.4}); }

/// Central differences of f around x, one coordinate at a time.
inline std::vector<double> central_difference(std::vector<double> x, const std::function<double(const std::vector<double>&)>& f,
                                              double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

/// Largest |a_i - b_i| relative to max(|b_i|, floor * max|b|).
inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-3) {
  const double scale = floor * max_abs(b);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(b[i]), scale, 1e-300});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fairdiff_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fairdiff::testing
