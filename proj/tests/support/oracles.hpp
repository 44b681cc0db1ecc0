#pragma once

// Test-only reference implementations. Nothing here calls into the library's
// quantizer so the checks stay independent of the code under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace fxq::oracle {

inline double sgn(double w) { return w > 0.0 ? 1.0 : (w < 0.0 ? -1.0 : 0.0); }

/// Straight transcription of q(w) = sgn(w) * step * min(floor(|w|/step + 0.5), (M-1)/2).
inline double quantize_scalar(double w, double step, int points) {
  const double half = (points - 1) / 2;
  double level = std::floor(std::fabs(w) / step + 0.5);
  if (level > half) level = half;
  return sgn(w) * step * level;
}

/// (1/2) sum (q(w) - w)^2 by direct summation.
inline double mse_direct(const std::vector<double>& w, double step, int points) {
  double sum = 0.0;
  for (double x : w) {
    const double e = quantize_scalar(x, step, points) - x;
    sum += e * e;
  }
  return 0.5 * sum;
}

struct GridResult {
  double step = 0.0;
  double mse = std::numeric_limits<double>::infinity();
};

/// Dense grid search of the quantization error over `count` equally spaced
/// steps in (0, upper]. Uses sorted magnitudes with prefix sums and per-level
/// bin pointers that only move forward as the step grows, so each candidate
/// costs O(levels) instead of O(N).
inline GridResult grid_search_step(const std::vector<double>& w, int points, double lower,
                                   double upper, int count) {
  const int half = (points - 1) / 2;
  std::vector<double> m(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) m[i] = std::fabs(w[i]);
  std::sort(m.begin(), m.end());
  const std::size_t n = m.size();
  std::vector<long double> s1(n + 1, 0.0L), s2(n + 1, 0.0L);
  for (std::size_t i = 0; i < n; ++i) {
    s1[i + 1] = s1[i] + m[i];
    s2[i + 1] = s2[i] + static_cast<long double>(m[i]) * m[i];
  }
  // edge[k] = number of magnitudes strictly below (k + 0.5) * step, k = 0..half-1.
  std::vector<std::size_t> edge(half, 0);
  GridResult best;
  for (int j = 1; j <= count; ++j) {
    const double step = lower + (upper - lower) * static_cast<double>(j) / count;
    for (int k = 0; k < half; ++k) {
      const double b = (k + 0.5) * step;
      while (edge[k] < n && m[edge[k]] < b) ++edge[k];
    }
    long double total = 0.0L;
    std::size_t begin = 0;
    for (int k = 0; k <= half; ++k) {
      const std::size_t end = k < half ? edge[k] : n;
      if (end > begin) {
        const long double c = static_cast<long double>(end - begin);
        const long double a = s1[end] - s1[begin];
        const long double q = s2[end] - s2[begin];
        const long double level = static_cast<long double>(k) * step;
        total += q - 2.0L * level * a + level * level * c;
      }
      begin = std::max(begin, end);
    }
    const double mse = static_cast<double>(0.5L * std::max(total, 0.0L));
    if (mse < best.mse) best = {step, mse};
  }
  return best;
}

enum class Distribution { Gaussian, Laplacian, Bimodal };

inline std::vector<double> random_group(std::mt19937_64& rng, std::size_t size, Distribution dist) {
  std::vector<double> w(size);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::exponential_distribution<double> expo(1.0);
  std::bernoulli_distribution coin(0.5);
  for (auto& x : w) {
    switch (dist) {
      case Distribution::Gaussian: x = normal(rng); break;
      case Distribution::Laplacian: x = (coin(rng) ? 1.0 : -1.0) * expo(rng); break;
      case Distribution::Bimodal: x = (coin(rng) ? 1.0 : -1.0) * (1.5 + 0.3 * normal(rng)); break;
    }
  }
  return w;
}

}  // namespace fxq::oracle
