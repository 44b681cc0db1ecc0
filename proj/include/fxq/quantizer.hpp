#pragma once

// Symmetric uniform weight quantization and least-squares step-size estimation.
//
// A grid with M = 2^bits - 1 points represents the values n * step for integer
// |n| <= (M - 1) / 2. Weights are mapped with magnitude round-half-up and
// saturation:  q(w) = sgn(w) * step * min(floor(|w| / step + 0.5), (M - 1) / 2).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fxq/error.hpp"

namespace fxq {

/// Number of grid points for a bit width: 2^bits - 1 (always odd, symmetric about zero).
int points_for_bits(int bits);

struct QuantizerSpec {
  int bits = 2;
  int points = 3;
  double step = 1.0;

  static QuantizerSpec make(int bits, double step);

  /// Largest level index, (M - 1) / 2.
  int max_level() const noexcept { return (points - 1) / 2; }
  void validate() const;

  friend bool operator==(const QuantizerSpec&, const QuantizerSpec&) = default;
};

/// Knobs of the alternating step-size solver.
struct StepSolverConfig {
  int max_iterations = 100;
  double convergence_tol = 1e-8;
  std::vector<double> multistart_factors{1.0, 0.5, 0.25};

  void validate() const;
};

struct StepSolution {
  double step = 0.0;
  double mse = 0.0;
};

/// Level index n with |n| <= max_level such that q(w) = n * step.
inline std::int64_t level_index(double w, double step, int max_level) {
  const double n = std::min(std::floor(std::fabs(w) / step + 0.5), static_cast<double>(max_level));
  const auto idx = static_cast<std::int64_t>(n);
  return w < 0.0 ? -idx : idx;
}

/// Quantizes a single value. Throws InvalidArgument on non-finite input.
double quantize(double w, const QuantizerSpec& spec);

/// Elementwise quantization; `out` may alias `in`.
template <typename T>
void quantize(std::span<const T> in, std::span<T> out, const QuantizerSpec& spec);

template <typename T>
std::vector<T> quantize(std::span<const T> in, const QuantizerSpec& spec) {
  std::vector<T> out(in.size());
  quantize<T>(in, std::span<T>(out), spec);
  return out;
}

/// (1/2) * sum_i (q(w_i) - w_i)^2, accumulated in double in index order.
template <typename T>
double quant_mse(std::span<const T> group, const QuantizerSpec& spec);

/// Step size minimizing quant_mse for a group at M points.
///
/// Alternates between assigning levels at fixed step and solving the step in
/// closed form for fixed levels (step = sum n_i w_i / sum n_i^2), started from
/// max|w| / ((M-1)/2) scaled by each multistart factor. An exact sweep over the
/// level-assignment breakpoints supplies one more start, which makes the result
/// the global minimum; the best candidate wins. The returned step is a fixed
/// point of the closed-form update. Throws DegenerateGroup when every weight is zero.
template <typename T>
StepSolution optimize_step(std::span<const T> group, int points, const StepSolverConfig& cfg = {});

/// Geometric candidates from initial/2 to 2*initial inclusive, ascending.
std::vector<double> exhaustive_search_candidates(double initial_step, int num_candidates);

/// Evaluates `score` (lower is better) on the candidates above and returns the
/// best one; ties go to the smaller step.
double exhaustive_search_step(double initial_step, const std::function<double(double)>& score,
                              int num_candidates);

}  // namespace fxq
