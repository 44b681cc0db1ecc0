#include "fxq/quantizer.hpp"

#include <limits>
#include <optional>

namespace fxq {

int points_for_bits(int bits) {
  if (bits < 2) {
    throw InvalidArgument("bit width must be >= 2, got " + std::to_string(bits));
  }
  if (bits > 31) {
    throw InvalidArgument("bit width must be <= 31, got " + std::to_string(bits));
  }
  return static_cast<int>((std::int64_t{1} << bits) - 1);
}

QuantizerSpec QuantizerSpec::make(int bits, double step) {
  QuantizerSpec spec{bits, points_for_bits(bits), step};
  spec.validate();
  return spec;
}

void QuantizerSpec::validate() const {
  if (points != points_for_bits(bits)) {
    throw InvalidArgument("quantizer points " + std::to_string(points) + " do not match " +
                          std::to_string(bits) + " bits");
  }
  if (!(step > 0.0) || !std::isfinite(step)) {
    throw InvalidArgument("quantizer step must be positive and finite");
  }
}

void StepSolverConfig::validate() const {
  if (max_iterations < 1) throw InvalidArgument("max_iterations must be >= 1");
  if (!(convergence_tol > 0.0)) throw InvalidArgument("convergence_tol must be > 0");
  if (multistart_factors.empty()) throw InvalidArgument("multistart_factors must be nonempty");
  for (double f : multistart_factors) {
    if (!(f > 0.0) || !std::isfinite(f)) throw InvalidArgument("multistart factors must be > 0");
  }
}

namespace {

double quantize_on_grid(double w, double step, int max_level) {
  if (!std::isfinite(w)) throw InvalidArgument("cannot quantize a non-finite value");
  const double n = std::min(std::floor(std::fabs(w) / step + 0.5), static_cast<double>(max_level));
  const double magnitude = step * n;
  return w < 0.0 ? -magnitude : magnitude;
}

template <typename T>
double mse_on_grid(std::span<const T> group, double step, int max_level) {
  double sum = 0.0;
  for (const T value : group) {
    const double w = static_cast<double>(value);
    const double e = quantize_on_grid(w, step, max_level) - w;
    sum += e * e;
  }
  return 0.5 * sum;
}

}  // namespace

double quantize(double w, const QuantizerSpec& spec) {
  return quantize_on_grid(w, spec.step, spec.max_level());
}

template <typename T>
void quantize(std::span<const T> in, std::span<T> out, const QuantizerSpec& spec) {
  if (in.size() != out.size()) throw InvalidArgument("quantize: input/output size mismatch");
  spec.validate();
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = static_cast<T>(quantize(static_cast<double>(in[i]), spec));
  }
}

template <typename T>
double quant_mse(std::span<const T> group, const QuantizerSpec& spec) {
  spec.validate();
  return mse_on_grid(group, spec.step, spec.max_level());
}

namespace {

// Runs the alternating iteration from one starting step. Returns nullopt when
// every weight keeps collapsing to level 0.
std::optional<double> refine_step(std::span<const double> magnitudes, int max_level, double step,
                                  const StepSolverConfig& cfg) {
  const double top = static_cast<double>(max_level);
  int halvings = 0;
  int iterations = 0;
  while (iterations < cfg.max_iterations) {
    long double sum_nw = 0.0L;
    long double sum_nn = 0.0L;
    for (const double m : magnitudes) {
      const double n = std::min(std::floor(m / step + 0.5), top);
      sum_nw += static_cast<long double>(n) * m;
      sum_nn += static_cast<long double>(n) * n;
    }
    if (sum_nn == 0.0L) {
      if (++halvings >= cfg.max_iterations) return std::nullopt;
      step *= 0.5;
      continue;
    }
    ++iterations;
    const double next = static_cast<double>(sum_nw / sum_nn);
    const bool converged = std::fabs(next - step) <= cfg.convergence_tol * step;
    step = next;
    if (converged) break;
  }
  return step;
}

// Global minimizer of the error over all steps.
//
// For fixed level assignments the error is a convex quadratic in the step, and
// the assignment of a magnitude m changes from k+1 to k exactly when the step
// crosses m / (k + 0.5). The error is continuous across those crossings and its
// slope only drops there, so the minimum is the stationary point of one of the
// pieces. The crossings are visited in ascending order by merging one sorted
// stream per level.
std::optional<double> sweep_step(std::span<const double> sorted_magnitudes, int max_level) {
  struct Cursor {
    double at;
    int level;
    std::size_t index;
  };
  const auto later = [](const Cursor& a, const Cursor& b) { return a.at > b.at; };

  std::size_t first_nonzero = 0;
  while (first_nonzero < sorted_magnitudes.size() && sorted_magnitudes[first_nonzero] == 0.0) {
    ++first_nonzero;
  }
  const auto values = sorted_magnitudes.subspan(first_nonzero);
  if (values.empty()) return std::nullopt;

  // As the step approaches zero every nonzero weight saturates at max_level.
  long double sum_m = 0.0L;
  long double sum_mm = 0.0L;
  for (const double m : values) {
    sum_m += m;
    sum_mm += static_cast<long double>(m) * m;
  }
  const long double top = max_level;
  long double sum_nw = top * sum_m;
  long double sum_nn = top * top * static_cast<long double>(values.size());

  std::vector<Cursor> heap;
  heap.reserve(static_cast<std::size_t>(max_level));
  for (int k = 0; k < max_level; ++k) heap.push_back({values[0] / (k + 0.5), k, 0});
  std::make_heap(heap.begin(), heap.end(), later);

  double lower = 0.0;
  double best_step = 0.0;
  long double best_err = std::numeric_limits<long double>::infinity();
  const auto consider = [&](double upper) {
    if (sum_nn <= 0.0L) return;
    const double candidate = static_cast<double>(sum_nw / sum_nn);
    if (candidate > lower && candidate <= upper) {
      const long double err = sum_mm - sum_nw * sum_nw / sum_nn;
      if (err < best_err) {
        best_err = err;
        best_step = candidate;
      }
    }
  };

  while (!heap.empty()) {
    std::pop_heap(heap.begin(), heap.end(), later);
    Cursor c = heap.back();
    heap.pop_back();
    if (c.at > lower) {
      consider(c.at);
      lower = c.at;
    }
    // Magnitude values[c.index] drops from level k + 1 to level k.
    const long double m = values[c.index];
    sum_nw -= m;
    sum_nn -= 2.0L * c.level + 1.0L;
    if (++c.index < values.size()) {
      c.at = values[c.index] / (c.level + 0.5);
      heap.push_back(c);
      std::push_heap(heap.begin(), heap.end(), later);
    }
  }
  if (!(best_step > 0.0)) return std::nullopt;
  return best_step;
}

}  // namespace

template <typename T>
StepSolution optimize_step(std::span<const T> group, int points, const StepSolverConfig& cfg) {
  cfg.validate();
  if (points < 3 || points % 2 == 0) {
    throw InvalidArgument("optimize_step: points must be odd and >= 3, got " +
                          std::to_string(points));
  }
  if (group.empty()) throw InvalidArgument("optimize_step: empty weight group");

  const int max_level = (points - 1) / 2;
  std::vector<double> magnitudes(group.size());
  double max_abs = 0.0;
  for (std::size_t i = 0; i < group.size(); ++i) {
    const double w = static_cast<double>(group[i]);
    if (!std::isfinite(w)) throw InvalidArgument("optimize_step: non-finite weight");
    magnitudes[i] = std::fabs(w);
    max_abs = std::max(max_abs, magnitudes[i]);
  }
  if (max_abs == 0.0) throw DegenerateGroup("weight group is all zero");

  StepSolution best{0.0, std::numeric_limits<double>::infinity()};
  const auto offer = [&](std::optional<double> step) {
    if (!step || !(*step > 0.0) || !std::isfinite(*step)) return;
    const double mse = mse_on_grid(group, *step, max_level);
    if (mse < best.mse) best = {*step, mse};
  };

  // Smallest step that does not clip the largest magnitude.
  const double base = max_abs / max_level;
  for (const double factor : cfg.multistart_factors) {
    offer(refine_step(magnitudes, max_level, base * factor, cfg));
  }

  std::vector<double> sorted = magnitudes;
  std::sort(sorted.begin(), sorted.end());
  if (const auto swept = sweep_step(sorted, max_level)) {
    // The sweep accumulates its sums incrementally; one closed-form pass from
    // its answer lands on the exact stationary step.
    offer(refine_step(magnitudes, max_level, *swept, cfg));
  }
  if (!(best.step > 0.0)) throw DegenerateGroup("step solver found no positive step");
  return best;
}

std::vector<double> exhaustive_search_candidates(double initial_step, int num_candidates) {
  if (!(initial_step > 0.0) || !std::isfinite(initial_step)) {
    throw InvalidArgument("exhaustive search: initial step must be positive and finite");
  }
  if (num_candidates < 2) throw InvalidArgument("exhaustive search: need >= 2 candidates");
  std::vector<double> candidates(static_cast<std::size_t>(num_candidates));
  const double low = initial_step * 0.5;
  for (int k = 0; k < num_candidates; ++k) {
    candidates[k] = low * std::pow(4.0, static_cast<double>(k) / (num_candidates - 1));
  }
  candidates.front() = low;
  candidates.back() = initial_step * 2.0;
  return candidates;
}

double exhaustive_search_step(double initial_step, const std::function<double(double)>& score,
                              int num_candidates) {
  const auto candidates = exhaustive_search_candidates(initial_step, num_candidates);
  double best_step = candidates.front();
  double best_score = std::numeric_limits<double>::infinity();
  for (const double c : candidates) {
    const double s = score(c);
    if (s < best_score) {
      best_score = s;
      best_step = c;
    }
  }
  return best_step;
}

template void quantize<float>(std::span<const float>, std::span<float>, const QuantizerSpec&);
template void quantize<double>(std::span<const double>, std::span<double>, const QuantizerSpec&);
template double quant_mse<float>(std::span<const float>, const QuantizerSpec&);
template double quant_mse<double>(std::span<const double>, const QuantizerSpec&);
template StepSolution optimize_step<float>(std::span<const float>, int, const StepSolverConfig&);
template StepSolution optimize_step<double>(std::span<const double>, int, const StepSolverConfig&);

}  // namespace fxq
