#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>

#include "fxq/nn/data.hpp"
#include "fxq/nn/network.hpp"

namespace fxq::nn {

enum class MetricKind { ErrorRate, BitsPerCharacter };

const char* to_string(MetricKind kind) noexcept;
MetricKind metric_from_string(const std::string& s);
MetricKind default_metric(TaskKind task) noexcept;

/// Accumulated loss statistics over one or more batches.
struct Tally {
  double sum_nll = 0.0;
  std::size_t count = 0;
  std::size_t errors = 0;

  void add(const Tally& o) {
    sum_nll += o.sum_nll;
    count += o.count;
    errors += o.errors;
  }
  double mean_loss() const { return count ? sum_nll / static_cast<double>(count) : 0.0; }
  double error_rate() const { return count ? 100.0 * static_cast<double>(errors) / static_cast<double>(count) : 0.0; }
  double bits_per_character() const { return mean_loss() / std::numbers::ln2; }
  double metric(MetricKind kind) const {
    return kind == MetricKind::ErrorRate ? error_rate() : bits_per_character();
  }
};

template <typename T>
struct BatchStep {
  Tally tally;
  ParamSet<T> grads;
};

/// Forward and backward on one batch in training mode using `params` (the
/// float weights, or their quantized view during retraining). Running
/// statistics in `buffers` are updated. Raises DivergenceError on a
/// non-finite loss.
template <typename T>
BatchStep<T> compute_gradients(const Network<T>& net, const ParamSet<T>& params, ParamSet<T>& buffers,
                               const Batch<T>& batch);

/// Inference-mode loss and metric over a whole dataset, in order.
template <typename T>
Tally evaluate(const Network<T>& net, const ParamSet<T>& params, const ParamSet<T>& buffers,
               const Dataset<T>& data, const BatchingConfig& cfg);

}  // namespace fxq::nn
