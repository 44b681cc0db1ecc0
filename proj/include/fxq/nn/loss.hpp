#pragma once

#include <span>

#include "fxq/nn/tensor.hpp"

namespace fxq::nn {

/// Target value marking a row that does not contribute to the loss.
inline constexpr int kIgnoreTarget = -1;

template <typename T>
struct LossResult {
  double loss = 0.0;       // mean over counted rows
  double sum_nll = 0.0;    // natural-log negative log likelihood summed over counted rows
  std::size_t count = 0;   // rows with a target
  std::size_t errors = 0;  // counted rows whose argmax differs from the target
  Tensor<T> grad;          // dLoss/dLogits
};

/// Softmax over the last axis followed by cross-entropy against integer
/// targets, one per row. The loss is the mean over rows whose target is not
/// kIgnoreTarget; ignored rows get zero gradient.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> targets);

/// E = (1/2) * sum (y - target)^2 with gradient y - target.
template <typename T>
LossResult<T> squared_error(const Tensor<T>& output, const Tensor<T>& target);

}  // namespace fxq::nn
