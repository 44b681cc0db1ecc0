#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "fxq/nn/tensor.hpp"

namespace fxq::nn {

enum class TaskKind { Classification, Sequence };

/// Classification: `inputs` is [N, features...] and `labels` holds N class ids.
/// Sequence: `labels` is the token stream and `inputs` is empty; batches are
/// one-hot encoded on the fly.
template <typename T>
struct Dataset {
  TaskKind kind = TaskKind::Classification;
  Tensor<T> inputs;
  std::vector<int> labels;
  std::size_t num_classes = 0;  // classes, or vocabulary size

  std::size_t size() const noexcept {
    return kind == TaskKind::Classification ? (inputs.rank() ? inputs.dim(0) : 0) : labels.size();
  }
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Sequence windows are `unroll_length` steps long and start every
/// `update_stride` steps; apart from the first window only the last
/// `update_stride` predictions count toward the loss so each target is
/// scored exactly once.
struct BatchingConfig {
  std::size_t batch_size = 32;
  std::size_t unroll_length = 256;
  std::size_t update_stride = 128;

  void validate() const;
};

template <typename T>
struct Batch {
  Tensor<T> input;           // [B, ...] or one-hot [T, B, V]
  std::vector<int> targets;  // one per output row; kIgnoreTarget rows do not count
};

/// Splits a dataset into minibatches. Batches are materialized on demand.
template <typename T>
class Batcher {
 public:
  Batcher(const Dataset<T>& data, BatchingConfig cfg);

  /// Orders the batches for a new pass: shuffled when `rng` is given,
  /// sequential otherwise.
  void start_epoch(std::mt19937_64* rng);

  std::size_t batch_count() const noexcept { return order_.size(); }
  Batch<T> batch(std::size_t i) const;

 private:
  Batch<T> classification_batch(std::size_t i) const;
  Batch<T> sequence_batch(std::size_t window) const;

  const Dataset<T>* data_;
  BatchingConfig cfg_;
  std::vector<std::size_t> order_;  // batch ids or window ids
  std::vector<std::size_t> sample_order_;
  std::size_t samples_per_batch_ = 0;
  std::size_t streams_ = 0;
  std::size_t stream_length_ = 0;
  std::size_t windows_ = 0;
};

}  // namespace fxq::nn
