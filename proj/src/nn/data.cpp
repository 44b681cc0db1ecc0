#include "fxq/nn/data.hpp"

#include <algorithm>
#include <numeric>

#include "fxq/nn/loss.hpp"

namespace fxq::nn {

template <typename T>
void Dataset<T>::validate() const {
  if (num_classes == 0) throw InvalidArgument("dataset needs num_classes > 0");
  for (const int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
      throw InvalidArgument("label " + std::to_string(label) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  if (kind == TaskKind::Classification) {
    if (inputs.rank() < 2) throw InvalidArgument("classification inputs need shape [N, features...]");
    if (inputs.dim(0) != labels.size()) {
      throw InvalidArgument("classification inputs have " + std::to_string(inputs.dim(0)) + " rows but " +
                            std::to_string(labels.size()) + " labels");
    }
  }
}

void BatchingConfig::validate() const {
  if (batch_size == 0) throw InvalidArgument("batch_size must be >= 1");
  if (unroll_length == 0) throw InvalidArgument("unroll_length must be >= 1");
  if (update_stride == 0 || update_stride > unroll_length) {
    throw InvalidArgument("update_stride must be in [1, unroll_length]");
  }
}

template <typename T>
Batcher<T>::Batcher(const Dataset<T>& data, BatchingConfig cfg) : data_(&data), cfg_(cfg) {
  cfg_.validate();
  data.validate();
  if (data.kind == TaskKind::Classification) {
    if (data.size() == 0) throw EmptyInput("dataset has no samples");
    return;
  }
  // Parallel streams, each needing at least one (input, next token) pair.
  const std::size_t n = data.labels.size();
  if (n < 2) throw EmptyInput("token stream needs at least 2 tokens");
  streams_ = std::min(cfg_.batch_size, n / 2);
  stream_length_ = n / streams_;
  const std::size_t predictions = stream_length_ - 1;
  windows_ = 1;
  if (predictions > cfg_.unroll_length) {
    windows_ += (predictions - cfg_.unroll_length + cfg_.update_stride - 1) / cfg_.update_stride;
  }
}

template <typename T>
void Batcher<T>::start_epoch(std::mt19937_64* rng) {
  const std::size_t n = data_->kind == TaskKind::Classification ? data_->size() : windows_;
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (rng) std::shuffle(order_.begin(), order_.end(), *rng);
  if (data_->kind == TaskKind::Classification) {
    // order_ holds sample indices; batches are consecutive slices of it.
    const std::size_t batches = (n + cfg_.batch_size - 1) / cfg_.batch_size;
    samples_per_batch_ = cfg_.batch_size;
    sample_order_ = std::move(order_);
    order_.resize(batches);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
  }
}

template <typename T>
Batch<T> Batcher<T>::batch(std::size_t i) const {
  if (i >= order_.size()) throw InvalidArgument("batch index out of range (call start_epoch first)");
  return data_->kind == TaskKind::Classification ? classification_batch(order_[i]) : sequence_batch(order_[i]);
}

template <typename T>
Batch<T> Batcher<T>::classification_batch(std::size_t b) const {
  const std::size_t begin = b * samples_per_batch_;
  const std::size_t end = std::min(begin + samples_per_batch_, sample_order_.size());
  const auto& src = data_->inputs;
  const std::size_t row = src.size() / src.dim(0);
  Shape shape = src.shape();
  shape[0] = end - begin;
  Batch<T> out{Tensor<T>(shape), {}};
  out.targets.reserve(end - begin);
  for (std::size_t k = begin; k < end; ++k) {
    const std::size_t idx = sample_order_[k];
    std::copy_n(src.data() + idx * row, row, out.input.data() + (k - begin) * row);
    out.targets.push_back(data_->labels[idx]);
  }
  return out;
}

template <typename T>
Batch<T> Batcher<T>::sequence_batch(std::size_t window) const {
  const std::size_t start = window * cfg_.update_stride;
  const std::size_t predictions = stream_length_ - 1;
  const std::size_t steps = std::min(cfg_.unroll_length, predictions - start);
  const std::size_t first_counted = window == 0 ? 0 : cfg_.unroll_length - cfg_.update_stride;
  const std::size_t vocab = data_->num_classes;

  Batch<T> out{Tensor<T>({steps, streams_, vocab}), std::vector<int>(steps * streams_, kIgnoreTarget)};
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t b = 0; b < streams_; ++b) {
      const std::size_t pos = b * stream_length_ + start + t;
      const std::size_t row = t * streams_ + b;
      out.input[row * vocab + static_cast<std::size_t>(data_->labels[pos])] = T{1};
      if (t >= first_counted) out.targets[row] = data_->labels[pos + 1];
    }
  }
  return out;
}

template struct Dataset<float>;
template struct Dataset<double>;
template class Batcher<float>;
template class Batcher<double>;

}  // namespace fxq::nn
