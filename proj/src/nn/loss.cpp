#include "fxq/nn/loss.hpp"

#include <algorithm>
#include <cmath>

namespace fxq::nn {

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> targets) {
  if (logits.rank() < 1) throw InvalidArgument("softmax_cross_entropy: logits need rank >= 1");
  const std::size_t classes = logits.shape().back();
  const std::size_t rows = logits.size() / classes;
  if (targets.size() != rows) {
    throw InvalidArgument("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                          std::to_string(rows) + " rows");
  }
  LossResult<T> r;
  r.grad = Tensor<T>(logits.shape());
  for (const int t : targets) {
    if (t == kIgnoreTarget) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= classes) {
      throw InvalidArgument("softmax_cross_entropy: target " + std::to_string(t) + " out of range");
    }
    ++r.count;
  }
  if (r.count == 0) return r;

  std::vector<double> p(classes);
  const double scale = 1.0 / static_cast<double>(r.count);
  for (std::size_t row = 0; row < rows; ++row) {
    const int target = targets[row];
    if (target == kIgnoreTarget) continue;
    const T* z = logits.data() + row * classes;
    const std::size_t arg = static_cast<std::size_t>(std::max_element(z, z + classes) - z);
    const double top = z[arg];
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += (p[c] = std::exp(z[c] - top));
    const double log_sum = std::log(sum);
    r.sum_nll += log_sum - (z[target] - top);
    if (arg != static_cast<std::size_t>(target)) ++r.errors;
    T* g = r.grad.data() + row * classes;
    for (std::size_t c = 0; c < classes; ++c) {
      const double prob = p[c] / sum;
      g[c] = static_cast<T>((prob - (c == static_cast<std::size_t>(target) ? 1.0 : 0.0)) * scale);
    }
  }
  r.loss = r.sum_nll * scale;
  return r;
}

template <typename T>
LossResult<T> squared_error(const Tensor<T>& output, const Tensor<T>& target) {
  if (output.shape() != target.shape()) {
    throw InvalidArgument("squared_error: shape " + shape_string(output.shape()) + " vs " +
                          shape_string(target.shape()));
  }
  LossResult<T> r;
  r.grad = Tensor<T>(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i) {
    const double d = static_cast<double>(output[i]) - target[i];
    r.loss += 0.5 * d * d;
    r.grad[i] = static_cast<T>(d);
  }
  r.count = output.size();
  return r;
}

template LossResult<float> softmax_cross_entropy<float>(const Tensor<float>&, std::span<const int>);
template LossResult<double> softmax_cross_entropy<double>(const Tensor<double>&, std::span<const int>);
template LossResult<float> squared_error<float>(const Tensor<float>&, const Tensor<float>&);
template LossResult<double> squared_error<double>(const Tensor<double>&, const Tensor<double>&);

}  // namespace fxq::nn
