#include "fxq/nn/training.hpp"

#include "fxq/nn/loss.hpp"

namespace fxq::nn {

const char* to_string(MetricKind kind) noexcept {
  return kind == MetricKind::ErrorRate ? "error_rate" : "bpc";
}

MetricKind metric_from_string(const std::string& s) {
  if (s == "error_rate") return MetricKind::ErrorRate;
  if (s == "bpc") return MetricKind::BitsPerCharacter;
  throw InvalidArgument("unknown metric '" + s + "'");
}

MetricKind default_metric(TaskKind task) noexcept {
  return task == TaskKind::Classification ? MetricKind::ErrorRate : MetricKind::BitsPerCharacter;
}

namespace {

template <typename T>
Tally tally_of(const LossResult<T>& r) {
  return {r.sum_nll, r.count, r.errors};
}

}  // namespace

template <typename T>
BatchStep<T> compute_gradients(const Network<T>& net, const ParamSet<T>& params, ParamSet<T>& buffers,
                               const Batch<T>& batch) {
  auto fwd = net.forward(params, buffers, batch.input, Mode::Train);
  auto loss = softmax_cross_entropy(fwd.output, std::span<const int>(batch.targets));
  if (!std::isfinite(loss.loss)) throw DivergenceError("non-finite training loss");
  auto grads = net.backward(params, fwd.cache, loss.grad);
  return {tally_of(loss), std::move(grads.params)};
}

template <typename T>
Tally evaluate(const Network<T>& net, const ParamSet<T>& params, const ParamSet<T>& buffers,
               const Dataset<T>& data, const BatchingConfig& cfg) {
  Batcher<T> batcher(data, cfg);
  batcher.start_epoch(nullptr);
  Tally total;
  for (std::size_t i = 0; i < batcher.batch_count(); ++i) {
    const auto batch = batcher.batch(i);
    const auto out = net.predict(params, buffers, batch.input);
    total.add(tally_of(softmax_cross_entropy(out, std::span<const int>(batch.targets))));
  }
  return total;
}

template BatchStep<float> compute_gradients(const Network<float>&, const ParamSet<float>&, ParamSet<float>&,
                                            const Batch<float>&);
template BatchStep<double> compute_gradients(const Network<double>&, const ParamSet<double>&, ParamSet<double>&,
                                             const Batch<double>&);
template Tally evaluate(const Network<float>&, const ParamSet<float>&, const ParamSet<float>&,
                        const Dataset<float>&, const BatchingConfig&);
template Tally evaluate(const Network<double>&, const ParamSet<double>&, const ParamSet<double>&,
                        const Dataset<double>&, const BatchingConfig&);

}  // namespace fxq::nn
