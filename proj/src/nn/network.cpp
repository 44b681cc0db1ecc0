#include "fxq/nn/network.hpp"

#include <atomic>
#include <map>
#include <set>

#include "layers.hpp"

namespace fxq::nn {

namespace {

std::uint64_t next_network_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace

template <typename T>
Network<T>::Network(std::vector<LayerSpec> specs, Shape input_shape)
    : specs_(std::move(specs)), input_shape_(std::move(input_shape)) {
  build();
}

template <typename T>
Network<T>::~Network() = default;

template <typename T>
Network<T>::Network(const Network& other)
    : specs_(other.specs_), input_shape_(other.input_shape_), check_finite_(other.check_finite_) {
  id_ = next_network_id();
  for (const auto& layer : other.layers_) layers_.push_back(layer->clone());
}

template <typename T>
Network<T>& Network<T>::operator=(const Network& other) {
  if (this != &other) *this = Network(other);
  return *this;
}

template <typename T>
Network<T>::Network(Network&&) noexcept = default;

template <typename T>
Network<T>& Network<T>::operator=(Network&&) noexcept = default;

template <typename T>
void Network<T>::build() {
  if (specs_.empty()) throw InvalidArgument("network needs at least one layer");
  id_ = next_network_id();
  std::map<LayerKind, int> counts;
  std::set<std::string> names;
  Shape shape = input_shape_;
  for (auto& spec : specs_) {
    if (spec.name.empty()) spec.name = std::string(to_string(spec.kind)) + std::to_string(++counts[spec.kind]);
    if (!names.insert(spec.name).second) throw InvalidArgument("duplicate layer name '" + spec.name + "'");
    auto layer = make_layer<T>(spec);
    shape = layer->configure(shape);
    spec = layer->spec();
    layers_.push_back(std::move(layer));
  }
}

template <typename T>
Shape Network<T>::output_shape(const Shape& input) const {
  Shape shape = input;
  for (const auto& layer : layers_) shape = layer->output_shape(shape);
  return shape;
}

template <typename T>
ModelState<T> Network<T>::init(std::mt19937_64& rng) const {
  ModelState<T> state;
  for (const auto& layer : layers_) layer->init(state.params, state.buffers, rng);
  return state;
}

template <typename T>
ForwardResult<T> Network<T>::forward(const ParamSet<T>& params, ParamSet<T>& buffers, const Tensor<T>& input,
                                     Mode mode) const {
  ForwardResult<T> result;
  result.cache.network_id = id_;
  result.cache.mode = mode;
  result.cache.layers.resize(layers_.size());
  ParamSet<T>* updates = mode == Mode::Train ? &buffers : nullptr;
  Tensor<T> x = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i]->forward(params, buffers, updates, x, mode, result.cache.layers[i]);
    if (check_finite_ && !x.all_finite()) {
      throw DivergenceError("non-finite activation after layer '" + layers_[i]->name() + "'");
    }
  }
  result.cache.output_shape = x.shape();
  result.output = std::move(x);
  return result;
}

template <typename T>
Tensor<T> Network<T>::predict(const ParamSet<T>& params, const ParamSet<T>& buffers,
                              const Tensor<T>& input) const {
  Tensor<T> x = input;
  LayerCache<T> scratch;
  for (const auto& layer : layers_) {
    x = layer->forward(params, buffers, nullptr, x, Mode::Eval, scratch);
    scratch = {};
    if (check_finite_ && !x.all_finite()) {
      throw DivergenceError("non-finite activation after layer '" + layer->name() + "'");
    }
  }
  return x;
}

template <typename T>
Gradients<T> Network<T>::backward(const ParamSet<T>& params, const ForwardCache<T>& cache,
                                  const Tensor<T>& output_grad) const {
  if (cache.network_id != id_ || cache.layers.size() != layers_.size()) {
    throw InvalidState("forward cache does not belong to this network");
  }
  if (cache.mode != Mode::Train) throw InvalidState("backward needs a training-mode forward cache");
  if (output_grad.shape() != cache.output_shape) {
    throw ShapeError(layers_.back()->name(), "loss gradient shape " + shape_string(output_grad.shape()) +
                                                 " does not match output " + shape_string(cache.output_shape));
  }
  Gradients<T> grads;
  grads.params = params.zeros_like();
  Tensor<T> dy = output_grad;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    dy = layers_[i]->backward(params, cache.layers[i], dy, grads.params);
    if (check_finite_ && !dy.all_finite()) {
      throw DivergenceError("non-finite gradient in layer '" + layers_[i]->name() + "'");
    }
  }
  grads.input = std::move(dy);
  return grads;
}

template class Network<float>;
template class Network<double>;

}  // namespace fxq::nn
