#pragma once

#include <memory>
#include <random>

#include "fxq/nn/network.hpp"

namespace fxq::nn {

template <typename T>
class Layer {
 public:
  explicit Layer(LayerSpec spec) : spec_(std::move(spec)) {}
  virtual ~Layer() = default;

  virtual std::unique_ptr<Layer> clone() const = 0;

  const LayerSpec& spec() const noexcept { return spec_; }
  const std::string& name() const noexcept { return spec_.name; }

  /// Fixes input-dependent sizes from the build-time input shape and returns
  /// the output shape.
  virtual Shape configure(const Shape& input) = 0;

  /// Output shape for a run-time input; throws ShapeError when incompatible.
  virtual Shape output_shape(const Shape& input) const = 0;

  virtual void init(ParamSet<T>& /*params*/, ParamSet<T>& /*buffers*/, std::mt19937_64& /*rng*/) const {}

  /// `buffer_updates` is non-null only in training mode with stateful layers.
  virtual Tensor<T> forward(const ParamSet<T>& params, const ParamSet<T>& buffers,
                            ParamSet<T>* buffer_updates, const Tensor<T>& x, Mode mode,
                            LayerCache<T>& cache) const = 0;

  virtual Tensor<T> backward(const ParamSet<T>& params, const LayerCache<T>& cache,
                             const Tensor<T>& dy, ParamSet<T>& grads) const = 0;

 protected:
  [[noreturn]] void shape_error(const std::string& what) const { throw ShapeError(spec_.name, what); }
  std::string param(const char* suffix) const { return spec_.name + "." + suffix; }

  LayerSpec spec_;
};

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec);

}  // namespace fxq::nn
