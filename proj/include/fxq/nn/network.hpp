#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "fxq/nn/layer_spec.hpp"
#include "fxq/nn/param_set.hpp"
#include "fxq/nn/tensor.hpp"

namespace fxq::nn {

enum class Mode { Train, Eval };

/// Intermediate values one layer saved during forward.
template <typename T>
struct LayerCache {
  std::vector<Tensor<T>> saved;
  std::vector<std::size_t> indices;
  Shape input_shape;
};

template <typename T>
struct ForwardCache {
  std::uint64_t network_id = 0;
  Mode mode = Mode::Eval;
  Shape output_shape;
  std::vector<LayerCache<T>> layers;
};

template <typename T>
struct ForwardResult {
  Tensor<T> output;
  ForwardCache<T> cache;
};

template <typename T>
struct Gradients {
  ParamSet<T> params;
  Tensor<T> input;
};

/// Trainable parameters plus non-trainable running statistics.
template <typename T>
struct ModelState {
  ParamSet<T> params;
  ParamSet<T> buffers;

  friend bool operator==(const ModelState&, const ModelState&) = default;
};

template <typename T>
class Layer;

/// A feed-forward chain of layers. The network is stateless: parameters and
/// running statistics are passed in, so the same network can run on float
/// master weights or on their quantized view.
template <typename T>
class Network {
 public:
  /// `input_shape` includes batch (and for sequences, time) axes; their sizes
  /// are placeholders and may differ at run time.
  Network(std::vector<LayerSpec> specs, Shape input_shape);
  ~Network();
  Network(const Network&);
  Network& operator=(const Network&);
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;

  const std::vector<LayerSpec>& specs() const noexcept { return specs_; }
  const Shape& input_shape() const noexcept { return input_shape_; }
  Shape output_shape(const Shape& input) const;

  ModelState<T> init(std::mt19937_64& rng) const;

  ForwardResult<T> forward(const ParamSet<T>& params, ParamSet<T>& buffers, const Tensor<T>& input,
                           Mode mode) const;

  /// Inference without running-statistics updates.
  Tensor<T> predict(const ParamSet<T>& params, const ParamSet<T>& buffers, const Tensor<T>& input) const;

  /// Gradients of every parameter and of the input given dLoss/dOutput.
  Gradients<T> backward(const ParamSet<T>& params, const ForwardCache<T>& cache,
                        const Tensor<T>& output_grad) const;

  /// When enabled, forward and backward raise DivergenceError on NaN/Inf.
  void set_check_finite(bool on) noexcept { check_finite_ = on; }
  bool check_finite() const noexcept { return check_finite_; }

 private:
  void build();

  std::vector<LayerSpec> specs_;
  Shape input_shape_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::uint64_t id_ = 0;
  bool check_finite_ = false;
};

extern template class Network<float>;
extern template class Network<double>;

}  // namespace fxq::nn
