#pragma once

#include <cstddef>
#include <string>

namespace fxq::nn {

enum class LayerKind { FullyConnected, Conv2D, MaxPool2D, BatchNorm, LSTM, Activation, Softmax, Flatten };

enum class ActivationFn { Linear, Sigmoid, Tanh, Relu };

const char* to_string(LayerKind kind) noexcept;
const char* to_string(ActivationFn fn) noexcept;
LayerKind layer_kind_from_string(const std::string& s);
ActivationFn activation_from_string(const std::string& s);

/// Static description of one layer. Input sizes are inferred from the
/// preceding layer when the network is built.
///
/// Tensor layouts: FullyConnected acts on the last axis (leading axes are
/// batch/time), Conv2D and MaxPool2D take [N, C, H, W], LSTM takes
/// [T, B, features], BatchNorm normalizes the last axis for rank 2 and 3
/// inputs and the channel axis for rank 4.
struct LayerSpec {
  LayerKind kind = LayerKind::FullyConnected;
  std::string name;

  std::size_t units = 0;  // FC outputs, conv output channels, LSTM cells
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  ActivationFn activation = ActivationFn::Linear;

  double bn_momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
  double bn_epsilon = 1e-5;

  /// LSTM backward truncation length in steps; 0 propagates through the whole sequence.
  std::size_t bptt_truncation = 0;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

LayerSpec fully_connected(std::size_t outputs, std::string name = {});
LayerSpec conv2d(std::size_t out_channels, std::size_t kernel, std::size_t stride = 1,
                 std::size_t padding = 0, std::string name = {});
LayerSpec max_pool2d(std::size_t kernel, std::size_t stride = 0, std::string name = {});
LayerSpec batch_norm(std::string name = {});
LayerSpec lstm(std::size_t cells, std::string name = {});
LayerSpec activation(ActivationFn fn, std::string name = {});
LayerSpec softmax(std::string name = {});
LayerSpec flatten(std::string name = {});

}  // namespace fxq::nn
