#pragma once

// Small float models for retraining tests.

#include <cmath>
#include <random>

#include "fxq/nn/checkpoint.hpp"
#include "fxq/nn/optimizer.hpp"
#include "fxq/nn/training.hpp"

namespace fxq::toy {

/// Noisy clusters around `classes` random centres in `dims` dimensions.
inline nn::Dataset<float> clusters(std::size_t n, std::size_t dims, std::size_t classes, double noise,
                                   std::uint64_t seed) {
  std::mt19937_64 centre_rng(1000 + classes * 31 + dims);
  std::normal_distribution<double> unit;
  std::vector<double> centres(classes * dims);
  for (auto& c : centres) c = unit(centre_rng);
  std::mt19937_64 rng(seed);
  nn::Dataset<float> d;
  d.num_classes = classes;
  d.inputs = nn::Tensor<float>({n, dims});
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<int>(rng() % classes);
    d.labels.push_back(c);
    for (std::size_t k = 0; k < dims; ++k) {
      d.inputs[i * dims + k] = static_cast<float>(centres[c * dims + k] + noise * unit(rng));
    }
  }
  return d;
}

inline std::vector<nn::LayerSpec> mlp(std::size_t hidden, std::size_t classes, bool batch_norm = false) {
  std::vector<nn::LayerSpec> l{nn::fully_connected(hidden)};
  if (batch_norm) l.push_back(nn::batch_norm());
  l.push_back(nn::activation(nn::ActivationFn::Tanh));
  l.push_back(nn::fully_connected(classes));
  return l;
}

/// Plain Nesterov training for a fixed number of epochs.
inline nn::Checkpoint<float> train_float(const std::vector<nn::LayerSpec>& layers, const nn::Dataset<float>& train,
                                         int epochs, std::uint64_t seed, double lr = 0.05) {
  nn::Checkpoint<float> c;
  c.layers = layers;
  c.input_shape = {1, train.inputs.dim(1)};
  nn::Network<float> net(c.layers, c.input_shape);
  std::mt19937_64 rng(seed);
  c.state = net.init(rng);
  nn::Batcher<float> batches(train, {16, 1, 1});
  nn::OptimizerConfig cfg;
  nn::OptimizerState<float> opt;
  for (int e = 0; e < epochs; ++e) {
    batches.start_epoch(&rng);
    for (std::size_t i = 0; i < batches.batch_count(); ++i) {
      auto step = nn::compute_gradients(net, c.state.params, c.state.buffers, batches.batch(i));
      nn::update(c.state.params, step.grads, opt, cfg, lr);
    }
  }
  return c;
}

}  // namespace fxq::toy
