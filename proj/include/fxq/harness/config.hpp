#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fxq/harness/dataset.hpp"
#include "fxq/nn/layer_spec.hpp"
#include "fxq/nn/optimizer.hpp"
#include "fxq/qat.hpp"

namespace fxq::harness {

struct FloatTrainingConfig {
  nn::OptimizerConfig optimizer;
  nn::BatchingConfig batching;
  int max_epochs = 50;
  int eval_every = 1;
};

struct Cell {
  int bits = 2;
  qat::Schedule schedule;

  friend bool operator==(const Cell&, const Cell&) = default;
};

/// One experiment: data, network, float training, and the grid of
/// (bits, schedule) cells retrained for every seed.
///
/// The file is JSON with top-level sections "task", "dataset", "network",
/// "float_training", "retraining", "cells", "seeds" and "output_dir".
/// Unknown keys are rejected.
struct ExperimentConfig {
  Task task = Task::ClassificationVector;
  DatasetConfig dataset;
  std::vector<nn::LayerSpec> network;
  FloatTrainingConfig float_training;
  qat::RetrainConfig retraining;  // schedule, bits and seed are set per cell
  std::vector<Cell> cells;
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path output_dir = "fxq-out";

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);

  /// Retraining settings for one cell and seed.
  qat::RetrainConfig retrain_config(const Cell& cell, std::uint64_t seed) const;
  nn::MetricKind metric() const;
};

}  // namespace fxq::harness
