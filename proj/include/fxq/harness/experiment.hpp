#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fxq/harness/config.hpp"
#include "fxq/harness/dataset.hpp"
#include "fxq/nn/checkpoint.hpp"
#include "fxq/qat.hpp"

namespace fxq::harness {

inline constexpr const char* kResultsHeader[] = {"cell_bits", "schedule", "seed", "split", "metric", "value"};
inline constexpr const char* kTrajectoryHeader[] = {"run_id", "epoch", "group_id", "delta"};

struct FloatEpoch {
  int epoch = 0;  // 1-based; row e is the model after e epochs
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double train_metric = 0.0;
  std::optional<double> dev_loss;
  std::optional<double> dev_metric;
};

struct FloatResult {
  nn::Checkpoint<float> checkpoint;  // best on dev
  std::vector<FloatEpoch> history;
  int best_epoch = 0;
  double train_metric = 0.0;  // best model, inference mode
  double dev_metric = 0.0;
  double test_loss = 0.0;
  double test_metric = 0.0;
};

/// Nesterov/AdaDelta training of the float network until the learning-rate
/// schedule bottoms out or max_epochs, keeping the best dev checkpoint.
FloatResult train_float(const ExperimentConfig& cfg, const DatasetSplits& data, std::uint64_t seed);

/// Input shape (with placeholder batch axes) the network is built for.
nn::Shape network_input_shape(Task task, const DatasetSplits& data);

/// The configured layers with the output size filled in: a fully connected
/// layer declared with 0 units gets one unit per class (or vocabulary symbol).
std::vector<nn::LayerSpec> network_layers(const ExperimentConfig& cfg, const DatasetSplits& data);

std::string run_id(const Cell& cell, std::uint64_t seed);

/// Writes <out>/float/seed-N/{model.ckpt,history.csv,result.json}.
void write_float_outputs(const std::filesystem::path& out, std::uint64_t seed, const FloatResult& r,
                         const ExperimentConfig& cfg);

/// Loads <out>/float/seed-N/model.ckpt, training and writing it first if absent.
nn::Checkpoint<float> ensure_float_model(const ExperimentConfig& cfg, const DatasetSplits& data, std::uint64_t seed,
                                         const std::filesystem::path& out);

/// Retrains one cell and writes <out>/runs/<run_id>/{history.csv,trajectory.csv,result.json,model.ckpt}.
qat::RunResult run_cell(const ExperimentConfig& cfg, const DatasetSplits& data, const nn::Checkpoint<float>& model,
                        const Cell& cell, std::uint64_t seed, const std::filesystem::path& out);

struct SweepSummary {
  std::size_t runs = 0;
  std::size_t failures = 0;
};

/// Every cell for every seed. Writes results.csv (one test row per
/// successful run), baseline.csv (float test metric per seed),
/// failures.csv and config.json under `out`. A failing cell is recorded
/// and the sweep continues.
SweepSummary sweep(const ExperimentConfig& cfg, const std::filesystem::path& out, bool deterministic = true);

/// Consolidates a results directory into summary.csv, summary.json and
/// trajectory.csv. Throws EmptyInput when there is nothing to report.
void report(const std::filesystem::path& dir);

}  // namespace fxq::harness
