#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fxq/nn/checkpoint.hpp"
#include "fxq/nn/data.hpp"
#include "fxq/nn/network.hpp"
#include "fxq/nn/optimizer.hpp"
#include "fxq/nn/training.hpp"
#include "fxq/quantizer.hpp"

namespace fxq::qat {

using Params = nn::ParamSet<float>;

/// Float master weights and their quantized view. Every quantizable
/// parameter is its own weight group, keyed by parameter name.
struct ShadowParams {
  Params master;
  Params quantized;
  std::map<std::string, QuantizerSpec> specs;

  /// Rebuilds the quantized view from the master with the current steps.
  void sync();

  friend bool operator==(const ShadowParams&, const ShadowParams&) = default;
};

/// Fits one step per quantizable parameter with optimize_step and builds
/// the quantized view. A degenerate group raises DegenerateGroup carrying
/// the parameter name.
ShadowParams init_quantization(const Params& master, int bits, const StepSolverConfig& cfg = {});

enum class ScheduleKind { Direct, ConventionalFixed, AdaptiveEveryEpoch, AdaptiveFirstKThenFix, Gradual };

struct Schedule {
  ScheduleKind kind = ScheduleKind::AdaptiveEveryEpoch;
  int first_k = 1;  // AdaptiveFirstKThenFix

  // Gradual: one stage per bit width from start_bits down to end_bits.
  int start_bits = 6;
  int end_bits = 2;
  /// Epochs per stage; 0 ends a stage when its learning-rate schedule runs out.
  int epochs_per_stage = 0;
  ScheduleKind inner = ScheduleKind::AdaptiveEveryEpoch;
  int inner_first_k = 1;

  void validate() const;
  int stage_count() const { return kind == ScheduleKind::Gradual ? start_bits - end_bits + 1 : 1; }

  /// "direct", "conventional", "adaptive", "adaptive-first:K",
  /// "gradual:START:END:EPOCHS:INNER" (INNER is one of the first four forms).
  std::string to_string() const;
  static Schedule parse(const std::string& text);

  friend bool operator==(const Schedule&, const Schedule&) = default;
};

enum class Decision { UpdateStep, FreezeStep, DropBit };

const char* to_string(Decision d) noexcept;

struct ScheduleDecision {
  Decision kind = Decision::FreezeStep;
  int new_bits = 0;  // DropBit only

  friend bool operator==(const ScheduleDecision&, const ScheduleDecision&) = default;
};

struct ScheduleContext {
  Schedule schedule;
  int bits = 2;             // current bit width
  int stage_start = 0;      // first epoch index of the current stage
  bool stage_done = false;  // epochs_per_stage == 0: the stage's learning-rate schedule has run out
};

/// Decision taken at the end of retraining epoch `epoch_index` (0-based).
ScheduleDecision apply_schedule(const ScheduleContext& ctx, int epoch_index);

struct RetrainConfig {
  Schedule schedule;
  int bits = 2;  // ignored by Gradual
  nn::OptimizerConfig optimizer = default_optimizer();
  nn::BatchingConfig batching;
  nn::MetricKind metric = nn::MetricKind::ErrorRate;
  StepSolverConfig solver;
  int max_epochs = 20;  // per stage for Gradual
  int eval_every = 1;   // epochs between dev evaluations
  bool exhaustive_init = false;  // ConventionalFixed only: dev-set search around the L2 step
  int exhaustive_candidates = 17;
  std::uint64_t seed = 0;
  bool check_finite = true;

  void validate() const;
  static nn::OptimizerConfig default_optimizer();
};

struct EpochOutcome {
  nn::Tally train;
  ScheduleDecision decision;
  std::vector<std::string> warnings;
};

/// One pass of the retraining loop: for each minibatch, forward and backward
/// through the quantized view, update the master, and re-quantize with the
/// current steps. At the end the schedule decides whether the steps are
/// re-estimated from the master. DropBit is returned without acting on it;
/// the caller owns stage transitions.
EpochOutcome retrain_epoch(const nn::Network<float>& net, ShadowParams& shadow, Params& buffers,
                           nn::Batcher<float>& batches, nn::OptimizerState<float>& opt,
                           const nn::OptimizerConfig& opt_cfg, double learning_rate, std::mt19937_64& rng,
                           const ScheduleContext& ctx, int epoch_index, const StepSolverConfig& solver = {});

/// Re-estimates every group's step from the master. A degenerate group keeps
/// its previous step; the returned strings describe those groups.
std::vector<std::string> update_steps(ShadowParams& shadow, const StepSolverConfig& solver);

/// One history row. Row 0 is the quantized float model before retraining;
/// row e describes the state after e retraining epochs.
struct EpochRecord {
  int epoch = 0;
  int bits = 0;
  double learning_rate = 0.0;
  std::optional<double> train_loss;
  std::optional<double> train_metric;
  std::optional<double> dev_loss;
  std::optional<double> dev_metric;
  std::optional<Decision> decision;
  std::map<std::string, double> deltas;
  std::vector<std::string> warnings;
};

struct RunRecord {
  nn::MetricKind metric = nn::MetricKind::ErrorRate;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double test_loss = 0.0;
  double test_metric = 0.0;

  int retrain_epochs() const { return static_cast<int>(epochs.size()) - 1; }
};

struct Splits {
  const nn::Dataset<float>* train = nullptr;
  const nn::Dataset<float>* dev = nullptr;
  const nn::Dataset<float>* test = nullptr;
};

struct RunResult {
  nn::Checkpoint<float> checkpoint;  // best-on-dev master weights with their quantizer specs
  ShadowParams shadow;
  RunRecord record;
};

/// Called after every history row with the state that row describes.
using EpochObserver = std::function<void(const EpochRecord&, const ShadowParams&)>;

/// Quantizes the float model, retrains it under the schedule with dev-driven
/// learning-rate decay, restores the best dev state and scores the test set.
RunResult run(const RetrainConfig& cfg, const nn::Checkpoint<float>& float_model, const Splits& data,
              const EpochObserver& observer = {});

/// Test-set metric of the float model quantized once with L2-optimal steps.
nn::Tally evaluate_direct(const nn::Checkpoint<float>& float_model, int bits, const nn::Dataset<float>& data,
                          const nn::BatchingConfig& batching, const StepSolverConfig& solver = {});

}  // namespace fxq::qat
