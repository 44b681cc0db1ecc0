#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>

#include "fxq/nn/param_set.hpp"

namespace fxq::nn {

enum class OptimizerKind { SgdNesterov, AdaDelta };

const char* to_string(OptimizerKind kind) noexcept;
OptimizerKind optimizer_kind_from_string(const std::string& s);

/// Reduce-on-plateau learning-rate schedule.
struct LrScheduleConfig {
  double initial_lr = 2e-3;
  double final_lr = 3.90625e-6;
  double decay_factor = 2.0;
  int patience_evals = 4;

  void validate() const;
};

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::SgdNesterov;
  double momentum = 0.9;
  double adadelta_decay = 0.95;
  double adadelta_epsilon = 1e-6;
  LrScheduleConfig lr_schedule;

  void validate() const;
};

/// Per-parameter optimizer slots ("<param>/velocity", "<param>/grad_sq", "<param>/update_sq").
template <typename T>
struct OptimizerState {
  std::map<std::string, Tensor<T>> slots;
  std::uint64_t steps = 0;

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// Applies one optimizer step to `params` in place.
///
/// SgdNesterov:  v <- mu*v - lr*g;  w <- w + mu*v - lr*g
/// AdaDelta:     E[g^2] <- rho*E[g^2] + (1-rho)*g^2
///               u = -sqrt(E[u^2] + eps) / sqrt(E[g^2] + eps) * g
///               E[u^2] <- rho*E[u^2] + (1-rho)*u^2;  w <- w + lr*u
template <typename T>
void update(ParamSet<T>& params, const ParamSet<T>& grads, OptimizerState<T>& state,
            const OptimizerConfig& cfg, double learning_rate);

struct LrScheduleState {
  double lr = 0.0;
  double best = std::numeric_limits<double>::infinity();
  int bad_evals = 0;
  int evals = 0;
  /// Set when a decay was due while already at the floor.
  bool exhausted = false;

  friend bool operator==(const LrScheduleState&, const LrScheduleState&) = default;
};

LrScheduleState lr_schedule_start(const LrScheduleConfig& cfg);

/// Records one dev evaluation (lower is better) and returns the learning rate
/// to use next. After `patience_evals` consecutive evaluations without a new
/// best the rate is divided by `decay_factor`, floored at `final_lr`.
double lr_step(LrScheduleState& state, const LrScheduleConfig& cfg, double dev_metric);

}  // namespace fxq::nn
