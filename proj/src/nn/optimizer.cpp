#include "fxq/nn/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace fxq::nn {

const char* to_string(OptimizerKind kind) noexcept {
  switch (kind) {
    case OptimizerKind::SgdNesterov: return "sgd_nesterov";
    case OptimizerKind::AdaDelta: return "adadelta";
  }
  return "unknown";
}

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd_nesterov") return OptimizerKind::SgdNesterov;
  if (s == "adadelta") return OptimizerKind::AdaDelta;
  throw InvalidArgument("unknown optimizer '" + s + "'");
}

void LrScheduleConfig::validate() const {
  if (!(final_lr > 0.0) || !(initial_lr >= final_lr)) {
    throw InvalidArgument("lr schedule needs initial_lr >= final_lr > 0");
  }
  if (!(decay_factor > 1.0)) throw InvalidArgument("lr schedule needs decay_factor > 1");
  if (patience_evals < 1) throw InvalidArgument("lr schedule needs patience_evals >= 1");
}

void OptimizerConfig::validate() const {
  lr_schedule.validate();
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must be in [0, 1)");
  if (!(adadelta_decay > 0.0 && adadelta_decay < 1.0)) throw InvalidArgument("adadelta decay must be in (0, 1)");
  if (!(adadelta_epsilon > 0.0)) throw InvalidArgument("adadelta epsilon must be > 0");
}

namespace {

template <typename T>
Tensor<T>& slot(OptimizerState<T>& state, const std::string& key, const Shape& shape) {
  auto it = state.slots.find(key);
  if (it == state.slots.end()) it = state.slots.emplace(key, Tensor<T>(shape)).first;
  if (it->second.shape() != shape) throw InvalidState("optimizer slot '" + key + "' has the wrong shape");
  return it->second;
}

}  // namespace

template <typename T>
void update(ParamSet<T>& params, const ParamSet<T>& grads, OptimizerState<T>& state,
            const OptimizerConfig& cfg, double learning_rate) {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("learning rate must be finite and >= 0");
  }
  for (auto& p : params.entries()) {
    const auto& g = grads.at(p.name);
    if (g.shape() != p.value.shape()) throw InvalidArgument("gradient shape mismatch for '" + p.name + "'");
    auto w = p.value.values();
    if (cfg.kind == OptimizerKind::SgdNesterov) {
      auto& v = slot(state, p.name + "/velocity", p.value.shape());
      const double mu = cfg.momentum;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double step = learning_rate * g[i];
        const double vel = mu * v[i] - step;
        v[i] = static_cast<T>(vel);
        w[i] = static_cast<T>(w[i] + (mu * vel - step));
      }
    } else {
      auto& eg = slot(state, p.name + "/grad_sq", p.value.shape());
      auto& eu = slot(state, p.name + "/update_sq", p.value.shape());
      const double rho = cfg.adadelta_decay, eps = cfg.adadelta_epsilon;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        const double acc_g = rho * eg[i] + (1.0 - rho) * gi * gi;
        const double u = -std::sqrt(eu[i] + eps) / std::sqrt(acc_g + eps) * gi;
        eg[i] = static_cast<T>(acc_g);
        eu[i] = static_cast<T>(rho * eu[i] + (1.0 - rho) * u * u);
        w[i] = static_cast<T>(w[i] + learning_rate * u);
      }
    }
  }
  ++state.steps;
}

LrScheduleState lr_schedule_start(const LrScheduleConfig& cfg) {
  cfg.validate();
  LrScheduleState s;
  s.lr = cfg.initial_lr;
  return s;
}

double lr_step(LrScheduleState& state, const LrScheduleConfig& cfg, double dev_metric) {
  if (!std::isfinite(dev_metric)) throw InvalidArgument("lr_step: dev metric must be finite");
  ++state.evals;
  if (dev_metric < state.best) {
    state.best = dev_metric;
    state.bad_evals = 0;
    return state.lr;
  }
  if (++state.bad_evals >= cfg.patience_evals) {
    state.bad_evals = 0;
    if (state.lr <= cfg.final_lr) {
      state.exhausted = true;
    } else {
      state.lr = std::max(state.lr / cfg.decay_factor, cfg.final_lr);
    }
  }
  return state.lr;
}

template void update<float>(ParamSet<float>&, const ParamSet<float>&, OptimizerState<float>&,
                            const OptimizerConfig&, double);
template void update<double>(ParamSet<double>&, const ParamSet<double>&, OptimizerState<double>&,
                             const OptimizerConfig&, double);

}  // namespace fxq::nn
