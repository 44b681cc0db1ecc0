#include "fxq/qat.hpp"

#include <charconv>
#include <cmath>

namespace fxq::qat {

using nn::Tally;

void ShadowParams::sync() {
  if (quantized.size() != master.size()) quantized = master;
  for (std::size_t i = 0; i < master.entries().size(); ++i) {
    const auto& src = master.entries()[i];
    auto& dst = quantized.entries()[i];
    if (!src.quantizable) {
      dst.value = src.value;
      continue;
    }
    const auto it = specs.find(src.name);
    if (it == specs.end()) throw InvalidState("no quantizer for weight group '" + src.name + "'");
    quantize<float>(src.value.values(), dst.value.values(), it->second);
  }
}

ShadowParams init_quantization(const Params& master, int bits, const StepSolverConfig& cfg) {
  const int points = points_for_bits(bits);
  ShadowParams s;
  s.master = master;
  for (const auto& p : master.entries()) {
    if (!p.quantizable) continue;
    try {
      const auto sol = optimize_step<float>(p.value.values(), points, cfg);
      s.specs.emplace(p.name, QuantizerSpec::make(bits, sol.step));
    } catch (const DegenerateGroup& e) {
      throw DegenerateGroup(std::string(e.what()) + " (group '" + p.name + "')", p.name);
    }
  }
  s.sync();
  return s;
}

std::vector<std::string> update_steps(ShadowParams& shadow, const StepSolverConfig& solver) {
  std::vector<std::string> warnings;
  for (auto& [group, spec] : shadow.specs) {
    try {
      spec.step = optimize_step<float>(shadow.master.at(group).values(), spec.points, solver).step;
    } catch (const DegenerateGroup&) {
      warnings.push_back("degenerate group '" + group + "' kept step " + std::to_string(spec.step));
    }
  }
  shadow.sync();
  return warnings;
}

// --- schedules --------------------------------------------------------------

namespace {

bool is_inner_kind(ScheduleKind k) {
  return k == ScheduleKind::ConventionalFixed || k == ScheduleKind::AdaptiveEveryEpoch ||
         k == ScheduleKind::AdaptiveFirstKThenFix;
}

std::string simple_name(ScheduleKind kind, int k) {
  switch (kind) {
    case ScheduleKind::Direct: return "direct";
    case ScheduleKind::ConventionalFixed: return "conventional";
    case ScheduleKind::AdaptiveEveryEpoch: return "adaptive";
    case ScheduleKind::AdaptiveFirstKThenFix: return "adaptive-first:" + std::to_string(k);
    case ScheduleKind::Gradual: break;
  }
  return "gradual";
}

int parse_int(const std::string& s, const std::string& whole) {
  int v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw InvalidArgument("schedule '" + whole + "': '" + s + "' is not an integer");
  }
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out(1);
  for (const char c : s) {
    if (c == sep) {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

ScheduleDecision simple_decision(ScheduleKind kind, int k, int rel_epoch) {
  switch (kind) {
    case ScheduleKind::AdaptiveEveryEpoch: return {Decision::UpdateStep};
    case ScheduleKind::AdaptiveFirstKThenFix:
      return {rel_epoch < k ? Decision::UpdateStep : Decision::FreezeStep};
    default: return {Decision::FreezeStep};
  }
}

}  // namespace

void Schedule::validate() const {
  if (kind == ScheduleKind::AdaptiveFirstKThenFix && first_k < 1) throw InvalidArgument("schedule needs K >= 1");
  if (kind != ScheduleKind::Gradual) return;
  if (!(start_bits > end_bits && end_bits >= 2)) {
    throw InvalidArgument("gradual schedule needs start_bits > end_bits >= 2");
  }
  points_for_bits(start_bits);
  if (epochs_per_stage < 0) throw InvalidArgument("gradual schedule needs epochs_per_stage >= 0");
  if (!is_inner_kind(inner)) {
    throw InvalidArgument("gradual inner schedule must be conventional, adaptive or adaptive-first");
  }
  if (inner == ScheduleKind::AdaptiveFirstKThenFix && inner_first_k < 1) {
    throw InvalidArgument("schedule needs K >= 1");
  }
}

std::string Schedule::to_string() const {
  if (kind != ScheduleKind::Gradual) return simple_name(kind, first_k);
  return "gradual:" + std::to_string(start_bits) + ":" + std::to_string(end_bits) + ":" +
         std::to_string(epochs_per_stage) + ":" + simple_name(inner, inner_first_k);
}

Schedule Schedule::parse(const std::string& text) {
  const auto parts = split(text, ':');
  Schedule s;
  const std::string& head = parts[0];
  if (head == "direct" && parts.size() == 1) {
    s.kind = ScheduleKind::Direct;
  } else if (head == "conventional" && parts.size() == 1) {
    s.kind = ScheduleKind::ConventionalFixed;
  } else if (head == "adaptive" && parts.size() == 1) {
    s.kind = ScheduleKind::AdaptiveEveryEpoch;
  } else if (head == "adaptive-first" && parts.size() <= 2) {
    s.kind = ScheduleKind::AdaptiveFirstKThenFix;
    s.first_k = parts.size() == 2 ? parse_int(parts[1], text) : 1;
  } else if (head == "gradual" && parts.size() >= 5 && parts.size() <= 6) {
    s.kind = ScheduleKind::Gradual;
    s.start_bits = parse_int(parts[1], text);
    s.end_bits = parse_int(parts[2], text);
    s.epochs_per_stage = parse_int(parts[3], text);
    std::string inner = parts[4];
    if (parts.size() == 6) inner += ":" + parts[5];
    const Schedule in = parse(inner);
    s.inner = in.kind;
    s.inner_first_k = in.first_k;
  } else {
    throw InvalidArgument("unknown schedule '" + text + "'");
  }
  s.validate();
  return s;
}

const char* to_string(Decision d) noexcept {
  switch (d) {
    case Decision::UpdateStep: return "update";
    case Decision::FreezeStep: return "freeze";
    case Decision::DropBit: return "drop_bit";
  }
  return "unknown";
}

ScheduleDecision apply_schedule(const ScheduleContext& ctx, int epoch_index) {
  if (epoch_index < 0) throw InvalidArgument("epoch index must be >= 0");
  const Schedule& s = ctx.schedule;
  const int rel = epoch_index - ctx.stage_start;
  if (s.kind != ScheduleKind::Gradual) return simple_decision(s.kind, s.first_k, rel);

  const bool boundary = s.epochs_per_stage > 0 ? rel + 1 >= s.epochs_per_stage : ctx.stage_done;
  if (boundary && ctx.bits > s.end_bits) return {Decision::DropBit, ctx.bits - 1};
  return simple_decision(s.inner, s.inner_first_k, rel);
}

// --- retraining -------------------------------------------------------------

nn::OptimizerConfig RetrainConfig::default_optimizer() {
  nn::OptimizerConfig cfg;
  cfg.lr_schedule.initial_lr = 5e-4;
  return cfg;
}

void RetrainConfig::validate() const {
  schedule.validate();
  if (schedule.kind != ScheduleKind::Gradual) points_for_bits(bits);
  optimizer.validate();
  batching.validate();
  solver.validate();
  if (max_epochs < 0) throw InvalidArgument("max_epochs must be >= 0");
  if (eval_every < 1) throw InvalidArgument("eval_every must be >= 1");
  if (exhaustive_init && exhaustive_candidates < 2) throw InvalidArgument("exhaustive search needs >= 2 candidates");
}

EpochOutcome retrain_epoch(const nn::Network<float>& net, ShadowParams& shadow, Params& buffers,
                           nn::Batcher<float>& batches, nn::OptimizerState<float>& opt,
                           const nn::OptimizerConfig& opt_cfg, double learning_rate, std::mt19937_64& rng,
                           const ScheduleContext& ctx, int epoch_index, const StepSolverConfig& solver) {
  EpochOutcome out;
  batches.start_epoch(&rng);
  for (std::size_t i = 0; i < batches.batch_count(); ++i) {
    auto step = [&] {
      try {
        return nn::compute_gradients(net, shadow.quantized, buffers, batches.batch(i));
      } catch (const DivergenceError& e) {
        throw DivergenceError("epoch " + std::to_string(epoch_index) + ", batch " + std::to_string(i) + ": " +
                              e.what());
      }
    }();
    nn::update(shadow.master, step.grads, opt, opt_cfg, learning_rate);
    if (net.check_finite() && !shadow.master.all_finite()) {
      throw DivergenceError("epoch " + std::to_string(epoch_index) + ", batch " + std::to_string(i) +
                            ": non-finite master weights after the update");
    }
    shadow.sync();
    out.train.add(step.tally);
  }
  out.decision = apply_schedule(ctx, epoch_index);
  if (out.decision.kind == Decision::UpdateStep) out.warnings = update_steps(shadow, solver);
  return out;
}

namespace {

struct Snapshot {
  double dev = 0.0;
  int epoch = 0;
  ShadowParams shadow;
  Params buffers;
};

std::map<std::string, double> deltas_of(const ShadowParams& s) {
  std::map<std::string, double> d;
  for (const auto& [group, spec] : s.specs) d[group] = spec.step;
  return d;
}

// Coordinate-wise search, one group at a time in parameter order, scoring
// each candidate by the dev metric of the whole quantized network.
void exhaustive_init(const nn::Network<float>& net, ShadowParams& shadow, const Params& buffers,
                     const nn::Dataset<float>& dev, const RetrainConfig& cfg) {
  for (auto& [group, spec] : shadow.specs) {
    auto& target = spec;
    const auto score = [&](double step) {
      const double saved = target.step;
      target.step = step;
      shadow.sync();
      const double m = nn::evaluate(net, shadow.quantized, buffers, dev, cfg.batching).metric(cfg.metric);
      target.step = saved;
      return m;
    };
    target.step = exhaustive_search_step(target.step, score, cfg.exhaustive_candidates);
  }
  shadow.sync();
}

}  // namespace

RunResult run(const RetrainConfig& cfg, const nn::Checkpoint<float>& float_model, const Splits& data,
              const EpochObserver& observer) {
  cfg.validate();
  if (!data.train || !data.dev || !data.test) throw InvalidArgument("run needs train, dev and test splits");
  nn::Network<float> net(float_model.layers, float_model.input_shape);
  net.set_check_finite(cfg.check_finite);

  const Schedule& sched = cfg.schedule;
  // With open-ended stages a one-epoch budget makes every epoch a stage's last.
  const bool single_epoch_stages = sched.epochs_per_stage == 0 && cfg.max_epochs <= 1;
  ScheduleContext ctx{sched, sched.kind == ScheduleKind::Gradual ? sched.start_bits : cfg.bits, 0,
                      single_epoch_stages};

  std::mt19937_64 rng(cfg.seed);
  ShadowParams shadow = init_quantization(float_model.state.params, ctx.bits, cfg.solver);
  Params buffers = float_model.state.buffers;
  if (cfg.exhaustive_init && sched.kind == ScheduleKind::ConventionalFixed) {
    exhaustive_init(net, shadow, buffers, *data.dev, cfg);
  }

  auto dev_eval = [&] { return nn::evaluate(net, shadow.quantized, buffers, *data.dev, cfg.batching); };

  RunRecord record;
  record.metric = cfg.metric;
  nn::LrScheduleState lr = nn::lr_schedule_start(cfg.optimizer.lr_schedule);
  nn::OptimizerState<float> opt;

  auto emit = [&](EpochRecord row) {
    row.deltas = deltas_of(shadow);
    record.epochs.push_back(std::move(row));
    if (observer) observer(record.epochs.back(), shadow);
  };

  const Tally dev0 = dev_eval();
  Snapshot best{dev0.metric(cfg.metric), 0, shadow, buffers};
  {
    EpochRecord row;
    row.bits = ctx.bits;
    row.learning_rate = lr.lr;
    row.dev_loss = dev0.mean_loss();
    row.dev_metric = dev0.metric(cfg.metric);
    emit(std::move(row));
  }

  const bool retrain = sched.kind != ScheduleKind::Direct && cfg.max_epochs > 0;
  const int total_epochs =
      !retrain ? 0
               : (sched.kind == ScheduleKind::Gradual && sched.epochs_per_stage > 0
                      ? sched.epochs_per_stage * sched.stage_count()
                      : cfg.max_epochs * sched.stage_count());
  nn::Batcher<float> batches(*data.train, cfg.batching);

  for (int epoch = 0; epoch < total_epochs; ++epoch) {
    EpochRecord row;
    row.epoch = epoch + 1;
    row.learning_rate = lr.lr;
    EpochOutcome out;
    try {
      out = retrain_epoch(net, shadow, buffers, batches, opt, cfg.optimizer, lr.lr, rng, ctx, epoch, cfg.solver);
    } catch (const Error& e) {
      throw Error(e.kind(), "retraining " + sched.to_string() + " at " + std::to_string(ctx.bits) +
                                " bits, seed " + std::to_string(cfg.seed) + ": " + e.what());
    }
    row.train_loss = out.train.mean_loss();
    row.train_metric = out.train.metric(cfg.metric);
    row.decision = out.decision.kind;
    row.warnings = std::move(out.warnings);

    const bool final_stage = ctx.bits == (sched.kind == ScheduleKind::Gradual ? sched.end_bits : ctx.bits);
    if (out.decision.kind == Decision::DropBit) {
      // Close the stage on its best dev state, then requantize one bit lower.
      const double dev = dev_eval().metric(cfg.metric);
      if (dev < best.dev) best = {dev, epoch + 1, shadow, buffers};
      shadow = init_quantization(best.shadow.master, out.decision.new_bits, cfg.solver);
      buffers = best.buffers;
      ctx.bits = out.decision.new_bits;
      ctx.stage_start = epoch + 1;
      ctx.stage_done = single_epoch_stages;
      lr = nn::lr_schedule_start(cfg.optimizer.lr_schedule);
      opt = {};
      const Tally t = dev_eval();
      best = {t.metric(cfg.metric), epoch + 1, shadow, buffers};
      row.dev_loss = t.mean_loss();
      row.dev_metric = t.metric(cfg.metric);
    } else if ((epoch + 1 - ctx.stage_start) % cfg.eval_every == 0) {
      const Tally t = dev_eval();
      row.dev_loss = t.mean_loss();
      row.dev_metric = t.metric(cfg.metric);
      if (*row.dev_metric < best.dev) best = {*row.dev_metric, epoch + 1, shadow, buffers};
      nn::lr_step(lr, cfg.optimizer.lr_schedule, *row.dev_metric);
    }
    row.bits = ctx.bits;
    emit(std::move(row));

    if (out.decision.kind == Decision::DropBit) continue;
    const int stage_epochs = epoch + 1 - ctx.stage_start;
    if (final_stage) {
      if (lr.exhausted || (sched.kind == ScheduleKind::Gradual && sched.epochs_per_stage == 0 &&
                           stage_epochs >= cfg.max_epochs)) {
        break;
      }
    } else if (sched.epochs_per_stage == 0) {
      // The next epoch is the stage's last.
      ctx.stage_done = lr.exhausted || stage_epochs + 1 >= cfg.max_epochs;
    }
  }

  shadow = std::move(best.shadow);
  buffers = std::move(best.buffers);
  record.best_epoch = best.epoch;
  const Tally test = nn::evaluate(net, shadow.quantized, buffers, *data.test, cfg.batching);
  record.test_loss = test.mean_loss();
  record.test_metric = test.metric(cfg.metric);

  RunResult result;
  result.checkpoint.config = float_model.config;
  result.checkpoint.layers = float_model.layers;
  result.checkpoint.input_shape = float_model.input_shape;
  result.checkpoint.state = {shadow.master, buffers};
  result.checkpoint.quantizers = shadow.specs;
  result.checkpoint.optimizer = std::move(opt);
  result.checkpoint.lr = lr;
  result.checkpoint.rng = nn::rng_state(rng);
  result.checkpoint.progress = {{"epochs", record.retrain_epochs()}, {"best_epoch", record.best_epoch}};
  result.shadow = std::move(shadow);
  result.record = std::move(record);
  return result;
}

nn::Tally evaluate_direct(const nn::Checkpoint<float>& float_model, int bits, const nn::Dataset<float>& data,
                          const nn::BatchingConfig& batching, const StepSolverConfig& solver) {
  nn::Network<float> net(float_model.layers, float_model.input_shape);
  const auto shadow = init_quantization(float_model.state.params, bits, solver);
  return nn::evaluate(net, shadow.quantized, float_model.state.buffers, data, batching);
}

}  // namespace fxq::qat
