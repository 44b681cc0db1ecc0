#include "fxq/qat.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "support/toy.hpp"

using namespace fxq;
using namespace fxq::qat;

namespace {

struct Fixture {
  nn::Dataset<float> train = toy::clusters(240, 4, 3, 0.6, 1);
  nn::Dataset<float> dev = toy::clusters(90, 4, 3, 0.6, 2);
  nn::Dataset<float> test = toy::clusters(90, 4, 3, 0.6, 3);
  nn::Checkpoint<float> model = toy::train_float(toy::mlp(12, 3, true), train, 4, 7);
  Splits splits() const { return {&train, &dev, &test}; }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

RetrainConfig quick_config(const std::string& schedule, int bits = 2) {
  RetrainConfig cfg;
  cfg.schedule = Schedule::parse(schedule);
  cfg.bits = bits;
  cfg.max_epochs = 4;
  cfg.batching.batch_size = 16;
  cfg.optimizer.lr_schedule.initial_lr = 0.02;
  cfg.seed = 99;
  return cfg;
}

void expect_on_grid(const ShadowParams& s) {
  for (const auto& p : s.quantized.entries()) {
    if (!p.quantizable) {
      EXPECT_EQ(p.value, s.master.at(p.name)) << p.name;
      continue;
    }
    const auto& spec = s.specs.at(p.name);
    const auto& m = s.master.at(p.name);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      // Float storage holds n * step rounded once to single precision.
      const double n = std::round(p.value[i] / spec.step);
      EXPECT_EQ(p.value[i], static_cast<float>(n * spec.step)) << p.name << "[" << i << "]";
      EXPECT_LE(std::fabs(n), spec.max_level());
      EXPECT_EQ(p.value[i], static_cast<float>(quantize(m[i], spec)));
    }
  }
}

void expect_same_record(const RunRecord& a, const RunRecord& b) {
  ASSERT_EQ(a.epochs.size(), b.epochs.size());
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    const auto &x = a.epochs[i], &y = b.epochs[i];
    EXPECT_EQ(x.epoch, y.epoch);
    EXPECT_EQ(x.bits, y.bits);
    EXPECT_EQ(x.learning_rate, y.learning_rate);
    EXPECT_EQ(x.train_loss, y.train_loss);
    EXPECT_EQ(x.dev_metric, y.dev_metric);
    EXPECT_EQ(x.dev_loss, y.dev_loss);
    EXPECT_EQ(x.decision, y.decision);
    EXPECT_EQ(x.deltas, y.deltas);
  }
  EXPECT_EQ(a.test_metric, b.test_metric);
  EXPECT_EQ(a.test_loss, b.test_loss);
  EXPECT_EQ(a.best_epoch, b.best_epoch);
}

}  // namespace

TEST(InitQuantization, RecoversGridSteps) {
  Params master;
  std::vector<float> w;
  for (int n = -3; n <= 3; ++n) w.push_back(0.125f * static_cast<float>(n));
  master.add("a.weight", nn::Tensor<float>({7}, w), true);
  std::vector<float> v{-0.5f, 0.5f, 0.0f, 0.5f};
  master.add("b.weight", nn::Tensor<float>({2, 2}, v), true);
  master.add("b.bias", nn::Tensor<float>({2}, {0.3f, -0.7f}));
  const auto s = init_quantization(master, 3);
  EXPECT_DOUBLE_EQ(s.specs.at("a.weight").step, 0.125);
  EXPECT_EQ(s.specs.at("a.weight").points, 7);
  EXPECT_EQ(s.quantized.at("a.weight"), master.at("a.weight"));
  EXPECT_EQ(s.quantized.at("b.bias"), master.at("b.bias"));
  EXPECT_FALSE(s.specs.contains("b.bias"));
  // b.weight at 3 bits: any step 0.5/k, k = 1..3, is exact; the solver finds one of them.
  EXPECT_EQ(s.quantized.at("b.weight"), master.at("b.weight"));
}

TEST(InitQuantization, SymmetricPairGivesUnitStep) {
  Params master;
  master.add("w", nn::Tensor<float>({2}, {-1.0f, 1.0f}), true);
  EXPECT_EQ(init_quantization(master, 2).specs.at("w").step, 1.0);
}

TEST(InitQuantization, MatchesSolverPerGroup) {
  const auto& f = fixture();
  const auto s = init_quantization(f.model.state.params, 2);
  ASSERT_EQ(s.specs.size(), 2u);
  for (const auto& [group, spec] : s.specs) {
    const auto sol = optimize_step<float>(f.model.state.params.at(group).values(), 3);
    EXPECT_EQ(spec.step, sol.step);
    EXPECT_DOUBLE_EQ(quant_mse<float>(s.master.at(group).values(), spec), sol.mse);
  }
  expect_on_grid(s);
}

TEST(InitQuantization, DegenerateGroupNamesGroup) {
  Params master;
  master.add("ok", nn::Tensor<float>({2}, {1.0f, 2.0f}), true);
  master.add("dead", nn::Tensor<float>({3}), true);
  try {
    init_quantization(master, 2);
    FAIL();
  } catch (const DegenerateGroup& e) {
    EXPECT_EQ(e.group_id(), "dead");
  }
}

TEST(UpdateSteps, DegenerateGroupKeepsPreviousStep) {
  Params master;
  master.add("w", nn::Tensor<float>({2}, {0.4f, -0.8f}), true);
  auto s = init_quantization(master, 2);
  const double before = s.specs.at("w").step;
  s.master.at("w").fill(0.0f);
  const auto warnings = update_steps(s, {});
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("'w'"), std::string::npos);
  EXPECT_EQ(s.specs.at("w").step, before);
  EXPECT_EQ(s.quantized.at("w"), nn::Tensor<float>({2}));
}

TEST(Schedule, ParseAndFormatRoundTrip) {
  for (const std::string text : {"direct", "conventional", "adaptive", "adaptive-first:2",
                                 "gradual:6:2:3:adaptive", "gradual:5:3:0:adaptive-first:1",
                                 "gradual:6:2:1:conventional"}) {
    EXPECT_EQ(Schedule::parse(text).to_string(), text);
  }
  EXPECT_EQ(Schedule::parse("adaptive-first").first_k, 1);
  for (const std::string bad : {"", "adaptive:1", "adaptive-first:0", "gradual:2:6:1:adaptive",
                                "gradual:6:1:1:adaptive", "gradual:6:2:1:direct", "gradual:6:2:x:adaptive",
                                "gradual:6:2:1:gradual:5:3:1:adaptive"}) {
    EXPECT_THROW(Schedule::parse(bad), InvalidArgument) << bad;
  }
}

TEST(ApplySchedule, Definitions) {
  ScheduleContext ctx;
  ctx.schedule = Schedule::parse("adaptive-first:1");
  EXPECT_EQ(apply_schedule(ctx, 0).kind, Decision::UpdateStep);
  EXPECT_EQ(apply_schedule(ctx, 1).kind, Decision::FreezeStep);
  EXPECT_EQ(apply_schedule(ctx, 2).kind, Decision::FreezeStep);
  for (const char* s : {"conventional", "direct"}) {
    ctx.schedule = Schedule::parse(s);
    for (int e : {0, 1, 7, 1000}) EXPECT_EQ(apply_schedule(ctx, e).kind, Decision::FreezeStep);
  }
  ctx.schedule = Schedule::parse("adaptive");
  for (int e : {0, 1, 7}) EXPECT_EQ(apply_schedule(ctx, e).kind, Decision::UpdateStep);
  EXPECT_THROW(apply_schedule(ctx, -1), InvalidArgument);
}

TEST(ApplySchedule, GradualLowersOneBitPerStage) {
  ScheduleContext ctx;
  ctx.schedule = Schedule::parse("gradual:6:2:3:adaptive-first:1");
  ctx.bits = 6;
  std::vector<int> bits{ctx.bits};
  std::vector<Decision> seen;
  for (int epoch = 0; epoch < 15; ++epoch) {
    const auto d = apply_schedule(ctx, epoch);
    seen.push_back(d.kind);
    if (d.kind == Decision::DropBit) {
      EXPECT_EQ(d.new_bits, ctx.bits - 1);
      ctx.bits = d.new_bits;
      ctx.stage_start = epoch + 1;
      bits.push_back(ctx.bits);
    }
  }
  EXPECT_EQ(bits, (std::vector<int>{6, 5, 4, 3, 2}));
  // Inner schedule restarts each stage: update, freeze, then the boundary.
  EXPECT_EQ(seen[0], Decision::UpdateStep);
  EXPECT_EQ(seen[1], Decision::FreezeStep);
  EXPECT_EQ(seen[2], Decision::DropBit);
  EXPECT_EQ(seen[3], Decision::UpdateStep);
  EXPECT_EQ(seen[14], Decision::FreezeStep);  // final stage never drops

  ctx = {};
  ctx.schedule = Schedule::parse("gradual:3:2:0:adaptive");
  ctx.bits = 3;
  EXPECT_EQ(apply_schedule(ctx, 5).kind, Decision::UpdateStep);
  ctx.stage_done = true;
  EXPECT_EQ(apply_schedule(ctx, 5), (ScheduleDecision{Decision::DropBit, 2}));
}

class RetrainEpoch : public ::testing::TestWithParam<std::string> {};

TEST_P(RetrainEpoch, ZeroLearningRateLeavesShadowUnchanged) {
  const auto& f = fixture();
  nn::Network<float> net(f.model.layers, f.model.input_shape);
  auto shadow = init_quantization(f.model.state.params, 2);
  const auto before = shadow;
  auto buffers = f.model.state.buffers;
  nn::Batcher<float> batches(f.train, {16, 1, 1});
  nn::OptimizerState<float> opt;
  std::mt19937_64 rng(1);
  ScheduleContext ctx{Schedule::parse(GetParam()), 6, 0, false};
  for (int e = 0; e < 3; ++e) {
    retrain_epoch(net, shadow, buffers, batches, opt, RetrainConfig::default_optimizer(), 0.0, rng, ctx, e);
    EXPECT_EQ(shadow, before);
  }
}

INSTANTIATE_TEST_SUITE_P(Schedules, RetrainEpoch,
                         ::testing::Values("conventional", "adaptive", "adaptive-first:1", "gradual:6:2:1:adaptive"),
                         [](const auto& info) {
                           std::string n = info.param;
                           for (auto& c : n)
                             if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
                           return n;
                         });

TEST(RetrainEpochLoop, AdaptiveEpochMatchesIndependentSolve) {
  const auto& f = fixture();
  nn::Network<float> net(f.model.layers, f.model.input_shape);
  auto shadow = init_quantization(f.model.state.params, 2);
  auto buffers = f.model.state.buffers;
  nn::Batcher<float> batches(f.train, {16, 1, 1});
  nn::OptimizerState<float> opt;
  std::mt19937_64 rng(1);
  const auto steps_before = shadow.specs;
  const auto out = retrain_epoch(net, shadow, buffers, batches, opt, RetrainConfig::default_optimizer(), 0.05, rng,
                                 {Schedule::parse("adaptive"), 2, 0, false}, 0);
  EXPECT_EQ(out.decision.kind, Decision::UpdateStep);
  EXPECT_EQ(out.train.count, f.train.size());
  EXPECT_NE(shadow.master, f.model.state.params);
  for (const auto& [group, spec] : shadow.specs) {
    EXPECT_NE(spec.step, steps_before.at(group).step) << group;
    EXPECT_EQ(spec.step, optimize_step<float>(shadow.master.at(group).values(), 3).step) << group;
  }
  expect_on_grid(shadow);
}

TEST(Run, ConventionalKeepsStepsAndStaysOnGrid) {
  const auto& f = fixture();
  std::vector<std::map<std::string, double>> deltas;
  const auto r = run(quick_config("conventional"), f.model, f.splits(), [&](const EpochRecord& row, const ShadowParams& s) {
    deltas.push_back(row.deltas);
    expect_on_grid(s);
  });
  ASSERT_EQ(deltas.size(), 5u);
  for (const auto& d : deltas) EXPECT_EQ(d, deltas.front());
  EXPECT_EQ(r.record.retrain_epochs(), 4);
}

TEST(Run, ScheduleFidelity) {
  const auto& f = fixture();
  auto changed_epochs = [&](const std::string& schedule) {
    std::set<int> changed;
    const auto r = run(quick_config(schedule), f.model, f.splits());
    for (std::size_t i = 1; i < r.record.epochs.size(); ++i) {
      if (r.record.epochs[i].deltas != r.record.epochs[i - 1].deltas) changed.insert(static_cast<int>(i) - 1);
    }
    return changed;
  };
  EXPECT_EQ(changed_epochs("adaptive"), (std::set<int>{0, 1, 2, 3}));
  EXPECT_EQ(changed_epochs("adaptive-first:2"), (std::set<int>{0, 1}));
  EXPECT_TRUE(changed_epochs("conventional").empty());
}

TEST(Run, AdaptiveStepsMatchSavedMaster) {
  const auto& f = fixture();
  int updates = 0;
  run(quick_config("adaptive"), f.model, f.splits(), [&](const EpochRecord& row, const ShadowParams& s) {
    expect_on_grid(s);
    if (row.decision != Decision::UpdateStep) return;
    ++updates;
    for (const auto& [group, spec] : s.specs) {
      const auto sol = optimize_step<float>(s.master.at(group).values(), spec.points);
      EXPECT_NEAR(spec.step, sol.step, 1e-8 * sol.step);
      EXPECT_EQ(row.deltas.at(group), spec.step);
    }
  });
  EXPECT_EQ(updates, 4);
}

TEST(Run, DirectAndZeroEpochsAgree) {
  const auto& f = fixture();
  const auto direct = run(quick_config("direct"), f.model, f.splits());
  EXPECT_EQ(direct.record.retrain_epochs(), 0);
  const auto expected = evaluate_direct(f.model, 2, f.test, {16, 1, 1});
  EXPECT_EQ(direct.record.test_metric, expected.error_rate());
  EXPECT_EQ(direct.record.test_loss, expected.mean_loss());

  for (const char* s : {"conventional", "adaptive", "gradual:4:2:2:adaptive"}) {
    auto cfg = quick_config(s);
    cfg.max_epochs = 0;
    const auto zero = run(cfg, f.model, f.splits());
    EXPECT_EQ(zero.record.retrain_epochs(), 0) << s;
    if (cfg.schedule.kind != ScheduleKind::Gradual) {
      EXPECT_EQ(zero.record.test_metric, direct.record.test_metric) << s;
      EXPECT_EQ(zero.checkpoint.state, direct.checkpoint.state) << s;
      EXPECT_EQ(zero.checkpoint.quantizers, direct.checkpoint.quantizers) << s;
    }
  }
}

TEST(Run, Deterministic) {
  const auto& f = fixture();
  for (const char* s : {"adaptive", "gradual:4:2:2:adaptive"}) {
    const auto a = run(quick_config(s), f.model, f.splits());
    const auto b = run(quick_config(s), f.model, f.splits());
    expect_same_record(a.record, b.record);
    EXPECT_EQ(a.checkpoint.state, b.checkpoint.state);
    EXPECT_EQ(a.shadow, b.shadow);
  }
}

TEST(Run, RetrainingNeverWorseOnDevThanStart) {
  const auto& f = fixture();
  const auto r = run(quick_config("adaptive"), f.model, f.splits());
  double best = *r.record.epochs[0].dev_metric;
  for (const auto& row : r.record.epochs)
    if (row.dev_metric) best = std::min(best, *row.dev_metric);
  EXPECT_EQ(*r.record.epochs[static_cast<std::size_t>(r.record.best_epoch)].dev_metric, best);
}

TEST(Run, GradualStagesDropOneBitAtATime) {
  const auto& f = fixture();
  auto cfg = quick_config("gradual:5:2:2:adaptive");
  std::vector<int> bits;
  const auto r = run(cfg, f.model, f.splits(), [&](const EpochRecord& row, const ShadowParams& s) {
    bits.push_back(row.bits);
    for (const auto& [g, spec] : s.specs) EXPECT_EQ(spec.bits, row.bits) << g;
    expect_on_grid(s);
  });
  ASSERT_EQ(bits.size(), 1u + 2 * 4);
  EXPECT_EQ(bits, (std::vector<int>{5, 5, 4, 4, 3, 3, 2, 2, 2}));
  for (const auto& [g, spec] : r.checkpoint.quantizers) EXPECT_EQ(spec.points, 3) << g;
  EXPECT_GE(r.record.best_epoch, 6);

  cfg = quick_config("gradual:4:2:0:conventional");
  cfg.max_epochs = 3;
  bits.clear();
  run(cfg, f.model, f.splits(), [&](const EpochRecord& row, const ShadowParams&) { bits.push_back(row.bits); });
  for (std::size_t i = 1; i < bits.size(); ++i) EXPECT_TRUE(bits[i] == bits[i - 1] || bits[i] == bits[i - 1] - 1);
  EXPECT_EQ(bits.front(), 4);
  EXPECT_EQ(bits.back(), 2);
  EXPECT_LE(bits.size(), 1u + 3 * 3);
}

TEST(Run, ExhaustiveInitSearchesAroundL2Step) {
  const auto& f = fixture();
  auto cfg = quick_config("conventional");
  cfg.exhaustive_init = true;
  cfg.max_epochs = 1;
  const auto l2 = init_quantization(f.model.state.params, 2);
  std::map<std::string, double> first;
  run(cfg, f.model, f.splits(), [&](const EpochRecord& row, const ShadowParams&) {
    if (row.epoch == 0) first = row.deltas;
  });
  for (const auto& [g, spec] : l2.specs) {
    EXPECT_GE(first.at(g), spec.step / 2 * (1 - 1e-12));
    EXPECT_LE(first.at(g), spec.step * 2 * (1 + 1e-12));
  }
}
