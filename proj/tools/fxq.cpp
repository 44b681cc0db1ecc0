// fxq: float training, quantization and retraining sweeps from a JSON config.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "fxq/error.hpp"
#include "fxq/harness/config.hpp"
#include "fxq/harness/experiment.hpp"

namespace {

using nlohmann::json;
using namespace fxq;
using namespace fxq::harness;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool deterministic = false;
  bool verbose = false;
};

void add_common(CLI::App* cmd, Common& c, bool needs_config = true) {
  auto* opt = cmd->add_option("--config", c.config, "experiment config (JSON)");
  if (needs_config) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "run a single seed instead of the configured list");
  cmd->add_option("--out", c.out, "output directory (overrides the config)");
  cmd->add_flag("--deterministic", c.deterministic, "deterministic mode (FXQ_DETERMINISTIC overrides)");
  cmd->add_flag("-v,--verbose", c.verbose, "per-epoch logging");
}

bool deterministic_mode(bool flag) {
  const char* env = std::getenv("FXQ_DETERMINISTIC");
  if (!env) return flag;
  const std::string v = env;
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no" || v.empty()) return false;
  throw InvalidArgument("FXQ_DETERMINISTIC must be 0/1/true/false/on/off, got '" + v + "'");
}

ExperimentConfig load_config(const Common& c) {
  auto cfg = ExperimentConfig::load(c.config);
  if (c.seed) cfg.seeds = {*c.seed};
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.validate();
  return cfg;
}

void emit(const json& j) { std::cout << j.dump() << std::endl; }

json cell_json(const Cell& cell, std::uint64_t seed, const qat::RunRecord& r) {
  return {{"run_id", run_id(cell, seed)},
          {"cell_bits", cell.bits},
          {"schedule", cell.schedule.to_string()},
          {"seed", seed},
          {"metric", nn::to_string(r.metric)},
          {"retrain_epochs", r.retrain_epochs()},
          {"test_metric", r.test_metric}};
}

int run_cells(const Common& c, std::optional<Cell> cell) {
  const auto cfg = load_config(c);
  if (!cell) throw InvalidArgument("no cell");
  cell->schedule.validate();
  const auto data = load_dataset(cfg.dataset, cfg.task);
  for (const auto seed : cfg.seeds) {
    const auto model = ensure_float_model(cfg, data, seed, cfg.output_dir);
    const auto r = run_cell(cfg, data, model, *cell, seed, cfg.output_dir);
    emit(cell_json(*cell, seed, r.record));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fxq: fixed-point quantization-aware retraining"};
  app.require_subcommand(1);
  Common c;

  auto* train = app.add_subcommand("train-float", "train the float baseline for each seed");
  add_common(train, c);

  int bits = 2;
  auto* quantize = app.add_subcommand("quantize", "direct quantization of the float model, no retraining");
  add_common(quantize, c);
  quantize->add_option("--bits", bits, "weight bit width")->required();

  std::string schedule = "adaptive";
  auto* retrain = app.add_subcommand("retrain", "retrain one (bits, schedule) cell");
  add_common(retrain, c);
  retrain->add_option("--bits", bits, "weight bit width (gradual schedules use their end bits)");
  retrain->add_option("--schedule", schedule,
                      "direct | conventional | adaptive | adaptive-first:K | gradual:S:E:EPS:INNER");

  auto* sweep_cmd = app.add_subcommand("sweep", "every configured cell for every seed");
  add_common(sweep_cmd, c);

  auto* report_cmd = app.add_subcommand("report", "summarize a results directory");
  add_common(report_cmd, c, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit({{"error", "usage"}, {"message", e.what()}});
    return 2;
  }

  auto logger = spdlog::stderr_color_mt("fxq");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");
  spdlog::set_level(c.verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    const bool deterministic = deterministic_mode(c.deterministic);
    if (*train) {
      const auto cfg = load_config(c);
      const auto data = load_dataset(cfg.dataset, cfg.task);
      for (const auto seed : cfg.seeds) {
        const auto r = train_float(cfg, data, seed);
        write_float_outputs(cfg.output_dir, seed, r, cfg);
        emit({{"seed", seed},
              {"epochs", r.history.size()},
              {"best_epoch", r.best_epoch},
              {"metric", nn::to_string(cfg.metric())},
              {"dev_metric", r.dev_metric},
              {"test_metric", r.test_metric}});
      }
      return 0;
    }
    if (*quantize) return run_cells(c, Cell{bits, qat::Schedule::parse("direct")});
    if (*retrain) {
      auto s = qat::Schedule::parse(schedule);
      if (s.kind == qat::ScheduleKind::Gradual && retrain->count("--bits") == 0) bits = s.end_bits;
      return run_cells(c, Cell{bits, s});
    }
    if (*sweep_cmd) {
      const auto cfg = load_config(c);
      const auto s = sweep(cfg, cfg.output_dir, deterministic);
      emit({{"runs", s.runs}, {"failures", s.failures}, {"out", cfg.output_dir.string()}});
      return 0;
    }
    if (*report_cmd) {
      std::filesystem::path dir = c.out;
      if (dir.empty()) {
        if (c.config.empty()) throw InvalidArgument("report needs --out or --config");
        dir = ExperimentConfig::load(c.config).output_dir;
      }
      report(dir);
      emit({{"summary", (dir / "summary.csv").string()}, {"trajectory", (dir / "trajectory.csv").string()}});
      return 0;
    }
  } catch (const Error& e) {
    emit({{"error", to_string(e.kind())}, {"message", e.what()}});
    return 1;
  } catch (const std::exception& e) {
    emit({{"error", "internal"}, {"message", e.what()}});
    return 1;
  }
  return 0;
}
