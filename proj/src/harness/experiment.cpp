#include "fxq/harness/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>

#include <spdlog/spdlog.h>

#include "fxq/harness/csv.hpp"

namespace fxq::harness {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> header_of(const auto& names) { return {std::begin(names), std::end(names)}; }

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
}

const char* metric_name(const ExperimentConfig& cfg) { return nn::to_string(cfg.metric()); }

fs::path float_dir(const fs::path& out, std::uint64_t seed) { return out / "float" / ("seed-" + std::to_string(seed)); }

}  // namespace

nn::Shape network_input_shape(Task task, const DatasetSplits& data) {
  if (task == Task::CharLanguageModel) return {1, 1, data.train.num_classes};
  nn::Shape s = data.train.inputs.shape();
  s[0] = 1;
  return s;
}

std::vector<nn::LayerSpec> network_layers(const ExperimentConfig& cfg, const DatasetSplits& data) {
  auto layers = cfg.network;
  for (auto& l : layers) {
    if (l.kind == nn::LayerKind::FullyConnected && l.units == 0) l.units = data.train.num_classes;
  }
  return layers;
}

std::string run_id(const Cell& cell, std::uint64_t seed) {
  std::string sched = cell.schedule.to_string();
  std::replace(sched.begin(), sched.end(), ':', '-');
  return "b" + std::to_string(cell.bits) + "_" + sched + "_s" + std::to_string(seed);
}

FloatResult train_float(const ExperimentConfig& cfg, const DatasetSplits& data, std::uint64_t seed) {
  const auto& fc = cfg.float_training;
  const auto metric = cfg.metric();
  FloatResult r;
  auto& ckpt = r.checkpoint;
  ckpt.config = cfg.to_json();
  ckpt.layers = network_layers(cfg, data);
  ckpt.input_shape = network_input_shape(cfg.task, data);

  nn::Network<float> net(ckpt.layers, ckpt.input_shape);
  net.set_check_finite(true);
  std::mt19937_64 rng(seed);
  nn::ModelState<float> state = net.init(rng);
  nn::OptimizerState<float> opt;
  nn::LrScheduleState lr = nn::lr_schedule_start(fc.optimizer.lr_schedule);
  nn::Batcher<float> batches(data.train, fc.batching);

  double best_dev = std::numeric_limits<double>::infinity();
  nn::ModelState<float> best = state;
  for (int epoch = 1; epoch <= fc.max_epochs; ++epoch) {
    FloatEpoch row;
    row.epoch = epoch;
    row.learning_rate = lr.lr;
    batches.start_epoch(&rng);
    nn::Tally train;
    for (std::size_t i = 0; i < batches.batch_count(); ++i) {
      nn::BatchStep<float> step;
      try {
        step = nn::compute_gradients(net, state.params, state.buffers, batches.batch(i));
      } catch (const DivergenceError& e) {
        throw DivergenceError("float training, seed " + std::to_string(seed) + ", epoch " + std::to_string(epoch) +
                              ": " + e.what());
      }
      nn::update(state.params, step.grads, opt, fc.optimizer, lr.lr);
      train.add(step.tally);
    }
    row.train_loss = train.mean_loss();
    row.train_metric = train.metric(metric);
    if (epoch % fc.eval_every == 0) {
      const auto dev = nn::evaluate(net, state.params, state.buffers, data.dev, fc.batching);
      row.dev_loss = dev.mean_loss();
      row.dev_metric = dev.metric(metric);
      if (*row.dev_metric < best_dev) {
        best_dev = *row.dev_metric;
        best = state;
        r.best_epoch = epoch;
        ckpt.optimizer = opt;
        ckpt.rng = nn::rng_state(rng);
      }
      nn::lr_step(lr, fc.optimizer.lr_schedule, *row.dev_metric);
      ckpt.lr = lr;
    }
    r.history.push_back(row);
    spdlog::debug("float seed {} epoch {}: train {:.4f} dev {}", seed, epoch, row.train_metric,
                  row.dev_metric ? format_double(*row.dev_metric) : "-");
    if (lr.exhausted) break;
  }
  if (r.best_epoch == 0) {
    best = state;
    r.best_epoch = static_cast<int>(r.history.size());
  }
  ckpt.state = std::move(best);
  ckpt.progress = {{"epochs", r.history.size()}, {"best_epoch", r.best_epoch}, {"seed", seed}};

  r.train_metric = nn::evaluate(net, ckpt.state.params, ckpt.state.buffers, data.train, fc.batching).metric(metric);
  r.dev_metric = nn::evaluate(net, ckpt.state.params, ckpt.state.buffers, data.dev, fc.batching).metric(metric);
  const auto test = nn::evaluate(net, ckpt.state.params, ckpt.state.buffers, data.test, fc.batching);
  r.test_loss = test.mean_loss();
  r.test_metric = test.metric(metric);
  return r;
}

void write_float_outputs(const fs::path& out, std::uint64_t seed, const FloatResult& r, const ExperimentConfig& cfg) {
  const auto dir = float_dir(out, seed);
  fs::create_directories(dir);
  nn::save_checkpoint(dir / "model.ckpt", r.checkpoint);
  const std::string id = "float_s" + std::to_string(seed);
  const std::string m = metric_name(cfg);
  CsvTable h{{"run_id", "epoch", "split", "metric", "value"}, {}};
  for (const auto& row : r.history) {
    const auto e = std::to_string(row.epoch);
    h.rows.push_back({id, e, "train", "loss", format_double(row.train_loss)});
    h.rows.push_back({id, e, "train", m, format_double(row.train_metric)});
    if (row.dev_metric) {
      h.rows.push_back({id, e, "dev", "loss", format_double(*row.dev_loss)});
      h.rows.push_back({id, e, "dev", m, format_double(*row.dev_metric)});
    }
    h.rows.push_back({id, e, "run", "learning_rate", format_double(row.learning_rate)});
  }
  const auto best = std::to_string(r.best_epoch);
  h.rows.push_back({id, best, "test", "loss", format_double(r.test_loss)});
  h.rows.push_back({id, best, "test", m, format_double(r.test_metric)});
  write_csv(dir / "history.csv", h);
  write_json(dir / "result.json", {{"run_id", id},
                                   {"seed", seed},
                                   {"metric", m},
                                   {"epochs", r.history.size()},
                                   {"best_epoch", r.best_epoch},
                                   {"train_metric", r.train_metric},
                                   {"dev_metric", r.dev_metric},
                                   {"test_loss", r.test_loss},
                                   {"test_metric", r.test_metric}});
}

nn::Checkpoint<float> ensure_float_model(const ExperimentConfig& cfg, const DatasetSplits& data, std::uint64_t seed,
                                         const fs::path& out) {
  const auto path = float_dir(out, seed) / "model.ckpt";
  if (fs::exists(path) && fs::exists(float_dir(out, seed) / "result.json")) {
    auto c = nn::load_checkpoint<float>(path);
    if (c.layers != network_layers(cfg, data) || c.input_shape != network_input_shape(cfg.task, data)) {
      throw InvalidState("float checkpoint '" + path.string() + "' does not match the configured network");
    }
    return c;
  }
  spdlog::info("training float model, seed {}", seed);
  auto r = train_float(cfg, data, seed);
  write_float_outputs(out, seed, r, cfg);
  spdlog::info("float seed {}: {} epochs, test {} {}", seed, r.history.size(), metric_name(cfg),
               format_double(r.test_metric));
  return std::move(r.checkpoint);
}

qat::RunResult run_cell(const ExperimentConfig& cfg, const DatasetSplits& data, const nn::Checkpoint<float>& model,
                        const Cell& cell, std::uint64_t seed, const fs::path& out) {
  const std::string id = run_id(cell, seed);
  const std::string m = metric_name(cfg);
  const auto rc = cfg.retrain_config(cell, seed);
  auto result = qat::run(rc, model, {&data.train, &data.dev, &data.test});
  const auto& rec = result.record;

  const auto dir = out / "runs" / id;
  fs::create_directories(dir);
  CsvTable h{{"run_id", "epoch", "split", "metric", "value"}, {}};
  CsvTable traj{header_of(kTrajectoryHeader), {}};
  json warnings = json::array(), decisions = json::array();
  for (const auto& row : rec.epochs) {
    const auto e = std::to_string(row.epoch);
    if (row.train_metric) {
      h.rows.push_back({id, e, "train", "loss", format_double(*row.train_loss)});
      h.rows.push_back({id, e, "train", m, format_double(*row.train_metric)});
    }
    if (row.dev_metric) {
      h.rows.push_back({id, e, "dev", "loss", format_double(*row.dev_loss)});
      h.rows.push_back({id, e, "dev", m, format_double(*row.dev_metric)});
    }
    h.rows.push_back({id, e, "run", "bits", std::to_string(row.bits)});
    h.rows.push_back({id, e, "run", "learning_rate", format_double(row.learning_rate)});
    for (const auto& [group, delta] : row.deltas) traj.rows.push_back({id, e, group, format_double(delta)});
    for (const auto& w : row.warnings) warnings.push_back({{"epoch", row.epoch}, {"message", w}});
    if (row.decision) decisions.push_back(qat::to_string(*row.decision));
  }
  const auto best = std::to_string(rec.best_epoch);
  h.rows.push_back({id, best, "test", "loss", format_double(rec.test_loss)});
  h.rows.push_back({id, best, "test", m, format_double(rec.test_metric)});
  write_csv(dir / "history.csv", h);
  write_csv(dir / "trajectory.csv", traj);
  write_json(dir / "result.json", {{"run_id", id},
                                   {"cell_bits", cell.bits},
                                   {"schedule", cell.schedule.to_string()},
                                   {"seed", seed},
                                   {"metric", m},
                                   {"retrain_epochs", rec.retrain_epochs()},
                                   {"best_epoch", rec.best_epoch},
                                   {"test_loss", rec.test_loss},
                                   {"test_metric", rec.test_metric},
                                   {"decisions", decisions},
                                   {"warnings", warnings}});
  nn::save_checkpoint(dir / "model.ckpt", result.checkpoint);
  for (const auto& w : warnings) spdlog::warn("{}: {}", id, w["message"].get<std::string>());
  return result;
}

SweepSummary sweep(const ExperimentConfig& cfg, const fs::path& out, bool deterministic) {
  cfg.validate();
  fs::create_directories(out);
  write_json(out / "config.json", cfg.to_json());
  write_json(out / "manifest.json", {{"deterministic", deterministic}, {"format", 1}});
  const auto data = load_dataset(cfg.dataset, cfg.task);
  const std::string m = metric_name(cfg);

  // rows[cell][seed]; empty optional marks a failure.
  std::vector<std::vector<std::optional<double>>> values(cfg.cells.size(),
                                                         std::vector<std::optional<double>>(cfg.seeds.size()));
  CsvTable baseline{header_of(kResultsHeader), {}};
  CsvTable failures{{"cell_bits", "schedule", "seed", "error", "message"}, {}};
  SweepSummary summary;

  for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
    const auto seed = cfg.seeds[s];
    std::optional<nn::Checkpoint<float>> model;
    std::string float_error[2];
    try {
      model = ensure_float_model(cfg, data, seed, out);
      const auto fr = read_json(float_dir(out, seed) / "result.json");
      baseline.rows.push_back({"32", "float", std::to_string(seed), "test", m,
                               format_double(fr.at("test_metric").get<double>())});
    } catch (const Error& e) {
      float_error[0] = to_string(e.kind());
      float_error[1] = std::string("float model: ") + e.what();
    }
    for (std::size_t c = 0; c < cfg.cells.size(); ++c) {
      const auto& cell = cfg.cells[c];
      std::string kind, message;
      if (!model) {
        kind = float_error[0];
        message = float_error[1];
      } else {
        try {
          const auto r = run_cell(cfg, data, *model, cell, seed, out);
          values[c][s] = r.record.test_metric;
          ++summary.runs;
          spdlog::info("{}: {} retrain epochs, test {} {}", run_id(cell, seed), r.record.retrain_epochs(), m,
                       format_double(r.record.test_metric));
          continue;
        } catch (const Error& e) {
          kind = to_string(e.kind());
          message = e.what();
        } catch (const std::exception& e) {
          kind = "internal";
          message = e.what();
        }
      }
      ++summary.failures;
      spdlog::error("{} failed: {}", run_id(cell, seed), message);
      failures.rows.push_back({std::to_string(cell.bits), cell.schedule.to_string(), std::to_string(seed), kind,
                               message});
    }
  }

  CsvTable results{header_of(kResultsHeader), {}};
  for (std::size_t c = 0; c < cfg.cells.size(); ++c) {
    for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
      if (!values[c][s]) continue;
      results.rows.push_back({std::to_string(cfg.cells[c].bits), cfg.cells[c].schedule.to_string(),
                              std::to_string(cfg.seeds[s]), "test", m, format_double(*values[c][s])});
    }
  }
  write_csv(out / "results.csv", results);
  write_csv(out / "baseline.csv", baseline);
  write_csv(out / "failures.csv", failures);
  return summary;
}

namespace {

struct Group {
  std::string bits, schedule, split, metric;
  std::vector<std::string> seeds;
  std::vector<double> values;
};

double parse_number(const std::string& s, const std::string& file) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw ParseError(file + ": bad number '" + s + "'", 0);
  return v;
}

std::vector<Group> group_rows(const CsvTable& t, const std::string& file) {
  if (t.header != header_of(kResultsHeader)) throw ParseError(file + ": unexpected header", 0);
  std::vector<Group> groups;
  for (const auto& r : t.rows) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const Group& g) {
      return g.bits == r[0] && g.schedule == r[1] && g.split == r[3] && g.metric == r[4];
    });
    if (it == groups.end()) it = groups.insert(groups.end(), Group{r[0], r[1], r[3], r[4], {}, {}});
    it->seeds.push_back(r[2]);
    it->values.push_back(parse_number(r[5], file));
  }
  return groups;
}

}  // namespace

void report(const fs::path& dir) {
  const auto results_path = dir / "results.csv";
  if (!fs::is_directory(dir)) throw EmptyInput("results directory '" + dir.string() + "' does not exist");
  if (!fs::exists(results_path)) throw EmptyInput("no results.csv in '" + dir.string() + "'");
  auto groups = group_rows(read_csv(results_path), results_path.string());
  if (groups.empty()) throw EmptyInput("results.csv in '" + dir.string() + "' has no runs");
  std::vector<Group> baseline;
  if (fs::exists(dir / "baseline.csv")) baseline = group_rows(read_csv(dir / "baseline.csv"), "baseline.csv");

  CsvTable summary{{"cell_bits", "schedule", "split", "metric", "seeds", "mean", "min", "max"}, {}};
  json cells = json::array();
  for (const auto* list : {&baseline, &groups}) {
    for (const auto& g : *list) {
      double sum = 0.0;
      for (const double v : g.values) sum += v;
      const double mean = sum / static_cast<double>(g.values.size());
      const auto [lo, hi] = std::minmax_element(g.values.begin(), g.values.end());
      summary.rows.push_back({g.bits, g.schedule, g.split, g.metric, std::to_string(g.values.size()),
                              format_double(mean), format_double(*lo), format_double(*hi)});
      json per_seed = json::object();
      for (std::size_t i = 0; i < g.seeds.size(); ++i) per_seed[g.seeds[i]] = g.values[i];
      cells.push_back({{"cell_bits", std::stoi(g.bits)},
                       {"schedule", g.schedule},
                       {"split", g.split},
                       {"metric", g.metric},
                       {"mean", mean},
                       {"values", per_seed}});
    }
  }
  write_csv(dir / "summary.csv", summary);
  write_json(dir / "summary.json", {{"cells", cells}});

  CsvTable traj{header_of(kTrajectoryHeader), {}};
  if (fs::is_directory(dir / "runs")) {
    std::vector<fs::path> runs;
    for (const auto& e : fs::directory_iterator(dir / "runs")) {
      if (fs::exists(e.path() / "trajectory.csv")) runs.push_back(e.path());
    }
    std::sort(runs.begin(), runs.end());
    for (const auto& r : runs) {
      auto t = read_csv(r / "trajectory.csv");
      if (t.header != traj.header) throw ParseError((r / "trajectory.csv").string() + ": unexpected header", 0);
      for (auto& row : t.rows) traj.rows.push_back(std::move(row));
    }
  }
  write_csv(dir / "trajectory.csv", traj);
}

}  // namespace fxq::harness
