#include "fxq/harness/config.hpp"

#include <fstream>
#include <set>

#include "fxq/nn/checkpoint.hpp"

namespace fxq::harness {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& section) {
  if (!j.is_object()) throw InvalidArgument("config section '" + section + "' must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& item : j.items()) {
    if (!ok.contains(item.key())) throw InvalidArgument("unknown key '" + item.key() + "' in '" + section + "'");
  }
}

template <typename U>
void read(const json& j, const char* key, U& out) {
  if (j.contains(key)) out = j.at(key).get<U>();
}

nn::OptimizerConfig optimizer_from(const json& j, nn::OptimizerConfig cfg, const std::string& section) {
  check_keys(j,
             {"kind", "momentum", "adadelta_decay", "adadelta_epsilon", "initial_lr", "final_lr", "decay_factor",
              "patience_evals"},
             section);
  if (j.contains("kind")) cfg.kind = nn::optimizer_kind_from_string(j.at("kind").get<std::string>());
  read(j, "momentum", cfg.momentum);
  read(j, "adadelta_decay", cfg.adadelta_decay);
  read(j, "adadelta_epsilon", cfg.adadelta_epsilon);
  read(j, "initial_lr", cfg.lr_schedule.initial_lr);
  read(j, "final_lr", cfg.lr_schedule.final_lr);
  read(j, "decay_factor", cfg.lr_schedule.decay_factor);
  read(j, "patience_evals", cfg.lr_schedule.patience_evals);
  return cfg;
}

json optimizer_to(const nn::OptimizerConfig& c) {
  return {{"kind", nn::to_string(c.kind)},
          {"momentum", c.momentum},
          {"adadelta_decay", c.adadelta_decay},
          {"adadelta_epsilon", c.adadelta_epsilon},
          {"initial_lr", c.lr_schedule.initial_lr},
          {"final_lr", c.lr_schedule.final_lr},
          {"decay_factor", c.lr_schedule.decay_factor},
          {"patience_evals", c.lr_schedule.patience_evals}};
}

nn::BatchingConfig batching_from(const json& j, nn::BatchingConfig cfg, const std::string& section) {
  check_keys(j, {"batch_size", "unroll_length", "update_stride"}, section);
  read(j, "batch_size", cfg.batch_size);
  read(j, "unroll_length", cfg.unroll_length);
  read(j, "update_stride", cfg.update_stride);
  return cfg;
}

json batching_to(const nn::BatchingConfig& b) {
  return {{"batch_size", b.batch_size}, {"unroll_length", b.unroll_length}, {"update_stride", b.update_stride}};
}

DatasetConfig dataset_from(const json& j) {
  check_keys(j,
             {"source", "seed", "split", "samples", "dims", "classes", "noise", "images", "labels", "path",
              "vocabulary", "length", "pattern"},
             "dataset");
  DatasetConfig d;
  read(j, "source", d.source);
  read(j, "seed", d.seed);
  if (j.contains("split")) {
    check_keys(j.at("split"), {"dev", "test"}, "dataset.split");
    read(j.at("split"), "dev", d.split.dev);
    read(j.at("split"), "test", d.split.test);
  }
  read(j, "samples", d.samples);
  read(j, "dims", d.dims);
  read(j, "classes", d.classes);
  read(j, "noise", d.noise);
  if (j.contains("images")) d.images = j.at("images").get<std::string>();
  if (j.contains("labels")) d.labels = j.at("labels").get<std::string>();
  if (j.contains("path")) d.path = j.at("path").get<std::string>();
  read(j, "vocabulary", d.vocabulary);
  read(j, "length", d.length);
  read(j, "pattern", d.pattern);
  return d;
}

json dataset_to(const DatasetConfig& d) {
  return {{"source", d.source},
          {"seed", d.seed},
          {"split", {{"dev", d.split.dev}, {"test", d.split.test}}},
          {"samples", d.samples},
          {"dims", d.dims},
          {"classes", d.classes},
          {"noise", d.noise},
          {"images", d.images.string()},
          {"labels", d.labels.string()},
          {"path", d.path.string()},
          {"vocabulary", d.vocabulary},
          {"length", d.length},
          {"pattern", d.pattern}};
}

void resolve_paths(DatasetConfig& d, const std::filesystem::path& base) {
  for (auto* p : {&d.images, &d.labels, &d.path}) {
    if (!p->empty() && p->is_relative()) *p = base / *p;
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  dataset.validate();
  if (network.empty()) throw InvalidArgument("network needs at least one layer");
  float_training.optimizer.validate();
  float_training.batching.validate();
  if (float_training.max_epochs < 1) throw InvalidArgument("float_training.max_epochs must be >= 1");
  if (float_training.eval_every < 1) throw InvalidArgument("float_training.eval_every must be >= 1");
  if (cells.empty()) throw InvalidArgument("at least one sweep cell is required");
  if (seeds.empty()) throw InvalidArgument("seeds must be nonempty");
  for (const auto& c : cells) retrain_config(c, seeds.front()).validate();
}

nn::MetricKind ExperimentConfig::metric() const {
  return task == Task::CharLanguageModel ? nn::MetricKind::BitsPerCharacter : nn::MetricKind::ErrorRate;
}

qat::RetrainConfig ExperimentConfig::retrain_config(const Cell& cell, std::uint64_t seed) const {
  qat::RetrainConfig r = retraining;
  r.schedule = cell.schedule;
  r.bits = cell.bits;
  r.seed = seed;
  r.metric = metric();
  return r;
}

json ExperimentConfig::to_json() const {
  json j;
  j["task"] = harness::to_string(task);
  j["dataset"] = dataset_to(dataset);
  j["network"] = json::array();
  for (const auto& l : network) j["network"].push_back(nn::layer_to_json(l));
  j["float_training"] = {{"optimizer", optimizer_to(float_training.optimizer)},
                         {"batching", batching_to(float_training.batching)},
                         {"max_epochs", float_training.max_epochs},
                         {"eval_every", float_training.eval_every}};
  const auto& r = retraining;
  j["retraining"] = {{"optimizer", optimizer_to(r.optimizer)},
                     {"batching", batching_to(r.batching)},
                     {"max_epochs", r.max_epochs},
                     {"eval_every", r.eval_every},
                     {"exhaustive_init", r.exhaustive_init},
                     {"exhaustive_candidates", r.exhaustive_candidates},
                     {"check_finite", r.check_finite},
                     {"solver",
                      {{"max_iterations", r.solver.max_iterations},
                       {"convergence_tol", r.solver.convergence_tol},
                       {"multistart_factors", r.solver.multistart_factors}}}};
  j["cells"] = json::array();
  for (const auto& c : cells) j["cells"].push_back({{"bits", c.bits}, {"schedule", c.schedule.to_string()}});
  j["seeds"] = seeds;
  j["output_dir"] = output_dir.string();
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  try {
    check_keys(j,
               {"task", "dataset", "network", "float_training", "retraining", "cells", "seeds", "output_dir"},
               "top level");
    ExperimentConfig c;
    if (!j.contains("task")) throw InvalidArgument("config needs a \"task\"");
    c.task = task_from_string(j.at("task").get<std::string>());
    if (j.contains("dataset")) c.dataset = dataset_from(j.at("dataset"));
    if (j.contains("network")) {
      for (const auto& l : j.at("network")) {
        check_keys(l,
                   {"kind", "name", "units", "kernel", "stride", "padding", "activation", "bn_momentum",
                    "bn_epsilon", "bptt_truncation"},
                   "network layer");
        c.network.push_back(nn::layer_from_json(l));
      }
    }
    if (j.contains("float_training")) {
      const auto& f = j.at("float_training");
      check_keys(f, {"optimizer", "batching", "max_epochs", "eval_every"}, "float_training");
      if (f.contains("optimizer")) {
        c.float_training.optimizer = optimizer_from(f.at("optimizer"), c.float_training.optimizer, "float_training.optimizer");
      }
      if (f.contains("batching")) {
        c.float_training.batching = batching_from(f.at("batching"), c.float_training.batching, "float_training.batching");
      }
      read(f, "max_epochs", c.float_training.max_epochs);
      read(f, "eval_every", c.float_training.eval_every);
    }
    c.retraining.batching = c.float_training.batching;
    if (j.contains("retraining")) {
      const auto& r = j.at("retraining");
      check_keys(r,
                 {"optimizer", "batching", "max_epochs", "eval_every", "exhaustive_init", "exhaustive_candidates",
                  "check_finite", "solver"},
                 "retraining");
      auto& rc = c.retraining;
      if (r.contains("optimizer")) rc.optimizer = optimizer_from(r.at("optimizer"), rc.optimizer, "retraining.optimizer");
      if (r.contains("batching")) rc.batching = batching_from(r.at("batching"), rc.batching, "retraining.batching");
      read(r, "max_epochs", rc.max_epochs);
      read(r, "eval_every", rc.eval_every);
      read(r, "exhaustive_init", rc.exhaustive_init);
      read(r, "exhaustive_candidates", rc.exhaustive_candidates);
      read(r, "check_finite", rc.check_finite);
      if (r.contains("solver")) {
        const auto& s = r.at("solver");
        check_keys(s, {"max_iterations", "convergence_tol", "multistart_factors"}, "retraining.solver");
        read(s, "max_iterations", rc.solver.max_iterations);
        read(s, "convergence_tol", rc.solver.convergence_tol);
        read(s, "multistart_factors", rc.solver.multistart_factors);
      }
    }
    if (j.contains("cells")) {
      for (const auto& cell : j.at("cells")) {
        check_keys(cell, {"bits", "schedule"}, "cells");
        Cell x;
        x.schedule = qat::Schedule::parse(cell.at("schedule").get<std::string>());
        if (x.schedule.kind == qat::ScheduleKind::Gradual) {
          x.bits = cell.value("bits", x.schedule.end_bits);
          if (x.bits != x.schedule.end_bits) {
            throw InvalidArgument("gradual cell bits must equal the schedule's end bits");
          }
        } else {
          x.bits = cell.at("bits").get<int>();
        }
        c.cells.push_back(x);
      }
    }
    read(j, "seeds", c.seeds);
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
  auto c = from_json(j);
  resolve_paths(c.dataset, path.parent_path());
  return c;
}

}  // namespace fxq::harness
