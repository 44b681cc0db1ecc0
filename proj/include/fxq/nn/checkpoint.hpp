#pragma once

#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "fxq/nn/layer_spec.hpp"
#include "fxq/nn/network.hpp"
#include "fxq/nn/optimizer.hpp"
#include "fxq/quantizer.hpp"

namespace fxq::nn {

nlohmann::json layer_to_json(const LayerSpec& spec);
/// Missing keys take the LayerSpec defaults, so hand-written configs can be terse.
LayerSpec layer_from_json(const nlohmann::json& j);

std::string rng_state(const std::mt19937_64& rng);
void restore_rng(std::mt19937_64& rng, const std::string& state);

/// Everything needed to rebuild a network and resume training bit-exactly.
template <typename T>
struct Checkpoint {
  nlohmann::json config = nlohmann::json::object();  // echo of the producing configuration
  std::vector<LayerSpec> layers;
  Shape input_shape;
  ModelState<T> state;                             // float master parameters and running statistics
  std::map<std::string, QuantizerSpec> quantizers;  // per weight group, empty for float models
  OptimizerState<T> optimizer;
  LrScheduleState lr;
  std::string rng;
  nlohmann::json progress = nlohmann::json::object();  // caller-defined training position
};

/// Container layout: 8-byte magic "FXQCKPT1", little-endian u64 header
/// length, UTF-8 JSON header, then the raw little-endian tensor payload
/// described by the header's tensor directory.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ckpt);

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

/// Reads only the JSON header.
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

}  // namespace fxq::nn
