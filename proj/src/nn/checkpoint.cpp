#include "fxq/nn/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace fxq::nn {

namespace {

constexpr char kMagic[8] = {'F', 'X', 'Q', 'C', 'K', 'P', 'T', '1'};
constexpr int kVersion = 1;

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

template <typename U>
void append_le(std::string& out, U value) {
  char bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  out.append(bytes, sizeof(U));
}

template <typename U>
U read_le(const char* p) {
  char bytes[sizeof(U)];
  std::memcpy(bytes, p, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  U value;
  std::memcpy(&value, bytes, sizeof(U));
  return value;
}

// JSON has no infinity; the only non-finite value stored is the "no best yet" marker.
nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

template <typename T>
struct Writer {
  nlohmann::json directory = nlohmann::json::array();
  std::string payload;

  void add(const std::string& section, const std::string& name, const Tensor<T>& t, bool quantizable = false) {
    directory.push_back({{"section", section},
                         {"name", name},
                         {"shape", t.shape()},
                         {"quantizable", quantizable},
                         {"offset", payload.size()}});
    for (const T v : t.values()) append_le(payload, v);
  }
};

}  // namespace

nlohmann::json layer_to_json(const LayerSpec& s) {
  return {{"kind", to_string(s.kind)},
          {"name", s.name},
          {"units", s.units},
          {"kernel", s.kernel},
          {"stride", s.stride},
          {"padding", s.padding},
          {"activation", to_string(s.activation)},
          {"bn_momentum", s.bn_momentum},
          {"bn_epsilon", s.bn_epsilon},
          {"bptt_truncation", s.bptt_truncation}};
}

LayerSpec layer_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("kind")) throw InvalidArgument("layer entry needs a \"kind\"");
  LayerSpec s;
  s.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  s.name = j.value("name", std::string{});
  s.units = j.value("units", s.units);
  s.kernel = j.value("kernel", s.kernel);
  s.stride = j.value("stride", s.stride);
  s.padding = j.value("padding", s.padding);
  if (j.contains("activation")) s.activation = activation_from_string(j.at("activation").get<std::string>());
  s.bn_momentum = j.value("bn_momentum", s.bn_momentum);
  s.bn_epsilon = j.value("bn_epsilon", s.bn_epsilon);
  s.bptt_truncation = j.value("bptt_truncation", s.bptt_truncation);
  if (s.kind == LayerKind::MaxPool2D && !j.contains("stride")) s.stride = s.kernel;
  return s;
}

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void restore_rng(std::mt19937_64& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw ParseError("malformed RNG state", 0);
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& c) {
  Writer<T> w;
  for (const auto& p : c.state.params.entries()) w.add("params", p.name, p.value, p.quantizable);
  for (const auto& p : c.state.buffers.entries()) w.add("buffers", p.name, p.value);
  for (const auto& [name, t] : c.optimizer.slots) w.add("optimizer", name, t);

  nlohmann::json header;
  header["format"] = "fxq-checkpoint";
  header["version"] = kVersion;
  header["dtype"] = dtype_name<T>();
  header["config"] = c.config;
  header["input_shape"] = c.input_shape;
  header["layers"] = nlohmann::json::array();
  for (const auto& l : c.layers) header["layers"].push_back(layer_to_json(l));
  header["tensors"] = std::move(w.directory);
  header["quantizers"] = nlohmann::json::object();
  for (const auto& [group, q] : c.quantizers) {
    header["quantizers"][group] = {{"bits", q.bits}, {"points", q.points}, {"step", q.step}};
  }
  header["optimizer"] = {{"steps", c.optimizer.steps}};
  header["lr"] = {{"lr", c.lr.lr},
                  {"best", finite_or_null(c.lr.best)},
                  {"bad_evals", c.lr.bad_evals},
                  {"evals", c.lr.evals},
                  {"exhausted", c.lr.exhausted}};
  header["rng"] = c.rng;
  header["progress"] = c.progress;

  const std::string text = header.dump();
  std::string blob(kMagic, sizeof kMagic);
  append_le<std::uint64_t>(blob, text.size());
  blob += text;
  blob += w.payload;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + tmp.string() + "'");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct Parsed {
  nlohmann::json header;
  std::size_t payload_offset = 0;
};

Parsed parse_header(const std::string& blob) {
  if (blob.size() < 16) throw ParseError("checkpoint truncated before header", blob.size());
  if (std::memcmp(blob.data(), kMagic, sizeof kMagic) != 0) throw ParseError("bad checkpoint magic", 0);
  const auto len = read_le<std::uint64_t>(blob.data() + 8);
  if (len > blob.size() - 16) throw ParseError("checkpoint header length exceeds file size", 8);
  Parsed p;
  try {
    p.header = nlohmann::json::parse(blob.begin() + 16, blob.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what(), 16 + e.byte);
  }
  if (p.header.value("format", "") != "fxq-checkpoint") throw ParseError("not an fxq checkpoint", 16);
  if (p.header.value("version", 0) != kVersion) throw ParseError("unsupported checkpoint version", 16);
  p.payload_offset = 16 + len;
  return p;
}

}  // namespace

nlohmann::json read_checkpoint_header(const std::filesystem::path& path) {
  return parse_header(read_file(path)).header;
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  const std::string blob = read_file(path);
  const Parsed parsed = parse_header(blob);
  const nlohmann::json& h = parsed.header;
  const std::size_t base = parsed.payload_offset;
  if (h.at("dtype") != dtype_name<T>()) {
    throw InvalidArgument("checkpoint stores " + h.at("dtype").get<std::string>() + ", requested " + dtype_name<T>());
  }
  try {
    Checkpoint<T> c;
    c.config = h.at("config");
    c.input_shape = h.at("input_shape").get<Shape>();
    for (const auto& l : h.at("layers")) c.layers.push_back(layer_from_json(l));
    for (const auto& t : h.at("tensors")) {
      const Shape shape = t.at("shape").get<Shape>();
      const std::size_t offset = base + t.at("offset").get<std::size_t>();
      const std::size_t count = shape_size(shape);
      if (offset > blob.size() || count * sizeof(T) > blob.size() - offset) {
        throw ParseError("tensor '" + t.at("name").get<std::string>() + "' runs past end of file", offset);
      }
      Tensor<T> value(shape);
      for (std::size_t i = 0; i < count; ++i) value[i] = read_le<T>(blob.data() + offset + i * sizeof(T));
      const auto section = t.at("section").get<std::string>();
      auto name = t.at("name").get<std::string>();
      if (section == "params") {
        c.state.params.add(std::move(name), std::move(value), t.at("quantizable").get<bool>());
      } else if (section == "buffers") {
        c.state.buffers.add(std::move(name), std::move(value));
      } else if (section == "optimizer") {
        c.optimizer.slots.emplace(std::move(name), std::move(value));
      } else {
        throw ParseError("unknown tensor section '" + section + "'", base);
      }
    }
    for (const auto& item : h.at("quantizers").items()) {
      const nlohmann::json& q = item.value();
      QuantizerSpec spec{q.at("bits").get<int>(), q.at("points").get<int>(), q.at("step").get<double>()};
      spec.validate();
      c.quantizers.emplace(item.key(), spec);
    }
    c.optimizer.steps = h.at("optimizer").at("steps").get<std::uint64_t>();
    const auto& lr = h.at("lr");
    c.lr.lr = lr.at("lr").get<double>();
    c.lr.best = lr.at("best").is_null() ? std::numeric_limits<double>::infinity() : lr.at("best").get<double>();
    c.lr.bad_evals = lr.at("bad_evals").get<int>();
    c.lr.evals = lr.at("evals").get<int>();
    c.lr.exhausted = lr.at("exhausted").get<bool>();
    c.rng = h.at("rng").get<std::string>();
    c.progress = h.at("progress");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what(), 16);
  }
}

template void save_checkpoint<float>(const std::filesystem::path&, const Checkpoint<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const Checkpoint<double>&);
template Checkpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace fxq::nn
