#include "fxq/harness/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace fxq::harness {

const char* to_string(Task task) noexcept {
  switch (task) {
    case Task::ClassificationImage: return "classification-image";
    case Task::ClassificationVector: return "classification-vector";
    case Task::CharLanguageModel: return "char-language-model";
  }
  return "unknown";
}

Task task_from_string(const std::string& s) {
  if (s == "classification-image") return Task::ClassificationImage;
  if (s == "classification-vector") return Task::ClassificationVector;
  if (s == "char-language-model") return Task::CharLanguageModel;
  throw InvalidArgument("unknown task '" + s + "'");
}

SplitSizes split_sizes(std::size_t n, const SplitFractions& f) {
  SplitSizes s;
  s.dev = static_cast<std::size_t>(std::floor(f.dev * static_cast<double>(n)));
  s.test = static_cast<std::size_t>(std::floor(f.test * static_cast<double>(n)));
  s.train = n - s.dev - s.test;
  return s;
}

void DatasetConfig::validate() const {
  const auto frac_ok = [](double v) { return v >= 0.0 && v < 1.0; };
  if (!frac_ok(split.dev) || !frac_ok(split.test) || split.dev + split.test >= 1.0) {
    throw InvalidArgument("split fractions must be in [0, 1) and leave room for train");
  }
  if (vocabulary != "charset" && vocabulary != "byte") {
    throw InvalidArgument("vocabulary must be 'charset' or 'byte', got '" + vocabulary + "'");
  }
  if (!(noise >= 0.0)) throw InvalidArgument("noise must be >= 0");
}

// --- generators -------------------------------------------------------------

nn::Dataset<float> synthetic_clusters(std::size_t samples, std::size_t dims, std::size_t classes, double noise,
                                      std::uint64_t seed) {
  if (samples == 0 || dims == 0 || classes < 2) {
    throw InvalidArgument("synthetic clusters need samples >= 1, dims >= 1, classes >= 2");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit;
  std::vector<double> centres(classes * dims);
  for (auto& c : centres) c = unit(rng);

  nn::Dataset<float> d;
  d.num_classes = classes;
  d.inputs = nn::Tensor<float>({samples, dims});
  d.labels.resize(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    const std::size_t c = i % classes;
    d.labels[i] = static_cast<int>(c);
    for (std::size_t k = 0; k < dims; ++k) {
      d.inputs[i * dims + k] = static_cast<float>(centres[c * dims + k] + noise * unit(rng));
    }
  }
  return d;
}

namespace {

// 5x7 glyphs, one string per row.
constexpr std::array<std::array<const char*, 7>, 10> kGlyphs{{
    {" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "},
    {"  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "},
    {" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"},
    {"#####", "   # ", "  #  ", "   # ", "    #", "#   #", " ### "},
    {"   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "},
    {"#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "},
    {"  ## ", " #   ", "#    ", "#### ", "#   #", "#   #", " ### "},
    {"#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "},
    {" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "},
    {" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "},
}};

}  // namespace

nn::Dataset<float> synthetic_digits(std::size_t samples, std::size_t classes, double noise, std::uint64_t seed) {
  if (samples == 0 || classes < 2 || classes > kGlyphs.size()) {
    throw InvalidArgument("synthetic digits need samples >= 1 and 2..10 classes");
  }
  constexpr std::size_t side = 8;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 0.3 * noise);
  const double p_drop = 0.15 * noise;
  const double p_spur = 0.05 * noise;

  nn::Dataset<float> d;
  d.num_classes = classes;
  d.inputs = nn::Tensor<float>({samples, 1, side, side});
  d.labels.resize(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    const std::size_t c = i % classes;
    d.labels[i] = static_cast<int>(c);
    const std::size_t dx = rng() % 4, dy = rng() % 2;
    const double stroke = 0.6 + 0.4 * uni(rng);
    float* img = d.inputs.data() + i * side * side;
    for (std::size_t r = 0; r < 7; ++r) {
      for (std::size_t col = 0; col < 5; ++col) {
        if (kGlyphs[c][r][col] == '#') img[(r + dy) * side + col + dx] = static_cast<float>(stroke * (0.8 + 0.2 * uni(rng)));
      }
    }
    for (std::size_t p = 0; p < side * side; ++p) {
      double v = img[p];
      if (v > 0.0 && uni(rng) < p_drop) v = 0.0;
      if (v == 0.0 && uni(rng) < p_spur) v = stroke * uni(rng);
      v += gauss(rng);
      img[p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return d;
}

std::string synthetic_text(std::size_t length, std::uint64_t seed) {
  static const std::vector<std::string> lexicon = {
      "the",    "of",     "and",   "to",     "in",     "a",      "is",     "that",   "for",    "it",
      "as",     "was",    "with",  "be",     "by",     "on",     "not",    "he",     "this",   "are",
      "or",     "his",    "from",  "at",     "which",  "but",    "have",   "an",     "had",    "they",
      "you",    "were",   "their", "one",    "all",    "we",     "can",    "her",    "has",    "there",
      "been",   "if",     "more",  "when",   "will",   "would",  "who",    "so",     "no",     "she",
      "other",  "its",    "may",   "these",  "what",   "them",   "than",   "some",   "him",    "time",
      "into",   "only",   "do",    "could",  "new",    "about",  "two",    "first",  "then",   "made",
      "river",  "town",   "north", "winter", "garden", "letter", "number", "little", "water",  "people",
      "under",  "before", "after", "house",  "world",  "school", "never",  "small",  "great",  "against",
      "market", "bridge", "stone", "engine", "signal", "weight", "step",   "level",  "point",  "grid",
  };
  std::mt19937_64 rng(seed);
  // Zipf-like weights: word k has weight 1 / (k + 1).
  std::vector<double> weights(lexicon.size());
  for (std::size_t k = 0; k < weights.size(); ++k) weights[k] = 1.0 / static_cast<double>(k + 1);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::uniform_int_distribution<int> sentence_len(4, 12);

  std::string out;
  out.reserve(length + 64);
  while (out.size() < length) {
    const int words = sentence_len(rng);
    for (int w = 0; w < words; ++w) {
      std::string word = lexicon[pick(rng)];
      if (w == 0) word[0] = static_cast<char>(word[0] - 'a' + 'A');
      out += word;
      if (w + 1 < words) out += (rng() % 9 == 0) ? ", " : " ";
    }
    out += (rng() % 6 == 0) ? ".\n" : ". ";
  }
  out.resize(length);
  return out;
}

// --- IDX --------------------------------------------------------------------

IdxArray parse_idx(const std::string& bytes) {
  auto byte = [&](std::size_t i) { return static_cast<std::uint8_t>(bytes[i]); };
  if (bytes.size() < 4) throw ParseError("IDX file shorter than its 4-byte magic", bytes.size());
  if (byte(0) != 0 || byte(1) != 0) throw ParseError("IDX magic must start with two zero bytes", 0);
  if (byte(2) != 0x08) {
    throw ParseError("unsupported IDX element type 0x" + std::to_string(byte(2)) + " (only unsigned byte 0x08)", 2);
  }
  const std::size_t rank = byte(3);
  if (rank == 0) throw ParseError("IDX array has zero dimensions", 3);
  const std::size_t header = 4 + 4 * rank;
  if (bytes.size() < header) throw ParseError("IDX file truncated inside dimension list", bytes.size());

  IdxArray a;
  std::size_t count = 1;
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t at = 4 + 4 * k;
    const std::uint32_t dim = (std::uint32_t{byte(at)} << 24) | (std::uint32_t{byte(at + 1)} << 16) |
                              (std::uint32_t{byte(at + 2)} << 8) | std::uint32_t{byte(at + 3)};
    a.dims.push_back(dim);
    count *= dim;
  }
  if (bytes.size() - header < count) {
    throw ParseError("IDX data truncated: expected " + std::to_string(count) + " bytes, found " +
                         std::to_string(bytes.size() - header),
                     bytes.size());
  }
  if (bytes.size() - header > count) throw ParseError("IDX file has trailing bytes", header + count);
  a.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return a;
}

namespace {

std::string read_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

IdxArray read_idx(const std::filesystem::path& path) {
  try {
    return parse_idx(read_binary(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

void write_idx(const std::filesystem::path& path, const IdxArray& a) {
  if (a.dims.empty() || a.dims.size() > 255) throw InvalidArgument("IDX arrays need 1..255 dimensions");
  std::size_t count = 1;
  for (auto d : a.dims) count *= d;
  if (count != a.data.size()) throw InvalidArgument("IDX dims do not match data length");
  std::string out{'\0', '\0', '\x08', static_cast<char>(a.dims.size())};
  for (const std::uint32_t d : a.dims) {
    for (int shift = 24; shift >= 0; shift -= 8) out += static_cast<char>((d >> shift) & 0xFF);
  }
  out.append(a.data.begin(), a.data.end());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

nn::Dataset<float> idx_dataset(const IdxArray& images, const IdxArray& labels, std::size_t classes) {
  if (images.dims.size() != 3) throw InvalidArgument("IDX images must be [N, rows, cols]");
  if (labels.dims.size() != 1 || labels.dims[0] != images.dims[0]) {
    throw InvalidArgument("IDX labels must be [N] with N matching the images");
  }
  const std::size_t n = images.dims[0], h = images.dims[1], w = images.dims[2];
  nn::Dataset<float> d;
  d.inputs = nn::Tensor<float>({n, 1, h, w});
  for (std::size_t i = 0; i < images.data.size(); ++i) d.inputs[i] = static_cast<float>(images.data[i]) / 255.0f;
  std::size_t max_label = 0;
  for (const auto l : labels.data) {
    d.labels.push_back(l);
    max_label = std::max<std::size_t>(max_label, l);
  }
  d.num_classes = classes ? classes : max_label + 1;
  d.validate();
  return d;
}

// --- text -------------------------------------------------------------------

std::string read_text_file(const std::filesystem::path& path) { return read_binary(path); }

namespace {

std::vector<std::uint32_t> decode_utf8(const std::string& s) {
  std::vector<std::uint32_t> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<std::uint8_t>(s[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (b0 < 0x80) {
      len = 1, cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2, cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3, cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4, cp = b0 & 0x07;
    } else {
      throw ParseError("invalid UTF-8 lead byte", i);
    }
    if (i + len > s.size()) throw ParseError("truncated UTF-8 sequence", i);
    for (std::size_t k = 1; k < len; ++k) {
      const auto b = static_cast<std::uint8_t>(s[i + k]);
      if ((b & 0xC0) != 0x80) throw ParseError("invalid UTF-8 continuation byte", i + k);
      cp = (cp << 6) | (b & 0x3F);
    }
    static constexpr std::uint32_t min_cp[5] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < min_cp[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      throw ParseError("invalid UTF-8 code point", i);
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string encode_utf8(std::uint32_t cp) {
  std::string s;
  if (cp < 0x80) {
    s += static_cast<char>(cp);
  } else if (cp < 0x800) {
    s += static_cast<char>(0xC0 | (cp >> 6));
    s += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    s += static_cast<char>(0xE0 | (cp >> 12));
    s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    s += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    s += static_cast<char>(0xF0 | (cp >> 18));
    s += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    s += static_cast<char>(0x80 | (cp & 0x3F));
  }
  return s;
}

}  // namespace

TokenizedText tokenize(const std::string& text, const std::string& vocabulary) {
  const auto cps = decode_utf8(text);
  TokenizedText t;
  if (vocabulary == "byte") {
    for (int b = 0; b < 256; ++b) t.vocabulary.push_back(std::string(1, static_cast<char>(b)));
    t.tokens.reserve(text.size());
    for (const char c : text) t.tokens.push_back(static_cast<std::uint8_t>(c));
    return t;
  }
  if (vocabulary != "charset") throw InvalidArgument("unknown vocabulary '" + vocabulary + "'");
  const std::set<std::uint32_t> charset(cps.begin(), cps.end());
  const std::vector<std::uint32_t> sorted(charset.begin(), charset.end());
  for (const auto cp : sorted) t.vocabulary.push_back(encode_utf8(cp));
  t.tokens.reserve(cps.size());
  for (const auto cp : cps) {
    t.tokens.push_back(static_cast<int>(std::lower_bound(sorted.begin(), sorted.end(), cp) - sorted.begin()));
  }
  return t;
}

// --- splits -----------------------------------------------------------------

namespace {

nn::Dataset<float> take_rows(const nn::Dataset<float>& d, const std::vector<std::size_t>& idx, std::size_t begin,
                             std::size_t end) {
  nn::Dataset<float> out;
  out.num_classes = d.num_classes;
  nn::Shape shape = d.inputs.shape();
  const std::size_t row = d.inputs.size() / shape[0];
  shape[0] = end - begin;
  out.inputs = nn::Tensor<float>(shape);
  for (std::size_t k = begin; k < end; ++k) {
    std::copy_n(d.inputs.data() + idx[k] * row, row, out.inputs.data() + (k - begin) * row);
    out.labels.push_back(d.labels[idx[k]]);
  }
  return out;
}

DatasetSplits split_classification(const nn::Dataset<float>& all, const DatasetConfig& cfg, Task task) {
  const auto sizes = split_sizes(all.size(), cfg.split);
  std::vector<std::size_t> idx(all.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::shuffle(idx.begin(), idx.end(), rng);
  DatasetSplits s;
  s.train = take_rows(all, idx, 0, sizes.train);
  s.dev = take_rows(all, idx, sizes.train, sizes.train + sizes.dev);
  s.test = take_rows(all, idx, sizes.train + sizes.dev, all.size());
  if (task == Task::ClassificationVector) {
    for (auto* d : {&s.train, &s.dev, &s.test}) {
      const std::size_t n = d->inputs.dim(0);
      d->inputs.reshape({n, d->inputs.size() / std::max<std::size_t>(n, 1)});
    }
  }
  return s;
}

DatasetSplits split_text(const TokenizedText& text, const DatasetConfig& cfg) {
  const auto sizes = split_sizes(text.tokens.size(), cfg.split);
  DatasetSplits s;
  s.vocabulary = text.vocabulary;
  auto slice = [&](std::size_t begin, std::size_t end) {
    nn::Dataset<float> d;
    d.kind = nn::TaskKind::Sequence;
    d.num_classes = text.vocabulary.size();
    d.labels.assign(text.tokens.begin() + static_cast<std::ptrdiff_t>(begin),
                    text.tokens.begin() + static_cast<std::ptrdiff_t>(end));
    return d;
  };
  s.train = slice(0, sizes.train);
  s.dev = slice(sizes.train, sizes.train + sizes.dev);
  s.test = slice(sizes.train + sizes.dev, text.tokens.size());
  return s;
}

}  // namespace

DatasetSplits load_dataset(const DatasetConfig& cfg, Task task) {
  cfg.validate();
  const bool lm = task == Task::CharLanguageModel;
  const auto& src = cfg.source;
  const bool text_source = src == "text" || src == "synthetic-text" || src == "repeating-text";
  if (lm != text_source) {
    throw InvalidArgument("dataset source '" + src + "' does not fit task '" + to_string(task) + "'");
  }
  if (lm) {
    std::string text;
    if (src == "text") {
      text = read_text_file(cfg.path);
    } else if (src == "synthetic-text") {
      text = synthetic_text(cfg.length, cfg.seed);
    } else {
      if (cfg.pattern.empty()) throw InvalidArgument("repeating-text needs a non-empty pattern");
      while (text.size() < cfg.length) text += cfg.pattern;
      text.resize(cfg.length);
    }
    try {
      return split_text(tokenize(text, cfg.vocabulary), cfg);
    } catch (const ParseError& e) {
      throw ParseError((src == "text" ? cfg.path.string() + ": " : std::string()) + "malformed UTF-8", e.offset());
    }
  }

  nn::Dataset<float> all;
  if (src == "synthetic-clusters") {
    if (task == Task::ClassificationImage) throw InvalidArgument("synthetic-clusters produces vectors, not images");
    all = synthetic_clusters(cfg.samples, cfg.dims, cfg.classes, cfg.noise, cfg.seed);
  } else if (src == "synthetic-digits") {
    all = synthetic_digits(cfg.samples, cfg.classes, cfg.noise, cfg.seed);
  } else if (src == "idx") {
    all = idx_dataset(read_idx(cfg.images), read_idx(cfg.labels), cfg.classes);
  } else {
    throw InvalidArgument("unknown dataset source '" + src + "'");
  }
  return split_classification(all, cfg, task);
}

}  // namespace fxq::harness
