#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fxq/nn/data.hpp"

namespace fxq::harness {

enum class Task { ClassificationImage, ClassificationVector, CharLanguageModel };

const char* to_string(Task task) noexcept;
Task task_from_string(const std::string& s);

/// dev and test get floor(fraction * N) items each; the remainder goes to train.
struct SplitFractions {
  double dev = 0.1;
  double test = 0.1;
};

struct SplitSizes {
  std::size_t train = 0, dev = 0, test = 0;
};

SplitSizes split_sizes(std::size_t n, const SplitFractions& f);

struct DatasetConfig {
  /// synthetic-clusters | synthetic-digits | idx | text | synthetic-text | repeating-text
  std::string source = "synthetic-digits";
  std::uint64_t seed = 1;
  SplitFractions split;

  // synthetic-clusters, synthetic-digits
  std::size_t samples = 2000;
  std::size_t dims = 16;  // clusters only
  std::size_t classes = 10;
  double noise = 0.5;

  // idx
  std::filesystem::path images;
  std::filesystem::path labels;

  // text, synthetic-text, repeating-text
  std::filesystem::path path;
  std::string vocabulary = "charset";  // "charset" or "byte"
  std::size_t length = 100000;         // synthetic-text / repeating-text characters
  std::string pattern = "abcdefghij";  // repeating-text period

  void validate() const;
};

struct DatasetSplits {
  nn::Dataset<float> train, dev, test;
  /// Char-LM only: token id -> UTF-8 text of the symbol.
  std::vector<std::string> vocabulary;
};

DatasetSplits load_dataset(const DatasetConfig& cfg, Task task);

// --- generators -----------------------------------------------------------

/// Gaussian clusters: class centres drawn once from N(0, I), samples at
/// centre + noise * N(0, I). Inputs [N, dims].
nn::Dataset<float> synthetic_clusters(std::size_t samples, std::size_t dims, std::size_t classes, double noise,
                                      std::uint64_t seed);

/// 8x8 grey-scale digit glyphs with random shift, stroke intensity, pixel
/// noise and dropout. Inputs [N, 1, 8, 8] in [0, 1].
nn::Dataset<float> synthetic_digits(std::size_t samples, std::size_t classes, double noise, std::uint64_t seed);

/// English-like text: sentences of words drawn from a fixed lexicon with a
/// skewed frequency distribution.
std::string synthetic_text(std::size_t length, std::uint64_t seed);

// --- IDX ------------------------------------------------------------------

/// Unsigned-byte IDX array (type code 0x08).
struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;

  friend bool operator==(const IdxArray&, const IdxArray&) = default;
};

IdxArray read_idx(const std::filesystem::path& path);
IdxArray parse_idx(const std::string& bytes);
void write_idx(const std::filesystem::path& path, const IdxArray& array);

/// Images [N, H, W] scaled to [0, 1] plus labels [N].
nn::Dataset<float> idx_dataset(const IdxArray& images, const IdxArray& labels, std::size_t classes);

// --- text -----------------------------------------------------------------

struct TokenizedText {
  std::vector<int> tokens;
  std::vector<std::string> vocabulary;
};

/// "byte": 256 symbols, one per byte. "charset": the distinct code points of
/// the text in ascending order. Malformed UTF-8 raises ParseError.
TokenizedText tokenize(const std::string& text, const std::string& vocabulary);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace fxq::harness
