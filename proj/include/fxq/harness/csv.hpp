#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace fxq::harness {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws ParseError when absent.
  std::size_t column(const std::string& name) const;
};

/// RFC 4180 quoting: fields containing a comma, quote or newline are quoted.
std::string csv_line(const std::vector<std::string>& fields);

void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);
CsvTable parse_csv(const std::string& text);

}  // namespace fxq::harness
