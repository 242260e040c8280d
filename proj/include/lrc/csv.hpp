#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace lrc {

/// Shortest decimal representation that parses back to the same double
/// (std::to_chars). Keeps repeated runs byte-identical.
std::string format_double(double x);

/// Minimal CSV writer: fixed header, rows of preformatted cells.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::string& header);
  ~CsvWriter();

  void row(const std::vector<std::string>& cells);
  void close();

 private:
  std::filesystem::path path_;
  std::string buffer_;
  std::size_t columns_;
  bool closed_ = false;
};

/// Reads a headerless numeric CSV into row-major values.
std::vector<std::vector<double>> read_numeric_csv(const std::filesystem::path& path);

}  // namespace lrc
