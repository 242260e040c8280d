#include "lrc/csv.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "lrc/errors.hpp"

namespace lrc {

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::string& header)
    : path_(path) {
  if (header.empty()) {
    columns_ = 0;  // headerless file; width fixed by the first row
  } else {
    columns_ = 1 + static_cast<std::size_t>(std::count(header.begin(), header.end(), ','));
    buffer_ = header;
    buffer_ += '\n';
  }
}

CsvWriter::~CsvWriter() {
  if (!closed_) {
    try {
      close();
    } catch (...) {
      // Destructor must not throw; a failed flush surfaces on explicit close.
    }
  }
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (columns_ == 0) columns_ = cells.size();
  if (cells.size() != columns_)
    throw IoError("csv row width does not match header: " + path_.string());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) buffer_ += ',';
    buffer_ += cells[i];
  }
  buffer_ += '\n';
}

void CsvWriter::close() {
  if (closed_) return;
  closed_ = true;
  std::ofstream out(path_, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path_.string());
  out << buffer_;
  if (!out) throw IoError("write failed: " + path_.string());
}

std::vector<std::vector<double>> read_numeric_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) throw IoError("non-numeric cell in " + path.string());
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace lrc
