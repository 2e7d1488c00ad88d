#pragma once

#include "stochbt/linalg.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace stochbt::io {

/// Shortest round-trip decimal (17 significant digits); "nan", "inf", "-inf".
std::string num(double v);

/// Minimal CSV writer: header row, then rows of pre-formatted cells.
class CsvWriter {
 public:
  CsvWriter(std::ostream& os, const std::vector<std::string>& header);
  void row(const std::vector<std::string>& cells);

 private:
  std::ostream& os_;
  std::size_t width_;
};

/// Matrix as CSV with columns c0..c{m-1} (or the given names).
void write_matrix_csv(std::ostream& os, const Matrix& M, std::vector<std::string> names = {});
Matrix read_matrix_csv(const std::string& path);

void write_text(const std::string& path, const std::string& content);
std::string read_text(const std::string& path);

}  // namespace stochbt::io
