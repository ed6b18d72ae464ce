#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace stgat::csv {

// Minimal CSV handling for the fixed schemas this project reads and writes.
// Fields are plain (no quoting or embedded commas); empty field = missing.

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

std::vector<std::string> split_line(const std::string& line);

// Reads the whole file; throws DataError on missing file or ragged rows
// (error message carries the 1-based row number).
Table read_file(const std::string& path);

// Column lookup by header name; throws DataError naming the column.
std::size_t column_index(const Table& t, const std::string& name);

// Parses a cell into a double; empty cell -> nullopt; junk -> DataError
// naming the row and column.
std::optional<double> parse_cell(const std::string& cell, std::size_t row_no,
                                 const std::string& col_name);

// Fixed-format float for reproducible CSV output.
std::string fmt(double v, int precision = 6);
// Shortest representation that round-trips the exact double.
std::string fmt_exact(double v);

class Writer {
 public:
  explicit Writer(const std::string& path);
  void write_row(const std::vector<std::string>& cells);
  void close();

 private:
  std::ofstream out_;
  std::string path_;
};

}  // namespace stgat::csv
