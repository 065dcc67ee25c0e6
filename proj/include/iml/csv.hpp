#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "iml/error.hpp"
#include "iml/text.hpp"

namespace iml {

/// CSV writer with byte-deterministic float formatting. The first line is a
/// '#' comment embedding provenance (config hash, seed, toolkit version);
/// readers skip comment lines.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::string& provenance,
            const std::vector<std::string>& columns)
      : out_(path, std::ios::binary) {
    check(out_.good(), "CsvWriter: cannot write " + path);
    out_ << "# " << provenance << "\n";
    for (size_t i = 0; i < columns.size(); ++i) out_ << (i ? "," : "") << columns[i];
    out_ << "\n";
  }

  void row(const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) {
      check(cells[i].find(',') == std::string::npos && cells[i].find('\n') == std::string::npos,
            "CsvWriter: cell contains separator: '" + cells[i] + "'");
      out_ << (i ? "," : "") << cells[i];
    }
    out_ << "\n";
  }

  void close() { out_.close(); }

 private:
  std::ofstream out_;
};

struct CsvTable {
  std::string provenance;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  const std::string& cell(size_t row, const std::string& column) const {
    for (size_t c = 0; c < columns.size(); ++c)
      if (columns[c] == column) return rows[row][c];
    throw error("CsvTable: no column '" + column + "'");
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "read_csv: cannot open " + path);
  CsvTable t;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (t.provenance.empty()) t.provenance = trim(line.substr(1));
      continue;
    }
    auto cells = split(line, ',');
    if (!have_header) {
      t.columns = std::move(cells);
      have_header = true;
    } else {
      check(cells.size() == t.columns.size(), "read_csv: ragged row in " + path);
      t.rows.push_back(std::move(cells));
    }
  }
  return t;
}

}  // namespace iml
