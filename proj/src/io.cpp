#include "lab/io.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace lab {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

CsvWriter::CsvWriter(const std::filesystem::path& path,
                     const std::vector<std::string>& columns)
    : path_(path), ncols_(columns.size()) {
  if (columns.empty()) throw std::invalid_argument("CsvWriter: no columns");
  std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::trunc);
  if (!out_) throw std::runtime_error("CsvWriter: cannot open " + path.string());
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (i) out_ << ',';
    out_ << columns[i];
  }
  out_ << '\n';
}

void CsvWriter::row(const std::vector<double>& values) {
  if (values.size() != ncols_)
    throw std::invalid_argument("CsvWriter: row width mismatch on " + path_.string());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out_ << ',';
    out_ << format_double(values[i]);
  }
  out_ << '\n';
}

void CsvWriter::flush() { out_.flush(); }

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_csv: cannot open " + path.string());
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_csv: empty file " + path.string());
  std::stringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) table.header.push_back(cell);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream rs(line);
    while (std::getline(rs, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != table.header.size())
      throw std::runtime_error("read_csv: ragged row in " + path.string());
    table.rows.push_back(std::move(row));
  }
  return table;
}

nlohmann::json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_json_file: cannot open " + path.string());
  return nlohmann::json::parse(in);
}

void save_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("save_json_file: cannot open " + path.string());
  out << j.dump(2) << '\n';
}

void write_dataset(const std::filesystem::path& dir, const LabeledSet& set) {
  if (set.examples.empty()) throw std::invalid_argument("write_dataset: empty set");
  const std::size_t d = set.dim();
  std::vector<std::string> cols;
  for (std::size_t t = 0; t < d; ++t) cols.push_back("x" + std::to_string(t));
  cols.push_back("y");
  CsvWriter csv(dir / "dataset.csv", cols);
  std::vector<double> row(d + 1);
  for (const Example& ex : set.examples) {
    for (std::size_t t = 0; t < d; ++t) row[t] = ex.x[t];
    row[d] = ex.y;
    csv.row(row);
  }
  csv.flush();
  nlohmann::json meta;
  meta["tag"] = set.tag;
  meta["provenance"] = set.provenance;
  save_json_file(dir / "dataset.json", meta);
}

}  // namespace lab
