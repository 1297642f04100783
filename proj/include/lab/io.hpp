#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lab/datasets.hpp"

namespace lab {

// Shortest round-trippable decimal (%.17g); reruns must be byte-identical.
std::string format_double(double v);

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& columns);
  void row(const std::vector<double>& values);
  void flush();
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::size_t ncols_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};
CsvTable read_csv(const std::filesystem::path& path);

nlohmann::json load_json_file(const std::filesystem::path& path);
void save_json_file(const std::filesystem::path& path, const nlohmann::json& j);

// dataset.csv (x0..x{d-1}, y) plus dataset.json carrying tag and provenance.
void write_dataset(const std::filesystem::path& dir, const LabeledSet& set);

}  // namespace lab
