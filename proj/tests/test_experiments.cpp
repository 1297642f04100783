#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lab/experiments.hpp"
#include "lab/io.hpp"

using namespace lab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path test_root() {
  const fs::path p = fs::path("test_runs");
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("doubles round-trip through their text form") {
  const std::vector<double> vals = {1.0 / 3.0, 1e-300, -0.0, 0.1 + 0.2,
                                    12345.678901234567, -2.2250738585072014e-308};
  for (double v : vals) {
    const double back = std::stod(format_double(v));
    CHECK(back == v);
  }
}

TEST_CASE("csv writes, reads back, and re-emits byte-identically") {
  const fs::path dir = test_root() / "csv";
  const fs::path p1 = dir / "a.csv";
  {
    CsvWriter w(p1, {"x", "y"});
    w.row({1.0 / 3.0, 1e-17});
    w.row({-0.0, 2.5});
    w.flush();
  }
  const CsvTable t = read_csv(p1);
  REQUIRE(t.header == std::vector<std::string>({"x", "y"}));
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][0] == 1.0 / 3.0);
  CHECK(t.rows[0][1] == 1e-17);
  const fs::path p2 = dir / "b.csv";
  {
    CsvWriter w(p2, t.header);
    for (const auto& r : t.rows) w.row(r);
    w.flush();
  }
  CHECK(slurp(p1) == slurp(p2));
  CHECK_THROWS(CsvWriter(dir / "c.csv", {"x"}).row({1.0, 2.0}));
}

TEST_CASE("config validation: unknown fields, kinds, and shapes are rejected") {
  const fs::path root = test_root() / "cfg";
  CHECK_THROWS_AS(run_experiment(json::array(), root), ConfigError);
  CHECK_THROWS_AS(run_experiment({{"kind", "nope"}}, root), ConfigError);
  CHECK_THROWS_AS(run_experiment({{"kind", "coverage_sweep"}, {"bogus", 1}}, root),
                  ConfigError);
  CHECK_THROWS_AS(
      run_experiment({{"kind", "coverage_sweep"}, {"trials", -3}}, root),
      ConfigError);
  CHECK_THROWS_AS(
      run_experiment({{"kind", "scalar_gf"}, {"seeds", json::array()}}, root),
      ConfigError);
  json j;  // missing kind
  CHECK_THROWS_AS(run_experiment(j, root), ConfigError);
}

TEST_CASE("coverage sweep runs, echoes its config, and is deterministic") {
  const json cfg = {{"kind", "coverage_sweep"}, {"trials", 5}, {"r", 2},
                    {"d", 2},                   {"eps", 1.2},  {"seed", 3},
                    {"out", "cov_a"}};
  const fs::path root = test_root() / "sweep";
  const RunResult r1 = run_experiment(cfg, root);
  CHECK(r1.run_dir == root / "cov_a");
  CHECK(fs::exists(r1.run_dir / "coverage.csv"));
  CHECK(fs::exists(r1.run_dir / "summary.json"));
  const json summary = load_json_file(r1.run_dir / "summary.json");
  CHECK(summary.at("config") == cfg);
  CHECK(summary.at("checks").size() == 1);
  CHECK(summary.at("all_pass").is_boolean());
  CHECK(summary.at("versions").contains("rng"));

  json cfg2 = cfg;
  cfg2["out"] = "cov_b";
  const RunResult r2 = run_experiment(cfg2, root);
  CHECK(slurp(r1.run_dir / "coverage.csv") == slurp(r2.run_dir / "coverage.csv"));
}

TEST_CASE("certification run writes a self-contained report") {
  const json cfg = {{"kind", "ntk_certify"}, {"dataset", "parity"},
                    {"d", 3},                {"samples", 2000},
                    {"out", "cert_tiny"}};
  const fs::path root = test_root() / "cert";
  const RunResult r = run_experiment(cfg, root);
  const fs::path rep_path = r.run_dir / "certify_seed1.json";
  REQUIRE(fs::exists(rep_path));
  const json rep = load_json_file(rep_path);
  for (const char* key :
       {"map", "dataset", "samples", "estimate", "half_width",
        "per_example_means", "argmin"})
    CHECK(rep.contains(key));
  CHECK(rep["samples"] == 2000);
  CHECK(rep["per_example_means"].size() == 8);
}

TEST_CASE("figure1 plot emission is derived and idempotent") {
  const json cfg = {{"kind", "figure1"}, {"d", 5},      {"n", 8},
                    {"widths", {4, 8}},  {"steps", 40}, {"seeds", {1}},
                    {"snapshot_every", 10}, {"out", "fig_tiny"}};
  const fs::path root = test_root() / "fig";
  const RunResult r = run_experiment(cfg, root);  // verdicts may fail at toy scale
  emit_plotdata(r.run_dir);
  const fs::path plots = r.run_dir / "plots";
  std::vector<std::string> names;
  for (const char* w : {"m4", "m8"})
    for (const char* panel : {"_rotation.csv", "_norms.csv", "_traj2d.csv"})
      names.push_back(std::string(w) + panel);
  std::vector<std::string> before;
  for (const auto& n : names) {
    REQUIRE(fs::exists(plots / n));
    before.push_back(slurp(plots / n));
  }
  emit_plotdata(r.run_dir);  // second emission must not change a byte
  for (std::size_t i = 0; i < names.size(); ++i)
    CHECK(slurp(plots / names[i]) == before[i]);

  const CsvTable rot = read_csv(plots / "m4_rotation.csv");
  REQUIRE(rot.rows.size() == 4);
  for (std::size_t i = 0; i + 1 < rot.rows.size(); ++i)
    CHECK(rot.rows[i][1] <= rot.rows[i + 1][1]);  // sorted ascending

  CHECK_THROWS(emit_plotdata(root / "missing_run"));
}

TEST_CASE("dataset files carry the generator tag") {
  const json summary_like = json{{"tag", "parity"}};
  (void)summary_like;
  const fs::path root = test_root() / "fig";
  const fs::path ds = root / "fig_tiny" / "seed1" / "dataset.json";
  REQUIRE(fs::exists(ds));
  const json meta = load_json_file(ds);
  CHECK(meta.at("tag") == "parity");
  CHECK(meta.contains("provenance"));
  const CsvTable t = read_csv(root / "fig_tiny" / "seed1" / "dataset.csv");
  REQUIRE(t.header.size() == 6);  // x0..x4, y
  CHECK(t.header.front() == "x0");
  CHECK(t.header.back() == "y");
  CHECK(t.rows.size() == 8);
}
