#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace lab {

// Schema violation in an experiment config: exit code 2 at the CLI.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite state during integration: exit code 3 at the CLI. Carries the
// path of the diagnostic snapshot written before unwinding.
struct NumericalAbort : std::runtime_error {
  explicit NumericalAbort(const std::string& what, std::filesystem::path snapshot)
      : std::runtime_error(what), snapshot_path(std::move(snapshot)) {}
  std::filesystem::path snapshot_path;
};

struct RunResult {
  bool all_pass = false;
  std::filesystem::path run_dir;
  nlohmann::json summary;
};

// Validates the config (strict allowlist; unknown fields rejected), runs the
// named experiment under out_root/<name>, writes trajectory CSVs, dataset
// files, and summary.json with one verdict per named check.
RunResult run_experiment(const nlohmann::json& config,
                         const std::filesystem::path& out_root);

// Derives per-panel plot CSVs (sorted rotation profile, sorted norm profile,
// 2-D node trajectories) from a completed figure1 run directory.
void emit_plotdata(const std::filesystem::path& run_dir);

// Default output root: $LAB_OUTPUT_ROOT if set, else "runs".
std::filesystem::path default_output_root();

// `lab run <config.json>` / `lab plotdata <rundir>` / `lab certify <config.json>`.
// Exit codes: 0 checks pass, 1 a check failed, 2 config error, 3 numerical abort.
int cli_main(int argc, char** argv);

}  // namespace lab
