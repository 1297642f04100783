#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "lab/datasets.hpp"
#include "lab/losses.hpp"
#include "lab/models.hpp"
#include "lab/rng.hpp"

namespace lab {

enum class StepMode { fixed, loss_normalized };

struct SnapshotSchedule {
  bool geometric = true;     // snapshot when virtual time crosses a geometric grid
  double per_decade = 64.0;  // grid density per decade
  std::size_t every = 0;     // linear mode (geometric=false): every k steps
};

struct GfConfig {
  StepMode mode = StepMode::loss_normalized;
  // Fixed step size, or the base step h0 when loss_normalized: each step
  // uses h_s = h0 * n / max(sum_i |l'_i|, floor), a pure time
  // reparameterization of the same flow.
  double h = 1e-2;
  double floor = 1e-12;
  std::size_t max_steps = 100000;
  LossKind loss = LossKind::exponential;
  SnapshotSchedule schedule;
  double stop_virtual_time = std::numeric_limits<double>::infinity();
  bool store_params = false;         // keep a state copy per snapshot
  const LabeledSet* heldout = nullptr;  // per-snapshot test error when set
};

struct DiagRecord {
  double movement = 0.0;     // ||W_t - W_0||
  double norm_sq = 0.0;
  double path_length = 0.0;  // trapezoidal int ||grad|| ds so far
  double perceptron = 0.0;   // GF: trapezoidal int (1/n) sum|l'| ds; SGD: sum_s |l'_s|
  double test_error = -1.0;  // -1 when no heldout set
  double balance_residual = 0.0;  // scalar runs: max_j |a_j^2 - b_j^2 - init gap|
  double step_size = 0.0;
};

template <class StateT>
struct TrajSnapshot {
  std::size_t step = 0;
  double time = 0.0;
  MarginReport margins;
  DiagRecord diag;
  std::optional<StateT> state;
};

template <class StateT>
struct Trajectory {
  std::vector<TrajSnapshot<StateT>> snapshots;
  StateT final_state;
  double final_time = 0.0;
  std::size_t steps = 0;
  double perceptron_accum = 0.0;
  double path_length = 0.0;
  double max_movement = 0.0;  // SGD: tracked every step; GF: at snapshots
  bool aborted = false;  // non-finite value during integration
  std::size_t abort_step = 0;
  bool step_collapsed = false;       // h_s fell below 1e-300
  std::vector<double> step_abs_lp;   // SGD per-step |l'_s| (when kept)
};

using DenseTrajectory = Trajectory<Params>;
using ScalarTrajectory = Trajectory<ScalarParams>;

using DenseObserver =
    std::function<void(const Params&, double time, std::size_t step, const MarginReport&)>;
using ScalarObserver =
    std::function<void(const ScalarParams&, double time, std::size_t step, const MarginReport&)>;
// Return true to stop; consulted every step with fresh margins.
using StopPredicate =
    std::function<bool(const MarginReport&, double norm_sq, double time, std::size_t step)>;

// Forward-Euler integration of W' = -grad empirical_risk. Snapshots carry
// margins against the training set; observers fire at snapshot times.
DenseTrajectory run_gf(const Params& init, const LabeledSet& data, const GfConfig& cfg,
                       DenseObserver observer = {}, StopPredicate stop = {});
ScalarTrajectory run_gf_scalar(const ScalarParams& init, const LabeledSet& data,
                               const GfConfig& cfg, ScalarObserver observer = {},
                               StopPredicate stop = {});

struct SgdConfig {
  double eta = 0.1;
  std::size_t steps = 1000;
  LossKind loss = LossKind::logistic;
  SeededStream stream{0, "sgd"};    // consumed by the sampler, one example per step
  std::size_t snapshot_every = 0;   // 0: ~128 evenly spaced (plus steps 0, 1, final)
  const LabeledSet* eval = nullptr;  // margins + test error per snapshot
  bool keep_step_lp = true;
};
using Sampler = std::function<Example(SeededStream&)>;

// One fresh example per step: W <- W - eta * l'(p) * dp.
DenseTrajectory run_sgd(const Params& init, const Sampler& sampler, const SgdConfig& cfg);

struct EtaRange {
  double lo = 0.0;  // gamma/(10 sqrt(m))
  double hi = 0.0;  // gamma^2/6400
};
EtaRange theorem_eta_range(double gamma_hat, std::size_t m);

// Halve h until empirical risk decreases for probe_steps consecutive fixed
// steps from init.
double probe_stable_step(const Params& init, const LabeledSet& data, LossKind loss,
                         double h_start = 1.0, std::size_t probe_steps = 100);

double perceptron_sum(const DenseTrajectory& t);
double perceptron_sum(const ScalarTrajectory& t);

}  // namespace lab
