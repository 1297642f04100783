#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "lab/datasets.hpp"
#include "lab/models.hpp"
#include "lab/oracles.hpp"

namespace lab {

// Per-(k,j) alignment gap: sgn(alpha_k) a_j relu(v_j . beta_k)
// - (1-eps) ||a_j v_j||, row-major r x m (g[k*m + j]).
std::vector<double> nc_gap(const Params& w, const ReferenceNetwork& ref, double eps);

// Hard gate 1[g > 0], frozen by the caller at a reference time of their choice
// (typically the start of the trajectory under study).
using GateMask = std::vector<std::uint8_t>;
GateMask make_gate(const std::vector<double>& gaps);

struct PotentialValue {
  double value = 0.0;
  bool empty_gate = false;  // some k had no gated mass; value is -inf
};

// Phi = (1/4) sum_k |alpha_k| ln sum_{j gated for k} ||a_j v_j||.
PotentialValue nc_potential(const Params& w, const ReferenceNetwork& ref,
                            const GateMask& gate);

// Phi = (1/4) sum_k |alpha_k| ln(a_{i_k}^2 + b_{i_k}^2) over planted nodes.
PotentialValue gl_potential(const ScalarParams& p, const std::vector<std::size_t>& ref_indices,
                            const std::vector<double>& alphas);

struct PotentialSeries {
  std::vector<double> times;  // strictly increasing
  std::vector<double> phi;
  std::vector<double> Q;  // loss-scale at each time
  std::vector<double> q_sums;
};
void validate_series(const PotentialSeries& s);

struct PhiCheckReport {
  bool norm_ok = true;            // Phi_t <= (1/2) ln ||u_t|| everywhere
  std::size_t norm_fail = 0;      // first violating snapshot
  double worst_slack = 0.0;       // max over intervals of 1 - dPhi/(gamma_hat int Q ds)
  std::size_t worst_interval = 0;
  std::size_t intervals = 0;
};

// Checks the two hypotheses that force liminf gamma >= gamma_hat for a
// 2-homogeneous predictor: the norm cap on Phi, and per-interval growth
// dPhi >= gamma_hat * (trapezoidal int Q ds) * (1 - slack).
PhiCheckReport abstract_phi_check(const PotentialSeries& series,
                                  const std::vector<double>& norms, double gamma_hat);

struct NgammaCheck {
  double lhs = 0.0;  // <u, -n dR(u)> / (2 ||u||^2)
  double rhs = 0.0;  // Q [gamma_ring + ln n / ||u||^2]
  double residual = 0.0;
  // Same quantities divided by Q/||u||^2 > 0, safe from loss-scale overflow.
  double scaled_lhs = 0.0;  // sum_i q_i p_i
  double scaled_rhs = 0.0;  // smoothed margin + ln n
  double scaled_residual = 0.0;
  bool pass = false;
};

// Upper bound tying the norm-growth rate to the smoothed margin under the
// exponential loss; residual must be >= -1e-9 |rhs|.
NgammaCheck ngamma_upper_check(const Params& w, const LabeledSet& data);

}  // namespace lab
