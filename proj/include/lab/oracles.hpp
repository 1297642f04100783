#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lab/datasets.hpp"
#include "lab/models.hpp"
#include "lab/rng.hpp"

namespace lab {

// Map w = (a, v) -> (theta_a, theta_v). Evaluation always applies the
// cutoff theta(w) = 0 for ||w|| >= 2, so raw maps can ignore it.
struct TransportMap {
  std::string name;
  std::function<void(double a, std::span<const double> v, double& theta_a,
                     std::vector<double>& theta_v)>
      raw;
};

void eval_transport(const TransportMap& map, double a, std::span<const double> v,
                    double& theta_a, std::vector<double>& theta_v);

struct ReferenceNetwork {
  std::vector<double> alphas;              // sum |alpha_k| = 1
  std::vector<std::vector<double>> betas;  // unit directions
};
void validate_reference(const ReferenceNetwork& ref);

TransportMap transport_linear_outer(std::vector<double> u_bar);
TransportMap transport_linear_inner(std::vector<double> u_bar);
TransportMap transport_parity(std::size_t d, std::pair<std::size_t, std::size_t> coords);
ReferenceNetwork parity_reference(std::size_t d, std::pair<std::size_t, std::size_t> coords);
// Requires every alpha_k > 0.
TransportMap transport_cones(const ReferenceNetwork& ref);

struct McMargin {
  double estimate = 0.0;    // min_i of the per-example means
  double half_width = 0.0;  // Hoeffding 95% half-width from the bound 4
  std::vector<double> per_example_means;
  std::size_t argmin = 0;
  std::size_t samples = 0;
  double delta = 0.05;
};

// Monte-Carlo estimate of min_i E_w <theta(w), dp_i(w)> under a ~ N(0,1),
// v ~ N(0, 1/d)^d. One shared draw set across examples (common random
// numbers), so the min is over correlated estimates.
McMargin ntk_margin_mc(const TransportMap& map, const LabeledSet& data, std::size_t samples,
                       SeededStream& stream, double delta = 0.05);

// min_i y_i sum_k alpha_k relu(beta_k . x_i)
double reference_margin(const ReferenceNetwork& ref, const LabeledSet& data);

struct ComparatorResult {
  Params theta_bar;  // theta(w_j)/sqrt(m) per node
  double min_inner = 0.0;
  std::size_t argmin = 0;
};

// Plug the transport map into a finite-width init: theta_bar_j =
// theta(w_j)/sqrt(m), and min over examples of sum_j <theta_bar_j,
// dp_i(w_j)>.
ComparatorResult finite_width_comparator(const Params& w0, const TransportMap& map,
                                         const LabeledSet& data);

// max_k min_j || v_j/||v_j|| - beta_k ||; throws on a zero row.
double direction_coverage(std::span<const double> V, std::size_t m, std::size_t d,
                          const std::vector<std::vector<double>>& betas);

}  // namespace lab
