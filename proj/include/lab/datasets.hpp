#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lab/models.hpp"
#include "lab/rng.hpp"

namespace lab {

struct LabeledSet {
  std::vector<Example> examples;
  std::string tag;            // generator name
  nlohmann::json provenance;  // generator parameters incl. seed/label

  std::size_t n() const { return examples.size(); }
  std::size_t dim() const { return examples.empty() ? 0 : examples[0].x.size(); }
};

// ||x|| <= 1 + 1e-12, labels in {-1,+1}, consistent dimensions.
void verify_labeled_set(const LabeledSet& s);

struct InfeasibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Uniform hypercube corners {-1/sqrt(d),+1/sqrt(d)}^d with y = product of
// the signs of coordinates a and b (the scaled two-coordinate parity).
// exhaustive=true enumerates all 2^d corners in binary order and requires
// n == 2^d.
LabeledSet gen_parity(std::size_t d, std::size_t n, std::pair<std::size_t, std::size_t> coords,
                      SeededStream& stream, bool exhaustive = false);
int parity_label(std::span<const double> x, std::pair<std::size_t, std::size_t> coords);

struct ConeSpec {
  std::vector<std::vector<double>> betas;  // r unit directions
  std::vector<double> alphas;              // r signed weights, sum |alpha_k| = 1
  double gamma_nc = 0.0;                   // cone alignment level
  double eps = 0.0;                        // polar separation level
};
void validate_cone_spec(const ConeSpec& spec);

// Each example sits in one cone: beta_k . x * y >= gamma_nc with
// perpendicular part <= gamma_nc * sqrt(eps/2), and for every other l the
// polar clause beta_l . x * y <= -eps holds. Cluster choice is round-robin.
LabeledSet gen_neural_collapse(const ConeSpec& spec, std::size_t n, SeededStream& stream);
// Independent clause-by-clause verifier; throws InfeasibleError naming the
// first violated (example, direction) pair.
void verify_neural_collapse(const LabeledSet& s, const ConeSpec& spec);

// Two spherical caps of half-angle cone_halfwidth whose axes are separated
// so that every cross-cone inner product is <= -1/sqrt(2). All labels +1,
// all points unit norm.
LabeledSet gen_two_cones(std::size_t n1, std::size_t n2, double cone_halfwidth, std::size_t d,
                         SeededStream& stream);

// z_alpha = alpha v0 - sqrt(1-alpha^2) v1 where v1 is a support vector of
// the linear max-margin direction u over S and v0 is u's component
// orthogonal to v1, normalized. Labels +1.
Example kkt_point(const LabeledSet& s, double alpha);

struct MaxMarginResult {
  std::vector<double> u;  // unit direction (unspecified when degenerate)
  double margin = 0.0;    // min_i u . x_i
  bool degenerate = false;  // origin in the hull: no positive margin
  std::size_t iters = 0;
};

// Minimum-norm point of conv{x_i} via pairwise Frank-Wolfe; terminates when
// the duality gap ||p||^2 - min_i <p, x_i> drops below 1e-10.
MaxMarginResult linear_max_margin(const LabeledSet& s);

// Points uniform in the unit ball, labels uniform, thinned by rejection
// until y * (u_bar . x) >= margin; u_bar is a hidden unit direction drawn
// from the stream and recorded in the provenance.
LabeledSet gen_linear_separable(std::size_t d, std::size_t n, double margin,
                                SeededStream& stream);

}  // namespace lab
