#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lab/rng.hpp"

namespace lab {

struct Example {
  std::vector<double> x;
  int y = 1;  // -1 or +1
};

double relu(double z);
// One-sided selection at the kink: sigma'(0) := 0. Used everywhere a
// derivative of the ReLU is needed so gradients are reproducible.
double relu_sub(double z);

// Width-m two-layer ReLU network F(x) = sum_j a_j relu(v_j . x).
// V is row-major m x d; node j is (a[j], V[j*d .. j*d+d)).
struct Params {
  std::size_t m = 0, d = 0;
  std::vector<double> a;  // m
  std::vector<double> V;  // m*d

  std::span<const double> row(std::size_t j) const { return {V.data() + j * d, d}; }
  std::span<double> row(std::size_t j) { return {V.data() + j * d, d}; }
  double norm_sq() const;  // ||a||^2 + ||V||_F^2

  static Params zeros(std::size_t m, std::size_t d);
};

// a_j ~ N(0, 1/m), V entries ~ N(0, 1/d). Draw order (pinned): all of a,
// then V row-major.
Params init_standard(std::size_t m, std::size_t d, SeededStream& stream);

double forward(const Params& p, std::span<const double> x);
// y * F(x); the training-time margin of one example.
double prediction(const Params& p, const Example& ex);

// Subgradient of the prediction in parameter space, same shape as Params.
Params subgradient(const Params& p, const Example& ex);
void subgradient_into(const Params& p, const Example& ex, Params& g);

// (a, V) -> (a/sqrt(g), sqrt(g) V); preserves every prediction exactly.
Params rebalance(const Params& p, double g);

// Rotation-frozen variant: F(x) = sum_j a_j relu(b_j u_j . x) with the unit
// directions u_j fixed at init; only (a, b) train.
struct ScalarParams {
  std::size_t m = 0, d = 0;
  std::vector<double> a, b;        // m each
  std::vector<double> directions;  // m*d, unit rows, frozen

  std::span<const double> dir(std::size_t j) const { return {directions.data() + j * d, d}; }
  double norm_sq() const;  // ||a||^2 + ||b||^2 (the trainable block)
};

struct PlantSpec {
  std::vector<std::vector<double>> betas;  // unit directions to plant
  std::vector<double> alphas;              // only the signs are used
};

// a_j, b_j uniform on {-m^{-1/4}, +m^{-1/4}}, directions uniform on the
// sphere. Draw order (pinned): a signs, b signs, then directions row by row.
// Planting replaces node k < r with direction betas[k], sign(a_k) =
// sign(alphas[k]), b_k > 0; stream consumption is identical either way.
ScalarParams scalar_init(std::size_t m, std::size_t d, SeededStream& stream,
                         const PlantSpec* plant = nullptr);

double scalar_forward(const ScalarParams& p, std::span<const double> x);
double scalar_prediction(const ScalarParams& p, const Example& ex);

struct ScalarGrad {
  std::vector<double> a, b;
};
ScalarGrad scalar_subgradient(const ScalarParams& p, const Example& ex);

// Flat little-endian binary image: magic, m, d, a, then V. Round-trips
// bit-exactly.
void save_params(const Params& p, const std::string& path);
Params load_params(const std::string& path);

}  // namespace lab
