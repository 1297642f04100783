#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace lab {

enum class LossKind { exponential, logistic };

const char* loss_name(LossKind k);
LossKind loss_from_name(std::string_view name);

struct LossValue {
  double value;
  bool saturated;  // exp(-z) overflowed and was clamped
};

LossValue loss_checked(LossKind k, double z);
double loss(LossKind k, double z);
double loss_deriv(LossKind k, double z);  // always negative

// ell^{-1}(z) for z > 0. Logistic branch uses -log(expm1(z)) with a series
// fallback below 1e-8 and an asymptotic branch for large z.
double loss_inverse(LossKind k, double z);

double empirical_risk(LossKind k, std::span<const double> predictions);

// Smoothed-margin bundle for one prediction vector p and the squared weight
// norm of the network that produced it.
//   smoothed            = ell^{-1}(sum_i ell(p_i))       (max-shifted)
//   gamma               = min_i p_i / ||W||^2
//   normalized_smoothed = smoothed / ||W||^2
//   q_i                 = |ell'(p_i)| / |ell'(smoothed)|, Q = |ell'(smoothed)|
// so that |ell'(p_i)| = q_i * Q for both losses.
struct MarginReport {
  double gamma = 0.0;
  double smoothed = 0.0;
  double normalized_smoothed = 0.0;
  double Q = 0.0;
  double risk = 0.0;
  double sum_q = 0.0;
  double weight_norm_sq = 0.0;
  std::size_t argmin = 0;  // smallest index attaining min_i p_i
  std::vector<double> q;
};

MarginReport margin_report(LossKind k, std::span<const double> predictions,
                           double weight_norm_sq);

}  // namespace lab
