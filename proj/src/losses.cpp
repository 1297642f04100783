#include "lab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "lab/numeric.hpp"

namespace lab {

namespace {

constexpr double kExpOverflow = 700.0;

// log(1 + e^x) without overflow for any x.
double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

const char* loss_name(LossKind k) {
  return k == LossKind::exponential ? "exp" : "logistic";
}

LossKind loss_from_name(std::string_view name) {
  if (name == "exp" || name == "exponential") return LossKind::exponential;
  if (name == "logistic" || name == "log") return LossKind::logistic;
  throw std::invalid_argument("unknown loss name: " + std::string(name));
}

LossValue loss_checked(LossKind k, double z) {
  if (k == LossKind::exponential) {
    if (z < -kExpOverflow) return {std::exp(kExpOverflow), true};
    return {std::exp(-z), false};
  }
  // log(1 + e^{-z}) is overflow-free.
  return {softplus(-z), false};
}

double loss(LossKind k, double z) { return loss_checked(k, z).value; }

double loss_deriv(LossKind k, double z) {
  if (k == LossKind::exponential) {
    if (z < -kExpOverflow) return -std::exp(kExpOverflow);
    return -std::exp(-z);
  }
  // -1/(1+e^z) = -exp(-softplus(z)), stable for all z.
  return -std::exp(-softplus(z));
}

double loss_inverse(LossKind k, double z) {
  if (!(z > 0.0)) throw std::invalid_argument("loss_inverse: need z > 0");
  if (k == LossKind::exponential) return -std::log(z);
  if (z < 1e-8) {
    // log(expm1(z)) = log z + z/2 + z^2/24 + O(z^4)
    return -(std::log(z) + 0.5 * z + z * z / 24.0);
  }
  if (z > 650.0) {
    // -log(e^z - 1) = -z - log(1 - e^{-z})
    return -z - std::log1p(-std::exp(-z));
  }
  return -std::log(std::expm1(z));
}

double empirical_risk(LossKind k, std::span<const double> predictions) {
  if (predictions.empty()) throw std::invalid_argument("empirical_risk: empty predictions");
  std::vector<double> terms(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) terms[i] = loss(k, predictions[i]);
  return pairwise_sum(terms) / static_cast<double>(predictions.size());
}

MarginReport margin_report(LossKind k, std::span<const double> predictions,
                           double weight_norm_sq) {
  const std::size_t n = predictions.size();
  if (n == 0) throw std::invalid_argument("margin_report: empty predictions");
  if (!(weight_norm_sq > 0.0))
    throw std::invalid_argument("margin_report: weight_norm_sq must be > 0");

  MarginReport r;
  double pmin = predictions[0];
  r.argmin = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (predictions[i] < pmin) {
      pmin = predictions[i];
      r.argmin = i;
    }
  }
  r.gamma = pmin / weight_norm_sq;
  r.q.resize(n);

  if (k == LossKind::exponential) {
    // Max-shifted log-sum-exp of -p: every exponent is <= 0.
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = std::exp(-(predictions[i] - pmin));
    const double s = pairwise_sum(t);  // in [1, n]
    const double log_q_total = -pmin + std::log(s);
    r.smoothed = -log_q_total;
    for (std::size_t i = 0; i < n; ++i) r.q[i] = t[i] / s;
    r.Q = std::exp(std::min(log_q_total, kExpOverflow));
    r.risk = r.Q / static_cast<double>(n);
  } else {
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = softplus(-predictions[i]);
    const double z = pairwise_sum(t);
    r.smoothed = loss_inverse(LossKind::logistic, z);
    r.risk = z / static_cast<double>(n);
    const double sp_smoothed = softplus(r.smoothed);
    r.Q = std::exp(-sp_smoothed);
    // q_i = (1 + e^smoothed)/(1 + e^{p_i}), evaluated in log space.
    for (std::size_t i = 0; i < n; ++i)
      r.q[i] = std::exp(sp_smoothed - softplus(predictions[i]));
  }
  r.sum_q = pairwise_sum(r.q);
  r.weight_norm_sq = weight_norm_sq;
  r.normalized_smoothed = r.smoothed / weight_norm_sq;
  return r;
}

}  // namespace lab
