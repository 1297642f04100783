#include "lab/potentials.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "lab/losses.hpp"
#include "lab/numeric.hpp"

namespace lab {
namespace {


double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double node_norm(const Params& w, std::size_t j) {
  const double* row = w.V.data() + j * w.d;
  double vv = 0.0;
  for (std::size_t t = 0; t < w.d; ++t) vv += row[t] * row[t];
  return std::abs(w.a[j]) * std::sqrt(vv);
}

}  // namespace

std::vector<double> nc_gap(const Params& w, const ReferenceNetwork& ref, double eps) {
  if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("nc_gap: eps must lie in (0,1)");
  validate_reference(ref);
  const std::size_t r = ref.alphas.size();
  std::vector<double> gaps(r * w.m);
  for (std::size_t j = 0; j < w.m; ++j) {
    const double nn = node_norm(w, j);
    const double* row = w.V.data() + j * w.d;
    for (std::size_t k = 0; k < r; ++k) {
      double inner = 0.0;
      for (std::size_t t = 0; t < w.d; ++t) inner += row[t] * ref.betas[k][t];
      gaps[k * w.m + j] = sgn(ref.alphas[k]) * w.a[j] * relu(inner) - (1.0 - eps) * nn;
    }
  }
  return gaps;
}

GateMask make_gate(const std::vector<double>& gaps) {
  GateMask gate(gaps.size());
  for (std::size_t i = 0; i < gaps.size(); ++i) gate[i] = gaps[i] > 0.0 ? 1 : 0;
  return gate;
}

PotentialValue nc_potential(const Params& w, const ReferenceNetwork& ref,
                            const GateMask& gate) {
  validate_reference(ref);
  const std::size_t r = ref.alphas.size();
  if (gate.size() != r * w.m) throw std::invalid_argument("nc_potential: gate shape mismatch");
  std::vector<double> norms(w.m);
  for (std::size_t j = 0; j < w.m; ++j) norms[j] = node_norm(w, j);

  PotentialValue out;
  double phi = 0.0;
  for (std::size_t k = 0; k < r; ++k) {
    double mass = 0.0;
    for (std::size_t j = 0; j < w.m; ++j)
      if (gate[k * w.m + j]) mass += norms[j];
    if (!(mass > 0.0)) {
      out.empty_gate = true;
      out.value = -std::numeric_limits<double>::infinity();
      return out;
    }
    phi += 0.25 * std::abs(ref.alphas[k]) * std::log(mass);
  }
  out.value = phi;
  return out;
}

PotentialValue gl_potential(const ScalarParams& p, const std::vector<std::size_t>& ref_indices,
                            const std::vector<double>& alphas) {
  if (ref_indices.size() != alphas.size())
    throw std::invalid_argument("gl_potential: index/alpha length mismatch");
  PotentialValue out;
  double phi = 0.0;
  for (std::size_t k = 0; k < ref_indices.size(); ++k) {
    const std::size_t j = ref_indices[k];
    if (j >= p.m) throw std::invalid_argument("gl_potential: index out of range");
    const double mass = p.a[j] * p.a[j] + p.b[j] * p.b[j];
    if (!(mass > 0.0)) {
      out.empty_gate = true;
      out.value = -std::numeric_limits<double>::infinity();
      return out;
    }
    phi += 0.25 * std::abs(alphas[k]) * std::log(mass);
  }
  out.value = phi;
  return out;
}

void validate_series(const PotentialSeries& s) {
  const std::size_t n = s.times.size();
  if (s.phi.size() != n || s.Q.size() != n || s.q_sums.size() != n)
    throw std::invalid_argument("potential series: column lengths differ");
  for (std::size_t i = 1; i < n; ++i)
    if (!(s.times[i] > s.times[i - 1]))
      throw std::invalid_argument("potential series: times must increase strictly");
}

PhiCheckReport abstract_phi_check(const PotentialSeries& series,
                                  const std::vector<double>& norms, double gamma_hat) {
  validate_series(series);
  if (norms.size() != series.times.size())
    throw std::invalid_argument("abstract_phi_check: norm series misaligned");
  if (!(gamma_hat > 0.0))
    throw std::invalid_argument("abstract_phi_check: gamma_hat must be positive");

  PhiCheckReport rep;
  const std::size_t n = series.times.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!(norms[i] > 0.0)) throw std::invalid_argument("abstract_phi_check: nonpositive norm");
    if (series.phi[i] > 0.5 * std::log(norms[i]) + 1e-9) {
      rep.norm_ok = false;
      rep.norm_fail = i;
      break;
    }
  }

  rep.intervals = n > 0 ? n - 1 : 0;
  double worst = -std::numeric_limits<double>::infinity();
  std::size_t worst_idx = 0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double dt = series.times[i + 1] - series.times[i];
    const double integral = 0.5 * (series.Q[i] + series.Q[i + 1]) * dt;
    const double dphi = series.phi[i + 1] - series.phi[i];
    double slack;
    if (integral > 0.0) {
      slack = 1.0 - dphi / (gamma_hat * integral);
    } else {
      slack = dphi >= -1e-12 ? -std::numeric_limits<double>::infinity()
                             : std::numeric_limits<double>::infinity();
    }
    if (slack > worst) {
      worst = slack;
      worst_idx = i;
    }
  }
  rep.worst_slack = rep.intervals == 0 ? 0.0 : worst;
  rep.worst_interval = worst_idx;
  return rep;
}

NgammaCheck ngamma_upper_check(const Params& w, const LabeledSet& data) {
  const double nsq = w.norm_sq();
  if (!(nsq > 0.0)) throw std::invalid_argument("ngamma_upper_check: zero parameter norm");
  const std::size_t n = data.examples.size();
  if (n == 0) throw std::invalid_argument("ngamma_upper_check: empty data");

  std::vector<double> preds(n);
  for (std::size_t i = 0; i < n; ++i)
    preds[i] = data.examples[i].y * forward(w, data.examples[i].x);
  const MarginReport mr = margin_report(LossKind::exponential, preds, nsq);

  std::vector<double> qp(n);
  for (std::size_t i = 0; i < n; ++i) qp[i] = mr.q[i] * preds[i];

  NgammaCheck out;
  out.scaled_lhs = pairwise_sum(qp);
  out.scaled_rhs = mr.smoothed + std::log(static_cast<double>(n));
  out.scaled_residual = out.scaled_rhs - out.scaled_lhs;
  const double factor = mr.Q / nsq;
  out.lhs = factor * out.scaled_lhs;
  out.rhs = factor * out.scaled_rhs;
  out.residual = factor * out.scaled_residual;
  out.pass = out.scaled_residual >= -1e-9 * std::abs(out.scaled_rhs);
  return out;
}

}  // namespace lab
