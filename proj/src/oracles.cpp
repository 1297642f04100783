#include "lab/oracles.hpp"

#include <cmath>
#include <stdexcept>

#include "lab/numeric.hpp"

namespace lab {

void eval_transport(const TransportMap& map, double a, std::span<const double> v,
                    double& theta_a, std::vector<double>& theta_v) {
  theta_v.assign(v.size(), 0.0);
  theta_a = 0.0;
  const double wsq = a * a + sum_sq(v);
  if (wsq >= 4.0) return;
  map.raw(a, v, theta_a, theta_v);
}

void validate_reference(const ReferenceNetwork& ref) {
  if (ref.alphas.empty() || ref.alphas.size() != ref.betas.size())
    throw std::invalid_argument("reference network: alphas/betas size mismatch");
  double a1 = 0.0;
  const std::size_t d = ref.betas[0].size();
  for (std::size_t k = 0; k < ref.alphas.size(); ++k) {
    a1 += std::abs(ref.alphas[k]);
    if (ref.betas[k].size() != d)
      throw std::invalid_argument("reference network: inconsistent beta dimensions");
    if (std::abs(norm2(ref.betas[k]) - 1.0) > 1e-9)
      throw std::invalid_argument("reference network: beta not unit norm");
  }
  if (std::abs(a1 - 1.0) > 1e-9)
    throw std::invalid_argument("reference network: sum |alpha_k| must be 1");
}

TransportMap transport_linear_outer(std::vector<double> u_bar) {
  if (std::abs(norm2(u_bar) - 1.0) > 1e-9)
    throw std::invalid_argument("transport_linear_outer: u_bar must be unit norm");
  TransportMap map;
  map.name = "linear_outer";
  map.raw = [u = std::move(u_bar)](double a, std::span<const double> v, double& ta,
                                   std::vector<double>& tv) {
    (void)v;
    ta = 0.0;
    const double s = a > 0.0 ? 1.0 : (a < 0.0 ? -1.0 : 0.0);
    for (std::size_t t = 0; t < u.size(); ++t) tv[t] = s * u[t];
  };
  return map;
}

TransportMap transport_linear_inner(std::vector<double> u_bar) {
  if (std::abs(norm2(u_bar) - 1.0) > 1e-9)
    throw std::invalid_argument("transport_linear_inner: u_bar must be unit norm");
  TransportMap map;
  map.name = "linear_inner";
  map.raw = [u = std::move(u_bar)](double a, std::span<const double> v, double& ta,
                                   std::vector<double>& tv) {
    (void)a;
    std::fill(tv.begin(), tv.end(), 0.0);
    const double g = dot(u, v);
    ta = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
  };
  return map;
}

namespace {

std::vector<std::vector<double>> parity_betas(std::size_t d,
                                              std::pair<std::size_t, std::size_t> coords) {
  if (d < 2) throw std::invalid_argument("parity directions: d must be >= 2");
  if (coords.first >= d || coords.second >= d || coords.first == coords.second)
    throw std::invalid_argument("parity directions: bad coordinate pair");
  const double c = 1.0 / std::sqrt(2.0);
  // Sign patterns (+,+), (+,-), (-,+), (-,-) on the two active coordinates.
  const double signs[4][2] = {{c, c}, {c, -c}, {-c, c}, {-c, -c}};
  std::vector<std::vector<double>> betas(4, std::vector<double>(d, 0.0));
  for (int j = 0; j < 4; ++j) {
    betas[j][coords.first] = signs[j][0];
    betas[j][coords.second] = signs[j][1];
  }
  return betas;
}

}  // namespace

TransportMap transport_parity(std::size_t d, std::pair<std::size_t, std::size_t> coords) {
  // Each hemisphere contribution carries the sign of its reference coefficient
  // (4 alpha_j = +1,-1,-1,+1); the unsigned sum would hand every corner the
  // same-sign expectation and break the negative-label corners.
  TransportMap map;
  map.name = "parity";
  map.raw = [betas = parity_betas(d, coords)](double a, std::span<const double> v, double& ta,
                                              std::vector<double>& tv) {
    static constexpr double kSigns[4] = {1.0, -1.0, -1.0, 1.0};
    ta = 0.0;
    std::fill(tv.begin(), tv.end(), 0.0);
    const double s = (a > 0.0 ? 0.5 : (a < 0.0 ? -0.5 : 0.0));
    for (std::size_t k = 0; k < betas.size(); ++k) {
      if (dot(betas[k], v) >= 0.0)
        for (std::size_t t = 0; t < tv.size(); ++t) tv[t] += s * kSigns[k] * betas[k][t];
    }
  };
  return map;
}

ReferenceNetwork parity_reference(std::size_t d, std::pair<std::size_t, std::size_t> coords) {
  ReferenceNetwork ref;
  ref.betas = parity_betas(d, coords);
  ref.alphas = {0.25, -0.25, -0.25, 0.25};
  return ref;
}

TransportMap transport_cones(const ReferenceNetwork& ref) {
  validate_reference(ref);
  for (double a : ref.alphas)
    if (!(a > 0.0))
      throw std::invalid_argument("transport_cones: requires every alpha_k > 0");
  TransportMap map;
  map.name = "cones";
  map.raw = [ref](double a, std::span<const double> v, double& ta, std::vector<double>& tv) {
    (void)a;
    std::fill(tv.begin(), tv.end(), 0.0);
    double s = 0.0;
    for (std::size_t k = 0; k < ref.alphas.size(); ++k)
      s += ref.alphas[k] * relu_sub(dot(ref.betas[k], v));
    ta = s;
  };
  return map;
}

McMargin ntk_margin_mc(const TransportMap& map, const LabeledSet& data, std::size_t samples,
                       SeededStream& stream, double delta) {
  if (samples < 1000) throw std::invalid_argument("ntk_margin_mc: need samples >= 1000");
  if (data.n() == 0) throw std::invalid_argument("ntk_margin_mc: empty data");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("ntk_margin_mc: bad delta");
  const std::size_t n = data.n();
  const std::size_t d = data.dim();

  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> sums(n, 0.0);
  std::vector<double> v(d), tv;
  double ta = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const double a = stream.next_gaussian();
    for (auto& c : v) c = sd * stream.next_gaussian();
    eval_transport(map, a, v, ta, tv);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& ex = data.examples[i];
      const double z = dot(v, ex.x);
      // <theta, dp_i(w)> = y * (theta_a relu(z) + a relu'(z) theta_v . x)
      const double inner =
          static_cast<double>(ex.y) * (ta * relu(z) + a * relu_sub(z) * dot(tv, ex.x));
      sums[i] += inner;
    }
  }

  McMargin out;
  out.samples = samples;
  out.delta = delta;
  out.per_example_means.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    out.per_example_means[i] = sums[i] / static_cast<double>(samples);
  out.argmin = 0;
  out.estimate = out.per_example_means[0];
  for (std::size_t i = 1; i < n; ++i) {
    if (out.per_example_means[i] < out.estimate) {
      out.estimate = out.per_example_means[i];
      out.argmin = i;
    }
  }
  // Single-draw inner products live in [-4, 4]: ||theta|| <= 1, ||dp|| <= 4
  // on the support of the cutoff. Range 8 in Hoeffding's bound.
  out.half_width = 8.0 * std::sqrt(std::log(2.0 / delta) / (2.0 * static_cast<double>(samples)));
  return out;
}

double reference_margin(const ReferenceNetwork& ref, const LabeledSet& data) {
  validate_reference(ref);
  if (data.n() == 0) throw std::invalid_argument("reference_margin: empty data");
  double worst = 0.0;
  bool first = true;
  for (const auto& ex : data.examples) {
    double f = 0.0;
    for (std::size_t k = 0; k < ref.alphas.size(); ++k)
      f += ref.alphas[k] * relu(dot(ref.betas[k], ex.x));
    const double margin = static_cast<double>(ex.y) * f;
    if (first || margin < worst) {
      worst = margin;
      first = false;
    }
  }
  return worst;
}

ComparatorResult finite_width_comparator(const Params& w0, const TransportMap& map,
                                         const LabeledSet& data) {
  if (data.n() == 0) throw std::invalid_argument("finite_width_comparator: empty data");
  if (data.dim() != w0.d)
    throw std::invalid_argument("finite_width_comparator: dimension mismatch");
  const std::size_t m = w0.m, d = w0.d, n = data.n();
  const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(m));

  ComparatorResult res;
  res.theta_bar = Params::zeros(m, d);
  std::vector<double> tv;
  double ta = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    eval_transport(map, w0.a[j], w0.row(j), ta, tv);
    res.theta_bar.a[j] = ta * inv_sqrt_m;
    auto row = res.theta_bar.row(j);
    for (std::size_t t = 0; t < d; ++t) row[t] = tv[t] * inv_sqrt_m;
  }

  std::vector<double> node_terms(m);
  bool first = true;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ex = data.examples[i];
    for (std::size_t j = 0; j < m; ++j) {
      const double z = dot(w0.row(j), ex.x);
      node_terms[j] = static_cast<double>(ex.y) *
                      (res.theta_bar.a[j] * relu(z) +
                       w0.a[j] * relu_sub(z) * dot(res.theta_bar.row(j), ex.x));
    }
    const double inner = pairwise_sum(node_terms);
    if (first || inner < res.min_inner) {
      res.min_inner = inner;
      res.argmin = i;
      first = false;
    }
  }
  return res;
}

double direction_coverage(std::span<const double> V, std::size_t m, std::size_t d,
                          const std::vector<std::vector<double>>& betas) {
  if (V.size() != m * d) throw std::invalid_argument("direction_coverage: bad V shape");
  if (m == 0 || betas.empty())
    throw std::invalid_argument("direction_coverage: need rows and targets");
  std::vector<double> unit(m * d);
  for (std::size_t j = 0; j < m; ++j) {
    const double nr = norm2(V.subspan(j * d, d));
    if (nr < 1e-300)
      throw std::invalid_argument("direction_coverage: zero-norm row " + std::to_string(j));
    for (std::size_t t = 0; t < d; ++t) unit[j * d + t] = V[j * d + t] / nr;
  }
  double worst = 0.0;
  for (const auto& beta : betas) {
    if (beta.size() != d) throw std::invalid_argument("direction_coverage: beta dim mismatch");
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      double dist_sq = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double dv = unit[j * d + t] - beta[t];
        dist_sq += dv * dv;
      }
      best = std::min(best, std::sqrt(dist_sq));
    }
    worst = std::max(worst, best);
  }
  return worst;
}

}  // namespace lab
