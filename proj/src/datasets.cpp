#include "lab/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "lab/numeric.hpp"

namespace lab {

namespace {

constexpr double kNormSlack = 1e-12;

int sign_of(double v) { return v > 0.0 ? 1 : -1; }

}  // namespace

void verify_labeled_set(const LabeledSet& s) {
  const std::size_t d = s.dim();
  for (std::size_t i = 0; i < s.n(); ++i) {
    const auto& ex = s.examples[i];
    if (ex.x.size() != d)
      throw std::invalid_argument("labeled set: inconsistent dimension at example " +
                                  std::to_string(i));
    if (ex.y != 1 && ex.y != -1)
      throw std::invalid_argument("labeled set: label not in {-1,+1} at example " +
                                  std::to_string(i));
    if (norm2(ex.x) > 1.0 + kNormSlack)
      throw std::invalid_argument("labeled set: ||x|| > 1 at example " + std::to_string(i));
  }
}

int parity_label(std::span<const double> x, std::pair<std::size_t, std::size_t> coords) {
  return sign_of(x[coords.first]) * sign_of(x[coords.second]);
}

LabeledSet gen_parity(std::size_t d, std::size_t n, std::pair<std::size_t, std::size_t> coords,
                      SeededStream& stream, bool exhaustive) {
  if (d < 2) throw std::invalid_argument("gen_parity: d must be >= 2");
  if (coords.first >= d || coords.second >= d)
    throw std::invalid_argument("gen_parity: coordinate out of range");
  if (coords.first == coords.second)
    throw std::invalid_argument("gen_parity: coordinates must be distinct");
  const double c = 1.0 / std::sqrt(static_cast<double>(d));
  LabeledSet s;
  s.tag = "parity";
  s.provenance = {{"d", d},
                  {"n", n},
                  {"coords", {coords.first, coords.second}},
                  {"exhaustive", exhaustive},
                  {"seed", stream.seed()},
                  {"stream", stream.label()}};
  s.examples.reserve(n);
  if (exhaustive) {
    if (d > 26) throw std::invalid_argument("gen_parity: exhaustive limited to d <= 26");
    if (n != (std::size_t{1} << d))
      throw std::invalid_argument("gen_parity: exhaustive requires n == 2^d");
    for (std::size_t idx = 0; idx < n; ++idx) {
      Example ex;
      ex.x.resize(d);
      for (std::size_t t = 0; t < d; ++t) ex.x[t] = ((idx >> t) & 1) ? c : -c;
      ex.y = parity_label(ex.x, coords);
      s.examples.push_back(std::move(ex));
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      Example ex;
      ex.x.resize(d);
      for (std::size_t t = 0; t < d; ++t) ex.x[t] = (stream.next_u64() >> 63) ? c : -c;
      ex.y = parity_label(ex.x, coords);
      s.examples.push_back(std::move(ex));
    }
  }
  return s;
}

void validate_cone_spec(const ConeSpec& spec) {
  const std::size_t r = spec.betas.size();
  if (r == 0) throw std::invalid_argument("cone spec: need at least one direction");
  if (spec.alphas.size() != r)
    throw std::invalid_argument("cone spec: betas/alphas size mismatch");
  const std::size_t d = spec.betas[0].size();
  double a1 = 0.0;
  for (std::size_t k = 0; k < r; ++k) {
    if (spec.betas[k].size() != d)
      throw std::invalid_argument("cone spec: inconsistent beta dimensions");
    if (std::abs(norm2(spec.betas[k]) - 1.0) > 1e-9)
      throw std::invalid_argument("cone spec: beta_" + std::to_string(k) + " not unit norm");
    if (spec.alphas[k] == 0.0)
      throw std::invalid_argument("cone spec: alpha_" + std::to_string(k) + " must be nonzero");
    a1 += std::abs(spec.alphas[k]);
  }
  if (std::abs(a1 - 1.0) > 1e-9)
    throw std::invalid_argument("cone spec: sum |alpha_k| must be 1");
  if (!(spec.gamma_nc > 0.0 && spec.gamma_nc < 1.0))
    throw std::invalid_argument("cone spec: gamma_nc must be in (0,1)");
  if (!(spec.eps > 0.0 && spec.eps < 1.0))
    throw std::invalid_argument("cone spec: eps must be in (0,1)");
}

namespace {

// Solve the r x r system G w = rhs by Gaussian elimination with partial
// pivoting. Throws InfeasibleError on a (near-)singular Gram matrix.
std::vector<double> solve_small(std::vector<double> G, std::vector<double> rhs, std::size_t r) {
  for (std::size_t c = 0; c < r; ++c) {
    std::size_t piv = c;
    for (std::size_t i = c + 1; i < r; ++i)
      if (std::abs(G[i * r + c]) > std::abs(G[piv * r + c])) piv = i;
    if (std::abs(G[piv * r + c]) < 1e-12)
      throw InfeasibleError("cone directions are linearly dependent");
    if (piv != c) {
      for (std::size_t j = 0; j < r; ++j) std::swap(G[c * r + j], G[piv * r + j]);
      std::swap(rhs[c], rhs[piv]);
    }
    for (std::size_t i = c + 1; i < r; ++i) {
      const double f = G[i * r + c] / G[c * r + c];
      for (std::size_t j = c; j < r; ++j) G[i * r + j] -= f * G[c * r + j];
      rhs[i] -= f * rhs[c];
    }
  }
  std::vector<double> w(r);
  for (std::size_t ii = r; ii-- > 0;) {
    double acc = rhs[ii];
    for (std::size_t j = ii + 1; j < r; ++j) acc -= G[ii * r + j] * w[j];
    w[ii] = acc / G[ii * r + ii];
  }
  return w;
}

bool nc_clauses_hold(std::span<const double> x, int y, const ConeSpec& spec, double tol) {
  const std::size_t r = spec.betas.size();
  const double perp_bound = spec.gamma_nc * std::sqrt(spec.eps / 2.0);
  for (std::size_t k = 0; k < r; ++k) {
    const double inner = dot(spec.betas[k], x) * y;
    if (inner >= spec.gamma_nc - tol) {
      double perp_sq = 0.0;
      const double raw = dot(spec.betas[k], x);
      for (std::size_t t = 0; t < x.size(); ++t) {
        const double p = x[t] - raw * spec.betas[k][t];
        perp_sq += p * p;
      }
      if (std::sqrt(perp_sq) <= perp_bound + tol) continue;
    }
    if (inner <= -spec.eps + tol) continue;
    return false;
  }
  return true;
}

}  // namespace

LabeledSet gen_neural_collapse(const ConeSpec& spec, std::size_t n, SeededStream& stream) {
  validate_cone_spec(spec);
  const std::size_t r = spec.betas.size();
  const std::size_t d = spec.betas[0].size();

  const double perp_bound = spec.gamma_nc * std::sqrt(spec.eps / 2.0);
  const double c_max = std::sqrt(std::max(0.0, 1.0 - perp_bound * perp_bound));
  if (c_max <= spec.gamma_nc)
    throw InfeasibleError("neural collapse spec: cone clause incompatible with unit ball");
  double s_max = perp_bound;
  if (r > 1) s_max = perp_bound / std::sqrt(static_cast<double>(r - 1));
  if (r > 1 && s_max <= spec.eps)
    throw InfeasibleError("neural collapse spec: polar clause incompatible with cone width");

  std::vector<double> gram(r * r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < r; ++j) gram[i * r + j] = dot(spec.betas[i], spec.betas[j]);

  LabeledSet out;
  out.tag = "neural_collapse";
  out.provenance = {{"r", r},          {"d", d},
                    {"n", n},          {"gamma_nc", spec.gamma_nc},
                    {"eps", spec.eps}, {"seed", stream.seed()},
                    {"stream", stream.label()}};
  out.examples.reserve(n);

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % r;
    const int y = spec.alphas[k] > 0.0 ? 1 : -1;
    bool placed = false;
    for (std::size_t attempt = 0; attempt < 100000 && !placed; ++attempt) {
      const double c = stream.next_uniform(spec.gamma_nc * 1.0 + 1e-9, c_max);
      std::vector<double> rhs(r);
      rhs[k] = y * c;
      for (std::size_t l = 0; l < r; ++l) {
        if (l == k) continue;
        rhs[l] = -y * stream.next_uniform(spec.eps * 1.05, s_max * 0.999);
      }
      const auto w = solve_small(gram, rhs, r);
      Example ex;
      ex.x.assign(d, 0.0);
      for (std::size_t l = 0; l < r; ++l)
        for (std::size_t t = 0; t < d; ++t) ex.x[t] += w[l] * spec.betas[l][t];
      ex.y = y;
      if (norm2(ex.x) <= 1.0 && nc_clauses_hold(ex.x, y, spec, 0.0)) {
        out.examples.push_back(std::move(ex));
        placed = true;
      }
    }
    if (!placed)
      throw InfeasibleError("neural collapse: could not place example " + std::to_string(i));
  }
  return out;
}

void verify_neural_collapse(const LabeledSet& s, const ConeSpec& spec) {
  validate_cone_spec(spec);
  verify_labeled_set(s);
  const double tol = 1e-9;
  const double perp_bound = spec.gamma_nc * std::sqrt(spec.eps / 2.0);
  for (std::size_t i = 0; i < s.n(); ++i) {
    const auto& ex = s.examples[i];
    for (std::size_t k = 0; k < spec.betas.size(); ++k) {
      const double raw = dot(spec.betas[k], ex.x);
      const double inner = raw * ex.y;
      bool cone = false;
      if (inner >= spec.gamma_nc - tol) {
        double perp_sq = 0.0;
        for (std::size_t t = 0; t < ex.x.size(); ++t) {
          const double p = ex.x[t] - raw * spec.betas[k][t];
          perp_sq += p * p;
        }
        cone = std::sqrt(perp_sq) <= perp_bound + tol;
      }
      const bool polar = inner <= -spec.eps + tol;
      if (!cone && !polar)
        throw InfeasibleError("neural collapse clauses fail at example " + std::to_string(i) +
                              ", direction " + std::to_string(k));
    }
  }
}

LabeledSet gen_two_cones(std::size_t n1, std::size_t n2, double cone_halfwidth, std::size_t d,
                         SeededStream& stream) {
  if (d < 2) throw std::invalid_argument("gen_two_cones: d must be >= 2");
  if (!(cone_halfwidth >= 0.0 && cone_halfwidth < 0.35))
    throw std::invalid_argument("gen_two_cones: cone_halfwidth must be in [0, 0.35)");
  // Axis separation chosen so the worst cross-cone pair still satisfies
  // <x, x'> <= -1/sqrt(2): psi - 2*halfwidth >= 3*pi/4 with a small buffer.
  const double psi = 0.75 * std::numbers::pi + 2.0 * cone_halfwidth + 0.01;
  if (psi >= std::numbers::pi)
    throw std::invalid_argument("gen_two_cones: halfwidth too large for antipodal separation");

  std::vector<double> u1(d, 0.0), u2(d, 0.0);
  u1[0] = 1.0;
  u2[0] = std::cos(psi);
  u2[1] = std::sin(psi);

  auto sample_cap = [&](const std::vector<double>& axis) {
    const double phi = stream.next_uniform(0.0, cone_halfwidth + 1e-300);
    // Random unit direction orthogonal to the axis.
    std::vector<double> w(d);
    for (;;) {
      for (auto& c : w) c = stream.next_gaussian();
      double proj = dot(w, axis);
      for (std::size_t t = 0; t < d; ++t) w[t] -= proj * axis[t];
      const double nw = norm2(w);
      if (nw > 1e-12) {
        for (auto& c : w) c /= nw;
        break;
      }
    }
    Example ex;
    ex.x.resize(d);
    for (std::size_t t = 0; t < d; ++t) ex.x[t] = std::cos(phi) * axis[t] + std::sin(phi) * w[t];
    const double nx = norm2(ex.x);
    for (auto& c : ex.x) c /= nx;
    ex.y = 1;
    return ex;
  };

  LabeledSet out;
  out.tag = "two_cones";
  out.provenance = {{"n1", n1},   {"n2", n2},           {"halfwidth", cone_halfwidth},
                    {"d", d},     {"psi", psi},         {"seed", stream.seed()},
                    {"stream", stream.label()}};
  out.examples.reserve(n1 + n2);
  for (std::size_t i = 0; i < n1; ++i) out.examples.push_back(sample_cap(u1));
  for (std::size_t i = 0; i < n2; ++i) out.examples.push_back(sample_cap(u2));

  double worst = -2.0;
  for (std::size_t i = 0; i < n1; ++i)
    for (std::size_t j = 0; j < n2; ++j)
      worst = std::max(worst, dot(out.examples[i].x, out.examples[n1 + j].x));
  if (n1 > 0 && n2 > 0 && worst > -std::numbers::sqrt2 / 2.0 + 1e-12)
    throw InfeasibleError("two cones: cross-cone inner product above -1/sqrt(2)");
  out.provenance["max_cross_inner"] = worst;
  return out;
}

Example kkt_point(const LabeledSet& s, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("kkt_point: alpha must be in [0,1]");
  const auto mm = linear_max_margin(s);
  if (mm.degenerate)
    throw std::runtime_error("kkt_point: linear max margin is degenerate");
  std::size_t sv = 0;
  double best = dot(mm.u, s.examples[0].x);
  for (std::size_t i = 1; i < s.n(); ++i) {
    const double g = dot(mm.u, s.examples[i].x);
    if (g < best) {
      best = g;
      sv = i;
    }
  }
  std::vector<double> v1 = s.examples[sv].x;
  const double nv1 = norm2(v1);
  if (std::abs(nv1 - 1.0) > 1e-9)
    throw std::invalid_argument("kkt_point: support vector must have unit norm");
  for (auto& c : v1) c /= nv1;

  const double proj = dot(mm.u, v1);
  std::vector<double> v0(v1.size());
  for (std::size_t t = 0; t < v1.size(); ++t) v0[t] = mm.u[t] - proj * v1[t];
  const double nv0 = norm2(v0);
  if (nv0 < 1e-12)
    throw std::runtime_error("kkt_point: margin direction parallel to support vector");
  for (auto& c : v0) c /= nv0;

  Example z;
  z.x.resize(v1.size());
  const double s1 = std::sqrt(std::max(0.0, 1.0 - alpha * alpha));
  for (std::size_t t = 0; t < v1.size(); ++t) z.x[t] = alpha * v0[t] - s1 * v1[t];
  z.y = 1;
  return z;
}

MaxMarginResult linear_max_margin(const LabeledSet& s) {
  const std::size_t n = s.n();
  if (n == 0) throw std::invalid_argument("linear_max_margin: empty set");
  const std::size_t d = s.dim();
  for (const auto& ex : s.examples)
    if (ex.x.size() != d) throw std::invalid_argument("linear_max_margin: dimension mismatch");

  // Min-norm point of the convex hull of the label-folded points y_i x_i.
  std::vector<std::vector<double>> z(n);
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = s.examples[i].x;
    if (s.examples[i].y < 0)
      for (auto& v : z[i]) v = -v;
  }

  constexpr double kGapTol = 1e-10;
  constexpr std::size_t kMaxIters = 1000000;

  std::size_t i0 = 0;
  double bn = sum_sq(z[0]);
  for (std::size_t i = 1; i < n; ++i) {
    const double v = sum_sq(z[i]);
    if (v < bn) {
      bn = v;
      i0 = i;
    }
  }
  std::vector<double> lambda(n, 0.0);
  lambda[i0] = 1.0;
  std::vector<double> p = z[i0];

  auto rebuild = [&] {
    std::fill(p.begin(), p.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (lambda[i] == 0.0) continue;
      for (std::size_t t = 0; t < d; ++t) p[t] += lambda[i] * z[i][t];
    }
  };

  MaxMarginResult res;
  std::size_t it = 0;
  for (; it < kMaxIters; ++it) {
    double psq = sum_sq(p);
    std::size_t fw = 0, away = std::size_t(-1);
    double gmin = 0.0, gmax = 0.0;
    bool first = true, first_away = true;
    for (std::size_t i = 0; i < n; ++i) {
      const double g = dot(p, z[i]);
      if (first || g < gmin) {
        gmin = g;
        fw = i;
        first = false;
      }
      if (lambda[i] > 0.0 && (first_away || g > gmax)) {
        gmax = g;
        away = i;
        first_away = false;
      }
    }
    if (psq - gmin <= kGapTol) break;

    const auto& xs = z[fw];
    const auto& xa = z[away];
    double dsq = 0.0, pd = 0.0;
    for (std::size_t t = 0; t < d; ++t) {
      const double dv = xs[t] - xa[t];
      dsq += dv * dv;
      pd += p[t] * dv;
    }
    if (dsq <= 0.0) break;  // identical atoms; nothing to exchange
    double step = std::clamp(-pd / dsq, 0.0, lambda[away]);
    if (step == 0.0) break;
    lambda[away] -= step;
    lambda[fw] += step;
    for (std::size_t t = 0; t < d; ++t) p[t] += step * (xs[t] - xa[t]);
    if ((it + 1) % 1024 == 0) rebuild();
  }
  if (it >= kMaxIters)
    throw std::runtime_error("linear_max_margin: did not reach duality gap tolerance");

  res.iters = it;
  const double pn = norm2(p);
  if (pn < 1e-6) {
    res.degenerate = true;
    res.margin = 0.0;
    res.u.assign(d, 0.0);
    return res;
  }
  res.u.resize(d);
  for (std::size_t t = 0; t < d; ++t) res.u[t] = p[t] / pn;
  double margin = dot(res.u, z[0]);
  for (std::size_t i = 1; i < n; ++i) margin = std::min(margin, dot(res.u, z[i]));
  res.margin = margin;
  res.degenerate = margin <= 0.0;
  if (res.degenerate) res.margin = 0.0;
  return res;
}

LabeledSet gen_linear_separable(std::size_t d, std::size_t n, double margin,
                                SeededStream& stream) {
  if (d == 0) throw std::invalid_argument("gen_linear_separable: d must be >= 1");
  if (!(margin > 0.0 && margin < 1.0))
    throw std::invalid_argument("gen_linear_separable: margin must be in (0,1)");
  const auto u_bar = unit_sphere_vector(stream, d);
  LabeledSet out;
  out.tag = "linear_separable";
  out.provenance = {{"d", d},
                    {"n", n},
                    {"margin", margin},
                    {"u_bar", u_bar},
                    {"seed", stream.seed()},
                    {"stream", stream.label()}};
  out.examples.reserve(n);
  const double inv_d = 1.0 / static_cast<double>(d);
  for (std::size_t i = 0; i < n; ++i) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < 1000000 && !placed; ++attempt) {
      const int y = (stream.next_u64() >> 63) ? 1 : -1;
      auto x = unit_sphere_vector(stream, d);
      const double radius = std::pow(stream.next_unit(), inv_d);
      for (auto& c : x) c *= radius;
      if (y * dot(u_bar, x) >= margin) {
        out.examples.push_back({std::move(x), y});
        placed = true;
      }
    }
    if (!placed)
      throw InfeasibleError("gen_linear_separable: rejection cap exceeded at example " +
                            std::to_string(i));
  }
  return out;
}

}  // namespace lab
