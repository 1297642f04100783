#include "lab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lab/numeric.hpp"

namespace lab {
namespace {


double row_cosine(const double* u, const double* v, std::size_t d, bool& degenerate) {
  double uu = 0.0, vv = 0.0, uv = 0.0;
  for (std::size_t t = 0; t < d; ++t) {
    uu += u[t] * u[t];
    vv += v[t] * v[t];
    uv += u[t] * v[t];
  }
  if (uu <= 0.0 || vv <= 0.0) {
    degenerate = true;
    return 1.0;
  }
  return std::clamp(uv / std::sqrt(uu * vv), -1.0, 1.0);
}

std::vector<double> node_cosines(const Params& before, const Params& after,
                                 std::vector<bool>& degenerate) {
  if (before.m != after.m || before.d != after.d)
    throw std::invalid_argument("rotation_profile: shape mismatch");
  std::vector<double> cos(before.m);
  degenerate.assign(before.m, false);
  for (std::size_t j = 0; j < before.m; ++j) {
    bool dead = false;
    cos[j] = row_cosine(before.V.data() + j * before.d, after.V.data() + j * after.d,
                        before.d, dead);
    if (dead) degenerate[j] = true;
  }
  return cos;
}

std::vector<double> node_norms(const Params& w) {
  std::vector<double> out(w.m);
  for (std::size_t j = 0; j < w.m; ++j) {
    double vv = 0.0;
    const double* row = w.V.data() + j * w.d;
    for (std::size_t t = 0; t < w.d; ++t) vv += row[t] * row[t];
    out[j] = std::abs(w.a[j]) * std::sqrt(vv);
  }
  return out;
}

}  // namespace

RotationProfile rotation_profile(const Params& before, const Params& after) {
  RotationProfile rp;
  std::vector<bool> dead;
  rp.cosines = node_cosines(before, after, dead);
  for (bool b : dead) rp.degenerate += b ? 1 : 0;
  std::sort(rp.cosines.begin(), rp.cosines.end());
  return rp;
}

std::vector<double> norm_profile(const Params& w) {
  std::vector<double> norms = node_norms(w);
  const double mx = *std::max_element(norms.begin(), norms.end());
  if (!(mx > 0.0)) throw std::invalid_argument("norm_profile: all nodes are zero");
  for (double& v : norms) v /= mx;
  std::sort(norms.begin(), norms.end());
  return norms;
}

double test_error(const Params& w, const LabeledSet& heldout) {
  if (heldout.examples.empty()) throw std::invalid_argument("test_error: empty heldout set");
  std::size_t errors = 0;
  for (const Example& ex : heldout.examples)
    if (ex.y * forward(w, ex.x) <= 0.0) ++errors;
  return static_cast<double>(errors) / static_cast<double>(heldout.examples.size());
}

double test_error(const ScalarParams& w, const LabeledSet& heldout) {
  if (heldout.examples.empty()) throw std::invalid_argument("test_error: empty heldout set");
  std::size_t errors = 0;
  std::vector<double> node(w.m);
  for (const Example& ex : heldout.examples) {
    for (std::size_t j = 0; j < w.m; ++j) {
      const double* dir = w.directions.data() + j * w.d;
      double u = 0.0;
      for (std::size_t t = 0; t < w.d; ++t) u += dir[t] * ex.x[t];
      node[j] = w.a[j] * relu(w.b[j] * u);
    }
    if (ex.y * pairwise_sum(node) <= 0.0) ++errors;
  }
  return static_cast<double>(errors) / static_cast<double>(heldout.examples.size());
}

GradCheck gradient_check(const Params& w, const Example& ex, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("gradient_check: step must be positive");
  GradCheck out;
  for (std::size_t j = 0; j < w.m; ++j) {
    const double* row = w.V.data() + j * w.d;
    double z = 0.0;
    for (std::size_t t = 0; t < w.d; ++t) z += row[t] * ex.x[t];
    if (std::abs(z) <= 10.0 * step) {
      out.skipped = true;
      return out;
    }
  }
  const Params g = subgradient(w, ex);
  Params probe = w;
  auto central = [&](double& slot, double analytic) {
    const double saved = slot;
    slot = saved + step;
    const double hi = ex.y * forward(probe, ex.x);
    slot = saved - step;
    const double lo = ex.y * forward(probe, ex.x);
    slot = saved;
    const double fd = (hi - lo) / (2.0 * step);
    const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-10});
    out.max_rel_err = std::max(out.max_rel_err, std::abs(fd - analytic) / denom);
  };
  for (std::size_t j = 0; j < w.m; ++j) central(probe.a[j], g.a[j]);
  for (std::size_t t = 0; t < w.m * w.d; ++t) central(probe.V[t], g.V[t]);
  return out;
}

Fig1Stats figure1_stats(const Params& before, const Params& after) {
  Fig1Stats st;
  std::vector<bool> dead;
  const std::vector<double> cos = node_cosines(before, after, dead);
  const std::vector<double> norms = node_norms(after);
  const double mx = *std::max_element(norms.begin(), norms.end());
  if (!(mx > 0.0)) throw std::invalid_argument("figure1_stats: all nodes are zero");

  std::vector<double> live_cos, live_rot, live_norm;
  std::size_t small = 0;
  for (std::size_t j = 0; j < cos.size(); ++j) {
    const double rel = norms[j] / mx;
    if (rel < 0.1) ++small;
    if (dead[j]) {
      ++st.degenerate;
      continue;
    }
    live_cos.push_back(cos[j]);
    live_rot.push_back(1.0 - cos[j]);
    live_norm.push_back(rel);
  }
  st.frac_small_norm = static_cast<double>(small) / static_cast<double>(cos.size());
  if (!live_cos.empty()) {
    st.median_rotation = median(live_cos);
    st.rot_norm_spearman = live_cos.size() > 1 ? spearman(live_rot, live_norm) : 0.0;
  }
  return st;
}

}  // namespace lab
