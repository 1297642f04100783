#include "lab/models.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "lab/numeric.hpp"

namespace lab {

double relu(double z) { return z > 0.0 ? z : 0.0; }
double relu_sub(double z) { return z > 0.0 ? 1.0 : 0.0; }

double Params::norm_sq() const {
  return sum_sq(a) + sum_sq(V);
}

Params Params::zeros(std::size_t m, std::size_t d) {
  Params p;
  p.m = m;
  p.d = d;
  p.a.assign(m, 0.0);
  p.V.assign(m * d, 0.0);
  return p;
}

Params init_standard(std::size_t m, std::size_t d, SeededStream& stream) {
  if (m == 0 || d == 0) throw std::invalid_argument("init_standard: m, d must be >= 1");
  Params p = Params::zeros(m, d);
  const double sa = 1.0 / std::sqrt(static_cast<double>(m));
  const double sv = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t j = 0; j < m; ++j) p.a[j] = sa * stream.next_gaussian();
  for (std::size_t i = 0; i < m * d; ++i) p.V[i] = sv * stream.next_gaussian();
  return p;
}

namespace {

void check_dim(const Params& p, std::size_t xd) {
  if (xd != p.d) throw std::invalid_argument("forward: x dimension mismatch");
  if (p.a.size() != p.m || p.V.size() != p.m * p.d)
    throw std::invalid_argument("forward: inconsistent Params buffers");
}

}  // namespace

double forward(const Params& p, std::span<const double> x) {
  check_dim(p, x.size());
  std::vector<double> t(p.m);
  for (std::size_t j = 0; j < p.m; ++j)
    t[j] = p.a[j] * relu(dot(p.row(j), x));
  return pairwise_sum(t);
}

double prediction(const Params& p, const Example& ex) {
  return static_cast<double>(ex.y) * forward(p, ex.x);
}

void subgradient_into(const Params& p, const Example& ex, Params& g) {
  check_dim(p, ex.x.size());
  if (g.m != p.m || g.d != p.d) g = Params::zeros(p.m, p.d);
  const double y = static_cast<double>(ex.y);
  for (std::size_t j = 0; j < p.m; ++j) {
    const double z = dot(p.row(j), ex.x);
    g.a[j] = y * relu(z);
    const double c = y * p.a[j] * relu_sub(z);
    auto gr = g.row(j);
    for (std::size_t k = 0; k < p.d; ++k) gr[k] = c * ex.x[k];
  }
}

Params subgradient(const Params& p, const Example& ex) {
  Params g = Params::zeros(p.m, p.d);
  subgradient_into(p, ex, g);
  return g;
}

Params rebalance(const Params& p, double g) {
  if (!(g > 0.0)) throw std::invalid_argument("rebalance: g must be > 0");
  Params q = p;
  const double s = std::sqrt(g);
  for (auto& v : q.a) v /= s;
  for (auto& v : q.V) v *= s;
  return q;
}

double ScalarParams::norm_sq() const { return sum_sq(a) + sum_sq(b); }

ScalarParams scalar_init(std::size_t m, std::size_t d, SeededStream& stream,
                         const PlantSpec* plant) {
  if (m == 0 || d == 0) throw std::invalid_argument("scalar_init: m, d must be >= 1");
  ScalarParams p;
  p.m = m;
  p.d = d;
  const double scale = 1.0 / std::pow(static_cast<double>(m), 0.25);
  const auto sa = rademacher_signs(stream, m);
  const auto sb = rademacher_signs(stream, m);
  p.a.resize(m);
  p.b.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    p.a[j] = scale * sa[j];
    p.b[j] = scale * sb[j];
  }
  p.directions.resize(m * d);
  for (std::size_t j = 0; j < m; ++j) {
    const auto v = unit_sphere_vector(stream, d);
    std::copy(v.begin(), v.end(), p.directions.begin() + j * d);
  }
  if (plant) {
    const std::size_t r = plant->betas.size();
    if (plant->alphas.size() != r)
      throw std::invalid_argument("scalar_init: plant betas/alphas size mismatch");
    if (r > m) throw std::invalid_argument("scalar_init: more planted nodes than width");
    for (std::size_t k = 0; k < r; ++k) {
      if (plant->betas[k].size() != d)
        throw std::invalid_argument("scalar_init: planted beta dimension mismatch");
      if (plant->alphas[k] == 0.0)
        throw std::invalid_argument("scalar_init: planted alpha must be nonzero");
      std::copy(plant->betas[k].begin(), plant->betas[k].end(), p.directions.begin() + k * d);
      p.a[k] = (plant->alphas[k] > 0.0 ? scale : -scale);
      p.b[k] = scale;
    }
  }
  return p;
}

double scalar_forward(const ScalarParams& p, std::span<const double> x) {
  if (x.size() != p.d) throw std::invalid_argument("scalar_forward: x dimension mismatch");
  std::vector<double> t(p.m);
  for (std::size_t j = 0; j < p.m; ++j)
    t[j] = p.a[j] * relu(p.b[j] * dot(p.dir(j), x));
  return pairwise_sum(t);
}

double scalar_prediction(const ScalarParams& p, const Example& ex) {
  return static_cast<double>(ex.y) * scalar_forward(p, ex.x);
}

ScalarGrad scalar_subgradient(const ScalarParams& p, const Example& ex) {
  if (ex.x.size() != p.d) throw std::invalid_argument("scalar_subgradient: dimension mismatch");
  ScalarGrad g;
  g.a.assign(p.m, 0.0);
  g.b.assign(p.m, 0.0);
  const double y = static_cast<double>(ex.y);
  for (std::size_t j = 0; j < p.m; ++j) {
    const double u = dot(p.dir(j), ex.x);
    const double z = p.b[j] * u;
    g.a[j] = y * relu(z);
    g.b[j] = y * p.a[j] * relu_sub(z) * u;
  }
  return g;
}

namespace {
constexpr std::uint64_t kParamsMagic = 0x4c41425052303031ULL;  // "LABPR001"

void put_u64(std::ofstream& f, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  f.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::ifstream& f) {
  unsigned char b[8];
  f.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_doubles(std::ofstream& f, const std::vector<double>& v) {
  for (double x : v) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, 8);
    put_u64(f, bits);
  }
}

void get_doubles(std::ifstream& f, std::vector<double>& v) {
  for (double& x : v) {
    const std::uint64_t bits = get_u64(f);
    std::memcpy(&x, &bits, 8);
  }
}
}  // namespace

void save_params(const Params& p, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("save_params: cannot open " + path);
  put_u64(f, kParamsMagic);
  put_u64(f, p.m);
  put_u64(f, p.d);
  put_doubles(f, p.a);
  put_doubles(f, p.V);
  if (!f) throw std::runtime_error("save_params: write failed for " + path);
}

Params load_params(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_params: cannot open " + path);
  if (get_u64(f) != kParamsMagic) throw std::runtime_error("load_params: bad magic in " + path);
  Params p;
  p.m = get_u64(f);
  p.d = get_u64(f);
  p.a.resize(p.m);
  p.V.resize(p.m * p.d);
  get_doubles(f, p.a);
  get_doubles(f, p.V);
  if (!f) throw std::runtime_error("load_params: truncated file " + path);
  return p;
}

}  // namespace lab
