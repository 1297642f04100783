#include "lab/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace lab {

namespace {

double sum_range(const double* x, std::size_t n) {
  if (n <= kPairwiseBase) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const std::size_t h = n / 2;
  return sum_range(x, h) + sum_range(x + h, n - h);
}

double dot_range(const double* a, const double* b, std::size_t n) {
  if (n <= kPairwiseBase) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
  }
  const std::size_t h = n / 2;
  return dot_range(a, b, h) + dot_range(a + h, b + h, n - h);
}

double sum_sq_range(const double* x, std::size_t n) {
  if (n <= kPairwiseBase) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * x[i];
    return s;
  }
  const std::size_t h = n / 2;
  return sum_sq_range(x, h) + sum_sq_range(x + h, n - h);
}

}  // namespace

double pairwise_sum(std::span<const double> x) { return sum_range(x.data(), x.size()); }

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
  return dot_range(a.data(), b.data(), a.size());
}

double sum_sq(std::span<const double> x) { return sum_sq_range(x.data(), x.size()); }

double norm2(std::span<const double> x) { return std::sqrt(sum_sq(x)); }

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty");
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + n / 2, v.end());
  double hi = v[n / 2];
  if (n % 2 == 1) return hi;
  std::nth_element(v.begin(), v.begin() + n / 2 - 1, v.end());
  return 0.5 * (v[n / 2 - 1] + hi);
}

namespace {

std::vector<double> ranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
  std::vector<double> r(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman: size mismatch");
  if (a.size() < 2) throw std::invalid_argument("spearman: need at least 2 points");
  const auto ra = ranks(a), rb = ranks(b);
  const std::size_t n = a.size();
  const double mean = 0.5 * (static_cast<double>(n) + 1.0);
  double num = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = ra[i] - mean, db = rb[i] - mean;
    num += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return num / std::sqrt(va * vb);
}

}  // namespace lab
