#include "lab/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace lab {

namespace {

// splitmix64 finalizer (Steele, Lea, Flood 2014); full 64-bit avalanche.
std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z;
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

}  // namespace

SeededStream::SeededStream(std::uint64_t seed, std::string_view label)
    : seed_(seed), label_(label) {
  state_ = mix64(mix64(seed + kGolden) ^ fnv1a64(label_));
}

SeededStream SeededStream::fork(std::string_view sublabel) const {
  std::string child = label_;
  child += '/';
  child += sublabel;
  return SeededStream(seed_, child);
}

std::uint64_t SeededStream::next_u64() {
  state_ += kGolden;
  return mix64(state_);
}

double SeededStream::next_unit() {
  // 53 mantissa bits; offset keeps the value strictly inside (0,1).
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double SeededStream::next_uniform(double lo, double hi) {
  if (!(lo < hi)) throw std::invalid_argument("next_uniform: need lo < hi");
  return lo + (hi - lo) * (static_cast<double>(next_u64() >> 11) * 0x1.0p-53);
}

double SeededStream::next_gaussian() {
  if (has_cached_gauss_) {
    has_cached_gauss_ = false;
    return cached_gauss_;
  }
  const double u1 = next_unit();
  const double u2 = next_unit();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double t = 2.0 * std::numbers::pi * u2;
  cached_gauss_ = r * std::sin(t);
  has_cached_gauss_ = true;
  return r * std::cos(t);
}

std::vector<double> gaussian_vector(SeededStream& stream, std::size_t length, double std_dev) {
  if (length == 0) throw std::invalid_argument("gaussian_vector: length must be >= 1");
  if (!(std_dev > 0.0)) throw std::invalid_argument("gaussian_vector: std_dev must be > 0");
  std::vector<double> out(length);
  for (auto& v : out) v = std_dev * stream.next_gaussian();
  return out;
}

std::vector<double> unit_sphere_vector(SeededStream& stream, std::size_t d) {
  if (d == 0) throw std::invalid_argument("unit_sphere_vector: d must be >= 1");
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (;;) {
    std::vector<double> v(d);
    double nsq = 0.0;
    for (auto& c : v) {
      c = sd * stream.next_gaussian();
      nsq += c * c;
    }
    const double n = std::sqrt(nsq);
    if (n > 1e-150) {
      for (auto& c : v) c /= n;
      return v;
    }
  }
}

std::vector<int> rademacher_signs(SeededStream& stream, std::size_t length) {
  if (length == 0) throw std::invalid_argument("rademacher_signs: length must be >= 1");
  std::vector<int> out(length);
  for (auto& s : out) s = (stream.next_u64() >> 63) ? 1 : -1;
  return out;
}

}  // namespace lab
