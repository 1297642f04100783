#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace lab {

// Pinned generator identity, echoed into run metadata. Any change to the
// mixing constants, the label hash, or the draw order below is a breaking
// change for recorded experiments and must bump this tag.
inline constexpr const char* kRngVersion = "splitmix64/fnv1a/box-muller v1";

// Deterministic stream keyed by (seed, label). The state is a splitmix64
// walk whose starting point mixes the seed with an FNV-1a hash of the label,
// so distinct labels give independent streams and consuming one stream never
// perturbs another. Values are identical across platforms and thread counts.
class SeededStream {
 public:
  SeededStream(std::uint64_t seed, std::string_view label);

  // Same seed, label extended with "/" + sublabel; independent of how much
  // of the parent has been consumed.
  SeededStream fork(std::string_view sublabel) const;

  std::uint64_t seed() const { return seed_; }
  const std::string& label() const { return label_; }

  std::uint64_t next_u64();
  double next_unit();                          // uniform in (0,1)
  double next_uniform(double lo, double hi);   // uniform in [lo,hi)
  double next_gaussian();                      // standard normal

 private:
  std::uint64_t seed_ = 0;
  std::string label_;
  std::uint64_t state_ = 0;
  double cached_gauss_ = 0.0;
  bool has_cached_gauss_ = false;
};

// i.i.d. N(0, std_dev^2) entries. Requires length >= 1 and std_dev > 0.
std::vector<double> gaussian_vector(SeededStream& stream, std::size_t length, double std_dev);

// Uniform on the unit sphere in R^d: N_d/sqrt(d) draw, then normalized.
std::vector<double> unit_sphere_vector(SeededStream& stream, std::size_t d);

// i.i.d. uniform signs in {-1,+1}.
std::vector<int> rademacher_signs(SeededStream& stream, std::size_t length);

}  // namespace lab
