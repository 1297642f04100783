#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace lab {

inline constexpr const char* kVersion = "0.1.0";

// Accumulation switches from a plain loop to pairwise (tree) splitting above
// this many terms, keeping rounding drift ~O(log n) ulps at large widths.
inline constexpr std::size_t kPairwiseBase = 4096;

double pairwise_sum(std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);
double sum_sq(std::span<const double> x);
double norm2(std::span<const double> x);

double median(std::vector<double> v);

// Spearman rank correlation with average ranks on ties.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace lab
