#pragma once

#include <cstddef>
#include <vector>

#include "lab/datasets.hpp"
#include "lab/models.hpp"

namespace lab {

struct RotationProfile {
  std::vector<double> cosines;  // ascending; one entry per node
  std::size_t degenerate = 0;   // zero-norm rows, recorded as cosine 1
};

// Per-node cosine between v_j at two parameter states. A zero-norm row at
// either time has no measurable rotation: it is recorded as 1 and counted.
RotationProfile rotation_profile(const Params& before, const Params& after);

// Per-node ||a_j v_j|| / max_k ||a_k v_k||, ascending. Throws if every node
// is zero.
std::vector<double> norm_profile(const Params& w);

// Fraction of examples with y F(x) <= 0 (ties count as errors).
double test_error(const Params& w, const LabeledSet& heldout);
double test_error(const ScalarParams& w, const LabeledSet& heldout);

struct GradCheck {
  double max_rel_err = 0.0;
  bool skipped = false;  // some |v_j . x| within 10*step of a kink
};

// Central-difference check of the prediction subgradient, valid only away
// from ReLU kinks.
GradCheck gradient_check(const Params& w, const Example& ex, double step);

struct Fig1Stats {
  double median_rotation = 1.0;    // median cosine over non-degenerate nodes
  double frac_small_norm = 0.0;    // nodes with relative norm < 0.1
  double rot_norm_spearman = 0.0;  // (1 - cosine) vs relative norm, per node
  std::size_t degenerate = 0;
};

Fig1Stats figure1_stats(const Params& before, const Params& after);

}  // namespace lab
