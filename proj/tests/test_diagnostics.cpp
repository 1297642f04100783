#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "lab/diagnostics.hpp"
#include "lab/models.hpp"
#include "lab/rng.hpp"

using namespace lab;

namespace {

Params two_row_net(double angle) {
  // Row 0 rotates by `angle`, row 1 stays put.
  Params p;
  p.m = 2;
  p.d = 2;
  p.a = {1.0, 1.0};
  p.V = {std::cos(angle), std::sin(angle), 0.0, 1.0};
  return p;
}

}  // namespace

TEST_CASE("rotation profile reports sorted cosines") {
  const Params before = two_row_net(0.0);
  const Params after = two_row_net(std::numbers::pi / 6.0);  // 30 degrees on row 0
  const RotationProfile r = rotation_profile(before, after);
  REQUIRE(r.cosines.size() == 2);
  CHECK(r.cosines[0] == doctest::Approx(std::cos(std::numbers::pi / 6.0)).epsilon(1e-12));
  CHECK(r.cosines[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.degenerate == 0);

  Params dead = after;
  dead.V[0] = dead.V[1] = 0.0;
  const RotationProfile rd = rotation_profile(before, dead);
  CHECK(rd.degenerate == 1);
  CHECK(rd.cosines.back() == 1.0);  // degenerate rows count as unrotated

  Params mismatched = before;
  mismatched.m = 1;
  mismatched.a.resize(1);
  mismatched.V.resize(2);
  CHECK_THROWS(rotation_profile(before, mismatched));
}

TEST_CASE("norm profile sorts relative node norms and rejects dead nets") {
  Params p;
  p.m = 3;
  p.d = 2;
  p.a = {3.0, -1.0, 0.5};
  p.V = {1.0, 0.0, 0.0, 2.0, 4.0, 0.0};  // row norms 1, 2, 4
  // |a_j| * ||v_j|| = 3, 2, 2; relative to max: 1, 2/3, 2/3 sorted ascending.
  const std::vector<double> np = norm_profile(p);
  REQUIRE(np.size() == 3);
  CHECK(np[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(np[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(np[2] == doctest::Approx(1.0).epsilon(1e-12));

  Params dead = p;
  dead.a = {0.0, 0.0, 0.0};
  CHECK_THROWS(norm_profile(dead));
}

TEST_CASE("test error counts mistakes and ties") {
  Params p;
  p.m = 1;
  p.d = 2;
  p.a = {1.0};
  p.V = {1.0, 0.0};  // F(x) = relu(x0)
  LabeledSet s;
  s.tag = "hand";
  s.examples.push_back({{0.5, 0.0}, 1});    // F=0.5, correct
  s.examples.push_back({{0.5, 0.0}, -1});   // wrong
  s.examples.push_back({{-0.5, 0.0}, -1});  // F=0 tie: counted as error
  s.examples.push_back({{-0.5, 0.0}, 1});   // F=0 tie: counted as error
  CHECK(test_error(p, s) == doctest::Approx(0.75));

  ScalarParams sp;
  sp.m = 1;
  sp.d = 2;
  sp.a = {1.0};
  sp.b = {1.0};
  sp.directions = {1.0, 0.0};
  CHECK(test_error(sp, s) == doctest::Approx(0.75));
}

TEST_CASE("gradient check passes away from kinks and skips near them") {
  SeededStream st(51, "gc");
  const Params w = init_standard(6, 4, st);
  int checked = 0;
  for (int trial = 0; trial < 40 && checked < 10; ++trial) {
    Example ex;
    ex.x = unit_sphere_vector(st, 4);
    ex.y = trial % 2 == 0 ? 1 : -1;
    const GradCheck g = gradient_check(w, ex, 1e-6);
    if (g.skipped) continue;
    ++checked;
    CHECK(g.max_rel_err <= 1e-6);
  }
  CHECK(checked >= 10);

  // A point that lands exactly on a kink of node 0 must be skipped.
  Params flat;
  flat.m = 1;
  flat.d = 2;
  flat.a = {1.0};
  flat.V = {1.0, 0.0};
  Example kink{{0.0, 1.0}, 1};  // v . x = 0
  CHECK(gradient_check(flat, kink, 1e-6).skipped);
}

TEST_CASE("figure-one statistics on a constructed pair") {
  Params before;
  before.m = 4;
  before.d = 2;
  before.a = {1.0, 1.0, 1.0, 1.0};
  before.V = {1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0};
  Params after = before;
  const double th = std::numbers::pi / 3.0;  // nodes 2,3 rotate 60 degrees and dominate
  after.a = {0.05, 0.05, 1.0, 1.0};
  after.V = {1.0, 0.0, 1.0, 0.0, std::cos(th), std::sin(th), std::cos(th), std::sin(th)};
  const Fig1Stats st = figure1_stats(before, after);
  CHECK(st.median_rotation == doctest::Approx((1.0 + 0.5) / 2).epsilon(1e-12));
  CHECK(st.frac_small_norm == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(st.rot_norm_spearman > 0.9);
  CHECK(st.degenerate == 0);
}
