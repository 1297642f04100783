#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "lab/datasets.hpp"
#include "lab/models.hpp"
#include "lab/potentials.hpp"
#include "lab/rng.hpp"

using namespace lab;

namespace {

Params gap_net() {
  // Hand case: a = (0.5, -0.3); v0 = (0.8, 0.6) unit, v1 = (0, 2) norm 2.
  Params p;
  p.m = 2;
  p.d = 2;
  p.a = {0.5, -0.3};
  p.V = {0.8, 0.6, 0.0, 2.0};
  return p;
}

}  // namespace

TEST_CASE("alignment gaps match the hand computation") {
  const Params p = gap_net();
  ReferenceNetwork ref;
  ref.alphas = {1.0};
  ref.betas = {{1.0, 0.0}};
  const double eps = 0.25;
  const auto gaps = nc_gap(p, ref, eps);
  REQUIRE(gaps.size() == 2);
  // g_{0,0} = 0.5*relu(0.8) - 0.75*0.5*1 = 0.025
  CHECK(gaps[0] == doctest::Approx(0.025).epsilon(1e-13));
  // g_{0,1} = (-0.3)*relu(0) - 0.75*0.3*2 = -0.45
  CHECK(gaps[1] == doctest::Approx(-0.45).epsilon(1e-13));

  const GateMask gate = make_gate(gaps);
  CHECK(gate == GateMask({1, 0}));

  // Negative reference weight flips the sign in front of the activation.
  ReferenceNetwork neg = ref;
  neg.alphas = {-1.0};
  const auto gneg = nc_gap(p, neg, eps);
  CHECK(gneg[0] == doctest::Approx(-0.5 * 0.8 - 0.375).epsilon(1e-13));

  CHECK_THROWS(nc_gap(p, ref, 0.0));
  CHECK_THROWS(nc_gap(p, ref, 1.0));
}

TEST_CASE("cluster potential sums gated node norms") {
  const Params p = gap_net();
  ReferenceNetwork ref;
  ref.alphas = {1.0};
  ref.betas = {{1.0, 0.0}};
  const PotentialValue v = nc_potential(p, ref, GateMask({1, 0}));
  CHECK(!v.empty_gate);
  // Phi = (1/4)*1*ln(|a_0| * ||v_0||) = ln(0.5)/4
  CHECK(v.value == doctest::Approx(0.25 * std::log(0.5)).epsilon(1e-13));
  const PotentialValue both = nc_potential(p, ref, GateMask({1, 1}));
  CHECK(both.value == doctest::Approx(0.25 * std::log(0.5 + 0.6)).epsilon(1e-13));
  const PotentialValue none = nc_potential(p, ref, GateMask({0, 0}));
  CHECK(none.empty_gate);
  CHECK(none.value == -std::numeric_limits<double>::infinity());
}

TEST_CASE("planted-node potential matches the hand computation") {
  ScalarParams p;
  p.m = 3;
  p.d = 2;
  p.a = {0.3, -0.2, 9.0};
  p.b = {0.4, 0.1, 9.0};
  p.directions = {1.0, 0.0, 0.0, 1.0, 1.0, 0.0};
  const std::vector<std::size_t> planted = {0, 1};
  const std::vector<double> alphas = {0.5, -0.5};
  const PotentialValue v = gl_potential(p, planted, alphas);
  const double want =
      0.25 * (0.5 * std::log(0.09 + 0.16) + 0.5 * std::log(0.04 + 0.01));
  CHECK(v.value == doctest::Approx(want).epsilon(1e-13));
  CHECK(!v.empty_gate);
}

TEST_CASE("series validation demands strictly increasing times") {
  PotentialSeries s;
  s.times = {0.0, 1.0, 2.0};
  s.phi = {0.0, 0.1, 0.2};
  s.Q = {1.0, 1.0, 1.0};
  s.q_sums = {1.0, 1.0, 1.0};
  validate_series(s);
  PotentialSeries bad = s;
  bad.times = {0.0, 1.0, 1.0};
  CHECK_THROWS(validate_series(bad));
  PotentialSeries ragged = s;
  ragged.phi.pop_back();
  CHECK_THROWS(validate_series(ragged));
}

TEST_CASE("potential growth check accepts the exact-rate series") {
  const double rate = 0.1;
  PotentialSeries s;
  s.times = {0.0, 1.0, 2.0};
  s.phi = {0.0, rate, 2 * rate};
  s.Q = {1.0, 1.0, 1.0};
  s.q_sums = {1.0, 1.0, 1.0};
  // norms = exp(2 phi) makes condition (i) an equality.
  const std::vector<double> norms = {1.0, std::exp(2 * rate), std::exp(4 * rate)};
  const PhiCheckReport rep = abstract_phi_check(s, norms, rate);
  CHECK(rep.norm_ok);
  CHECK(rep.worst_slack <= 1e-9);
  CHECK(rep.intervals == 2);
}

TEST_CASE("potential growth check localizes a rate deficit") {
  const double rate = 0.1;
  PotentialSeries s;
  s.times = {0.0, 1.0, 2.0};
  s.phi = {0.0, rate, rate + 0.08};  // second interval grows at 80% rate
  s.Q = {1.0, 1.0, 1.0};
  s.q_sums = {1.0, 1.0, 1.0};
  const std::vector<double> norms = {1.0, std::exp(2 * rate),
                                     std::exp(2 * (rate + 0.08))};
  const PhiCheckReport rep = abstract_phi_check(s, norms, rate);
  CHECK(rep.norm_ok);
  CHECK(rep.worst_slack == doctest::Approx(0.2).epsilon(1e-9));
  CHECK(rep.worst_interval == 1);
}

TEST_CASE("potential growth check flags a norm violation") {
  const double rate = 0.1;
  PotentialSeries s;
  s.times = {0.0, 1.0};
  s.phi = {0.5, 0.5 + rate};  // phi exceeds (1/2) ln norm at the start
  s.Q = {1.0, 1.0};
  s.q_sums = {1.0, 1.0};
  const std::vector<double> norms = {1.0, std::exp(2 * (0.5 + rate))};
  const PhiCheckReport rep = abstract_phi_check(s, norms, rate);
  CHECK(!rep.norm_ok);
  CHECK(rep.norm_fail == 0);
}

TEST_CASE("smoothed-margin inner-product bound: equality at uniform predictions") {
  // One node, identical examples: all predictions coincide, so the dual mass
  // is uniform and the bound is tight.
  Params p;
  p.m = 1;
  p.d = 2;
  p.a = {1.0};
  p.V = {1.0, 0.0};
  LabeledSet s;
  s.tag = "hand";
  for (int i = 0; i < 3; ++i) s.examples.push_back({{0.6, 0.0}, 1});
  const NgammaCheck c = ngamma_upper_check(p, s);
  CHECK(c.pass);
  CHECK(std::abs(c.scaled_residual) <= 1e-12);
  CHECK(c.scaled_lhs == doctest::Approx(0.6).epsilon(1e-13));
  CHECK(c.scaled_rhs == doctest::Approx(0.6).epsilon(1e-13));
}

TEST_CASE("smoothed-margin inner-product bound holds strictly off-uniform") {
  SeededStream st(41, "ng/init");
  const Params w = init_standard(10, 4, st);
  SeededStream dst(42, "ng/data");
  const LabeledSet data = gen_parity(4, 16, {0, 1}, dst, true);
  const NgammaCheck c = ngamma_upper_check(w, data);
  CHECK(c.pass);
  CHECK(c.scaled_residual >= 0.0);
  // Strict off-uniform: the dual entropy is < ln n, so the bound has slack.
  CHECK(c.scaled_rhs > c.scaled_lhs);
  // Both sides carry the same scale factor down to the raw form.
  CHECK(c.lhs / c.scaled_lhs ==
        doctest::Approx(c.rhs / c.scaled_rhs).epsilon(1e-9));
}
