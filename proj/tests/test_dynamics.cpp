#include <doctest.h>

#include <cmath>
#include <vector>

#include "lab/datasets.hpp"
#include "lab/dynamics.hpp"
#include "lab/losses.hpp"
#include "lab/models.hpp"
#include "lab/numeric.hpp"
#include "lab/rng.hpp"

using namespace lab;

namespace {

LabeledSet random_set(std::size_t n, std::size_t d, std::uint64_t seed) {
  SeededStream st(seed, "dyn/data");
  LabeledSet s;
  s.tag = "hand";
  for (std::size_t i = 0; i < n; ++i) {
    Example ex;
    ex.x = unit_sphere_vector(st, d);
    ex.y = st.next_unit() < 0.5 ? -1 : 1;
    s.examples.push_back(std::move(ex));
  }
  return s;
}

// Independent full-batch gradient of (1/n) sum_i loss(p_i), assembled from
// the per-example subgradients the models module exposes.
Params batch_grad(const Params& w, const LabeledSet& data, LossKind k) {
  Params g = Params::zeros(w.m, w.d);
  const double n = static_cast<double>(data.n());
  for (const auto& ex : data.examples) {
    const double lp = loss_deriv(k, prediction(w, ex));
    const Params sg = subgradient(w, ex);
    for (std::size_t j = 0; j < w.m; ++j) g.a[j] += lp * sg.a[j] / n;
    for (std::size_t i = 0; i < w.V.size(); ++i) g.V[i] += lp * sg.V[i] / n;
  }
  return g;
}

double abs_lp_sum(const Params& w, const LabeledSet& data, LossKind k) {
  double s = 0;
  for (const auto& ex : data.examples)
    s += std::abs(loss_deriv(k, prediction(w, ex)));
  return s;
}

}  // namespace

TEST_CASE("one fixed Euler step equals the assembled batch gradient") {
  SeededStream st(1, "dyn/init");
  const Params w0 = init_standard(4, 3, st);
  const LabeledSet data = random_set(5, 3, 2);
  GfConfig cfg;
  cfg.mode = StepMode::fixed;
  cfg.h = 0.01;
  cfg.max_steps = 1;
  cfg.loss = LossKind::exponential;
  cfg.schedule.geometric = false;
  cfg.schedule.every = 1;
  const DenseTrajectory tr = run_gf(w0, data, cfg);
  REQUIRE(!tr.aborted);
  const Params g = batch_grad(w0, data, cfg.loss);
  for (std::size_t j = 0; j < w0.m; ++j)
    CHECK(tr.final_state.a[j] ==
          doctest::Approx(w0.a[j] - 0.01 * g.a[j]).epsilon(1e-13));
  for (std::size_t i = 0; i < w0.V.size(); ++i)
    CHECK(tr.final_state.V[i] ==
          doctest::Approx(w0.V[i] - 0.01 * g.V[i]).epsilon(1e-13));
}

TEST_CASE("loss-normalized step sizes follow the derivative mass") {
  SeededStream st(3, "dyn/init2");
  const Params w0 = init_standard(6, 4, st);
  const LabeledSet data = random_set(7, 4, 4);
  GfConfig cfg;
  cfg.mode = StepMode::loss_normalized;
  cfg.h = 0.05;
  cfg.max_steps = 3;
  cfg.loss = LossKind::logistic;
  cfg.schedule.geometric = false;
  cfg.schedule.every = 1;
  const DenseTrajectory tr = run_gf(w0, data, cfg);
  REQUIRE(tr.snapshots.size() == 4);  // steps 0..3
  const double n = static_cast<double>(data.n());
  const double want_h1 = 0.05 * n / std::max(abs_lp_sum(w0, data, cfg.loss), cfg.floor);
  CHECK(tr.snapshots[1].diag.step_size == doctest::Approx(want_h1).epsilon(1e-13));
  CHECK(tr.snapshots[1].time == doctest::Approx(want_h1).epsilon(1e-13));
  double t = 0;
  for (std::size_t k = 1; k < tr.snapshots.size(); ++k) {
    t += tr.snapshots[k].diag.step_size;
    CHECK(tr.snapshots[k].time == doctest::Approx(t).epsilon(1e-12));
  }
  CHECK(tr.final_time == doctest::Approx(t).epsilon(1e-12));
}

TEST_CASE("trapezoid accumulators match hand integration over two steps") {
  SeededStream st(5, "dyn/init3");
  const Params w0 = init_standard(5, 3, st);
  const LabeledSet data = random_set(6, 3, 6);
  const double h = 0.02;
  GfConfig cfg;
  cfg.mode = StepMode::fixed;
  cfg.h = h;
  cfg.max_steps = 2;
  cfg.loss = LossKind::exponential;
  cfg.schedule.geometric = false;
  cfg.schedule.every = 1;
  const DenseTrajectory tr = run_gf(w0, data, cfg);
  REQUIRE(tr.snapshots.size() == 3);

  // Replay the two Euler steps by hand.
  const double n = static_cast<double>(data.n());
  Params w1 = w0, w2;
  const Params g0 = batch_grad(w0, data, cfg.loss);
  for (std::size_t j = 0; j < w0.m; ++j) w1.a[j] -= h * g0.a[j];
  for (std::size_t i = 0; i < w0.V.size(); ++i) w1.V[i] -= h * g0.V[i];
  w2 = w1;
  const Params g1 = batch_grad(w1, data, cfg.loss);
  for (std::size_t j = 0; j < w0.m; ++j) w2.a[j] -= h * g1.a[j];
  for (std::size_t i = 0; i < w0.V.size(); ++i) w2.V[i] -= h * g1.V[i];
  const Params g2 = batch_grad(w2, data, cfg.loss);

  auto gnorm = [](const Params& g) {
    double s = 0;
    for (double v : g.a) s += v * v;
    for (double v : g.V) s += v * v;
    return std::sqrt(s);
  };
  const double r0 = abs_lp_sum(w0, data, cfg.loss) / n;
  const double r1 = abs_lp_sum(w1, data, cfg.loss) / n;
  const double r2 = abs_lp_sum(w2, data, cfg.loss) / n;
  const double want_perc = h * ((r0 + r1) / 2 + (r1 + r2) / 2);
  const double want_path =
      h * ((gnorm(g0) + gnorm(g1)) / 2 + (gnorm(g1) + gnorm(g2)) / 2);

  CHECK(tr.perceptron_accum == doctest::Approx(want_perc).epsilon(1e-12));
  CHECK(tr.path_length == doctest::Approx(want_path).epsilon(1e-12));
  CHECK(tr.snapshots.back().diag.perceptron ==
        doctest::Approx(want_perc).epsilon(1e-12));
  // Path length dominates straight-line movement up to the trapezoid-vs-Euler
  // quadrature mismatch, which is bounded by h * |gnorm drift| per step.
  const double quad_slack =
      h * (std::abs(gnorm(g1) - gnorm(g0)) + std::abs(gnorm(g2) - gnorm(g1)));
  CHECK(tr.path_length >= tr.snapshots.back().diag.movement - quad_slack - 1e-12);
}

TEST_CASE("snapshot schedules: every-k and geometric both bracket the run") {
  SeededStream st(7, "dyn/init4");
  const Params w0 = init_standard(4, 3, st);
  const LabeledSet data = random_set(5, 3, 8);
  GfConfig cfg;
  cfg.mode = StepMode::loss_normalized;
  cfg.h = 0.01;
  cfg.max_steps = 500;
  cfg.schedule.geometric = false;
  cfg.schedule.every = 100;
  const DenseTrajectory every = run_gf(w0, data, cfg);
  REQUIRE(every.snapshots.size() >= 2);
  CHECK(every.snapshots.front().step == 0);
  CHECK(every.snapshots.back().step == every.steps);
  for (std::size_t k = 0; k + 1 < every.snapshots.size(); ++k) {
    CHECK(every.snapshots[k].step < every.snapshots[k + 1].step);
    if (k > 0 && k + 1 < every.snapshots.size() - 1)
      CHECK(every.snapshots[k].step % 100 == 0);
  }

  cfg.schedule.geometric = true;
  cfg.schedule.per_decade = 64;
  const DenseTrajectory geo = run_gf(w0, data, cfg);
  CHECK(geo.snapshots.front().step == 0);
  CHECK(geo.snapshots.back().step == geo.steps);
  CHECK(geo.snapshots.size() < 450);  // far fewer than one per step
  for (std::size_t k = 0; k + 1 < geo.snapshots.size(); ++k)
    CHECK(geo.snapshots[k].time < geo.snapshots[k + 1].time);
}

TEST_CASE("stop predicate and virtual-time cap") {
  SeededStream st(9, "dyn/init5");
  const Params w0 = init_standard(4, 3, st);
  const LabeledSet data = random_set(5, 3, 10);
  GfConfig cfg;
  cfg.mode = StepMode::fixed;
  cfg.h = 0.05;
  cfg.max_steps = 100000;
  const StopPredicate stop = [](const MarginReport&, double, double time,
                                std::size_t) { return time >= 1.0; };
  const DenseTrajectory tr = run_gf(w0, data, cfg, {}, stop);
  CHECK(tr.steps < cfg.max_steps);
  CHECK(tr.final_time >= 1.0);
  CHECK(tr.final_time <= 1.0 + 0.05 + 1e-12);

  GfConfig cap = cfg;
  cap.stop_virtual_time = 0.5;
  const DenseTrajectory tc = run_gf(w0, data, cap);
  CHECK(tc.final_time >= 0.5);
  CHECK(tc.final_time <= 0.5 + 0.05 + 1e-12);
}

TEST_CASE("heldout evaluation appears in snapshots when configured") {
  SeededStream st(11, "dyn/init6");
  const Params w0 = init_standard(8, 4, st);
  SeededStream dst(12, "dyn/data6");
  const LabeledSet data = gen_parity(4, 16, {0, 1}, dst, true);
  GfConfig cfg;
  cfg.h = 0.01;
  cfg.max_steps = 50;
  cfg.schedule.geometric = false;
  cfg.schedule.every = 10;
  cfg.heldout = &data;
  const DenseTrajectory with = run_gf(w0, data, cfg);
  for (const auto& s : with.snapshots) {
    CHECK(s.diag.test_error >= 0.0);
    CHECK(s.diag.test_error <= 1.0);
  }
  cfg.heldout = nullptr;
  const DenseTrajectory without = run_gf(w0, data, cfg);
  for (const auto& s : without.snapshots) CHECK(s.diag.test_error == -1.0);
}

TEST_CASE("sgd: one step equals the single-example update") {
  SeededStream ist(13, "sgd/init");
  const Params w0 = init_standard(6, 4, ist);
  SgdConfig cfg;
  cfg.eta = 0.3;
  cfg.steps = 1;
  cfg.loss = LossKind::logistic;
  cfg.stream = SeededStream(77, "sgd/draws");
  const Sampler sampler = [](SeededStream& s) {
    Example ex;
    ex.x = unit_sphere_vector(s, 4);
    ex.y = s.next_unit() < 0.5 ? -1 : 1;
    return ex;
  };
  const DenseTrajectory tr = run_sgd(w0, sampler, cfg);
  REQUIRE(!tr.aborted);

  SeededStream replay(77, "sgd/draws");
  const Example ex = sampler(replay);
  const double lp = loss_deriv(cfg.loss, prediction(w0, ex));
  const Params sg = subgradient(w0, ex);
  for (std::size_t j = 0; j < w0.m; ++j)
    CHECK(tr.final_state.a[j] ==
          doctest::Approx(w0.a[j] - cfg.eta * lp * sg.a[j]).epsilon(1e-14));
  for (std::size_t i = 0; i < w0.V.size(); ++i)
    CHECK(tr.final_state.V[i] ==
          doctest::Approx(w0.V[i] - cfg.eta * lp * sg.V[i]).epsilon(1e-14));
  CHECK(tr.perceptron_accum == doctest::Approx(std::abs(lp)).epsilon(1e-14));
}

TEST_CASE("sgd: snapshots, perceptron sum, and movement tracking") {
  SeededStream ist(15, "sgd/init2");
  const Params w0 = init_standard(5, 3, ist);
  SgdConfig cfg;
  cfg.eta = 0.1;
  cfg.steps = 50;
  cfg.loss = LossKind::exponential;
  cfg.stream = SeededStream(5, "sgd/draws2");
  cfg.snapshot_every = 10;
  const Sampler sampler = [](SeededStream& s) {
    Example ex;
    ex.x = unit_sphere_vector(s, 3);
    ex.y = s.next_unit() < 0.5 ? -1 : 1;
    return ex;
  };
  const DenseTrajectory tr = run_sgd(w0, sampler, cfg);
  REQUIRE(!tr.aborted);
  REQUIRE(tr.snapshots.size() >= 3);
  CHECK(tr.snapshots.front().step == 0);
  CHECK(tr.snapshots[1].step == 1);
  CHECK(tr.snapshots.back().step == 50);

  // Replay the whole run by hand and check the perceptron sum.
  Params w = w0;
  SeededStream replay(5, "sgd/draws2");
  double perc = 0;
  for (int s = 0; s < 50; ++s) {
    const Example ex = sampler(replay);
    const double lp = loss_deriv(cfg.loss, prediction(w, ex));
    perc += std::abs(lp);
    const Params sg = subgradient(w, ex);
    for (std::size_t j = 0; j < w.m; ++j) w.a[j] -= cfg.eta * lp * sg.a[j];
    for (std::size_t i = 0; i < w.V.size(); ++i) w.V[i] -= cfg.eta * lp * sg.V[i];
  }
  CHECK(tr.perceptron_accum == doctest::Approx(perc).epsilon(1e-12));
  CHECK(perceptron_sum(tr) == tr.perceptron_accum);
  for (std::size_t i = 0; i < w.a.size(); ++i)
    CHECK(tr.final_state.a[i] == doctest::Approx(w.a[i]).epsilon(1e-12));

  double mv = 0;
  for (const auto& s : tr.snapshots) mv = std::max(mv, s.diag.movement);
  CHECK(tr.max_movement >= mv - 1e-15);
}

TEST_CASE("divergent fixed step aborts with a recorded snapshot") {
  SeededStream st(17, "dyn/init7");
  const Params w0 = init_standard(8, 4, st);
  const LabeledSet data = random_set(6, 4, 18);
  GfConfig cfg;
  cfg.mode = StepMode::fixed;
  cfg.h = 1e10;
  cfg.max_steps = 200;
  cfg.loss = LossKind::exponential;
  const DenseTrajectory tr = run_gf(w0, data, cfg);
  CHECK(tr.aborted);
  CHECK(tr.abort_step <= 200);
  REQUIRE(!tr.snapshots.empty());
}

TEST_CASE("eta range endpoints") {
  const EtaRange r = theorem_eta_range(0.1, 400);
  CHECK(r.lo == doctest::Approx(0.1 / (10.0 * 20.0)).epsilon(1e-15));
  CHECK(r.hi == doctest::Approx(0.01 / 6400.0).epsilon(1e-15));
}

TEST_CASE("stability probe returns a risk-decreasing step") {
  SeededStream ist(19, "probe/init");
  const Params w0 = init_standard(16, 4, ist);
  SeededStream dst(20, "probe/data");
  const LabeledSet data = gen_parity(4, 16, {0, 1}, dst, true);
  const double h = probe_stable_step(w0, data, LossKind::exponential);
  CHECK(h > 0.0);
  CHECK(h <= 1.0);
  GfConfig cfg;
  cfg.mode = StepMode::fixed;
  cfg.h = h;
  cfg.max_steps = 100;
  cfg.schedule.geometric = false;
  cfg.schedule.every = 1;
  const DenseTrajectory tr = run_gf(w0, data, cfg);
  REQUIRE(!tr.aborted);
  for (std::size_t k = 0; k + 1 < tr.snapshots.size(); ++k)
    CHECK(tr.snapshots[k + 1].margins.risk <=
          tr.snapshots[k].margins.risk * (1.0 + 1e-9) + 1e-12);
}

TEST_CASE("scalar flow: one step matches the scalar subgradient assembly") {
  SeededStream ist(21, "sc/init");
  const ScalarParams p0 = scalar_init(6, 3, ist);
  const LabeledSet data = random_set(5, 3, 22);
  GfConfig cfg;
  cfg.mode = StepMode::fixed;
  cfg.h = 0.02;
  cfg.max_steps = 1;
  cfg.loss = LossKind::exponential;
  cfg.schedule.geometric = false;
  cfg.schedule.every = 1;
  const ScalarTrajectory tr = run_gf_scalar(p0, data, cfg);
  REQUIRE(!tr.aborted);

  const double n = static_cast<double>(data.n());
  std::vector<double> ga(p0.m, 0.0), gb(p0.m, 0.0);
  for (const auto& ex : data.examples) {
    const double lp = loss_deriv(cfg.loss, scalar_prediction(p0, ex));
    const ScalarGrad sg = scalar_subgradient(p0, ex);
    for (std::size_t j = 0; j < p0.m; ++j) {
      ga[j] += lp * sg.a[j] / n;
      gb[j] += lp * sg.b[j] / n;
    }
  }
  for (std::size_t j = 0; j < p0.m; ++j) {
    CHECK(tr.final_state.a[j] ==
          doctest::Approx(p0.a[j] - 0.02 * ga[j]).epsilon(1e-13));
    CHECK(tr.final_state.b[j] ==
          doctest::Approx(p0.b[j] - 0.02 * gb[j]).epsilon(1e-13));
  }
}

TEST_CASE("scalar flow reports the balance drift against init") {
  SeededStream ist(23, "sc/init2");
  const ScalarParams p0 = scalar_init(8, 4, ist);
  SeededStream dst(24, "sc/data2");
  const LabeledSet data = gen_parity(4, 16, {0, 1}, dst, true);
  GfConfig cfg;
  cfg.mode = StepMode::fixed;
  cfg.h = 1e-3;
  cfg.max_steps = 200;
  cfg.schedule.geometric = false;
  cfg.schedule.every = 200;
  const ScalarTrajectory tr = run_gf_scalar(p0, data, cfg);
  REQUIRE(!tr.aborted);
  double want = 0;
  const auto& f = tr.final_state;
  for (std::size_t j = 0; j < p0.m; ++j) {
    const double drift = (f.a[j] * f.a[j] - f.b[j] * f.b[j]) -
                         (p0.a[j] * p0.a[j] - p0.b[j] * p0.b[j]);
    want = std::max(want, std::abs(drift));
  }
  CHECK(tr.snapshots.back().diag.balance_residual ==
        doctest::Approx(want).epsilon(1e-10));
  // Euler drift of the conserved balance stays at the step-size scale.
  CHECK(want <= 10.0 * cfg.h);
}
