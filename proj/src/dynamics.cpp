#include "lab/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "lab/diagnostics.hpp"
#include "lab/numeric.hpp"

namespace lab {
namespace {

// ln |l'(z)| without underflow: exp loss -z; logistic -ln(1 + e^z).
double log_abs_loss_deriv(LossKind loss, double z) {
  if (loss == LossKind::exponential) return -z;
  return z > 30.0 ? -z - std::log1p(std::exp(-z)) : -std::log1p(std::exp(z));
}

// Per-example coefficients on y_i dF_i for one descent step. Raw mode gives
// the gradient of (1/n) sum_i loss(p_i). Normalized mode folds the step
// rescaling n / sum|l'| into the weights via a max-shifted softmax, so the
// assembled direction stays exact even when every |l'_i| underflows; the
// caller then applies the base step h0 directly.
void loss_weights(LossKind loss, bool normalize, const std::vector<double>& preds,
                  std::vector<double>& wcoef, const std::vector<int>& ys,
                  double& sum_abs_lp, double& log_sum_abs_lp) {
  const std::size_t n = preds.size();
  wcoef.resize(n);
  if (!normalize) {
    sum_abs_lp = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double lp = loss_deriv(loss, preds[i]);
      sum_abs_lp += -lp;
      wcoef[i] = lp * static_cast<double>(ys[i]) / static_cast<double>(n);
    }
    log_sum_abs_lp = std::log(sum_abs_lp);
    return;
  }
  double M = -std::numeric_limits<double>::infinity();
  std::vector<double> lw(n);
  for (std::size_t i = 0; i < n; ++i) {
    lw[i] = log_abs_loss_deriv(loss, preds[i]);
    M = std::max(M, lw[i]);
  }
  if (!(M > -std::numeric_limits<double>::infinity())) {
    std::fill(wcoef.begin(), wcoef.end(), 0.0);
    sum_abs_lp = 0.0;
    log_sum_abs_lp = -std::numeric_limits<double>::infinity();
    return;
  }
  if (!std::isfinite(M)) {  // diverging predictions; flag via the sum
    std::fill(wcoef.begin(), wcoef.end(), 0.0);
    sum_abs_lp = std::numeric_limits<double>::infinity();
    log_sum_abs_lp = std::numeric_limits<double>::infinity();
    return;
  }
  double S = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    lw[i] = std::exp(lw[i] - M);
    S += lw[i];
  }
  for (std::size_t i = 0; i < n; ++i)
    wcoef[i] = -static_cast<double>(ys[i]) * lw[i] / S;
  log_sum_abs_lp = M + std::log(S);
  sum_abs_lp = std::exp(log_sum_abs_lp);
}

// Gradient of (1/n) sum_i loss(y_i F(x_i)) over the full parameter vector,
// plus the per-example predictions and sum_i |l'_i| from the same pass. With
// normalize set, g holds the loss-normalized direction instead (see
// loss_weights) and is applied with the base step h0.
struct DenseEngine {
  using State = Params;
  using Grad = Params;

  const LabeledSet& data;
  LossKind loss;
  bool normalize = false;
  Grad g;
  std::vector<double> preds;
  std::vector<double> zcache;  // m x n activations, refreshed each compute
  std::vector<double> node, wcoef;
  std::vector<int> ys;
  double sum_abs_lp = 0.0;
  double log_sum_abs_lp = 0.0;
  double grad_norm = 0.0;

  DenseEngine(const LabeledSet& d, LossKind l, const Params& init) : data(d), loss(l) {
    g.m = init.m;
    g.d = init.d;
    g.a.assign(init.m, 0.0);
    g.V.assign(init.m * init.d, 0.0);
    const std::size_t n = d.examples.size();
    preds.resize(n);
    zcache.resize(init.m * n);
    node.resize(init.m);
    ys.resize(n);
    for (std::size_t i = 0; i < n; ++i) ys[i] = d.examples[i].y;
  }

  void compute(const State& W) {
    std::fill(g.a.begin(), g.a.end(), 0.0);
    std::fill(g.V.begin(), g.V.end(), 0.0);
    const std::size_t n = data.examples.size();
    const std::size_t m = W.m, d = W.d;
    for (std::size_t i = 0; i < n; ++i) {
      const Example& ex = data.examples[i];
      double* zrow = zcache.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) {
        const double* row = W.V.data() + j * d;
        double s = 0.0;
        for (std::size_t t = 0; t < d; ++t) s += row[t] * ex.x[t];
        zrow[j] = s;
        node[j] = W.a[j] * relu(s);
      }
      preds[i] = ex.y * pairwise_sum(node);
    }
    loss_weights(loss, normalize, preds, wcoef, ys, sum_abs_lp, log_sum_abs_lp);
    for (std::size_t i = 0; i < n; ++i) {
      const double coef = wcoef[i];
      if (coef == 0.0) continue;
      const Example& ex = data.examples[i];
      const double* zrow = zcache.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) {
        g.a[j] += coef * relu(zrow[j]);
        if (zrow[j] > 0.0) {
          double* grow = g.V.data() + j * d;
          const double c = coef * W.a[j];
          for (std::size_t t = 0; t < d; ++t) grow[t] += c * ex.x[t];
        }
      }
    }
    grad_norm = std::sqrt(g.norm_sq());
  }

  static void apply(State& W, const Grad& g, double h) {
    for (std::size_t j = 0; j < W.a.size(); ++j) W.a[j] -= h * g.a[j];
    for (std::size_t t = 0; t < W.V.size(); ++t) W.V[t] -= h * g.V[t];
  }

  static double norm_sq(const State& W) { return W.norm_sq(); }

  static double movement(const State& W, const State& W0) {
    double s = 0.0;
    for (std::size_t j = 0; j < W.a.size(); ++j) {
      const double e = W.a[j] - W0.a[j];
      s += e * e;
    }
    for (std::size_t t = 0; t < W.V.size(); ++t) {
      const double e = W.V[t] - W0.V[t];
      s += e * e;
    }
    return std::sqrt(s);
  }

  double balance_residual(const State&) const { return 0.0; }

  double heldout_error(const State& W, const LabeledSet& set) const {
    return test_error(W, set);
  }
};

// Scalar two-layer flow along frozen directions: F = sum_j a_j relu(b_j u_j),
// u_j = dir_j . x, with the direction inner products precomputed once.
struct ScalarEngine {
  using State = ScalarParams;
  struct Grad {
    std::vector<double> a, b;
  };

  const LabeledSet& data;
  LossKind loss;
  bool normalize = false;
  Grad g;
  std::vector<double> preds;
  std::vector<double> U;  // m x n: U[j*n+i] = dir_j . x_i
  std::vector<double> node, wcoef;
  std::vector<int> ys;
  std::vector<double> init_gap;  // a_j^2 - b_j^2 at init
  double sum_abs_lp = 0.0;
  double log_sum_abs_lp = 0.0;
  double grad_norm = 0.0;

  ScalarEngine(const LabeledSet& d, LossKind l, const ScalarParams& init) : data(d), loss(l) {
    const std::size_t n = d.examples.size();
    const std::size_t m = init.m;
    g.a.assign(m, 0.0);
    g.b.assign(m, 0.0);
    preds.resize(n);
    ys.resize(n);
    for (std::size_t i = 0; i < n; ++i) ys[i] = d.examples[i].y;
    node.resize(m);
    U.resize(m * n);
    for (std::size_t j = 0; j < m; ++j) {
      const double* dir = init.directions.data() + j * init.d;
      for (std::size_t i = 0; i < n; ++i) {
        const std::vector<double>& x = d.examples[i].x;
        double s = 0.0;
        for (std::size_t t = 0; t < init.d; ++t) s += dir[t] * x[t];
        U[j * n + i] = s;
      }
    }
    init_gap.resize(m);
    for (std::size_t j = 0; j < m; ++j)
      init_gap[j] = init.a[j] * init.a[j] - init.b[j] * init.b[j];
  }

  void compute(const State& W) {
    std::fill(g.a.begin(), g.a.end(), 0.0);
    std::fill(g.b.begin(), g.b.end(), 0.0);
    const std::size_t n = data.examples.size();
    const std::size_t m = W.m;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) node[j] = W.a[j] * relu(W.b[j] * U[j * n + i]);
      preds[i] = data.examples[i].y * pairwise_sum(node);
    }
    loss_weights(loss, normalize, preds, wcoef, ys, sum_abs_lp, log_sum_abs_lp);
    for (std::size_t i = 0; i < n; ++i) {
      const double coef = wcoef[i];
      if (coef == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) {
        const double u = U[j * n + i];
        const double zj = W.b[j] * u;
        g.a[j] += coef * relu(zj);
        if (zj > 0.0) g.b[j] += coef * W.a[j] * u;
      }
    }
    grad_norm = std::sqrt(sum_sq(g.a) + sum_sq(g.b));
  }

  static void apply(State& W, const Grad& g, double h) {
    for (std::size_t j = 0; j < W.a.size(); ++j) {
      W.a[j] -= h * g.a[j];
      W.b[j] -= h * g.b[j];
    }
  }

  static double norm_sq(const State& W) {
    return sum_sq(W.a) + sum_sq(W.b);
  }

  static double movement(const State& W, const State& W0) {
    double s = 0.0;
    for (std::size_t j = 0; j < W.a.size(); ++j) {
      const double ea = W.a[j] - W0.a[j];
      const double eb = W.b[j] - W0.b[j];
      s += ea * ea + eb * eb;
    }
    return std::sqrt(s);
  }

  double balance_residual(const State& W) const {
    double worst = 0.0;
    for (std::size_t j = 0; j < W.a.size(); ++j) {
      const double gap = W.a[j] * W.a[j] - W.b[j] * W.b[j];
      worst = std::max(worst, std::abs(gap - init_gap[j]));
    }
    return worst;
  }

  double heldout_error(const State& W, const LabeledSet& set) const {
    return test_error(W, set);
  }
};

template <class Engine, class Observer>
Trajectory<typename Engine::State> drive_gf(const typename Engine::State& init,
                                            const LabeledSet& data, const GfConfig& cfg,
                                            Observer observer, StopPredicate stop) {
  if (data.examples.empty()) throw std::invalid_argument("run_gf: empty data set");
  if (!(cfg.h > 0.0)) throw std::invalid_argument("run_gf: step size must be positive");

  Engine eng(data, cfg.loss, init);
  const bool normalized = cfg.mode == StepMode::loss_normalized;
  eng.normalize = normalized;
  Trajectory<typename Engine::State> traj;
  typename Engine::State state = init;
  const std::size_t n = data.examples.size();
  const double snap_factor =
      cfg.schedule.geometric ? std::pow(10.0, 1.0 / cfg.schedule.per_decade) : 0.0;
  const double lf = std::log(cfg.floor);

  double time = 0.0;
  double next_snap_time = 0.0;
  double h_prev = 0.0, prev_rate = 0.0, prev_gnorm = 0.0;
  double prev_logS = 0.0;
  std::size_t last_snap_step = static_cast<std::size_t>(-1);
  bool have_prev = false;

  auto record = [&](std::size_t step, const MarginReport& mr) {
    TrajSnapshot<typename Engine::State> snap;
    snap.step = step;
    snap.time = time;
    snap.margins = mr;
    snap.diag.movement = Engine::movement(state, init);
    traj.max_movement = std::max(traj.max_movement, snap.diag.movement);
    snap.diag.norm_sq = mr.weight_norm_sq;
    snap.diag.path_length = traj.path_length;
    snap.diag.perceptron = traj.perceptron_accum;
    snap.diag.balance_residual = eng.balance_residual(state);
    snap.diag.step_size = h_prev;
    if (cfg.heldout != nullptr) snap.diag.test_error = eng.heldout_error(state, *cfg.heldout);
    if (cfg.store_params) snap.state = state;
    traj.snapshots.push_back(std::move(snap));
    last_snap_step = step;
    if (observer) observer(state, time, step, mr);
  };

  std::size_t step = 0;
  for (;; ++step) {
    eng.compute(state);
    const double rate = eng.sum_abs_lp / static_cast<double>(n);
    if (have_prev) {
      if (normalized) {
        // In the flow's own clock the perceptron trapezoid
        //   h_prev * (rate_prev + rate_now) / 2
        // collapses to h0 * (mu_prev + carry) / 2 with the factors below;
        // computing them in log space keeps the accumulator exact after
        // every |l'_i| underflows. Path length is parameterization
        // invariant, so it integrates the normalized field directly.
        const double mu_prev = prev_logS >= lf ? 1.0 : std::exp(prev_logS - lf);
        const double carry = std::exp(eng.log_sum_abs_lp - std::max(prev_logS, lf));
        traj.perceptron_accum += cfg.h * 0.5 * (mu_prev + carry);
        traj.path_length += cfg.h * 0.5 * (prev_gnorm + eng.grad_norm);
      } else {
        traj.perceptron_accum += h_prev * 0.5 * (prev_rate + rate);
        traj.path_length += h_prev * 0.5 * (prev_gnorm + eng.grad_norm);
      }
    }
    const double nsq = Engine::norm_sq(state);
    if (!std::isfinite(nsq) || !std::isfinite(eng.sum_abs_lp)) {
      traj.aborted = true;
      traj.abort_step = step;
      MarginReport mr;  // margins are meaningless here; record the raw norm
      mr.weight_norm_sq = nsq;
      record(step, mr);
      break;
    }
    const MarginReport mr = margin_report(cfg.loss, eng.preds, nsq);

    bool snap_due = step == 0;
    if (cfg.schedule.geometric) {
      if (time >= next_snap_time) snap_due = true;
    } else if (cfg.schedule.every > 0 && step % cfg.schedule.every == 0) {
      snap_due = true;
    }
    if (snap_due) {
      record(step, mr);
      if (cfg.schedule.geometric)
        next_snap_time = time > 0.0 ? time * snap_factor : cfg.h * 1e-3;
    }

    if (stop && stop(mr, nsq, time, step)) break;
    if (time >= cfg.stop_virtual_time) break;
    if (step >= cfg.max_steps) break;

    double h_s = cfg.h;
    if (normalized)
      h_s = cfg.h * static_cast<double>(n) / std::max(eng.sum_abs_lp, cfg.floor);
    if (h_s < 1e-300) {
      traj.step_collapsed = true;
      break;
    }
    // With normalize set the engine folded the rescaling n / sum|l'| into g,
    // so the base step applies in both modes; h_s only advances the clock.
    Engine::apply(state, eng.g, cfg.h);
    time += h_s;
    h_prev = h_s;
    prev_rate = rate;
    prev_gnorm = eng.grad_norm;
    prev_logS = eng.log_sum_abs_lp;
    have_prev = true;
  }

  if (!traj.aborted && last_snap_step != step) {
    // Every exit above fires before the step is applied, so the engine still
    // holds predictions for the current state.
    record(step, margin_report(cfg.loss, eng.preds, Engine::norm_sq(state)));
  }

  traj.final_state = std::move(state);
  traj.final_time = time;
  traj.steps = step;
  return traj;
}

}  // namespace

DenseTrajectory run_gf(const Params& init, const LabeledSet& data, const GfConfig& cfg,
                       DenseObserver observer, StopPredicate stop) {
  return drive_gf<DenseEngine>(init, data, cfg, std::move(observer), std::move(stop));
}

ScalarTrajectory run_gf_scalar(const ScalarParams& init, const LabeledSet& data,
                               const GfConfig& cfg, ScalarObserver observer,
                               StopPredicate stop) {
  return drive_gf<ScalarEngine>(init, data, cfg, std::move(observer), std::move(stop));
}

DenseTrajectory run_sgd(const Params& init, const Sampler& sampler, const SgdConfig& cfg) {
  if (!sampler) throw std::invalid_argument("run_sgd: sampler required");
  if (!(cfg.eta > 0.0)) throw std::invalid_argument("run_sgd: eta must be positive");

  DenseTrajectory traj;
  Params W = init;
  SeededStream stream = cfg.stream;
  const std::size_t m = W.m, d = W.d;
  std::vector<double> z(m), node(m);
  std::size_t every = cfg.snapshot_every;
  if (every == 0) every = std::max<std::size_t>(1, cfg.steps / 128);

  auto record = [&](std::size_t step) {
    TrajSnapshot<Params> snap;
    snap.step = step;
    snap.time = static_cast<double>(step) * cfg.eta;
    snap.diag.norm_sq = W.norm_sq();
    snap.diag.movement = DenseEngine::movement(W, init);
    snap.diag.path_length = traj.path_length;
    snap.diag.perceptron = traj.perceptron_accum;
    snap.diag.step_size = cfg.eta;
    if (cfg.eval != nullptr) {
      std::vector<double> preds(cfg.eval->examples.size());
      for (std::size_t i = 0; i < preds.size(); ++i)
        preds[i] = cfg.eval->examples[i].y * forward(W, cfg.eval->examples[i].x);
      snap.margins = margin_report(cfg.loss, preds, snap.diag.norm_sq);
      snap.diag.test_error = test_error(W, *cfg.eval);
    } else {
      snap.margins.weight_norm_sq = snap.diag.norm_sq;
    }
    traj.snapshots.push_back(std::move(snap));
  };

  record(0);
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const Example ex = sampler(stream);
    for (std::size_t j = 0; j < m; ++j) {
      const double* row = W.V.data() + j * d;
      double acc = 0.0;
      for (std::size_t t = 0; t < d; ++t) acc += row[t] * ex.x[t];
      z[j] = acc;
      node[j] = W.a[j] * relu(acc);
    }
    const double p = ex.y * pairwise_sum(node);
    if (!std::isfinite(p)) {
      traj.aborted = true;
      traj.abort_step = s;
      break;
    }
    const double lp = loss_deriv(cfg.loss, p);
    const double abs_lp = -lp;
    traj.perceptron_accum += abs_lp;
    if (cfg.keep_step_lp) traj.step_abs_lp.push_back(abs_lp);

    double xsq = 0.0;
    for (std::size_t t = 0; t < d; ++t) xsq += ex.x[t] * ex.x[t];
    double act_sq = 0.0, asig_sq = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double rz = relu(z[j]);
      act_sq += rz * rz;
      if (z[j] > 0.0) asig_sq += W.a[j] * W.a[j];
    }
    traj.path_length += cfg.eta * abs_lp * std::sqrt(act_sq + asig_sq * xsq);

    const double coef = cfg.eta * lp * ex.y;
    for (std::size_t j = 0; j < m; ++j) {
      const double a_old = W.a[j];
      W.a[j] -= coef * relu(z[j]);
      if (z[j] > 0.0) {
        double* row = W.V.data() + j * d;
        const double c = coef * a_old;
        for (std::size_t t = 0; t < d; ++t) row[t] -= c * ex.x[t];
      }
    }

    const std::size_t done = s + 1;
    traj.max_movement = std::max(traj.max_movement, DenseEngine::movement(W, init));
    if (done == 1 || done % every == 0 || done == cfg.steps) record(done);
    traj.steps = done;
  }
  if (traj.aborted) record(traj.steps);
  traj.final_state = std::move(W);
  traj.final_time = static_cast<double>(traj.steps) * cfg.eta;
  return traj;
}

EtaRange theorem_eta_range(double gamma_hat, std::size_t m) {
  EtaRange r;
  r.lo = gamma_hat / (10.0 * std::sqrt(static_cast<double>(m)));
  r.hi = gamma_hat * gamma_hat / 6400.0;
  return r;
}

double probe_stable_step(const Params& init, const LabeledSet& data, LossKind loss,
                         double h_start, std::size_t probe_steps) {
  if (!(h_start > 0.0)) throw std::invalid_argument("probe_stable_step: h_start must be positive");
  double h = h_start;
  for (int halving = 0; halving < 200; ++halving) {
    GfConfig cfg;
    cfg.mode = StepMode::fixed;
    cfg.h = h;
    cfg.max_steps = probe_steps;
    cfg.loss = loss;
    cfg.schedule.geometric = false;
    cfg.schedule.every = 1;
    DenseTrajectory t = run_gf(init, data, cfg);
    bool ok = !t.aborted;
    if (ok) {
      for (std::size_t i = 1; i < t.snapshots.size(); ++i) {
        const double prev = t.snapshots[i - 1].margins.risk;
        const double cur = t.snapshots[i].margins.risk;
        if (!(cur <= prev + 1e-12 * std::max(1.0, std::abs(prev)))) {
          ok = false;
          break;
        }
      }
    }
    if (ok) return h;
    h *= 0.5;
  }
  throw std::runtime_error("probe_stable_step: no stable step found");
}

double perceptron_sum(const DenseTrajectory& t) { return t.perceptron_accum; }
double perceptron_sum(const ScalarTrajectory& t) { return t.perceptron_accum; }

}  // namespace lab
