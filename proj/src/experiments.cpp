#include "lab/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "lab/datasets.hpp"
#include "lab/diagnostics.hpp"
#include "lab/dynamics.hpp"
#include "lab/io.hpp"
#include "lab/losses.hpp"
#include "lab/models.hpp"
#include "lab/numeric.hpp"
#include "lab/oracles.hpp"
#include "lab/potentials.hpp"
#include "lab/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lab {
namespace {

// ---------------------------------------------------------------- config

void check_fields(const json& cfg, std::initializer_list<const char*> allowed) {
  std::set<std::string> ok(allowed.begin(), allowed.end());
  ok.insert("kind");
  ok.insert("out");
  for (const auto& item : cfg.items())
    if (!ok.count(item.key())) throw ConfigError("unknown config field: " + item.key());
}

double num_or(const json& cfg, const char* key, double def) {
  if (!cfg.contains(key)) return def;
  if (!cfg[key].is_number()) throw ConfigError(std::string(key) + " must be a number");
  return cfg[key].get<double>();
}

std::size_t size_or(const json& cfg, const char* key, std::size_t def) {
  if (!cfg.contains(key)) return def;
  if (!cfg[key].is_number_integer() || cfg[key].get<long long>() < 0)
    throw ConfigError(std::string(key) + " must be a non-negative integer");
  return cfg[key].get<std::size_t>();
}

std::string str_or(const json& cfg, const char* key, const std::string& def) {
  if (!cfg.contains(key)) return def;
  if (!cfg[key].is_string()) throw ConfigError(std::string(key) + " must be a string");
  return cfg[key].get<std::string>();
}

std::vector<std::uint64_t> seeds_or(const json& cfg, std::vector<std::uint64_t> def) {
  if (!cfg.contains("seeds")) return def;
  if (!cfg["seeds"].is_array() || cfg["seeds"].empty())
    throw ConfigError("seeds must be a non-empty array of integers");
  std::vector<std::uint64_t> out;
  for (const auto& v : cfg["seeds"]) {
    if (!v.is_number_integer() || v.get<long long>() < 0)
      throw ConfigError("seeds entries must be non-negative integers");
    out.push_back(v.get<std::uint64_t>());
  }
  return out;
}

LossKind loss_or(const json& cfg, const char* key, LossKind def) {
  if (!cfg.contains(key)) return def;
  if (!cfg[key].is_string()) throw ConfigError(std::string(key) + " must be a loss name");
  const std::string s = cfg[key].get<std::string>();
  if (s == "exponential") return LossKind::exponential;
  if (s == "logistic") return LossKind::logistic;
  throw ConfigError("loss must be \"exponential\" or \"logistic\"");
}

// ---------------------------------------------------------------- output

struct Checks {
  json list = json::array();
  bool all = true;

  void add(const std::string& name, bool pass, json details = json::object()) {
    details["name"] = name;
    details["pass"] = pass;
    list.push_back(std::move(details));
    all = all && pass;
  }
};

json margin_json(const MarginReport& mr) {
  return {{"gamma", mr.gamma},
          {"smoothed", mr.smoothed},
          {"normalized_smoothed", mr.normalized_smoothed},
          {"risk", mr.risk},
          {"sum_q", mr.sum_q},
          {"norm_sq", mr.weight_norm_sq}};
}

template <class T>
void write_traj(const fs::path& path, const Trajectory<T>& tr,
                const std::vector<std::pair<std::string, const std::vector<double>*>>&
                    extras = {}) {
  std::vector<std::string> cols = {
      "step",        "time",      "gamma",     "smoothed",  "normalized_smoothed",
      "Q",           "risk",      "sum_q",     "norm_sq",   "movement",
      "path_length", "perceptron", "step_size", "test_error", "balance_residual"};
  for (const auto& e : extras) {
    if (e.second->size() != tr.snapshots.size())
      throw std::logic_error("trajectory extras misaligned: " + e.first);
    cols.push_back(e.first);
  }
  CsvWriter csv(path, cols);
  std::vector<double> row;
  for (std::size_t i = 0; i < tr.snapshots.size(); ++i) {
    const auto& s = tr.snapshots[i];
    row = {static_cast<double>(s.step),
           s.time,
           s.margins.gamma,
           s.margins.smoothed,
           s.margins.normalized_smoothed,
           s.margins.Q,
           s.margins.risk,
           s.margins.sum_q,
           s.diag.norm_sq,
           s.diag.movement,
           s.diag.path_length,
           s.diag.perceptron,
           s.diag.step_size,
           s.diag.test_error,
           s.diag.balance_residual};
    for (const auto& e : extras) row.push_back((*e.second)[i]);
    csv.row(row);
  }
  csv.flush();
}

void ensure_ok(const DenseTrajectory& tr, const fs::path& dir, const std::string& label) {
  if (!tr.aborted) return;
  const fs::path snap = dir / (label + "_abort.bin");
  save_params(tr.final_state, snap.string());
  save_json_file(dir / (label + "_abort.json"),
                 {{"step", tr.abort_step}, {"params", snap.string()}});
  throw NumericalAbort("non-finite state at step " + std::to_string(tr.abort_step), snap);
}

void ensure_ok(const ScalarTrajectory& tr, const fs::path& dir, const std::string& label) {
  if (!tr.aborted) return;
  const fs::path snap = dir / (label + "_abort.json");
  save_json_file(snap, {{"step", tr.abort_step}, {"a", tr.final_state.a},
                        {"b", tr.final_state.b}});
  throw NumericalAbort("non-finite state at step " + std::to_string(tr.abort_step), snap);
}

Example fresh_corner(SeededStream& st, std::size_t d,
                     std::pair<std::size_t, std::size_t> coords) {
  const std::vector<int> signs = rademacher_signs(st, d);
  Example ex;
  ex.x.resize(d);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t t = 0; t < d; ++t) ex.x[t] = signs[t] * scale;
  ex.y = signs[coords.first] * signs[coords.second];
  return ex;
}

// ---------------------------------------------------------------- figure1

void run_figure1(const json& cfg, const fs::path& dir, json& summary, Checks& checks) {
  check_fields(cfg, {"seeds", "d", "n", "widths", "steps", "h", "loss", "snapshot_every"});
  const std::size_t d = size_or(cfg, "d", 20);
  const std::size_t n = size_or(cfg, "n", 64);
  const std::size_t steps = size_or(cfg, "steps", 20000);
  const double h_cfg = num_or(cfg, "h", 0.0);
  const LossKind loss = loss_or(cfg, "loss", LossKind::exponential);
  const std::vector<std::uint64_t> seeds = seeds_or(cfg, {1, 2, 3});
  std::size_t every = size_or(cfg, "snapshot_every", 0);
  if (every == 0) every = std::max<std::size_t>(1, steps / 64);

  std::vector<std::size_t> widths = {16, 256};
  if (cfg.contains("widths")) {
    if (!cfg["widths"].is_array() || cfg["widths"].size() < 2)
      throw ConfigError("widths must be an array of at least two integers");
    widths.clear();
    for (const auto& v : cfg["widths"]) {
      if (!v.is_number_integer() || v.get<long long>() <= 0)
        throw ConfigError("widths entries must be positive integers");
      widths.push_back(v.get<std::size_t>());
    }
  }
  const std::size_t w_lo = widths.front(), w_hi = widths.back();

  summary["effective"] = {{"d", d},     {"n", n},         {"steps", steps},
                          {"widths", widths}, {"seeds", seeds}, {"snapshot_every", every},
                          {"loss", loss_name(loss)}};
  summary["runs"] = json::array();

  for (const std::uint64_t seed : seeds) {
    const fs::path sdir = dir / ("seed" + std::to_string(seed));
    SeededStream dstream(seed, "figure1/data");
    const LabeledSet data = gen_parity(d, n, {0, 1}, dstream, false);
    write_dataset(sdir, data);

    std::map<std::size_t, Fig1Stats> stats;
    for (const std::size_t m : widths) {
      const fs::path wdir = sdir / ("m" + std::to_string(m));
      SeededStream istream(seed, "figure1/init/m" + std::to_string(m));
      const Params w0 = init_standard(m, d, istream);
      const double h = h_cfg > 0.0 ? h_cfg : 0.5 * probe_stable_step(w0, data, loss);

      GfConfig gf;
      gf.mode = StepMode::fixed;
      gf.h = h;
      gf.max_steps = steps;
      gf.loss = loss;
      gf.schedule.geometric = false;
      gf.schedule.every = every;

      CsvWriter proj(wdir / "proj.csv", {"step", "time", "node", "px", "py"});
      DenseObserver obs = [&](const Params& st, double time, std::size_t step,
                              const MarginReport& mr) {
        if (!std::isfinite(mr.weight_norm_sq)) return;
        for (std::size_t j = 0; j < st.m; ++j) {
          const double aj = std::abs(st.a[j]);
          proj.row({static_cast<double>(step), time, static_cast<double>(j),
                    aj * st.V[j * st.d], aj * st.V[j * st.d + 1]});
        }
      };
      const DenseTrajectory tr = run_gf(w0, data, gf, obs);
      proj.flush();
      ensure_ok(tr, wdir, "gf");

      save_params(w0, (wdir / "params_init.bin").string());
      save_params(tr.final_state, (wdir / "params_final.bin").string());
      write_traj(wdir / "trajectory.csv", tr);

      const Fig1Stats st = figure1_stats(w0, tr.final_state);
      stats[m] = st;
      summary["runs"].push_back(
          {{"seed", seed},
           {"m", m},
           {"h", h},
           {"median_rotation", st.median_rotation},
           {"frac_small_norm", st.frac_small_norm},
           {"rot_norm_spearman", st.rot_norm_spearman},
           {"degenerate", st.degenerate},
           {"final", margin_json(tr.snapshots.back().margins)}});
    }

    const std::string tag = "seed" + std::to_string(seed);
    checks.add("wide_rotates_less/" + tag,
               stats[w_hi].median_rotation > stats[w_lo].median_rotation,
               {{"narrow", stats[w_lo].median_rotation},
                {"wide", stats[w_hi].median_rotation}});
    checks.add("wide_more_imbalanced/" + tag,
               stats[w_hi].frac_small_norm > stats[w_lo].frac_small_norm,
               {{"narrow", stats[w_lo].frac_small_norm},
                {"wide", stats[w_hi].frac_small_norm}});
    checks.add("rotation_norm_correlated/" + tag, stats[w_hi].rot_norm_spearman > 0.0,
               {{"spearman", stats[w_hi].rot_norm_spearman}});
  }
}

// -------------------------------------------------------------- sgd_parity

void run_sgd_parity(const json& cfg, const fs::path& dir, json& summary, Checks& checks) {
  check_fields(cfg, {"seeds", "d", "m", "steps", "eta", "loss", "cert_samples", "delta",
                     "snapshot_every"});
  const std::size_t d = size_or(cfg, "d", 6);
  const std::size_t m = size_or(cfg, "m", 512);
  const std::size_t steps = size_or(cfg, "steps", 10000);
  const LossKind loss = loss_or(cfg, "loss", LossKind::logistic);
  const std::size_t cert_samples = size_or(cfg, "cert_samples", 4000000);
  const double delta = num_or(cfg, "delta", 0.05);
  const std::vector<std::uint64_t> seeds = seeds_or(cfg, {1, 2, 3});
  std::size_t every = size_or(cfg, "snapshot_every", 0);
  if (every == 0) every = std::max<std::size_t>(1, steps / 100);

  SeededStream hstream(0, "sgd_parity/heldout");
  const LabeledSet heldout = gen_parity(d, std::size_t{1} << d, {0, 1}, hstream, true);
  write_dataset(dir, heldout);

  const TransportMap map = transport_parity(d, {0, 1});
  SeededStream cstream(0, "sgd_parity/cert");
  const McMargin mc = ntk_margin_mc(map, heldout, cert_samples, cstream, delta);
  const double gamma_cert = mc.estimate - mc.half_width;
  checks.add("certified_margin_positive", gamma_cert > 0.0,
             {{"estimate", mc.estimate}, {"half_width", mc.half_width}});

  double eta = 0.0;
  if (cfg.contains("eta") && cfg["eta"].is_number()) {
    eta = cfg["eta"].get<double>();
    if (!(eta > 0.0)) throw ConfigError("eta must be positive");
  } else if (!cfg.contains("eta") || cfg["eta"] == "theorem") {
    // The stated admissible range [gamma/(10 sqrt(m)), gamma^2/6400] is
    // empty at this width; its larger endpoint is the first expression.
    const EtaRange r = theorem_eta_range(gamma_cert, m);
    eta = std::max(r.lo, r.hi);
  } else {
    throw ConfigError("eta must be a positive number or \"theorem\"");
  }

  summary["effective"] = {{"d", d},
                          {"m", m},
                          {"steps", steps},
                          {"loss", loss_name(loss)},
                          {"eta", eta},
                          {"gamma_cert", gamma_cert},
                          {"cert_samples", cert_samples},
                          {"delta", delta},
                          {"seeds", seeds}};
  summary["runs"] = json::array();
  if (!(gamma_cert > 0.0)) return;

  const double root_m = std::sqrt(static_cast<double>(m));
  const double first_step_bound = eta * gamma_cert * root_m / 8.0;
  const double norm_bound = 80.0 * eta * root_m / gamma_cert;

  for (const std::uint64_t seed : seeds) {
    const fs::path sdir = dir / ("seed" + std::to_string(seed));
    SeededStream istream(seed, "sgd_parity/init");
    const Params w0 = init_standard(m, d, istream);

    SgdConfig sc;
    sc.eta = eta;
    sc.steps = steps;
    sc.loss = loss;
    sc.stream = SeededStream(seed, "sgd_parity/data");
    sc.snapshot_every = every;
    sc.eval = &heldout;
    const Sampler sampler = [d](SeededStream& st) { return fresh_corner(st, d, {0, 1}); };

    const DenseTrajectory tr = run_sgd(w0, sampler, sc);
    ensure_ok(tr, sdir, "sgd");
    write_traj(sdir / "trajectory.csv", tr);
    save_params(tr.final_state, (sdir / "params_final.bin").string());

    double first_step = 0.0;
    double best_test = 1.0;
    for (const auto& s : tr.snapshots) {
      if (s.step == 1) first_step = s.diag.movement;
      if (s.diag.test_error >= 0.0) best_test = std::min(best_test, s.diag.test_error);
    }
    const std::string tag = "seed" + std::to_string(seed);
    checks.add("first_step_norm/" + tag, first_step >= first_step_bound,
               {{"measured", first_step}, {"bound", first_step_bound}});
    checks.add("norm_bound/" + tag, tr.max_movement <= norm_bound,
               {{"measured", tr.max_movement}, {"bound", norm_bound}});
    checks.add("best_test_error/" + tag, best_test <= 0.05, {{"measured", best_test}});

    summary["runs"].push_back({{"seed", seed},
                               {"first_step_norm", first_step},
                               {"max_movement", tr.max_movement},
                               {"best_test_error", best_test},
                               {"perceptron_sum", tr.perceptron_accum},
                               {"final_test_error", tr.snapshots.back().diag.test_error},
                               {"final", margin_json(tr.snapshots.back().margins)}});
  }
  summary["bounds"] = {{"first_step", first_step_bound}, {"norm", norm_bound}};
}

// -------------------------------------------------------- gf_parity_margin

void run_gf_parity_margin(const json& cfg, const fs::path& dir, json& summary,
                          Checks& checks) {
  check_fields(cfg, {"seeds", "d", "m", "h0", "max_steps", "loss", "stop_smoothed"});
  const std::size_t d = size_or(cfg, "d", 4);
  const std::size_t m = size_or(cfg, "m", 256);
  const double h0 = num_or(cfg, "h0", 0.01);
  const std::size_t max_steps = size_or(cfg, "max_steps", 300000);
  const LossKind loss = loss_or(cfg, "loss", LossKind::exponential);
  const double stop_smoothed = num_or(cfg, "stop_smoothed", 25.0);
  const std::vector<std::uint64_t> seeds = seeds_or(cfg, {1});
  const std::size_t n = std::size_t{1} << d;
  const double gamma_gl = 1.0 / std::sqrt(8.0 * static_cast<double>(d));

  summary["effective"] = {{"d", d},   {"m", m},  {"n", n},
                          {"h0", h0}, {"max_steps", max_steps},
                          {"loss", loss_name(loss)}, {"stop_smoothed", stop_smoothed},
                          {"seeds", seeds}};
  summary["runs"] = json::array();

  for (const std::uint64_t seed : seeds) {
    const fs::path sdir = dir / ("seed" + std::to_string(seed));
    SeededStream dstream(seed, "gf_parity/data");
    const LabeledSet data = gen_parity(d, n, {0, 1}, dstream, true);
    write_dataset(sdir, data);
    SeededStream istream(seed, "gf_parity/init");
    const Params w0 = init_standard(m, d, istream);

    GfConfig gf;
    gf.mode = StepMode::loss_normalized;
    gf.h = h0;
    gf.max_steps = max_steps;
    gf.loss = loss;
    const StopPredicate stop = [stop_smoothed](const MarginReport& mr, double, double,
                                               std::size_t) {
      return mr.smoothed >= stop_smoothed;
    };
    const DenseTrajectory tr = run_gf(w0, data, gf, {}, stop);
    ensure_ok(tr, sdir, "gf");
    write_traj(sdir / "trajectory.csv", tr);
    save_params(tr.final_state, (sdir / "params_final.bin").string());

    // Locate the first snapshot whose risk drops below loss(0)/n, then
    // demand norm and normalized-margin monotonicity from there on.
    const double thr = lab::loss(loss, 0.0) / static_cast<double>(n);
    std::size_t k0 = tr.snapshots.size();
    for (std::size_t k = 0; k < tr.snapshots.size(); ++k)
      if (tr.snapshots[k].margins.risk < thr) {
        k0 = k;
        break;
      }
    bool norm_ok = k0 < tr.snapshots.size();
    bool ring_ok = norm_ok;
    double worst_norm = 0.0, worst_ring = 0.0;
    for (std::size_t k = k0; k + 1 < tr.snapshots.size(); ++k) {
      const double n0 = tr.snapshots[k].diag.norm_sq;
      const double n1 = tr.snapshots[k + 1].diag.norm_sq;
      worst_norm = std::max(worst_norm, n0 - n1);
      if (n1 < n0 * (1.0 - 1e-12)) norm_ok = false;
      const double r0 = tr.snapshots[k].margins.normalized_smoothed;
      const double r1 = tr.snapshots[k + 1].margins.normalized_smoothed;
      worst_ring = std::max(worst_ring, r0 - r1);
      if (r1 < r0 - 1e-6) ring_ok = false;
    }
    const std::string tag = "seed" + std::to_string(seed);
    checks.add("norm_nondecreasing/" + tag, norm_ok,
               {{"threshold_snapshot", k0}, {"worst_drop", worst_norm}});
    checks.add("normalized_margin_nondecreasing/" + tag, ring_ok,
               {{"threshold_snapshot", k0}, {"worst_drop", worst_ring}});

    // The distance-R crossing (R from the reference margin) is reported
    // without any asserted relation to the terminal value.
    const double crossing_r = gamma_gl * std::sqrt(static_cast<double>(m)) / 32.0;
    json crossing = {{"R", crossing_r}, {"reached", false}};
    for (const auto& s : tr.snapshots)
      if (s.diag.movement >= crossing_r) {
        crossing = {{"R", crossing_r},
                    {"reached", true},
                    {"step", s.step},
                    {"normalized_smoothed", s.margins.normalized_smoothed}};
        break;
      }
    summary["runs"].push_back({{"seed", seed},
                               {"risk_threshold", thr},
                               {"threshold_snapshot", k0},
                               {"crossing", crossing},
                               {"final", margin_json(tr.snapshots.back().margins)},
                               {"steps", tr.steps}});
  }
}

// ------------------------------------------------------------------ gf_nc

void run_gf_nc(const json& cfg, const fs::path& dir, json& summary, Checks& checks) {
  check_fields(cfg, {"seeds", "d", "r", "n", "gamma_nc", "eps", "m", "h0", "max_steps",
                     "stop_ring", "delta"});
  const std::size_t d = size_or(cfg, "d", 3);
  const std::size_t r = size_or(cfg, "r", 2);
  const std::size_t n = size_or(cfg, "n", 8);
  const double gamma_nc = num_or(cfg, "gamma_nc", 0.8);
  const double eps = num_or(cfg, "eps", 0.1);
  const double delta = num_or(cfg, "delta", 0.05);
  const double h0 = num_or(cfg, "h0", 3e-4);
  const std::size_t max_steps = size_or(cfg, "max_steps", 150000);
  const double ring_target = (gamma_nc - eps) / (8.0 * static_cast<double>(r));
  const double stop_ring = num_or(cfg, "stop_ring", ring_target * 1.03);
  const std::vector<std::uint64_t> seeds = seeds_or(cfg, {1});
  if (r > d) throw ConfigError("gf_nc uses orthogonal axis clusters: r must be <= d");

  std::size_t m = size_or(cfg, "m", 0);
  if (m == 0)
    m = static_cast<std::size_t>(std::ceil(
        2.0 * std::pow(2.0 / eps, static_cast<double>(d)) *
        std::log(static_cast<double>(r) / delta)));

  ConeSpec spec;
  spec.gamma_nc = gamma_nc;
  spec.eps = eps;
  for (std::size_t k = 0; k < r; ++k) {
    std::vector<double> beta(d, 0.0);
    beta[k] = 1.0;
    spec.betas.push_back(std::move(beta));
    spec.alphas.push_back((k % 2 == 0 ? 1.0 : -1.0) / static_cast<double>(r));
  }
  ReferenceNetwork ref{spec.alphas, spec.betas};

  summary["effective"] = {{"d", d},       {"r", r},       {"n", n},
                          {"gamma_nc", gamma_nc}, {"eps", eps},   {"delta", delta},
                          {"m", m},       {"h0", h0},     {"max_steps", max_steps},
                          {"stop_ring", stop_ring}, {"ring_target", ring_target},
                          {"seeds", seeds}};
  summary["runs"] = json::array();

  for (const std::uint64_t seed : seeds) {
    const fs::path sdir = dir / ("seed" + std::to_string(seed));
    SeededStream dstream(seed, "gf_nc/data");
    const LabeledSet data = gen_neural_collapse(spec, n, dstream);
    verify_neural_collapse(data, spec);
    write_dataset(sdir, data);

    SeededStream istream(seed, "gf_nc/init");
    const Params w0 = init_standard(m, d, istream);
    const double coverage = direction_coverage(w0.V, m, d, spec.betas);
    const GateMask gate0 = make_gate(nc_gap(w0, ref, eps));
    std::vector<std::size_t> gate_sizes(r, 0);
    for (std::size_t k = 0; k < r; ++k)
      for (std::size_t j = 0; j < m; ++j) gate_sizes[k] += gate0[k * m + j];

    // Trapping bookkeeping between snapshots, with allowance 1e-6 per elapsed
    // step on every clause:
    //  - once a pair's gap turns positive it must stay positive, short of the
    //    allowance accumulated since that pair activated;
    //  - an active pair's gap must not decrease between snapshots beyond the
    //    allowance for the interval;
    //  - the potential over the gate frozen at the first snapshot must not
    //    decrease between snapshots beyond the allowance for the interval.
    constexpr double kTrapTol = 1e-6;
    constexpr std::size_t kInactive = static_cast<std::size_t>(-1);
    std::vector<double> prev_gap;
    std::vector<std::size_t> act_step(r * m, kInactive);
    std::size_t prev_step = 0, pos_violations = 0, mono_violations = 0;
    std::size_t phi_violations = 0;
    double worst_deficit = 0.0, worst_drop = 0.0, min_dphi = 0.0;
    bool empty_gate_seen = false;
    std::vector<double> phi_series;
    bool first_snap = true;

    DenseObserver obs = [&](const Params& st, double, std::size_t step,
                            const MarginReport& mr) {
      if (!std::isfinite(mr.weight_norm_sq)) return;
      std::vector<double> gaps = nc_gap(st, ref, eps);
      if (!first_snap) {
        const double interval_tol = kTrapTol * static_cast<double>(step - prev_step);
        for (std::size_t i = 0; i < gaps.size(); ++i) {
          if (act_step[i] == kInactive) continue;
          const double pos_tol = kTrapTol * static_cast<double>(step - act_step[i]);
          if (gaps[i] < -pos_tol) {
            ++pos_violations;
            worst_deficit = std::max(worst_deficit, -gaps[i] - pos_tol);
          }
          if (gaps[i] < prev_gap[i] - interval_tol) {
            ++mono_violations;
            worst_drop = std::max(worst_drop, prev_gap[i] - gaps[i]);
          }
        }
      }
      for (std::size_t i = 0; i < gaps.size(); ++i)
        if (act_step[i] == kInactive && gaps[i] > 0.0) act_step[i] = step;
      prev_gap = std::move(gaps);
      const PotentialValue pv = nc_potential(st, ref, gate0);
      if (pv.empty_gate) empty_gate_seen = true;
      if (!first_snap) {
        const double dphi = pv.value - phi_series.back();
        min_dphi = std::min(min_dphi, dphi);
        if (dphi < -kTrapTol * static_cast<double>(step - prev_step)) ++phi_violations;
      }
      phi_series.push_back(pv.value);
      prev_step = step;
      first_snap = false;
    };

    GfConfig gf;
    gf.mode = StepMode::loss_normalized;
    gf.h = h0;
    gf.max_steps = max_steps;
    gf.loss = LossKind::exponential;
    const StopPredicate stop = [stop_ring](const MarginReport& mr, double, double,
                                           std::size_t) {
      return mr.normalized_smoothed >= stop_ring;
    };
    const DenseTrajectory tr = run_gf(w0, data, gf, obs, stop);
    ensure_ok(tr, sdir, "gf");
    write_traj(sdir / "trajectory.csv", tr, {{"phi", &phi_series}});
    save_params(tr.final_state, (sdir / "params_final.bin").string());

    const double ring = tr.snapshots.back().margins.normalized_smoothed;
    const std::string tag = "seed" + std::to_string(seed);
    checks.add("gap_trapping/" + tag, pos_violations == 0 && mono_violations == 0,
               {{"positivity_violations", pos_violations},
                {"monotonicity_violations", mono_violations},
                {"worst_positivity_deficit", worst_deficit},
                {"worst_interval_drop", worst_drop}});
    checks.add("potential_monotone/" + tag, phi_violations == 0 && !empty_gate_seen,
               {{"violations", phi_violations}, {"min_interval_dphi", min_dphi}});
    checks.add("terminal_normalized_margin/" + tag, ring >= ring_target,
               {{"measured", ring}, {"target", ring_target}});
    summary["runs"].push_back({{"seed", seed},
                               {"coverage", coverage},
                               {"gate_sizes", gate_sizes},
                               {"steps", tr.steps},
                               {"final_phi", phi_series.back()},
                               {"final", margin_json(tr.snapshots.back().margins)}});
  }
}

// --------------------------------------------------------------- scalar_gf

void run_scalar_gf(const json& cfg, const fs::path& dir, json& summary, Checks& checks) {
  check_fields(cfg, {"seeds", "d", "m", "h0", "max_steps"});
  const std::size_t d = size_or(cfg, "d", 4);
  const std::size_t m = size_or(cfg, "m", 64);
  const double h0 = num_or(cfg, "h0", 1e-3);
  const std::size_t max_steps = size_or(cfg, "max_steps", 400000);
  const std::vector<std::uint64_t> seeds = seeds_or(cfg, {1});
  const std::size_t n = std::size_t{1} << d;
  const double gamma_gl = 1.0 / std::sqrt(8.0 * static_cast<double>(d));
  const double ring_target = gamma_gl / 4.0;
  const double norm_target = 10.0 * std::log(static_cast<double>(n));

  const ReferenceNetwork ref = parity_reference(d, {0, 1});
  const std::size_t r = ref.alphas.size();
  PlantSpec plant{ref.betas, ref.alphas};
  std::vector<std::size_t> planted(r);
  for (std::size_t k = 0; k < r; ++k) planted[k] = k;

  summary["effective"] = {{"d", d},   {"m", m},   {"n", n},
                          {"h0", h0}, {"max_steps", max_steps},
                          {"ring_target", ring_target}, {"norm_target", norm_target},
                          {"phi_rate", gamma_gl / 2.0}, {"seeds", seeds}};
  summary["runs"] = json::array();

  for (const std::uint64_t seed : seeds) {
    const fs::path sdir = dir / ("seed" + std::to_string(seed));
    SeededStream dstream(seed, "scalar_gf/data");
    const LabeledSet data = gen_parity(d, n, {0, 1}, dstream, true);
    write_dataset(sdir, data);
    SeededStream istream(seed, "scalar_gf/init");
    const ScalarParams p0 = scalar_init(m, d, istream, &plant);

    std::vector<int> sign_a0(r), sign_b0(r);
    for (std::size_t k = 0; k < r; ++k) {
      sign_a0[k] = p0.a[k] > 0.0 ? 1 : -1;
      sign_b0[k] = p0.b[k] > 0.0 ? 1 : -1;
    }

    PotentialSeries series;
    std::vector<double> norms;
    std::size_t sign_flips = 0;
    ScalarObserver obs = [&](const ScalarParams& st, double time, std::size_t,
                             const MarginReport& mr) {
      if (!std::isfinite(mr.weight_norm_sq)) return;
      series.times.push_back(time);
      series.phi.push_back(gl_potential(st, planted, ref.alphas).value);
      series.Q.push_back(mr.risk);
      series.q_sums.push_back(mr.sum_q);
      norms.push_back(std::sqrt(mr.weight_norm_sq));
      for (std::size_t k = 0; k < r; ++k) {
        if ((st.a[k] > 0.0 ? 1 : -1) != sign_a0[k]) ++sign_flips;
        if ((st.b[k] > 0.0 ? 1 : -1) != sign_b0[k]) ++sign_flips;
      }
    };

    GfConfig gf;
    gf.mode = StepMode::loss_normalized;
    gf.h = h0;
    gf.max_steps = max_steps;
    gf.loss = LossKind::exponential;
    const StopPredicate stop = [&](const MarginReport& mr, double nsq, double,
                                   std::size_t) {
      return nsq >= norm_target && mr.normalized_smoothed >= ring_target * 1.02;
    };
    const ScalarTrajectory tr = run_gf_scalar(p0, data, gf, obs, stop);
    ensure_ok(tr, sdir, "gf");
    write_traj(sdir / "trajectory.csv", tr, {{"phi", &series.phi}});

    double worst_balance = 0.0;
    for (const auto& s : tr.snapshots)
      worst_balance = std::max(worst_balance, s.diag.balance_residual);
    const auto& fin = tr.snapshots.back();
    const PhiCheckReport phi = abstract_phi_check(series, norms, gamma_gl / 2.0);

    const std::string tag = "seed" + std::to_string(seed);
    checks.add("norm_precondition/" + tag, fin.diag.norm_sq >= norm_target,
               {{"measured", fin.diag.norm_sq}, {"target", norm_target}});
    checks.add("terminal_normalized_margin/" + tag,
               fin.margins.normalized_smoothed >= ring_target,
               {{"measured", fin.margins.normalized_smoothed}, {"target", ring_target}});
    checks.add("balance_residual/" + tag, worst_balance <= 10.0 * h0,
               {{"measured", worst_balance}, {"bound", 10.0 * h0}});
    checks.add("planted_signs_stable/" + tag, sign_flips == 0, {{"flips", sign_flips}});
    checks.add("phi_growth/" + tag, phi.norm_ok && phi.worst_slack <= 0.1,
               {{"worst_slack", phi.worst_slack},
                {"worst_interval", phi.worst_interval},
                {"norm_ok", phi.norm_ok}});
    summary["runs"].push_back({{"seed", seed},
                               {"steps", tr.steps},
                               {"worst_balance", worst_balance},
                               {"phi_worst_slack", phi.worst_slack},
                               {"final", margin_json(fin.margins)}});
  }
}

// -------------------------------------------------------------- kkt_escape

void run_kkt_escape(const json& cfg, const fs::path& dir, json& summary, Checks& checks) {
  check_fields(cfg, {"seeds", "d", "n1", "n2", "halfwidth", "m", "gamma_threshold",
                     "alpha_steps", "h0", "max_steps"});
  const std::size_t d = size_or(cfg, "d", 4);
  const std::size_t n1 = size_or(cfg, "n1", 20);
  const std::size_t n2 = size_or(cfg, "n2", 20);
  const double halfwidth = num_or(cfg, "halfwidth", 0.1);
  const std::size_t m = size_or(cfg, "m", 512);
  const double threshold = num_or(cfg, "gamma_threshold", 0.02);
  const std::size_t alpha_steps = size_or(cfg, "alpha_steps", 400);
  const double h0 = num_or(cfg, "h0", 0.01);
  const std::size_t max_steps = size_or(cfg, "max_steps", 200000);
  const std::vector<std::uint64_t> seeds = seeds_or(cfg, {1});

  summary["effective"] = {{"d", d},   {"n1", n1}, {"n2", n2},
                          {"halfwidth", halfwidth}, {"m", m},
                          {"gamma_threshold", threshold}, {"alpha_steps", alpha_steps},
                          {"h0", h0}, {"max_steps", max_steps}, {"seeds", seeds}};
  summary["runs"] = json::array();

  for (const std::uint64_t seed : seeds) {
    const fs::path sdir = dir / ("seed" + std::to_string(seed));
    SeededStream dstream(seed, "kkt/data");
    const LabeledSet cones = gen_two_cones(n1, n2, halfwidth, d, dstream);
    const MaxMarginResult base = linear_max_margin(cones);

    CsvWriter sweep(sdir / "alpha_sweep.csv", {"alpha", "margin", "degenerate"});
    double chosen_alpha = -1.0, gamma_hat = 0.0;
    LabeledSet aug;
    for (std::size_t i = 0; i <= alpha_steps; ++i) {
      const double alpha =
          1.0 - static_cast<double>(i) / static_cast<double>(alpha_steps);
      LabeledSet cand = cones;
      cand.examples.push_back(kkt_point(cones, alpha));
      const MaxMarginResult r = linear_max_margin(cand);
      sweep.row({alpha, r.margin, r.degenerate ? 1.0 : 0.0});
      if (!r.degenerate && r.margin > 0.0 && r.margin <= threshold) {
        chosen_alpha = alpha;
        gamma_hat = r.margin;
        aug = std::move(cand);
        break;
      }
    }
    sweep.flush();
    const std::string tag = "seed" + std::to_string(seed);
    checks.add("kkt_margin_below_threshold/" + tag, chosen_alpha >= 0.0,
               {{"alpha", chosen_alpha},
                {"gamma_hat", gamma_hat},
                {"threshold", threshold},
                {"base_margin", base.margin}});
    if (chosen_alpha < 0.0) continue;

    aug.tag = "two_cones_kkt";
    aug.provenance["alpha"] = chosen_alpha;
    aug.provenance["gamma_hat"] = gamma_hat;
    write_dataset(sdir, aug);

    SeededStream istream(seed, "kkt/init");
    const Params w0 = init_standard(m, d, istream);
    GfConfig gf;
    gf.mode = StepMode::loss_normalized;
    gf.h = h0;
    gf.max_steps = max_steps;
    gf.loss = LossKind::exponential;
    const double stop_ring = std::max(0.04, 2.0 * gamma_hat);
    const StopPredicate stop = [stop_ring](const MarginReport& mr, double, double,
                                           std::size_t) {
      return mr.normalized_smoothed >= stop_ring;
    };
    const DenseTrajectory tr = run_gf(w0, aug, gf, {}, stop);
    ensure_ok(tr, sdir, "gf");
    write_traj(sdir / "trajectory.csv", tr);
    save_params(tr.final_state, (sdir / "params_final.bin").string());

    const double ring = tr.snapshots.back().margins.normalized_smoothed;
    checks.add("gf_escapes_linear_margin/" + tag, ring > gamma_hat,
               {{"terminal_normalized_smoothed", ring}, {"gamma_hat", gamma_hat}});
    summary["runs"].push_back({{"seed", seed},
                               {"alpha", chosen_alpha},
                               {"gamma_hat", gamma_hat},
                               {"base_margin", base.margin},
                               {"steps", tr.steps},
                               {"final", margin_json(tr.snapshots.back().margins)}});
  }
}

// ------------------------------------------------------------- ntk_certify

void run_ntk_certify(const json& cfg, const fs::path& dir, json& summary, Checks& checks) {
  check_fields(cfg, {"seeds", "dataset", "d", "n", "margin", "samples", "delta"});
  const std::string dataset = str_or(cfg, "dataset", "parity");
  const double delta = num_or(cfg, "delta", 0.05);
  const std::size_t samples = size_or(cfg, "samples", 100000);
  const std::vector<std::uint64_t> seeds = seeds_or(cfg, {1});
  summary["runs"] = json::array();

  if (dataset == "parity") {
    const std::size_t d = size_or(cfg, "d", 4);
    const std::size_t n = std::size_t{1} << d;
    const double target = 1.0 / (50.0 * static_cast<double>(d));
    summary["effective"] = {{"dataset", dataset}, {"d", d},         {"n", n},
                            {"samples", samples}, {"delta", delta}, {"seeds", seeds},
                            {"target", target}};
    for (const std::uint64_t seed : seeds) {
      SeededStream dstream(seed, "ntk/parity/data");
      const LabeledSet data = gen_parity(d, n, {0, 1}, dstream, true);
      const TransportMap map = transport_parity(d, {0, 1});
      SeededStream mstream(seed, "ntk/parity/mc");
      const McMargin mc = ntk_margin_mc(map, data, samples, mstream, delta);
      const std::string tag = "seed" + std::to_string(seed);
      checks.add("parity_ntk_margin/" + tag, mc.estimate >= target - mc.half_width,
                 {{"estimate", mc.estimate},
                  {"half_width", mc.half_width},
                  {"target", target}});
      json rep = {{"map", map.name},          {"dataset", data.tag},
                  {"samples", mc.samples},    {"estimate", mc.estimate},
                  {"half_width", mc.half_width},
                  {"per_example_means", mc.per_example_means},
                  {"argmin", mc.argmin},      {"seed", seed}};
      summary["runs"].push_back(rep);
      save_json_file(dir / ("certify_seed" + std::to_string(seed) + ".json"), rep);
    }
  } else if (dataset == "linear") {
    const std::size_t d = size_or(cfg, "d", 10);
    const std::size_t n = size_or(cfg, "n", 32);
    const double margin = num_or(cfg, "margin", 0.5);
    summary["effective"] = {{"dataset", dataset}, {"d", d},         {"n", n},
                            {"margin", margin},   {"samples", samples},
                            {"delta", delta},     {"seeds", seeds}};
    for (const std::uint64_t seed : seeds) {
      SeededStream dstream(seed, "ntk/linear/data");
      const LabeledSet data = gen_linear_separable(d, n, margin, dstream);
      const std::vector<double> u_bar = data.provenance["u_bar"].get<std::vector<double>>();
      const TransportMap map = transport_linear_outer(u_bar);
      SeededStream mstream(seed, "ntk/linear/mc");
      const McMargin mc = ntk_margin_mc(map, data, samples, mstream, delta);

      std::vector<double> neg(u_bar.size());
      for (std::size_t t = 0; t < u_bar.size(); ++t) neg[t] = -u_bar[t];
      const ReferenceNetwork ref{{0.5, -0.5}, {u_bar, neg}};
      const double ref_margin = reference_margin(ref, data);

      const std::string tag = "seed" + std::to_string(seed);
      checks.add("linear_ntk_margin/" + tag,
                 mc.estimate >= margin / 32.0 - mc.half_width,
                 {{"estimate", mc.estimate},
                  {"half_width", mc.half_width},
                  {"target", margin / 32.0}});
      checks.add("linear_reference_margin/" + tag,
                 ref_margin >= margin / 2.0 - 1e-12,
                 {{"measured", ref_margin}, {"target", margin / 2.0}});
      json rep = {{"map", map.name},       {"dataset", data.tag},
                  {"samples", mc.samples}, {"estimate", mc.estimate},
                  {"half_width", mc.half_width},
                  {"per_example_means", mc.per_example_means},
                  {"argmin", mc.argmin},   {"reference_margin", ref_margin},
                  {"seed", seed}};
      summary["runs"].push_back(rep);
      save_json_file(dir / ("certify_seed" + std::to_string(seed) + ".json"), rep);
      if (seed == seeds.front()) write_dataset(dir, data);
    }
  } else {
    throw ConfigError("ntk_certify dataset must be \"parity\" or \"linear\"");
  }
}

// ---------------------------------------------------------- coverage_sweep

void run_coverage_sweep(const json& cfg, const fs::path& dir, json& summary,
                        Checks& checks) {
  check_fields(cfg, {"d", "eps", "delta", "r", "trials", "seed"});
  const std::size_t d = size_or(cfg, "d", 3);
  const double eps = num_or(cfg, "eps", 0.5);
  const double delta = num_or(cfg, "delta", 0.05);
  const std::size_t r = size_or(cfg, "r", 4);
  const std::size_t trials = size_or(cfg, "trials", 100);
  const std::uint64_t seed = size_or(cfg, "seed", 7);
  if (!(eps > 0.0 && eps < 2.0)) throw ConfigError("eps must lie in (0, 2)");
  if (trials == 0) throw ConfigError("trials must be positive");

  const std::size_t m = static_cast<std::size_t>(std::ceil(
      2.0 * std::pow(2.0 / eps, static_cast<double>(d)) *
      std::log(static_cast<double>(r) / delta)));

  CsvWriter csv(dir / "coverage.csv", {"trial", "coverage", "within_eps"});
  std::size_t hits = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    SeededStream ts(seed, "coverage/trial" + std::to_string(t));
    SeededStream bs = ts.fork("betas");
    std::vector<std::vector<double>> betas;
    for (std::size_t k = 0; k < r; ++k) betas.push_back(unit_sphere_vector(bs, d));
    SeededStream vs = ts.fork("rows");
    const std::vector<double> V =
        gaussian_vector(vs, m * d, 1.0 / std::sqrt(static_cast<double>(d)));
    const double cov = direction_coverage(V, m, d, betas);
    const bool hit = cov <= eps;
    hits += hit ? 1 : 0;
    csv.row({static_cast<double>(t), cov, hit ? 1.0 : 0.0});
  }
  csv.flush();

  const std::size_t need =
      static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(trials)));
  checks.add("coverage_within_eps",
             hits >= need, {{"hits", hits}, {"trials", trials}, {"required", need}});
  summary["effective"] = {{"d", d},     {"eps", eps},       {"delta", delta},
                          {"r", r},     {"trials", trials}, {"seed", seed},
                          {"m", m},     {"hits", hits},     {"required", need}};
}

}  // namespace

// =================================================================== API

RunResult run_experiment(const json& config, const fs::path& out_root) {
  if (!config.is_object()) throw ConfigError("config must be a JSON object");
  if (!config.contains("kind") || !config["kind"].is_string())
    throw ConfigError("config requires a string \"kind\"");
  const std::string kind = config["kind"].get<std::string>();
  static const std::set<std::string> kinds = {
      "figure1",   "sgd_parity", "gf_parity_margin", "gf_nc",
      "scalar_gf", "kkt_escape", "ntk_certify",      "coverage_sweep"};
  if (!kinds.count(kind)) throw ConfigError("unknown experiment kind: " + kind);

  const std::string name = str_or(config, "out", kind);
  const fs::path run_dir = out_root / name;
  fs::create_directories(run_dir);

  json summary;
  summary["config"] = config;
  summary["versions"] = {{"lab", kVersion}, {"rng", kRngVersion}};
  Checks checks;

  if (kind == "figure1") run_figure1(config, run_dir, summary, checks);
  else if (kind == "sgd_parity") run_sgd_parity(config, run_dir, summary, checks);
  else if (kind == "gf_parity_margin") run_gf_parity_margin(config, run_dir, summary, checks);
  else if (kind == "gf_nc") run_gf_nc(config, run_dir, summary, checks);
  else if (kind == "scalar_gf") run_scalar_gf(config, run_dir, summary, checks);
  else if (kind == "kkt_escape") run_kkt_escape(config, run_dir, summary, checks);
  else if (kind == "ntk_certify") run_ntk_certify(config, run_dir, summary, checks);
  else run_coverage_sweep(config, run_dir, summary, checks);

  summary["checks"] = checks.list;
  summary["all_pass"] = checks.all;
  save_json_file(run_dir / "config.json", config);
  save_json_file(run_dir / "summary.json", summary);

  RunResult res;
  res.all_pass = checks.all;
  res.run_dir = run_dir;
  res.summary = std::move(summary);
  return res;
}

void emit_plotdata(const fs::path& run_dir) {
  const fs::path summary_path = run_dir / "summary.json";
  if (!fs::exists(summary_path))
    throw std::runtime_error("emit_plotdata: no summary.json under " + run_dir.string());
  const json summary = load_json_file(summary_path);
  const std::string kind = summary.at("config").at("kind").get<std::string>();
  if (kind != "figure1")
    throw std::runtime_error("emit_plotdata: plot panels are defined for figure1 runs");

  const auto seeds = summary.at("effective").at("seeds").get<std::vector<std::uint64_t>>();
  const auto widths = summary.at("effective").at("widths").get<std::vector<std::size_t>>();
  const fs::path sdir = run_dir / ("seed" + std::to_string(seeds.front()));
  const fs::path plots = run_dir / "plots";

  for (const std::size_t m : widths) {
    const fs::path wdir = sdir / ("m" + std::to_string(m));
    const Params w0 = load_params((wdir / "params_init.bin").string());
    const Params wt = load_params((wdir / "params_final.bin").string());
    const std::string prefix = "m" + std::to_string(m);

    const RotationProfile rp = rotation_profile(w0, wt);
    CsvWriter rot(plots / (prefix + "_rotation.csv"), {"index", "cosine"});
    for (std::size_t j = 0; j < rp.cosines.size(); ++j)
      rot.row({static_cast<double>(j), rp.cosines[j]});
    rot.flush();

    const std::vector<double> np = norm_profile(wt);
    CsvWriter nrm(plots / (prefix + "_norms.csv"), {"index", "relative_norm"});
    for (std::size_t j = 0; j < np.size(); ++j)
      nrm.row({static_cast<double>(j), np[j]});
    nrm.flush();

    const CsvTable proj = read_csv(wdir / "proj.csv");
    CsvWriter traj(plots / (prefix + "_traj2d.csv"), proj.header);
    for (const auto& row : proj.rows) traj.row(row);
    traj.flush();
  }
}

fs::path default_output_root() {
  const char* env = std::getenv("LAB_OUTPUT_ROOT");
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("runs");
}

int cli_main(int argc, char** argv) {
  CLI::App app{"feature-selection and margin laboratory for two-layer ReLU nets"};
  app.require_subcommand(1);
  std::string config_path, run_dir;
  std::string out_root = default_output_root().string();

  CLI::App* run = app.add_subcommand("run", "run an experiment from a JSON config");
  run->add_option("config", config_path, "experiment config (JSON)")->required();
  run->add_option("--out", out_root, "output root directory");
  CLI::App* plot = app.add_subcommand("plotdata", "emit per-panel plot CSVs from a run");
  plot->add_option("rundir", run_dir, "completed run directory")->required();
  CLI::App* cert = app.add_subcommand("certify", "run a certification config");
  cert->add_option("config", config_path, "certification config (JSON)")->required();
  cert->add_option("--out", out_root, "output root directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (plot->parsed()) {
      emit_plotdata(run_dir);
      std::printf("plot data written under %s\n", (fs::path(run_dir) / "plots").c_str());
      return 0;
    }
    const json cfg = load_json_file(config_path);
    if (cert->parsed()) {
      const std::string kind =
          cfg.contains("kind") && cfg["kind"].is_string() ? cfg["kind"].get<std::string>() : "";
      if (kind != "ntk_certify" && kind != "coverage_sweep")
        throw ConfigError("certify expects kind ntk_certify or coverage_sweep");
    }
    const RunResult res = run_experiment(cfg, out_root);
    for (const auto& c : res.summary["checks"]) {
      std::printf("%-48s %s\n", c["name"].get<std::string>().c_str(),
                  c["pass"].get<bool>() ? "PASS" : "FAIL");
    }
    std::printf("summary: %s\n", (res.run_dir / "summary.json").c_str());
    return res.all_pass ? 0 : 1;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const json::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const NumericalAbort& e) {
    std::fprintf(stderr, "numerical abort: %s (snapshot: %s)\n", e.what(),
                 e.snapshot_path.c_str());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}

}  // namespace lab
