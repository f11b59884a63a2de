#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "nlheat/blowup_frame.hpp"
#include "nlheat/common.hpp"
#include "nlheat/grid.hpp"
#include "nlheat/modulation.hpp"
#include "nlheat/pde_core.hpp"
#include "nlheat/profile_manifold.hpp"

namespace nlheat::study_harness {

using blowup_frame::ModulationState;

// Everything one end-to-end blowup experiment needs. The defaults target the
// n = 1 desk run; higher dimensions want a narrower window and coarser march.
struct StudyConfig {
  double p = 3.0;
  int n = 1;

  // direct stage, x grid
  double h = 0.005;
  double L = 10.0;
  double dt = 1e-5;
  double t_end = 5.0;
  double blowup_cutoff = 50.0;

  // initial data: anisotropic profile plus a seeded far-field bump
  double c0 = 1.0;
  SymMat b0{1};
  double delta0 = 0.0;        // sup-norm size of the bump
  double delta3_coeff = 1.0;  // weighted-norm target delta3 = coeff * ||b0||^2
  double bump_width = 0.5;
  std::uint64_t seed = 1;

  // rescaled march, y grid
  double window = 90.0;
  double hy = 0.1;
  double dtau = 5e-3;
  double tau_end = 18.0;
  int store_every = 10;       // sample the series every this many march steps
  double split_tol = 1e-10;
  int split_max_iter = 25;
  double recenter_threshold = 0.5;

  // reporting
  double R = 2.0;             // profile comparison radius in y
  double profile_tau_span = 3.0;  // trailing tau span kept for profile frames
  double zeta_bound = 1.0;

  double delta3() const { return delta3_coeff * b0.frobenius_norm() * b0.frobenius_norm(); }

  void validate() const {
    if (!(p > 1.0)) throw std::invalid_argument("StudyConfig: p must exceed 1");
    if (n < 1 || n > kMaxDim) throw std::invalid_argument("StudyConfig: n must be 1..3");
    if (b0.dim() != n) throw std::invalid_argument("StudyConfig: b0 dimension mismatch");
    if (!(c0 >= 1.0 && c0 <= 4.0))
      throw std::invalid_argument("StudyConfig: c0 must lie in [1, 4]");
    if (!b0.is_psd(1e-14) || !(b0.frobenius_norm() <= 0.25))
      throw std::invalid_argument("StudyConfig: b0 must be PSD with norm well below 1");
    if (!(delta0 >= 0.0 && delta0 <= 0.1))
      throw std::invalid_argument("StudyConfig: delta0 must lie in [0, 0.1]");
    if (!(delta3_coeff > 0.0)) throw std::invalid_argument("StudyConfig: delta3 scale must be positive");
    if (!(h > 0.0 && L > h && dt > 0.0 && t_end > 0.0))
      throw std::invalid_argument("StudyConfig: direct-stage grid/time must be positive");
    if (!(blowup_cutoff > 1.0)) throw std::invalid_argument("StudyConfig: cutoff must exceed 1");
    if (!(bump_width > 0.0)) throw std::invalid_argument("StudyConfig: bump width must be positive");
    if (!(window >= 20.0 && hy > 0.0 && hy < window))
      throw std::invalid_argument("StudyConfig: march window must be >= 20 with 0 < hy < window");
    if (!(dtau > 0.0 && tau_end > dtau)) throw std::invalid_argument("StudyConfig: march time must be positive");
    if (store_every < 1) throw std::invalid_argument("StudyConfig: store_every must be >= 1");
    if (!(split_tol > 0.0) || split_max_iter < 1)
      throw std::invalid_argument("StudyConfig: split tolerances invalid");
    if (!(recenter_threshold > 0.0)) throw std::invalid_argument("StudyConfig: recenter threshold invalid");
    if (!(R > 0.0)) throw std::invalid_argument("StudyConfig: R must be positive");
    if (!(profile_tau_span > 0.0 && zeta_bound > 0.0))
      throw std::invalid_argument("StudyConfig: reporting bounds must be positive");
  }
};

// Scale that puts the initial data on the unit-normalized slaving manifold.
inline double initial_lambda(const StudyConfig& cfg) {
  return std::sqrt(cfg.c0 + 2.0 * cfg.b0.trace() / (cfg.p - 1.0));
}

namespace detail {

// Compactly supported C^3 bump, unit height at the center.
inline double bump_shape(double s2) {
  if (s2 >= 1.0) return 0.0;
  const double q = 1.0 - s2;
  return q * q * q * q;
}

struct BumpSpec {
  bool active = false;
  double amplitude = 0.0;
  double width = 1.0;
  std::array<double, kMaxDim> center{};
};

// Places the bump far enough out that its weight-3 norm meets delta3. The
// placement radius, axis, and sign come from the seed; a rejected placement
// means the box cannot hold both norm targets at once.
inline BumpSpec bump_spec(const StudyConfig& cfg) {
  BumpSpec spec;
  if (cfg.delta0 <= 0.0) return spec;
  const double d3 = cfg.delta3();
  if (d3 <= 0.0)
    throw std::invalid_argument(
        "make_initial_data: delta0 > 0 needs a positive delta3 target (b0 = 0 gives none)");

  const double w = cfg.bump_width;
  // <r - w>^3 >= delta0/delta3 keeps the weighted norm under target; the
  // factor 1.1 absorbs the inner-edge approximation.
  const double need = 1.1 * std::pow(cfg.delta0 / d3, 2.0 / 3.0) - 1.0;
  double r_c = w + std::sqrt(std::max(need, 0.0));
  const double slack = (cfg.L - 2.0 * cfg.h - w) - r_c;
  if (slack < 0.0)
    throw std::invalid_argument("make_initial_data: norm targets need a bump outside the box");

  std::mt19937_64 gen(cfg.seed);
  std::uniform_int_distribution<int> axis_pick(0, cfg.n - 1);
  std::uniform_int_distribution<int> sign_pick(0, 1);
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  const int axis = axis_pick(gen);
  const double sign = sign_pick(gen) == 0 ? -1.0 : 1.0;
  r_c += jitter(gen) * std::min(slack, 0.5);

  spec.active = true;
  spec.amplitude = cfg.delta0;
  spec.width = w;
  spec.center[axis] = sign * r_c;
  return spec;
}

inline double bump_value(const BumpSpec& spec, const double* x, int n) {
  if (!spec.active) return 0.0;
  double s2 = 0.0;
  for (int d = 0; d < n; ++d) {
    const double u = (x[d] - spec.center[d]) / spec.width;
    s2 += u * u;
  }
  return spec.amplitude * bump_shape(s2);
}

// Shifts the values by an integer number of cells per axis, reusing the edge
// value for cells exposed at the receding side. Exact apart from that fill.
inline void shift_field(Field& v, const std::array<int, kMaxDim>& cells) {
  const int npts = v.points_per_axis();
  const std::vector<double> old = v.values;
  std::vector<std::size_t> strides(static_cast<std::size_t>(v.dim));
  std::size_t s = 1;
  for (int d = v.dim - 1; d >= 0; --d) {
    strides[static_cast<std::size_t>(d)] = s;
    s *= static_cast<std::size_t>(npts);
  }
  v.for_each([&](const std::array<int, kMaxDim>& idx, std::size_t flat) {
    std::size_t src = 0;
    for (int d = 0; d < v.dim; ++d) {
      const int j = std::clamp(idx[static_cast<std::size_t>(d)] + cells[static_cast<std::size_t>(d)], 0, npts - 1);
      src += static_cast<std::size_t>(j) * strides[static_cast<std::size_t>(d)];
    }
    v.values[flat] = old[src];
  });
}

}  // namespace detail

// Closure form of the initial data so it can be sampled on any grid.
inline std::function<double(const double*)> initial_data_function(const StudyConfig& cfg) {
  cfg.validate();
  const detail::BumpSpec spec = detail::bump_spec(cfg);
  const double p = cfg.p, c0 = cfg.c0;
  const SymMat b0 = cfg.b0;
  const int n = cfg.n;
  return [p, c0, b0, spec, n](const double* x) {
    const double denom = p - 1.0 + b0.quadratic_form(x);
    return std::pow(c0 / denom, 1.0 / (p - 1.0)) + detail::bump_value(spec, x, n);
  };
}

// Initial data on the direct-stage grid, with the measured perturbation norms
// checked against their targets.
inline Field make_initial_data(const StudyConfig& cfg) {
  cfg.validate();
  auto f = initial_data_function(cfg);
  Field u0(cfg.n, cfg.h, cfg.L);
  u0.fill(f);

  Field diff(cfg.n, cfg.h, cfg.L);
  const double p = cfg.p, c0 = cfg.c0;
  const SymMat b0 = cfg.b0;
  diff.for_each([&](const std::array<int, kMaxDim>& idx, std::size_t flat) {
    double x[kMaxDim] = {0, 0, 0};
    diff.coordinates_of(idx, x);
    const double profile = std::pow(c0 / (p - 1.0 + b0.quadratic_form(x)), 1.0 / (p - 1.0));
    diff.values[flat] = u0.values[flat] - profile;
  });
  const double tol = 1.0 + 1e-12;
  if (diff.sup_norm() > cfg.delta0 * tol)
    throw std::runtime_error("make_initial_data: sup-norm target missed");
  if (cfg.delta0 > 0.0 && diff.weighted_sup_norm(3.0) > cfg.delta3() * tol)
    throw std::runtime_error("make_initial_data: weighted-norm target missed");
  return u0;
}

// Extrapolates the blowup time from the sup-norm history: w = (sup u)^{-(p-1)}
// falls linearly to zero, so fit w against t over the trailing window
// (t* - t) in [10 dt, 1000 dt] and take the zero crossing. The window is
// chosen from a crude two-point estimate first, then once more from the fit.
inline double fit_blowup_time(const pde_core::Trajectory& traj, double p) {
  if (!(p > 1.0)) throw std::invalid_argument("fit_blowup_time: p must exceed 1");
  if (!traj.cutoff_triggered)
    throw std::invalid_argument("fit_blowup_time: trajectory did not reach the cutoff");
  const std::size_t m = traj.times.size();
  if (m < 4 || traj.sup_norms.size() != m)
    throw std::invalid_argument("fit_blowup_time: trajectory too short");

  std::vector<double> w(m);
  for (std::size_t i = 0; i < m; ++i) w[i] = std::pow(traj.sup_norms[i], -(p - 1.0));

  const double dt = traj.dt;
  if (!(w[m - 2] > w[m - 1]))
    throw std::runtime_error("fit_blowup_time: sup norm not growing at the cutoff");
  double t_star = traj.times[m - 1] +
                  w[m - 1] * (traj.times[m - 1] - traj.times[m - 2]) / (w[m - 2] - w[m - 1]);

  for (int pass = 0; pass < 2; ++pass) {
    std::vector<double> ts, ws;
    for (std::size_t i = 0; i < m; ++i) {
      const double rem = t_star - traj.times[i];
      if (rem >= 10.0 * dt && rem <= 1000.0 * dt) {
        ts.push_back(traj.times[i]);
        ws.push_back(w[i]);
      }
    }
    if (ts.size() < 3)
      throw std::runtime_error("fit_blowup_time: fit window holds fewer than 3 samples");
    for (std::size_t i = 1; i < ws.size(); ++i)
      if (!(ws[i] < ws[i - 1]))
        throw std::runtime_error("fit_blowup_time: sup norm not monotone in the fit window");
    const LinearFit fit = fit_line(ts, ws);
    if (!(fit.slope < 0.0))
      throw std::runtime_error("fit_blowup_time: degenerate fit slope");
    t_star = -fit.intercept / fit.slope;
  }
  if (!(t_star > 0.0)) throw std::runtime_error("fit_blowup_time: nonpositive blowup time");
  return t_star;
}

// Limiting shape in the slow similarity variable, evaluated at |y|^2 = r2.
inline double profile_target(double p, double r2) {
  const double pm1 = p - 1.0;
  const double kappa = std::pow(pm1, -1.0 / pm1);
  return kappa * std::pow(1.0 + pm1 * r2 / (4.0 * p), -1.0 / pm1);
}

struct ProfileCheckResult {
  std::vector<double> times;
  std::vector<double> sup_errors;     // over |y| <= R
  std::vector<double> center_errors;  // at y = 0
};

// Rescales each stored frame around its center and compares against the
// limiting shape on |y| <= R. Frames past t_star or too narrow to cover the
// comparison set are skipped.
inline ProfileCheckResult profile_check(const pde_core::Trajectory& traj, double t_star,
                                        double p, double R,
                                        const std::vector<std::array<double, kMaxDim>>& zetas = {}) {
  if (!(t_star > 0.0)) throw std::invalid_argument("profile_check: t_star must be positive");
  if (!(p > 1.0)) throw std::invalid_argument("profile_check: p must exceed 1");
  if (!(R > 0.0)) throw std::invalid_argument("profile_check: R must be positive");
  if (!zetas.empty() && zetas.size() != traj.frames.size())
    throw std::invalid_argument("profile_check: zeta series does not match the frames");

  ProfileCheckResult out;
  const double pm1 = p - 1.0;
  const double kappa = std::pow(pm1, -1.0 / pm1);
  const int m_axis = 20;  // comparison lattice: 2 m_axis + 1 points per axis

  for (std::size_t f = 0; f < traj.frames.size(); ++f) {
    const Field& u = traj.frames[f];
    const double t = traj.frame_times[f];
    const double rem = t_star - t;
    if (!(rem > 0.0)) continue;
    const double ell = std::sqrt(rem * std::abs(std::log(rem)));
    std::array<double, kMaxDim> zeta{};
    if (!zetas.empty()) zeta = zetas[f];

    double zeta_max = 0.0;
    for (int d = 0; d < u.dim; ++d) zeta_max = std::max(zeta_max, std::abs(zeta[d]));
    if (zeta_max + R * ell > u.L - 2.0 * u.h) continue;

    const double scale = std::pow(rem, 1.0 / pm1);
    const int per_axis = 2 * m_axis + 1;
    std::size_t total = 1;
    for (int d = 0; d < u.dim; ++d) total *= static_cast<std::size_t>(per_axis);

    double sup_err = 0.0;
    for (std::size_t flat = 0; flat < total; ++flat) {
      std::size_t rem_idx = flat;
      double y[kMaxDim] = {0, 0, 0};
      double r2 = 0.0;
      for (int d = u.dim - 1; d >= 0; --d) {
        const int i = static_cast<int>(rem_idx % static_cast<std::size_t>(per_axis));
        rem_idx /= static_cast<std::size_t>(per_axis);
        y[d] = R * static_cast<double>(i - m_axis) / static_cast<double>(m_axis);
        r2 += y[d] * y[d];
      }
      if (r2 > R * R + 1e-12) continue;
      double x[kMaxDim];
      for (int d = 0; d < u.dim; ++d) x[d] = zeta[d] + y[d] * ell;
      const double got = scale * interpolate(u, x);
      sup_err = std::max(sup_err, std::abs(got - profile_target(p, r2)));
    }

    double xc[kMaxDim];
    for (int d = 0; d < u.dim; ++d) xc[d] = zeta[d];
    const double center = scale * interpolate(u, xc);

    out.times.push_back(t);
    out.sup_errors.push_back(sup_err);
    out.center_errors.push_back(std::abs(center - kappa));
  }
  return out;
}

struct StudySample {
  double t = 0.0;
  double tau = 0.0;
  double lambda = 0.0;
  double a = 0.0;
  double c = 0.0;
  double beta = 0.0;  // closed-form attractor eigenvalue at this tau
  SymMat b;
  std::array<double, kMaxDim> zeta{};
  double M1 = 0.0, M2 = 0.0, A = 0.0, B = 0.0;
  double lambda_ratio = 0.0;  // lambda(t) (t*-t)^{1/2}
  double b_ratio = 0.0;       // 4p |ln(t*-t)| beta / (p-1)^2
};

struct StudyReport {
  int n = 1;
  double p = 3.0;
  double lambda0 = 0.0;
  double t_star = 0.0;
  double t_star_direct = 0.0;  // independent fit from the direct stage
  std::vector<StudySample> samples;
  std::vector<profile_manifold::SplitResult> splits;  // aligned with samples
  ProfileCheckResult profile;
  double profile_error_y0 = 0.0;
  double zeta_max = 0.0;
  bool zeta_bounded = false;
  bool truncated = false;
  std::string diagnostics;
  double runtime_seconds = 0.0;

  void validate() const {
    if (!truncated && !samples.empty() && !(t_star > 0.0))
      throw std::logic_error("StudyReport: blowup time must be positive");
    if (samples.size() != splits.size())
      throw std::logic_error("StudyReport: sample and split series disagree");
    if (profile.times.size() != profile.sup_errors.size() ||
        profile.times.size() != profile.center_errors.size())
      throw std::logic_error("StudyReport: profile series disagree");
  }
};

// Full experiment: direct solve to the cutoff with an independent blowup-time
// fit, then a rescaled march with a per-step split supplying the gauge
// (d lambda = a lambda dtau, dt = dtau / lambda^2), running majorants, the
// asymptotic ratio series, and a late-time profile comparison. A split
// failure or non-finite step returns a truncated report with diagnostics.
inline StudyReport run_blowup_study(const StudyConfig& cfg) {
  cfg.validate();
  const auto clock_start = std::chrono::steady_clock::now();
  const double pm1 = cfg.p - 1.0;

  StudyReport rep;
  rep.n = cfg.n;
  rep.p = cfg.p;
  rep.lambda0 = initial_lambda(cfg);

  // Direct stage: physical-variable solve to the sup-norm cutoff.
  const Field u0 = make_initial_data(cfg);
  pde_core::SolveConfig scfg;
  scfg.p = cfg.p;
  scfg.dt = cfg.dt;
  scfg.t_end = cfg.t_end;
  scfg.blowup_cutoff = cfg.blowup_cutoff;
  const pde_core::Trajectory direct = pde_core::solve_direct(u0, scfg);
  rep.t_star_direct = fit_blowup_time(direct, cfg.p);

  // Rescaled march: the same data in blowup variables on a fixed y window.
  const double lambda0 = rep.lambda0;
  const auto f0 = initial_data_function(cfg);
  Field v(cfg.n, cfg.hy, cfg.window);
  const double amp0 = std::pow(lambda0, -2.0 / pm1);
  v.fill([&](const double* y) {
    double x[kMaxDim];
    for (int d = 0; d < cfg.n; ++d) x[d] = y[d] / lambda0;
    return amp0 * f0(x);
  });

  blowup_frame::RescaledStepper stepper(cfg.n, cfg.hy, cfg.window, cfg.p);
  profile_manifold::SplitOptions sopt;
  sopt.tol = cfg.split_tol;
  sopt.max_iter = cfg.split_max_iter;

  ModulationState guess(cfg.n);
  guess.a = cfg.c0 / (lambda0 * lambda0) - 0.5;
  guess.b = cfg.b0;
  guess.b *= 1.0 / (lambda0 * lambda0);

  double lambda = lambda0;
  double t = 0.0;
  double a_last = guess.a;
  std::array<double, kMaxDim> x_c{};  // absolute frame center in x

  std::vector<Field> deep_frames;              // v frames for the profile stage
  std::vector<std::size_t> deep_sample_index;  // matching rep.samples entries
  std::vector<std::array<double, kMaxDim>> deep_centers;  // x_c when the frame was taken
  const double deep_tau = cfg.tau_end - cfg.profile_tau_span;

  const std::size_t n_steps = static_cast<std::size_t>(std::ceil(cfg.tau_end / cfg.dtau - 1e-12));
  for (std::size_t k = 0; k <= n_steps; ++k) {
    const double tau = std::min(static_cast<double>(k) * cfg.dtau, cfg.tau_end);
    const bool record = (k % static_cast<std::size_t>(cfg.store_every) == 0) || k == n_steps;
    sopt.compute_xi = record;

    profile_manifold::SplitResult r;
    try {
      r = profile_manifold::split(v, guess, cfg.p, sopt);
    } catch (const std::exception& e) {
      rep.truncated = true;
      rep.diagnostics = "split threw at tau = " + std::to_string(tau) + ": " + e.what();
      break;
    }
    if (!r.converged) {
      rep.truncated = true;
      rep.diagnostics = "split stalled at tau = " + std::to_string(tau) +
                        " with residual " + std::to_string(r.residual);
      break;
    }
    a_last = r.mu.a;

    if (record) {
      StudySample s;
      s.t = t;
      s.tau = tau;
      s.lambda = lambda;
      s.a = r.mu.a;
      s.c = r.mu.a + 0.5;
      s.b = r.mu.b;
      for (int d = 0; d < cfg.n; ++d) s.zeta[d] = x_c[d] + r.mu.z[d] / lambda;
      rep.samples.push_back(s);

      profile_manifold::SplitResult stored = r;
      stored.mu.tau = tau;
      stored.mu.t = t;
      rep.splits.push_back(std::move(stored));

      if (tau >= deep_tau) {
        deep_frames.push_back(v);
        deep_sample_index.push_back(rep.samples.size() - 1);
        deep_centers.push_back(x_c);
      }
    }

    // Re-center by whole cells once the measured center drifts; keeps the
    // spike away from the window edge at large lambda.
    std::array<int, kMaxDim> cells{};
    bool recenter = false;
    for (int d = 0; d < cfg.n; ++d) {
      if (std::abs(r.mu.z[d]) > cfg.recenter_threshold) {
        cells[d] = static_cast<int>(std::lround(r.mu.z[d] / cfg.hy));
        recenter = recenter || cells[d] != 0;
      }
    }
    if (recenter) {
      detail::shift_field(v, cells);
      for (int d = 0; d < cfg.n; ++d) {
        const double moved = cells[d] * cfg.hy;
        x_c[d] += moved / lambda;
        r.mu.z[d] -= moved;
      }
    }

    if (k < n_steps) {
      stepper.step(v, r.mu.a, cfg.dtau);
      if (!all_finite(v.values)) {
        rep.truncated = true;
        rep.diagnostics = "march went non-finite after tau = " + std::to_string(tau);
        break;
      }
      const double lambda_new = lambda * std::exp(r.mu.a * cfg.dtau);
      t += 0.5 * cfg.dtau * (1.0 / (lambda * lambda) + 1.0 / (lambda_new * lambda_new));
      lambda = lambda_new;
      guess = r.mu;
      guess.lambda = 1.0;
      guess.alpha = {};
    }
  }

  // Tail closure: with a effectively constant past tau_end, the remaining
  // physical time is lambda^{-2} / (2a).
  if (!rep.truncated) {
    if (!(a_last > 0.05)) {
      rep.truncated = true;
      rep.diagnostics = "march ended off the blowup branch, a = " + std::to_string(a_last);
    } else {
      rep.t_star = t + 1.0 / (2.0 * a_last * lambda * lambda);
    }
  }

  // Derived series. The attractor comparison needs a positive definite first
  // b; a homogeneous run (b = 0) reports zero betas and skips the majorants.
  const bool have_beta =
      !rep.splits.empty() && rep.splits.front().mu.b.min_eigenvalue() > 1e-12;
  std::vector<modulation::MajorantReport> maj;
  if (have_beta) maj = modulation::majorants(rep.splits, cfg.p);
  const double t_star_for_series = rep.truncated ? rep.t_star_direct : rep.t_star;
  for (std::size_t i = 0; i < rep.samples.size(); ++i) {
    StudySample& s = rep.samples[i];
    const double rem = t_star_for_series - s.t;
    if (rem > 0.0) {
      s.lambda_ratio = s.lambda * std::sqrt(rem);
      if (have_beta) {
        s.beta = maj[i].beta;
        s.b_ratio = 4.0 * cfg.p * std::abs(std::log(rem)) * s.beta / (pm1 * pm1);
      }
    }
    if (have_beta) {
      s.M1 = maj[i].M1;
      s.M2 = maj[i].M2;
      s.A = maj[i].A;
      s.B = maj[i].B;
    }
    double zn = 0.0;
    for (int d = 0; d < cfg.n; ++d) zn = std::max(zn, std::abs(s.zeta[d]));
    rep.zeta_max = std::max(rep.zeta_max, zn);
  }
  rep.zeta_bounded = rep.zeta_max <= cfg.zeta_bound;

  // Profile stage: map the trailing v frames back to physical variables and
  // compare against the limiting shape.
  if (!rep.truncated && !deep_frames.empty()) {
    pde_core::Trajectory synth;
    synth.p = cfg.p;
    synth.dt = cfg.dt;
    synth.cutoff_triggered = true;
    std::vector<std::array<double, kMaxDim>> zetas;

    const std::size_t max_frames = 30;
    const std::size_t stride = std::max<std::size_t>(1, deep_frames.size() / max_frames);
    for (std::size_t j = 0; j < deep_frames.size(); j += stride) {
      const StudySample& s = rep.samples[deep_sample_index[j]];
      const std::array<double, kMaxDim>& frame_center = deep_centers[j];
      const double rem = rep.t_star - s.t;
      if (!(rem > 0.0)) continue;
      double xc_max = 0.0, zeta_max = 0.0;
      for (int d = 0; d < cfg.n; ++d) {
        xc_max = std::max(xc_max, std::abs(frame_center[d]));
        zeta_max = std::max(zeta_max, std::abs(s.zeta[d]));
      }
      const double box = 0.98 * cfg.window / s.lambda - xc_max;
      const double ell = std::sqrt(rem * std::abs(std::log(rem)));
      const double needed = zeta_max + cfg.R * ell;
      if (!(box > 0.0) || needed > 0.9 * box) continue;
      const int half_pts = cfg.n == 1 ? 400 : 60;
      const double hx = box / half_pts;
      if (needed > box - 3.0 * hx) continue;

      ModulationState frame_state(cfg.n);
      frame_state.lambda = s.lambda;
      frame_state.z = frame_center;
      const Field ux = blowup_frame::from_blowup_vars(deep_frames[j], frame_state, cfg.p, box, hx);
      synth.frames.push_back(ux);
      synth.frame_times.push_back(s.t);
      synth.times.push_back(s.t);
      synth.sup_norms.push_back(ux.sup_norm());
      zetas.push_back(s.zeta);
    }
    if (!synth.frames.empty()) {
      rep.profile = profile_check(synth, rep.t_star, cfg.p, cfg.R, zetas);
      if (!rep.profile.center_errors.empty())
        rep.profile_error_y0 = rep.profile.center_errors.back();
    }
  }

  rep.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
  rep.validate();
  return rep;
}

enum class ExportFormat { csv };

namespace detail {

inline std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("export_report: cannot open " + path.string());
  out << body;
  if (!out) throw std::runtime_error("export_report: write failed for " + path.string());
}

}  // namespace detail

// Writes the sampled series and the profile comparison as CSV under out_dir.
// Pure function of the report, so re-export is byte-identical.
inline std::vector<std::string> export_report(const StudyReport& rep, const std::string& out_dir,
                                              ExportFormat format = ExportFormat::csv) {
  (void)format;  // csv is the only format
  rep.validate();
  namespace fs = std::filesystem;
  fs::path dir(out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("export_report: cannot create " + dir.string());

  const int n = rep.n;
  std::string series = "t,tau,lambda,a,c,beta";
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j)
      series += ",b_" + std::to_string(i) + std::to_string(j);
  for (int d = 0; d < n; ++d) series += ",zeta_" + std::to_string(d);
  series += ",M1,M2,A,B,lambda_ratio,b_ratio\n";
  for (const StudySample& s : rep.samples) {
    series += detail::fmt17(s.t) + ',' + detail::fmt17(s.tau) + ',' + detail::fmt17(s.lambda) +
              ',' + detail::fmt17(s.a) + ',' + detail::fmt17(s.c) + ',' + detail::fmt17(s.beta);
    for (int k = 0; k < SymMat::packed_size(n); ++k) series += ',' + detail::fmt17(s.b.packed(k));
    for (int d = 0; d < n; ++d) series += ',' + detail::fmt17(s.zeta[d]);
    series += ',' + detail::fmt17(s.M1) + ',' + detail::fmt17(s.M2) + ',' + detail::fmt17(s.A) +
              ',' + detail::fmt17(s.B) + ',' + detail::fmt17(s.lambda_ratio) + ',' +
              detail::fmt17(s.b_ratio) + '\n';
  }

  std::string prof = "t,sup_error,center_error\n";
  for (std::size_t i = 0; i < rep.profile.times.size(); ++i)
    prof += detail::fmt17(rep.profile.times[i]) + ',' + detail::fmt17(rep.profile.sup_errors[i]) +
            ',' + detail::fmt17(rep.profile.center_errors[i]) + '\n';

  const fs::path series_path = dir / "study_series.csv";
  const fs::path prof_path = dir / "profile_error.csv";
  detail::write_text_file(series_path, series);
  detail::write_text_file(prof_path, prof);
  return {series_path.string(), prof_path.string()};
}

}  // namespace nlheat::study_harness
