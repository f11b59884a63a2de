#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "nlheat/common.hpp"
#include "nlheat/grid.hpp"

namespace nlheat::blowup_frame {

// Parameter tuple carried along a rescaled trajectory. c is not stored:
// c = a + 1/2 is a structural identity.
struct ModulationState {
  double a = 0.5;
  SymMat b;                                  // symmetric, kept PSD
  std::array<double, kMaxDim> z{};           // translation center (x frame)
  std::array<double, kMaxDim> alpha{};       // frame drift (y frame)
  double lambda = 1.0;
  double t = 0.0;
  double tau = 0.0;

  explicit ModulationState(int dim = 1) : b(dim) {}

  int dim() const { return b.dim(); }
  double c() const { return a + 0.5; }

  void validate() const {
    if (!(lambda > 0.0)) throw std::invalid_argument("ModulationState: lambda must be positive");
    if (!b.is_psd(1e-12)) throw std::invalid_argument("ModulationState: b must be PSD");
  }
};

struct RescaledTrajectory {
  std::vector<double> taus;                  // every committed step
  std::vector<double> frame_taus;            // sampled fields
  std::vector<Field> frames;
  std::vector<ModulationState> states;       // matched to taus
};

struct RescaledSolveError : std::runtime_error {
  explicit RescaledSolveError(double tau)
      : std::runtime_error("evolve_rescaled: non-finite value at tau = " + std::to_string(tau)),
        tau_failed(tau) {}
  double tau_failed;
};

// v(y) = lambda^{-2/(p-1)} u(z + (y + alpha)/lambda) resampled on a fixed
// y grid of half width window and spacing hy.
inline Field to_blowup_vars(const Field& u, const ModulationState& state, double p,
                            double window, double hy) {
  state.validate();
  Field v(u.dim, hy, window);
  const double amp = std::pow(state.lambda, -2.0 / (p - 1.0));
  // The mapped window must stay inside the box of u.
  for (int d = 0; d < u.dim; ++d) {
    const double lo = state.z[d] + (-window + state.alpha[d]) / state.lambda;
    const double hi = state.z[d] + (window + state.alpha[d]) / state.lambda;
    if (lo < -u.L - 1e-12 || hi > u.L + 1e-12)
      throw std::invalid_argument("to_blowup_vars: requested window not covered by the grid");
  }
  v.for_each([&](const std::array<int, kMaxDim>& idx, std::size_t flat) {
    double y[kMaxDim] = {0, 0, 0};
    v.coordinates_of(idx, y);
    double x[kMaxDim];
    for (int d = 0; d < u.dim; ++d)
      x[d] = state.z[d] + (y[d] + state.alpha[d]) / state.lambda;
    v.values[flat] = amp * interpolate(u, x);
  });
  return v;
}

// Inverse map: u(x) = lambda^{2/(p-1)} v(lambda (x - z) - alpha) on an x grid.
inline Field from_blowup_vars(const Field& v, const ModulationState& state, double p,
                              double box, double hx) {
  Field u(v.dim, hx, box);
  const double amp = std::pow(state.lambda, 2.0 / (p - 1.0));
  u.for_each([&](const std::array<int, kMaxDim>& idx, std::size_t flat) {
    double x[kMaxDim] = {0, 0, 0};
    u.coordinates_of(idx, x);
    double y[kMaxDim];
    for (int d = 0; d < v.dim; ++d)
      y[d] = state.lambda * (x[d] - state.z[d]) - state.alpha[d];
    u.values[flat] = amp * interpolate(v, y);
  });
  return u;
}

// One IMEX step of the rescaled flow
//   dv/dtau = Lap v - a y . grad v - (2a/(p-1)) v + |v|^{p-1} v.
// Reaction and the linear damping go explicit; the per-axis operator
// (d^2 - a y d) goes into one tridiagonal solve per axis (approximate
// factorization). Reflecting (zero-slope) ends.
class RescaledStepper {
 public:
  RescaledStepper(int dim, double hy, double window, double p)
      : dim_(dim), hy_(hy), window_(window), p_(p) {}

  void step(Field& v, double a, double dtau) const {
    if (!v.same_grid(Field(dim_, hy_, window_)))
      throw std::invalid_argument("RescaledStepper: field grid mismatch");
    const double damping = 2.0 * a / (p_ - 1.0);
    for (double& val : v.values) val += dtau * (pow_signed(val, p_) - damping * val);

    const int n = v.points_per_axis();
    const double r = dtau / (hy_ * hy_);
    std::vector<double> lower(n), diag(n), upper(n), rhs(n);

    std::size_t plane = 1;
    for (int d = 0; d < dim_ - 1; ++d) plane *= static_cast<std::size_t>(n);

    for (int axis = 0; axis < dim_; ++axis) {
      std::size_t stride = 1;
      for (int d = axis + 1; d < dim_; ++d) stride *= static_cast<std::size_t>(n);

      for (std::size_t line = 0; line < plane; ++line) {
        std::size_t rem = line;
        std::size_t base = 0;
        for (int d = dim_ - 1; d >= 0; --d) {
          if (d == axis) continue;
          std::size_t sd = 1;
          for (int e = d + 1; e < dim_; ++e) sd *= static_cast<std::size_t>(n);
          base += (rem % static_cast<std::size_t>(n)) * sd;
          rem /= static_cast<std::size_t>(n);
        }

        for (int k = 0; k < n; ++k) {
          const double y = v.coordinate(k);
          const double q = dtau * a * y / (2.0 * hy_);
          lower[k] = -r - q;
          diag[k] = 1.0 + 2.0 * r;
          upper[k] = -r + q;
          rhs[k] = v.values[base + static_cast<std::size_t>(k) * stride];
        }
        // Mirror ghost at the ends: second difference closes on 2(v1 - v0),
        // the advection derivative vanishes there.
        upper[0] = -2.0 * r;
        lower[n - 1] = -2.0 * r;
        solve_tridiagonal(lower, diag, upper, rhs);
        for (int k = 0; k < n; ++k)
          v.values[base + static_cast<std::size_t>(k) * stride] = rhs[k];
      }
    }
  }

  double p() const { return p_; }
  double hy() const { return hy_; }
  double window() const { return window_; }
  int dim() const { return dim_; }

 private:
  int dim_;
  double hy_;
  double window_;
  double p_;
};

// Integrates the rescaled flow under a prescribed schedule a(tau). Tracks the
// induced scale lambda (dlambda/dtau = a lambda) and physical time
// (dt = dtau / lambda^2) alongside, starting from lambda0 at t = 0.
inline RescaledTrajectory evolve_rescaled(const Field& v0,
                                          const std::function<double(double)>& a_schedule,
                                          double p, double tau_end, double dtau = 1e-3,
                                          std::size_t store_every = 0, double lambda0 = 1.0) {
  if (!v0.valid()) throw std::invalid_argument("evolve_rescaled: invalid initial field");
  RescaledStepper stepper(v0.dim, v0.h, v0.L, p);

  RescaledTrajectory traj;
  Field v = v0;
  ModulationState st(v0.dim);
  st.lambda = lambda0;

  auto commit = [&](bool store_frame) {
    traj.taus.push_back(st.tau);
    traj.states.push_back(st);
    if (store_frame) {
      traj.frame_taus.push_back(st.tau);
      traj.frames.push_back(v);
    }
  };

  st.a = a_schedule(0.0);
  commit(true);

  const std::size_t n_steps = static_cast<std::size_t>(std::ceil(tau_end / dtau - 1e-12));
  for (std::size_t k = 1; k <= n_steps; ++k) {
    const double a = a_schedule(st.tau);
    stepper.step(v, a, dtau);
    if (!all_finite(v.values)) throw RescaledSolveError(st.tau + dtau);

    const double lambda_old = st.lambda;
    st.lambda = lambda_old * std::exp(a * dtau);
    st.t += 0.5 * dtau * (1.0 / (lambda_old * lambda_old) + 1.0 / (st.lambda * st.lambda));
    st.tau = static_cast<double>(k) * dtau;
    st.a = a;

    const bool last = (k == n_steps);
    commit(last || (store_every > 0 && k % store_every == 0));
  }
  return traj;
}

struct LambdaCrossing : std::runtime_error {
  explicit LambdaCrossing(double tc)
      : std::runtime_error("lambda_from_a: scale diverges at t = " + std::to_string(tc)),
        crossing_time(tc) {}
  double crossing_time;
};

// lambda(t) = (lambda0^{-2} - 2 int_0^t a)^{-1/2} for a sampled history.
// piecewise_constant treats a as constant on [t_i, t_{i+1}) (exact integral);
// otherwise the samples are joined linearly (trapezoid).
inline double lambda_from_a(const std::vector<double>& ts, const std::vector<double>& as,
                            double lambda0, double t, bool piecewise_constant = false) {
  if (ts.size() != as.size() || ts.empty())
    throw std::invalid_argument("lambda_from_a: need matched nonempty samples");
  if (std::abs(ts.front()) > 1e-15)
    throw std::invalid_argument("lambda_from_a: history must start at t = 0");
  if (!(lambda0 > 0.0)) throw std::invalid_argument("lambda_from_a: lambda0 must be positive");

  const double budget = 1.0 / (lambda0 * lambda0);
  double acc = 0.0;  // 2 * integral of a so far
  double t_prev = 0.0;

  auto advance = [&](double t_next, double a_lo, double a_hi) {
    const double dt = t_next - t_prev;
    if (dt <= 0.0) return;
    const double seg = piecewise_constant ? 2.0 * a_lo * dt : (a_lo + a_hi) * dt;
    if (acc + seg >= budget) {
      // Crossing inside this segment.
      double tc;
      if (piecewise_constant || a_lo == a_hi) {
        tc = t_prev + (budget - acc) / (2.0 * a_lo);
      } else {
        // Solve acc + (a_lo + a(s)) (s - t_prev) = budget with linear a(s).
        const double slope = (a_hi - a_lo) / dt;
        const double rem = budget - acc;
        const double disc = a_lo * a_lo + slope * rem;
        tc = t_prev + (std::sqrt(std::max(disc, 0.0)) - a_lo) / slope;
      }
      throw LambdaCrossing(tc);
    }
    acc += seg;
    t_prev = t_next;
  };

  for (std::size_t i = 0; i + 1 < ts.size() && t_prev < t; ++i) {
    const double t_next = std::min(ts[i + 1], t);
    if (t_next <= t_prev) continue;
    double a_lo = as[i];
    double a_hi = as[i + 1];
    if (!piecewise_constant && ts[i + 1] > ts[i]) {
      const double w0 = (t_prev - ts[i]) / (ts[i + 1] - ts[i]);
      const double w1 = (t_next - ts[i]) / (ts[i + 1] - ts[i]);
      a_hi = as[i] + w1 * (as[i + 1] - as[i]);
      a_lo = as[i] + w0 * (as[i + 1] - as[i]);
    }
    advance(t_next, a_lo, a_hi);
  }
  if (t_prev < t) advance(t, as.back(), as.back());  // flat extension past the data

  return 1.0 / std::sqrt(budget - acc);
}

// One step of d alpha/dt = lambda^2 a alpha - lambda zdot with coefficients
// frozen over the step (exponential integrator; exact for constants).
inline std::array<double, kMaxDim> step_alpha(const ModulationState& state,
                                              const std::array<double, kMaxDim>& z_dot,
                                              double dt) {
  const double g = state.lambda * state.lambda * state.a;
  std::array<double, kMaxDim> out{};
  for (int d = 0; d < state.dim(); ++d) {
    const double forcing = state.lambda * z_dot[d];
    if (std::abs(g * dt) < 1e-300) {
      out[d] = state.alpha[d] - forcing * dt;
    } else {
      const double e = std::expm1(g * dt);
      out[d] = state.alpha[d] * (1.0 + e) - forcing * e / g;
    }
  }
  return out;
}

}  // namespace nlheat::blowup_frame
