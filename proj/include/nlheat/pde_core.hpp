#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "nlheat/common.hpp"
#include "nlheat/grid.hpp"

namespace nlheat::pde_core {

enum class Boundary { dirichlet_zero, neumann_zero };

struct SolveConfig {
  double p = 3.0;
  double dt = 1e-4;
  double t_end = 1.0;
  Boundary boundary = Boundary::neumann_zero;
  double blowup_cutoff = 1e6;

  void validate() const {
    if (!(p > 1.0)) throw std::invalid_argument("SolveConfig: p must exceed 1");
    if (!(dt > 0.0)) throw std::invalid_argument("SolveConfig: dt must be positive");
    if (!(blowup_cutoff > 1.0)) throw std::invalid_argument("SolveConfig: cutoff must exceed 1");
  }
};

struct Trajectory {
  std::vector<double> times;      // one entry per committed state, starting at t = 0
  std::vector<double> sup_norms;  // matched to times
  std::vector<double> frame_times;
  std::vector<Field> frames;      // sampled fields; always holds the first and last state
  bool cutoff_triggered = false;
  double p = 0.0;
  double dt = 0.0;

  const Field& last_frame() const {
    if (frames.empty()) throw std::logic_error("Trajectory: no frames stored");
    return frames.back();
  }
};

struct SolveError : std::runtime_error {
  explicit SolveError(std::size_t step)
      : std::runtime_error("solve_direct: non-finite value at step " + std::to_string(step)),
        step_index(step) {}
  std::size_t step_index;
};

namespace detail {

// One backward-Euler heat substep along each axis in turn (approximate
// factorization of I - dt*Laplacian into per-axis tridiagonal solves).
inline void diffuse_implicit(Field& u, double dt, Boundary bc) {
  const int n = u.points_per_axis();
  const double r = dt / (u.h * u.h);
  std::vector<double> lower(n), diag(n), upper(n), rhs(n);

  std::size_t plane = 1;  // number of lines per axis = total/n
  for (int d = 0; d < u.dim; ++d) plane *= static_cast<std::size_t>(n);
  plane /= static_cast<std::size_t>(n);

  for (int axis = 0; axis < u.dim; ++axis) {
    std::size_t stride = 1;
    for (int d = axis + 1; d < u.dim; ++d) stride *= static_cast<std::size_t>(n);

    for (std::size_t line = 0; line < plane; ++line) {
      // Decompose the line id into indices of the non-axis dimensions.
      std::size_t rem = line;
      std::size_t base = 0;
      for (int d = u.dim - 1; d >= 0; --d) {
        if (d == axis) continue;
        std::size_t sd = 1;
        for (int e = d + 1; e < u.dim; ++e) sd *= static_cast<std::size_t>(n);
        const std::size_t id = rem % static_cast<std::size_t>(n);
        rem /= static_cast<std::size_t>(n);
        base += id * sd;
      }

      for (int k = 0; k < n; ++k) {
        lower[k] = -r;
        diag[k] = 1.0 + 2.0 * r;
        upper[k] = -r;
        rhs[k] = u.values[base + static_cast<std::size_t>(k) * stride];
      }
      if (bc == Boundary::neumann_zero) {
        upper[0] = -2.0 * r;
        lower[n - 1] = -2.0 * r;
      }
      // Dirichlet keeps the plain rows: the ghost value outside the box is 0.
      solve_tridiagonal(lower, diag, upper, rhs);
      for (int k = 0; k < n; ++k)
        u.values[base + static_cast<std::size_t>(k) * stride] = rhs[k];
    }
  }
}

}  // namespace detail

// Advances u_t = Laplacian(u) + |u|^{p-1} u by IMEX Euler (explicit reaction,
// implicit diffusion) until t_end or until the sup norm crosses the cutoff.
// store_every = 0 keeps only the first and last fields.
inline Trajectory solve_direct(const Field& u0, const SolveConfig& cfg,
                               std::size_t store_every = 0) {
  cfg.validate();
  if (!u0.valid()) throw std::invalid_argument("solve_direct: invalid initial field");

  Trajectory traj;
  traj.p = cfg.p;
  traj.dt = cfg.dt;
  Field u = u0;
  double t = 0.0;
  traj.times.push_back(t);
  traj.sup_norms.push_back(u.sup_norm());
  traj.frame_times.push_back(t);
  traj.frames.push_back(u);

  const std::size_t n_steps =
      static_cast<std::size_t>(std::ceil(cfg.t_end / cfg.dt - 1e-12));
  for (std::size_t step = 1; step <= n_steps; ++step) {
    for (double& v : u.values) v += cfg.dt * pow_signed(v, cfg.p);
    detail::diffuse_implicit(u, cfg.dt, cfg.boundary);

    if (!all_finite(u.values)) throw SolveError(step);
    t = static_cast<double>(step) * cfg.dt;
    traj.times.push_back(t);
    const double sup = u.sup_norm();
    traj.sup_norms.push_back(sup);

    const bool hit_cutoff = sup > cfg.blowup_cutoff;
    const bool last = hit_cutoff || step == n_steps;
    if ((store_every > 0 && step % store_every == 0) || last) {
      traj.frame_times.push_back(t);
      traj.frames.push_back(u);
    }
    if (hit_cutoff) {
      traj.cutoff_triggered = true;
      break;
    }
  }
  return traj;
}

// Spatially constant solution u(t) = [u0^{1-p} - (p-1) t]^{-1/(p-1)}, valid
// until its blowup time t* = ((p-1) u0^{p-1})^{-1}.
inline double homogeneous_solution(double u0, double p, double t) {
  if (!(u0 > 0.0)) throw std::invalid_argument("homogeneous_solution: u0 must be positive");
  const double t_star = 1.0 / ((p - 1.0) * std::pow(u0, p - 1.0));
  if (t >= t_star)
    throw std::domain_error("homogeneous_solution: t >= blowup time t* = " +
                            std::to_string(t_star));
  return std::pow(std::pow(u0, -(p - 1.0)) - (p - 1.0) * t, -1.0 / (p - 1.0));
}

inline double homogeneous_blowup_time(double u0, double p) {
  return 1.0 / ((p - 1.0) * std::pow(u0, p - 1.0));
}

// lambda^{2/(p-1)} u(lambda x) resampled on the grid of u; queries past the
// box reuse the boundary value (flat extension), so data should decay well
// inside |x| <= L/lambda when lambda > 1.
inline Field scaling_transform(const Field& u, double lambda, double p) {
  if (!(lambda > 0.0)) throw std::invalid_argument("scaling_transform: lambda must be positive");
  Field out(u.dim, u.h, u.L);
  const double amp = std::pow(lambda, 2.0 / (p - 1.0));
  out.for_each([&](const std::array<int, kMaxDim>& idx, std::size_t flat) {
    double x[kMaxDim] = {0, 0, 0};
    out.coordinates_of(idx, x);
    double xs[kMaxDim];
    for (int d = 0; d < u.dim; ++d) xs[d] = lambda * x[d];
    out.values[flat] = amp * interpolate(u, xs);
  });
  return out;
}

// Trapezoidal approximation of the energy
//   E(u) = integral of ( |grad u|^2 / 2 - |u|^{p+1} / (p+1) ).
// Gradients are centered inside, one-sided at the box faces.
inline double energy(const Field& u, double p) {
  if (!u.valid()) throw std::invalid_argument("energy: invalid field");
  const int n = u.points_per_axis();
  const double inv2h = 1.0 / (2.0 * u.h);
  const double invh = 1.0 / u.h;

  double total = 0.0;
  u.for_each([&](const std::array<int, kMaxDim>& idx, std::size_t flat) {
    double w = 1.0;
    for (int d = 0; d < u.dim; ++d)
      if (idx[d] == 0 || idx[d] == n - 1) w *= 0.5;

    double grad_sq = 0.0;
    std::size_t stride = 1;
    for (int d = u.dim - 1; d >= 0; --d) {
      double g;
      if (idx[d] == 0)
        g = (u.values[flat + stride] - u.values[flat]) * invh;
      else if (idx[d] == n - 1)
        g = (u.values[flat] - u.values[flat - stride]) * invh;
      else
        g = (u.values[flat + stride] - u.values[flat - stride]) * inv2h;
      grad_sq += g * g;
      stride *= static_cast<std::size_t>(n);
    }

    const double reaction = std::pow(std::abs(u.values[flat]), p + 1.0) / (p + 1.0);
    total += w * (0.5 * grad_sq - reaction);
  });
  return total * std::pow(u.h, u.dim);
}

}  // namespace nlheat::pde_core
