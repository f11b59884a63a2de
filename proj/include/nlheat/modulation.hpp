#pragma once

// Modulation dynamics for the rescaled flow: the coupled (a, b) parameter
// ODEs, the closed-form attractor beta_tilde, the source terms generated by
// moving along the profile manifold, and running majorants along a split
// trajectory.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "nlheat/blowup_frame.hpp"
#include "nlheat/common.hpp"
#include "nlheat/grid.hpp"
#include "nlheat/profile_manifold.hpp"

namespace nlheat::modulation {

using blowup_frame::ModulationState;

// Exponents shared by the modulation estimates.
struct ModConstants {
  double p;
  double kappa;  // min(1/2, (p-1)/2), always in (0, 1/2]

  explicit ModConstants(double p_) : p(p_), kappa(std::min(0.5, 0.5 * (p_ - 1.0))) {
    if (!(p_ > 1.0)) throw std::invalid_argument("ModConstants: p must exceed 1");
  }
};

// Closed-form solution of db/dtau = -(4p/(p-1)^2) b^2 from a positive
// definite b(0):
//   beta_tilde(tau) = (b(0)^{-1} + (4 p tau / (p-1)^2) I)^{-1}.
inline SymMat beta_tilde(double tau, const SymMat& b0, double p) {
  if (b0.dim() < 1) throw std::invalid_argument("beta_tilde: b(0) has no dimension");
  if (!(p > 1.0)) throw std::invalid_argument("beta_tilde: p must exceed 1");
  if (!(tau >= 0.0)) throw std::invalid_argument("beta_tilde: tau must be >= 0");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(b0.dense());
  if (!(es.eigenvalues().minCoeff() > 0.0))
    throw std::invalid_argument("beta_tilde: b(0) must be positive definite");
  if (tau == 0.0) return b0;
  const double s = 4.0 * p * tau / ((p - 1.0) * (p - 1.0));
  Eigen::VectorXd vals = es.eigenvalues();
  for (int i = 0; i < vals.size(); ++i) vals[i] = vals[i] / (1.0 + s * vals[i]);
  const Eigen::MatrixXd m =
      es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
  return SymMat::from_dense(m);
}

// Largest eigenvalue beta(tau) of beta_tilde(tau); x -> x/(1+s x) is
// increasing, so it is the image of the largest eigenvalue of b(0).
inline double beta_scalar(double tau, const SymMat& b0, double p) {
  if (b0.dim() < 1) throw std::invalid_argument("beta_scalar: b(0) has no dimension");
  if (!(p > 1.0)) throw std::invalid_argument("beta_scalar: p must exceed 1");
  if (!(tau >= 0.0)) throw std::invalid_argument("beta_scalar: tau must be >= 0");
  const double lmax = b0.max_eigenvalue();
  if (!(b0.min_eigenvalue() > 0.0))
    throw std::invalid_argument("beta_scalar: b(0) must be positive definite");
  const double s = 4.0 * p * tau / ((p - 1.0) * (p - 1.0));
  return lmax / (1.0 + s * lmax);
}

struct ParameterDerivatives {
  double a_dot = 0.0;
  SymMat b_dot;
};

// Right-hand side of the modulation ODEs, with c = a + 1/2 eliminated:
//   db/dtau = -(4p/(p-1)^2) b^2 + [(c - 2a) - (2/(p-1)) tr b] b
//   da/dtau = (a + 1/2) [(1/2 - a) - (2/(p-1)) tr b]
// where c - 2a = 1/2 - a. On the slaving manifold a = 1/2 - (2/(p-1)) tr b
// the linear coefficient of b cancels and the b equation is the pure
// attractor flow.
inline ParameterDerivatives modulation_rhs(double a, const SymMat& b, double p) {
  const int n = b.dim();
  if (n < 1) throw std::invalid_argument("modulation_rhs: b has no dimension");
  if (!(p > 1.0)) throw std::invalid_argument("modulation_rhs: p must exceed 1");
  const double pm1 = p - 1.0;
  const double c = a + 0.5;
  const double lin = (0.5 - a) - 2.0 * b.trace() / pm1;
  const double q = 4.0 * p / (pm1 * pm1);
  const SymMat b2 = b.square();

  ParameterDerivatives d;
  d.a_dot = c * lin;
  d.b_dot = SymMat(n);
  for (int k = 0; k < d.b_dot.size(); ++k)
    d.b_dot.packed(k) = -q * b2.packed(k) + lin * b.packed(k);
  return d;
}

struct ModulationTrajectory {
  std::vector<double> taus;
  std::vector<double> a;
  std::vector<SymMat> b;
  bool left_attracting_regime = false;  // flagged when b blows off or leaves the PSD cone
  double tau_flagged = 0.0;             // tau at which integration stopped early
};

// RK4 integration of the modulation ODEs. With slaved = true the a variable
// is eliminated by a = 1/2 - (2/(p-1)) tr b before every evaluation, leaving
// the pure b flow whose exact solution is beta_tilde. Integration stops and
// flags the trajectory if b leaves the PSD cone, ||b|| grows well past its
// initial size, or a leaves (-1/2, 5].
inline ModulationTrajectory integrate_modulation(double a0, const SymMat& b0, double p,
                                                 double tau_end, double dtau = 0.01,
                                                 bool slaved = false) {
  const int n = b0.dim();
  if (n < 1) throw std::invalid_argument("integrate_modulation: b(0) has no dimension");
  if (!(p > 1.0)) throw std::invalid_argument("integrate_modulation: p must exceed 1");
  if (!(tau_end > 0.0) || !(dtau > 0.0))
    throw std::invalid_argument("integrate_modulation: need tau_end > 0 and dtau > 0");
  if (!b0.is_psd(1e-12))
    throw std::invalid_argument("integrate_modulation: b(0) must be PSD");
  if (!(a0 > -0.5)) throw std::invalid_argument("integrate_modulation: need a(0) > -1/2");

  const double pm1 = p - 1.0;
  const auto slave = [&](const SymMat& b) { return 0.5 - 2.0 * b.trace() / pm1; };
  const auto rhs = [&](double av, const SymMat& bv) {
    return modulation_rhs(slaved ? slave(bv) : av, bv, p);
  };

  ModulationTrajectory out;
  const std::size_t n_steps = static_cast<std::size_t>(std::llround(tau_end / dtau));
  out.taus.reserve(n_steps + 1);
  out.a.reserve(n_steps + 1);
  out.b.reserve(n_steps + 1);

  double a = slaved ? slave(b0) : a0;
  SymMat b = b0;
  out.taus.push_back(0.0);
  out.a.push_back(a);
  out.b.push_back(b);

  const double b_cap = std::max(2.0 * b0.frobenius_norm(), 0.5);

  for (std::size_t k = 0; k < n_steps; ++k) {
    const auto k1 = rhs(a, b);
    const auto k2 = rhs(a + 0.5 * dtau * k1.a_dot, b + (0.5 * dtau) * k1.b_dot);
    const auto k3 = rhs(a + 0.5 * dtau * k2.a_dot, b + (0.5 * dtau) * k2.b_dot);
    const auto k4 = rhs(a + dtau * k3.a_dot, b + dtau * k3.b_dot);

    SymMat bn = b;
    bn += (dtau / 6.0) * (k1.b_dot + 2.0 * k2.b_dot + 2.0 * k3.b_dot + k4.b_dot);
    double an = a + (dtau / 6.0) * (k1.a_dot + 2.0 * (k2.a_dot + k3.a_dot) + k4.a_dot);
    if (slaved) an = slave(bn);

    const double tau_next = static_cast<double>(k + 1) * dtau;
    const bool sane = std::isfinite(an) && std::isfinite(bn.max_abs()) &&
                      bn.is_psd(1e-9) && bn.frobenius_norm() <= b_cap && an > -0.5 &&
                      an <= 5.0;
    if (!sane) {
      out.left_attracting_regime = true;
      out.tau_flagged = tau_next;
      break;
    }
    a = an;
    b = bn;
    out.taus.push_back(tau_next);
    out.a.push_back(a);
    out.b.push_back(b);
  }
  return out;
}

struct GammaTerms {
  double gamma0 = 0.0;  // scalar coefficient
  SymMat gamma;         // coefficients of the quadratic direction
  Field g1;             // gradient-squared correction on the y grid
  Field source;         // assembled forcing on the same grid
};

// Source terms generated by moving along the manifold with the given
// parameter derivatives:
//   gamma0    = -a_dot/c + (c - 2a) - (2/(p-1)) tr b
//   gamma_jk  = [b_dot_jk - (c-2a) b_jk + (2 b_jk/(p-1)) tr b
//                + (4p/(p-1)^2) (b^2)_jk] / (a (p-1))
//   g1(y)     = -4p (yby) |by|^2 / ((p-1)^2 (p-1 + yby)^2)
//   source(y) = (1/(p-1)) [gamma0
//                + sum_jk gamma_jk (p-1) a y_j y_k / (p-1 + yby)
//                + g1(y)] V(y).
// Derivatives taken from modulation_rhs make gamma0 and gamma vanish
// identically.
inline GammaTerms gamma_terms(const ModulationState& state, const ParameterDerivatives& derivs,
                              double p, double hy, double window) {
  const int n = state.b.dim();
  if (n < 1) throw std::invalid_argument("gamma_terms: b has no dimension");
  if (!(p > 1.0)) throw std::invalid_argument("gamma_terms: p must exceed 1");
  if (derivs.b_dot.dim() != n)
    throw std::invalid_argument("gamma_terms: derivative dimension mismatch");
  const double a = state.a;
  const double c = a + 0.5;
  if (!(c > 0.0) || a == 0.0)
    throw std::invalid_argument("gamma_terms: need a + 1/2 > 0 and a != 0");
  const double pm1 = p - 1.0;
  const double tr = state.b.trace();
  const double c_minus_2a = 0.5 - a;
  const double q = 4.0 * p / (pm1 * pm1);

  GammaTerms g;
  g.gamma0 = -derivs.a_dot / c + c_minus_2a - 2.0 * tr / pm1;
  g.gamma = SymMat(n);
  const SymMat b2 = state.b.square();
  for (int k = 0; k < g.gamma.size(); ++k)
    g.gamma.packed(k) = (derivs.b_dot.packed(k) - c_minus_2a * state.b.packed(k) +
                         (2.0 * tr / pm1) * state.b.packed(k) + q * b2.packed(k)) /
                        (a * pm1);

  const profile_manifold::AlmostSolution prof(a, state.b, p);
  g.g1 = Field(n, hy, window);
  g.g1.fill([&](const double* y) {
    const double yby = state.b.quadratic_form(y);
    double by2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double r = state.b.row_dot(i, y);
      by2 += r * r;
    }
    const double den = pm1 + yby;
    return -q * yby * by2 / (den * den);
  });
  g.source = Field(n, hy, window);
  g.source.for_each([&](const std::array<int, kMaxDim>& idx, std::size_t flat) {
    double y[kMaxDim] = {0, 0, 0};
    g.source.coordinates_of(idx, y);
    const double yby = state.b.quadratic_form(y);
    const double quad = g.gamma.quadratic_form(y) * pm1 * a / (pm1 + yby);
    g.source.values[flat] = (g.gamma0 + quad + g.g1.values[flat]) * prof.value(y) / pm1;
  });
  return g;
}

// Running majorants along a split trajectory. All splits must come from one
// run sharing a positive definite b at the first entry; tau is measured from
// that entry. Splits carrying no xi field contribute zero to M1 and M2.
struct MajorantReport {
  double M1 = 0.0;    // running sup of beta^{-2} ||<y>^{-3} xi||_inf
  double M2 = 0.0;    // running sup of ||xi||_inf
  double A = 0.0;     // running sup of beta^{-2} |a - 1/2 + (2/(p-1)) tr b|
  double B = 0.0;     // running sup of beta^{-(1+kappa)} ||b - beta_tilde||_F
  double beta = 0.0;  // beta(tau) from the closed-form attractor
  double tau = 0.0;   // elapsed tau since the first split
};

inline std::vector<MajorantReport> majorants(
    const std::vector<profile_manifold::SplitResult>& splits, double p) {
  if (splits.empty()) throw std::invalid_argument("majorants: no splits");
  const ModConstants mc(p);
  const double pm1 = p - 1.0;
  const SymMat b_start = splits.front().mu.b;
  const double tau_start = splits.front().mu.tau;

  std::vector<MajorantReport> out;
  out.reserve(splits.size());
  MajorantReport run;
  for (const auto& s : splits) {
    const double tau = s.mu.tau - tau_start;
    if (!(tau >= 0.0)) throw std::invalid_argument("majorants: tau must not decrease");
    const SymMat bt = beta_tilde(tau, b_start, p);
    const double beta = beta_scalar(tau, b_start, p);

    if (!s.xi.values.empty()) {
      run.M1 = std::max(run.M1, s.xi.weighted_sup_norm(3.0) / (beta * beta));
      run.M2 = std::max(run.M2, s.xi.sup_norm());
    }
    const double a_gap = std::abs(s.mu.a - 0.5 + 2.0 * s.mu.b.trace() / pm1);
    run.A = std::max(run.A, a_gap / (beta * beta));
    run.B = std::max(run.B, (s.mu.b - bt).frobenius_norm() / std::pow(beta, 1.0 + mc.kappa));
    run.beta = beta;
    run.tau = tau;
    out.push_back(run);
  }
  return out;
}

}  // namespace nlheat::modulation
