#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "nlheat/blowup_frame.hpp"
#include "nlheat/common.hpp"
#include "nlheat/grid.hpp"
#include "nlheat/pde_core.hpp"
#include "nlheat/quadrature.hpp"

namespace nlheat::profile_manifold {

using blowup_frame::ModulationState;

// The two-parameter profile family V(y) = ((a+1/2)/(p-1+yby))^{1/(p-1)}.
struct AlmostSolution {
  double a = 0.5;
  SymMat b;
  double p = 3.0;

  AlmostSolution(double a_, SymMat b_, double p_) : a(a_), b(std::move(b_)), p(p_) {
    if (!(a + 0.5 > 0.0)) throw std::invalid_argument("AlmostSolution: need a + 1/2 > 0");
    if (!b.is_psd(1e-9)) throw std::invalid_argument("AlmostSolution: b must be PSD");
  }

  double value(const double* y) const {
    return std::pow((a + 0.5) / (p - 1.0 + b.quadratic_form(y)), 1.0 / (p - 1.0));
  }
};

inline Field eval_V(double a, const SymMat& b, double p, double hy, double window) {
  AlmostSolution V(a, b, p);
  Field f(b.dim(), hy, window);
  f.fill([&](const double* y) { return V.value(y); });
  return f;
}

// Index pairs (i, j), 0 <= i <= j <= n, labeling the tangent directions.
// Order: (0,0); diagonal (j,j); off-diagonal (i,j) i<j; translations (0,j).
struct TangentIndex {
  int i = 0, j = 0;
};

inline std::vector<TangentIndex> tangent_indices(int n) {
  std::vector<TangentIndex> out;
  out.push_back({0, 0});
  for (int j = 1; j <= n; ++j) out.push_back({j, j});
  for (int i = 1; i <= n; ++i)
    for (int j = i + 1; j <= n; ++j) out.push_back({i, j});
  for (int j = 1; j <= n; ++j) out.push_back({0, j});
  return out;
}

// phi^{(00)} = 1, phi^{(0j)} = sqrt(a) y_j, phi^{(ij)} = a y_i y_j.
inline double tangent_value(const TangentIndex& t, double a, const double* y) {
  if (t.i == 0 && t.j == 0) return 1.0;
  if (t.i == 0) return std::sqrt(a) * y[t.j - 1];
  return a * y[t.i - 1] * y[t.j - 1];
}

struct TangentFunction {
  TangentIndex index;
  std::function<double(const double*)> eval;
};

// The (n+1)(n+2)/2 almost-tangent directions of the profile family.
inline std::vector<TangentFunction> tangent_functions(double a, int n) {
  if (!(a > 0.0)) throw std::invalid_argument("tangent_functions: a must be positive");
  std::vector<TangentFunction> fam;
  for (const TangentIndex& t : tangent_indices(n))
    fam.push_back({t, [t, a](const double* y) { return tangent_value(t, a, y); }});
  return fam;
}

namespace detail {

// Guards quadrature against a window that clips non-negligible weight.
inline void check_weight_coverage(double a, double node_radius, double reach) {
  if (node_radius <= reach) return;
  const double tail_weight = std::exp(-0.5 * a * reach * reach);
  if (tail_weight > 1e-30)
    throw std::invalid_argument(
        "weighted_inner: quadrature nodes leave the data window with non-negligible weight");
}

}  // namespace detail

// Gaussian-weighted inner product of two callables on R^n.
inline double weighted_inner(const std::function<double(const double*)>& f,
                             const std::function<double(const double*)>& g, double a, int dim,
                             int order = 64) {
  GaussianQuadrature quad(a, dim, order);
  return quad.integrate([&](const double* y) { return f(y) * g(y); });
}

// Gaussian-weighted inner product of two grid fields (cubic interpolation at
// the quadrature nodes). The fields must cover the weight-bearing region.
inline double weighted_inner(const Field& f, const Field& g, double a, int order = 64) {
  if (!f.same_grid(g)) throw std::invalid_argument("weighted_inner: fields on different grids");
  GaussianQuadrature quad(a, f.dim, order);
  detail::check_weight_coverage(a, quad.node_radius(), f.L);
  return quad.integrate([&](const double* y) { return interpolate(f, y) * interpolate(g, y); });
}

struct SplitResult {
  ModulationState mu;
  Field xi;             // u in the moving frame minus the fitted profile, on a y grid
  double residual = 0;  // max |G| entry at the returned parameters
  int iterations = 0;
  bool converged = false;
};

struct SplitOptions {
  double tol = 1e-11;
  int max_iter = 25;
  int gh_order = 64;
  double fd_step = 1e-6;
  double freeze_z_threshold = 1e-7;  // below this ||b||, translations are not solved for
  double xi_window = 10.0;
  double xi_spacing = 0.1;
  bool compute_xi = true;
};

namespace detail {

// Parameter vector layout: [a, b_11..b_nn, b_ij (i<j, lex), z_1..z_n].
struct ParamLayout {
  int n;
  int m;  // (n+1)(n+2)/2

  explicit ParamLayout(int n_) : n(n_), m((n_ + 1) * (n_ + 2) / 2) {}

  Eigen::VectorXd pack(double a, const SymMat& b, const std::array<double, kMaxDim>& z) const {
    Eigen::VectorXd th(m);
    th(0) = a;
    int k = 1;
    for (int i = 0; i < n; ++i) th(k++) = b.at(i, i);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) th(k++) = b.at(i, j);
    for (int d = 0; d < n; ++d) th(k++) = z[d];
    return th;
  }

  void unpack(const Eigen::VectorXd& th, double& a, SymMat& b,
              std::array<double, kMaxDim>& z) const {
    a = th(0);
    int k = 1;
    for (int i = 0; i < n; ++i) b.at(i, i) = th(k++);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) b.at(i, j) = th(k++);
    for (int d = 0; d < n; ++d) z[d] = th(k++);
  }
};

}  // namespace detail

// The orthogonality system: G_c(theta) = <V_ab - u_frame, phi_a^{(c)}> in the
// a-weighted inner product, where u_frame(y) = lambda^{-2/(p-1)} u(z+(y+alpha)/lambda).
// Components are ordered like tangent_indices(n) and pair one-to-one with the
// parameters [a; b_diag; b_offdiag; z].
inline Eigen::VectorXd splitting_residual(const std::function<double(const double*)>& u,
                                          double a, const SymMat& b,
                                          const std::array<double, kMaxDim>& z, double lambda,
                                          const std::array<double, kMaxDim>& alpha, double p,
                                          int gh_order = 64) {
  const int n = b.dim();
  const auto tangents = tangent_indices(n);
  const double amp = std::pow(lambda, -2.0 / (p - 1.0));
  // Evaluated inline rather than through AlmostSolution: finite-difference
  // probes may push b a hair outside the PSD cone, which is harmless for the
  // integrand as long as p - 1 + yby stays positive on the nodes.
  auto profile = [&](const double* y) {
    return std::pow((a + 0.5) / (p - 1.0 + b.quadratic_form(y)), 1.0 / (p - 1.0));
  };

  Eigen::VectorXd G = Eigen::VectorXd::Zero(static_cast<int>(tangents.size()));
  const GaussHermite& gh = gauss_hermite(gh_order);
  const double scale = std::sqrt(2.0 / a);
  std::array<int, kMaxDim> idx{};
  std::function<void(int, double, std::array<double, kMaxDim>&)> rec =
      [&](int d, double w, std::array<double, kMaxDim>& y) {
        if (d == n) {
          double x[kMaxDim];
          for (int e = 0; e < n; ++e) x[e] = z[e] + (y[e] + alpha[e]) / lambda;
          const double diff = profile(y.data()) - amp * u(x);
          for (std::size_t c = 0; c < tangents.size(); ++c)
            G(static_cast<int>(c)) += w * diff * tangent_value(tangents[c], a, y.data());
          return;
        }
        for (int k = 0; k < gh_order; ++k) {
          y[d] = scale * gh.nodes[k];
          rec(d + 1, w * scale * gh.weights[k], y);
        }
      };
  std::array<double, kMaxDim> y{};
  rec(0, 1.0, y);
  return G;
}

struct JacobianBlocks {
  Eigen::MatrixXd k11;  // rows (00),(11)..(nn); cols a, b_11..b_nn
  Eigen::MatrixXd k22;  // off-diagonal pairs block, diagonal matrix
  Eigen::MatrixXd k33;  // rows (0j); cols z_i
  Eigen::MatrixXd a1;   // full system in the solver's parameter order
};

// Leading-order closed forms of the splitting Jacobian at an on-manifold
// point. With W = (2 pi / a)^{n/2}, V0 = ((a+1/2)/(p-1))^{1/(p-1)}, c = a+1/2:
//   d G^{(00 / jj)} / d a     = +V0 W / ((p-1) c)
//   d G^{(00)} / d b_kk       = -V0 W / ((p-1)^2 a)
//   d G^{(jj)} / d b_kk       = -V0 W / ((p-1)^2 a) * (3 if j = k else 1)
//   d G^{(jl)} / d b_jl (j<l) = -2 V0 W / ((p-1)^2 a)
//   d G^{(0j)} / d z_i        = +lambda 2 V0 W b_ij / ((p-1)^2 sqrt(a))
// The (a,b) and z groups decouple exactly by parity at such points.
inline JacobianBlocks jacobian_blocks(const ModulationState& mu, double p) {
  const int n = mu.dim();
  const double a = mu.a;
  const double c = mu.c();
  const double W = std::pow(2.0 * M_PI / a, 0.5 * n);
  const double V0 = std::pow(c / (p - 1.0), 1.0 / (p - 1.0));
  const double pm1 = p - 1.0;

  JacobianBlocks out;
  out.k11 = Eigen::MatrixXd::Zero(n + 1, n + 1);
  for (int r = 0; r <= n; ++r) {
    out.k11(r, 0) = V0 * W / (pm1 * c);
    for (int k = 1; k <= n; ++k) {
      double factor = 1.0;
      if (r >= 1) factor = (r == k) ? 3.0 : 1.0;
      out.k11(r, k) = -V0 * W / (pm1 * pm1 * a) * factor;
    }
  }

  const int n_off = n * (n - 1) / 2;
  out.k22 = Eigen::MatrixXd::Identity(std::max(n_off, 0), std::max(n_off, 0)) *
            (-2.0 * V0 * W / (pm1 * pm1 * a));

  out.k33 = Eigen::MatrixXd::Zero(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i)
      out.k33(j, i) = mu.lambda * 2.0 * V0 * W * mu.b.at(i, j) / (pm1 * pm1 * std::sqrt(a));

  const int m = (n + 1) * (n + 2) / 2;
  out.a1 = Eigen::MatrixXd::Zero(m, m);
  out.a1.block(0, 0, n + 1, n + 1) = out.k11;
  if (n_off > 0) out.a1.block(n + 1, n + 1, n_off, n_off) = out.k22;
  out.a1.block(n + 1 + n_off, n + 1 + n_off, n, n) = out.k33;
  return out;
}

// Newton solve of G(theta) = 0 over theta = (a, b, z); lambda and alpha ride
// along unchanged from the guess. The Jacobian is built by central finite
// differences and row-scaled by the analytic leading magnitudes.
inline SplitResult split(const std::function<double(const double*)>& u,
                         const ModulationState& mu_guess, double p,
                         const SplitOptions& opt = {}) {
  const int n = mu_guess.dim();
  detail::ParamLayout layout(n);
  const int m = layout.m;

  double a = mu_guess.a;
  SymMat b = mu_guess.b;
  std::array<double, kMaxDim> z = mu_guess.z;
  const double lambda = mu_guess.lambda;
  const std::array<double, kMaxDim> alpha = mu_guess.alpha;

  auto residual_at = [&](const Eigen::VectorXd& th) {
    double ta;
    SymMat tb(n);
    std::array<double, kMaxDim> tz{};
    layout.unpack(th, ta, tb, tz);
    return splitting_residual(u, ta, tb, tz, lambda, alpha, p, opt.gh_order);
  };

  Eigen::VectorXd th = layout.pack(a, b, z);
  Eigen::VectorXd G = residual_at(th);
  double res = G.cwiseAbs().maxCoeff();

  SplitResult out{ModulationState(n), Field(), res, 0, false};
  int iter = 0;
  while (res > opt.tol && iter < opt.max_iter) {
    ++iter;
    const bool freeze_z = b.frobenius_norm() < opt.freeze_z_threshold;
    const int active = freeze_z ? m - n : m;

    Eigen::MatrixXd J(active, active);
    for (int k = 0; k < active; ++k) {
      const double step = opt.fd_step * std::max(1.0, std::abs(th(k)));
      Eigen::VectorXd tp = th, tm = th;
      tp(k) += step;
      tm(k) -= step;
      const Eigen::VectorXd col = (residual_at(tp) - residual_at(tm)) / (2.0 * step);
      J.col(k) = col.head(active);
    }

    // Row scaling by the analytic leading magnitudes keeps the blocks,
    // whose natural sizes differ by powers of ||b||, comparably conditioned.
    // a is clamped away from the pole so a wild iterate cannot poison the
    // scales; the residual itself still decides acceptance.
    ModulationState scale_state(n);
    scale_state.a = std::max(a, 0.05);
    scale_state.b = b;
    scale_state.lambda = lambda;
    const JacobianBlocks blocks = jacobian_blocks(scale_state, p);
    Eigen::VectorXd row_scale(active);
    const int n_off = n * (n - 1) / 2;
    for (int r = 0; r < active; ++r) {
      double s;
      if (r <= n)
        s = std::abs(blocks.k11(r, 0));
      else if (r < n + 1 + n_off)
        s = std::abs(blocks.k22(0, 0));
      else
        s = std::max(blocks.k33.cwiseAbs().maxCoeff(), 1e-6);
      row_scale(r) = 1.0 / std::max(s, 1e-300);
    }
    const Eigen::MatrixXd Js = row_scale.asDiagonal() * J;
    const Eigen::VectorXd Gs = row_scale.asDiagonal() * G.head(active);
    Eigen::VectorXd delta = Js.partialPivLu().solve(-Gs);

    // Step halving keeps b inside the PSD cone and insists on progress.
    double step_frac = 1.0;
    bool accepted = false;
    for (int h = 0; h < 8 && !accepted; ++h, step_frac *= 0.5) {
      Eigen::VectorXd cand = th;
      cand.head(active) += step_frac * delta;
      double ca;
      SymMat cb(n);
      std::array<double, kMaxDim> cz{};
      layout.unpack(cand, ca, cb, cz);
      if (!(ca + 0.5 > 0.0) || !cb.is_psd(1e-9)) continue;
      const Eigen::VectorXd Gc = residual_at(cand);
      const double rc = Gc.cwiseAbs().maxCoeff();
      if (rc < res || rc <= opt.tol) {
        th = cand;
        G = Gc;
        res = rc;
        layout.unpack(th, a, b, z);
        accepted = true;
      }
    }
    if (!accepted) break;
  }

  out.mu = mu_guess;
  out.mu.a = a;
  out.mu.b = b;
  out.mu.z = z;
  out.residual = res;
  out.iterations = iter;
  out.converged = res <= opt.tol;

  if (opt.compute_xi) {
    AlmostSolution V(a, b, p);
    const double amp = std::pow(lambda, -2.0 / (p - 1.0));
    Field xi(n, opt.xi_spacing, opt.xi_window);
    xi.fill([&](const double* y) {
      double x[kMaxDim];
      for (int d = 0; d < n; ++d) x[d] = z[d] + (y[d] + alpha[d]) / lambda;
      return amp * u(x) - V.value(y);
    });
    out.xi = std::move(xi);
  }
  return out;
}

// Grid-field overload: u is interpolated (flat extension) at the mapped
// quadrature nodes; the mapped nodes must stay where the weight matters.
inline SplitResult split(const Field& u, const ModulationState& mu_guess, double p,
                         const SplitOptions& opt = {}) {
  if (!u.valid()) throw std::invalid_argument("split: invalid field");
  if (u.dim != mu_guess.dim()) throw std::invalid_argument("split: dim mismatch");
  // Probe coverage with the wider of the guess's node cloud and the a = 1/2
  // cloud, since the iteration may drift below the guessed a. The box edge
  // x = +-L pulls back to y radius lambda(L - |z|) - |alpha|; beyond it the
  // flat extension must only ever be hit with negligible Gaussian weight.
  const double a_probe = std::min(std::max(mu_guess.a, 0.05), 0.5);
  GaussianQuadrature probe(a_probe, u.dim, opt.gh_order);
  double box_radius = std::numeric_limits<double>::max();
  for (int d = 0; d < u.dim; ++d) {
    const double r = mu_guess.lambda * (u.L - std::abs(mu_guess.z[d])) -
                     std::abs(mu_guess.alpha[d]);
    box_radius = std::min(box_radius, r);
  }
  if (box_radius <= 0.0)
    throw std::invalid_argument("split: frame parameters place the profile outside the data box");
  detail::check_weight_coverage(a_probe, probe.node_radius(), box_radius);
  auto eval = [&u](const double* x) { return interpolate(u, x); };
  return split(eval, mu_guess, p, opt);
}

struct SplitTrajectoryResult {
  std::vector<SplitResult> splits;     // one per processed frame
  std::vector<double> times;           // frame times
  std::optional<std::size_t> truncated_at;  // frame index of the first failure
};

// Splits every stored frame of a direct trajectory, seeding each Newton solve
// with the previous parameters, updating lambda from the measured a history
// and alpha from the translation drift.
inline SplitTrajectoryResult split_trajectory(const pde_core::Trajectory& traj,
                                              const ModulationState& mu0, double p,
                                              const SplitOptions& opt = {}) {
  SplitTrajectoryResult out;
  ModulationState guess = mu0;
  std::vector<double> a_times, a_values;

  for (std::size_t f = 0; f < traj.frames.size(); ++f) {
    const double t = traj.frame_times[f];
    if (f > 0) {
      const double dt = t - traj.frame_times[f - 1];
      // Scale update from the splitting gauge: d lambda / dt = a lambda^3,
      // with a held piecewise constant between the measured frames.
      try {
        guess.lambda = blowup_frame::lambda_from_a(a_times, a_values, mu0.lambda, t, true);
      } catch (const blowup_frame::LambdaCrossing&) {
        out.truncated_at = f;
        break;
      }
      std::array<double, kMaxDim> z_dot{};
      const std::size_t prev = out.splits.size();
      if (prev >= 2) {
        for (int d = 0; d < guess.dim(); ++d)
          z_dot[d] = (out.splits[prev - 1].mu.z[d] - out.splits[prev - 2].mu.z[d]) /
                     (out.times[prev - 1] - out.times[prev - 2]);
      }
      guess.alpha = blowup_frame::step_alpha(guess, z_dot, dt);
      guess.t = t;
    }
    SplitResult r = split(traj.frames[f], guess, p, opt);
    if (!r.converged) {
      out.truncated_at = f;
      break;
    }
    a_times.push_back(t);
    a_values.push_back(r.mu.a);
    out.splits.push_back(r);
    out.times.push_back(t);
    guess = r.mu;
  }
  return out;
}

}  // namespace nlheat::profile_manifold
