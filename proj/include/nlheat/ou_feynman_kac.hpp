#pragma once

// Ornstein-Uhlenbeck bridge Monte Carlo for the kernel representation of
// the frozen-drift propagator with a bounded potential, plus the exact
// Gaussian kernel of the zero-potential flow as reference and building
// block. Paths are pinned bridges: a deterministic mean path joining the
// endpoints and a centered Gaussian fluctuation pinned at zero.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

namespace nlheat {
namespace ou_feynman_kac {

struct OUBridgeConfig {
  double alpha = 0.5;
  double sigma_start = 0.0;
  double tau_end = 1.0;
  int n_paths = 1000;
  int n_steps = 64;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(alpha > 0.0))
      throw std::invalid_argument("OUBridgeConfig: alpha must be positive");
    if (!(tau_end > sigma_start))
      throw std::invalid_argument("OUBridgeConfig: tau_end must exceed sigma_start");
    if (n_paths < 1 || n_steps < 1)
      throw std::invalid_argument("OUBridgeConfig: need at least one path and one step");
  }
};

struct KernelEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  int n_paths = 0;
};

struct BridgeEnsemble {
  double alpha = 0.0;
  double sigma = 0.0;
  double tau = 0.0;
  int n_paths = 0;
  int n_steps = 0;
  std::vector<double> times;   // n_steps + 1 entries
  std::vector<double> values;  // n_paths rows of times.size() samples

  double at(int path, int k) const {
    return values[static_cast<std::size_t>(path) * times.size() +
                  static_cast<std::size_t>(k)];
  }
};

// Mean path of the bridge from (sigma, y) to (tau, x): the unique solution
// of (-d^2/ds^2 + alpha^2) w = 0 with those endpoint values.
inline double mean_path1(double x, double y, double s, double sigma, double tau,
                         double alpha) {
  if (!(tau > sigma)) throw std::invalid_argument("mean_path: tau must exceed sigma");
  if (!(sigma <= s && s <= tau))
    throw std::invalid_argument("mean_path: time outside the bridge interval");
  const double span = alpha * (tau - sigma);
  if (std::abs(span) < 1e-10)
    return (x * (s - sigma) + y * (tau - s)) / (tau - sigma);
  return (x * std::sinh(alpha * (s - sigma)) + y * std::sinh(alpha * (tau - s))) /
         std::sinh(span);
}

inline std::vector<double> mean_path(const std::vector<double>& x,
                                     const std::vector<double>& y, double s,
                                     double sigma, double tau, double alpha) {
  if (x.size() != y.size() || x.empty())
    throw std::invalid_argument("mean_path: endpoint dimensions differ");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = mean_path1(x[i], y[i], s, sigma, tau, alpha);
  return out;
}

// Centered bridge ensemble, pinned at 0 at both ends. The fluctuation
// covariance discretizes 2 (-d^2/ds^2 + alpha^2)^{-1} with zero boundary
// conditions: the factor 2 carries the diffusion constant of the
// underlying drift process, and the extra 1/dt converts the inverse of
// the difference matrix into the Green function values it approximates.
// Samples are standard normals pushed through the inverse transposed
// Cholesky factor of the precision matrix.
inline BridgeEnsemble sample_bridge(const OUBridgeConfig& cfg) {
  cfg.validate();
  BridgeEnsemble out;
  out.alpha = cfg.alpha;
  out.sigma = cfg.sigma_start;
  out.tau = cfg.tau_end;
  out.n_paths = cfg.n_paths;
  out.n_steps = cfg.n_steps;
  const double dt = (cfg.tau_end - cfg.sigma_start) / cfg.n_steps;
  out.times.resize(static_cast<std::size_t>(cfg.n_steps) + 1);
  for (int k = 0; k <= cfg.n_steps; ++k) out.times[k] = cfg.sigma_start + k * dt;
  out.values.assign(static_cast<std::size_t>(cfg.n_paths) * out.times.size(), 0.0);
  const int m = cfg.n_steps - 1;
  if (m == 0) return out;

  Eigen::MatrixXd prec = Eigen::MatrixXd::Zero(m, m);
  const double diag = 2.0 / (dt * dt) + cfg.alpha * cfg.alpha;
  const double off = -1.0 / (dt * dt);
  for (int i = 0; i < m; ++i) {
    prec(i, i) = diag;
    if (i + 1 < m) {
      prec(i, i + 1) = off;
      prec(i + 1, i) = off;
    }
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(prec);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("sample_bridge: precision factorization failed");
  const Eigen::MatrixXd upper = llt.matrixU();

  const double scale = std::sqrt(2.0 / dt);
  Eigen::VectorXd xi(m);
  for (int p = 0; p < cfg.n_paths; ++p) {
    // Independent per-path stream so the ensemble is reproducible in any
    // evaluation order.
    std::mt19937_64 gen(cfg.seed ^
                        (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(p + 1)));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < m; ++i) xi(i) = normal(gen);
    const Eigen::VectorXd w = upper.triangularView<Eigen::Upper>().solve(xi);
    double* row = &out.values[static_cast<std::size_t>(p) * out.times.size()];
    for (int i = 0; i < m; ++i) row[i + 1] = scale * w(i);
  }
  return out;
}

// Adds the mean path for endpoints (sigma, y) -> (tau, x) to every sample.
inline BridgeEnsemble shift_bridge(const BridgeEnsemble& pinned, double x, double y) {
  BridgeEnsemble out = pinned;
  std::vector<double> base(pinned.times.size());
  for (std::size_t k = 0; k < pinned.times.size(); ++k)
    base[k] = mean_path1(x, y, pinned.times[k], pinned.sigma, pinned.tau, pinned.alpha);
  for (int p = 0; p < pinned.n_paths; ++p) {
    double* row = &out.values[static_cast<std::size_t>(p) * pinned.times.size()];
    for (std::size_t k = 0; k < pinned.times.size(); ++k) row[k] += base[k];
  }
  return out;
}

namespace detail {

// exp of the trapezoidal line integral of the potential along each path.
inline std::vector<double> path_weights(
    const BridgeEnsemble& paths, const std::function<double(double, double)>& potential) {
  if (paths.n_paths < 1 || paths.times.size() < 2)
    throw std::invalid_argument("fk_weight: empty ensemble");
  const std::size_t cols = paths.times.size();
  const double dt = paths.times[1] - paths.times[0];
  std::vector<double> weights(static_cast<std::size_t>(paths.n_paths));
  for (int p = 0; p < paths.n_paths; ++p) {
    const double* row = &paths.values[static_cast<std::size_t>(p) * cols];
    double integral = 0.5 * (potential(row[0], paths.times[0]) +
                             potential(row[cols - 1], paths.times[cols - 1]));
    for (std::size_t k = 1; k + 1 < cols; ++k)
      integral += potential(row[k], paths.times[k]);
    weights[p] = std::exp(dt * integral);
  }
  return weights;
}

inline KernelEstimate reduce(const std::vector<double>& weights) {
  KernelEstimate est;
  est.n_paths = static_cast<int>(weights.size());
  double sum = 0.0;
  for (double w : weights) sum += w;
  est.mean = sum / static_cast<double>(weights.size());
  if (weights.size() > 1) {
    double ss = 0.0;
    for (double w : weights) ss += (w - est.mean) * (w - est.mean);
    est.std_error = std::sqrt(ss / ((static_cast<double>(weights.size()) - 1.0) *
                                    static_cast<double>(weights.size())));
  }
  return est;
}

}  // namespace detail

// Monte-Carlo mean and standard error of exp(int V(path(s), s) ds). The
// ensemble is expected to already carry the mean path (shift_bridge).
inline KernelEstimate fk_weight(const BridgeEnsemble& paths,
                                const std::function<double(double, double)>& potential) {
  return detail::reduce(detail::path_weights(paths, potential));
}

struct GradientReport {
  double gradient = 0.0;
  double std_error = 0.0;
  double bound_ratio = 0.0;  // |gradient| / ((tau - sigma) * g_max)
  bool conclusive = false;
};

// Central-difference derivative in the starting point y of the bridge
// weight, with common noise across the two shifted ensembles. For
// nonpositive potentials with |dV/dz| <= g_max the derivative is bounded
// by (tau - sigma) * g_max, since the mean path moves at unit rate at
// most and every weight is at most one.
inline GradientReport fk_gradient_check(const OUBridgeConfig& cfg, double x, double y,
                                        const std::function<double(double, double)>& potential,
                                        double g_max, double dy = 1e-3) {
  if (!(g_max >= 0.0))
    throw std::invalid_argument("fk_gradient_check: g_max must be nonnegative");
  if (!(dy > 0.0)) throw std::invalid_argument("fk_gradient_check: dy must be positive");
  const BridgeEnsemble pinned = sample_bridge(cfg);
  const std::vector<double> hi =
      detail::path_weights(shift_bridge(pinned, x, y + dy), potential);
  const std::vector<double> lo =
      detail::path_weights(shift_bridge(pinned, x, y - dy), potential);
  std::vector<double> quot(hi.size());
  for (std::size_t p = 0; p < hi.size(); ++p) quot[p] = (hi[p] - lo[p]) / (2.0 * dy);
  const KernelEstimate est = detail::reduce(quot);

  GradientReport report;
  report.gradient = est.mean;
  report.std_error = est.std_error;
  const double scale = (cfg.tau_end - cfg.sigma_start) * g_max;
  if (scale > 0.0) {
    report.bound_ratio = std::abs(est.mean) / scale;
    report.conclusive = est.std_error <= 0.5 * scale;
  } else {
    report.bound_ratio =
        est.mean == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    report.conclusive = est.std_error == 0.0;
  }
  return report;
}

// Exact kernel of the zero-potential flow over time r: the Gaussian
// transition density of the drift process times the growth factor of the
// two constant-sector bands.
inline double mehler_kernel(double x, double y, double r, double alpha) {
  if (!(r > 0.0)) throw std::invalid_argument("mehler_kernel: r must be positive");
  if (!(alpha > 0.0)) throw std::invalid_argument("mehler_kernel: alpha must be positive");
  const double shrink = std::exp(-alpha * r);
  const double spread = (1.0 - shrink * shrink) / alpha;
  const double d = y - shrink * x;
  return std::exp(2.0 * alpha * r) * std::exp(-d * d / (2.0 * spread)) /
         std::sqrt(2.0 * M_PI * spread);
}

}  // namespace ou_feynman_kac
}  // namespace nlheat
