#include <cmath>
#include <functional>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "nlheat/linear_analysis.hpp"
#include "nlheat/ou_feynman_kac.hpp"

using namespace nlheat;
using namespace nlheat::ou_feynman_kac;

namespace {

// Spectral kernel of the propagator generated by -L0 + V, the flow whose
// kernel the composed bridge estimate U0 * E represents. Modes evolve by
// c' = (-D + <e_i, V e_j>) c, and the kernel reassembles through the
// completeness relation of the weighted basis.
double spectral_kernel(const linear_analysis::HermiteBasis& basis, double r,
                       const std::function<double(double)>& V, double x, double y) {
  const int modes = basis.modes();
  Eigen::MatrixXd gen = Eigen::MatrixXd::Zero(modes, modes);
  for (int i = 0; i < modes; ++i) gen(i, i) = -(i - 2) * basis.alpha;
  for (int i = 0; i < modes; ++i)
    for (int j = i; j < modes; ++j) {
      double acc = 0.0;
      for (int q = 0; q < basis.order; ++q)
        acc += basis.z_weights[q] * V(basis.z_nodes[q]) * basis.eval(q, i) * basis.eval(q, j);
      gen(i, j) += acc;
      if (j > i) gen(j, i) += acc;
    }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gen);
  Eigen::VectorXd ex(modes), ey(modes);
  for (int m = 0; m < modes; ++m) {
    ex(m) = basis.axis_value(m, x);
    ey(m) = basis.axis_value(m, y);
  }
  const Eigen::VectorXd left = es.eigenvectors().transpose() * ex;
  const Eigen::VectorXd right = es.eigenvectors().transpose() * ey;
  double k = 0.0;
  for (int m = 0; m < modes; ++m)
    k += left(m) * std::exp(r * es.eigenvalues()(m)) * right(m);
  return k * std::exp(-basis.alpha * y * y / 2.0);
}

double trapezoid(const std::function<double(double)>& f, double lo, double hi, int steps) {
  const double h = (hi - lo) / steps;
  double acc = 0.5 * (f(lo) + f(hi));
  for (int k = 1; k < steps; ++k) acc += f(lo + k * h);
  return acc * h;
}

}  // namespace

TEST_CASE("bridge mean path solves the pinned boundary problem", "[ou_feynman_kac]") {
  const double sigma = 0.3, tau = 1.7, alpha = 0.8;
  const std::vector<double> x = {1.4, -0.6}, y = {-0.2, 2.1};

  const std::vector<double> at_start = mean_path(x, y, sigma, sigma, tau, alpha);
  const std::vector<double> at_end = mean_path(x, y, tau, sigma, tau, alpha);
  for (std::size_t i = 0; i < x.size(); ++i) {
    REQUIRE(at_start[i] == Catch::Approx(y[i]).margin(1e-14));
    REQUIRE(at_end[i] == Catch::Approx(x[i]).margin(1e-14));
  }

  const std::vector<double> zero = mean_path({0.0}, {0.0}, 0.9, sigma, tau, alpha);
  REQUIRE(zero[0] == 0.0);

  // Central differences certify the defining equation to O(ds^2).
  const double ds = 1e-3;
  for (double s : {0.6, 1.0, 1.4}) {
    const double mid = mean_path1(1.4, -0.2, s, sigma, tau, alpha);
    const double up = mean_path1(1.4, -0.2, s + ds, sigma, tau, alpha);
    const double dn = mean_path1(1.4, -0.2, s - ds, sigma, tau, alpha);
    const double residual = -(up - 2.0 * mid + dn) / (ds * ds) + alpha * alpha * mid;
    REQUIRE(std::abs(residual) <= 1e-6);
  }

  // Tiny alpha degenerates to linear interpolation.
  const double lin = mean_path1(2.0, 1.0, 0.65, 0.3, 1.7, 1e-13);
  REQUIRE(lin == Catch::Approx(1.25).margin(1e-9));

  REQUIRE_THROWS_AS(mean_path(x, y, 0.1, sigma, tau, alpha), std::invalid_argument);
  REQUIRE_THROWS_AS(mean_path({1.0}, {1.0, 2.0}, 1.0, sigma, tau, alpha),
                    std::invalid_argument);
}

TEST_CASE("bridge ensemble matches its covariance oracle", "[ou_feynman_kac]") {
  OUBridgeConfig cfg;
  cfg.alpha = 0.7;
  cfg.sigma_start = 0.0;
  cfg.tau_end = 1.0;
  cfg.n_paths = 20000;
  cfg.n_steps = 32;
  cfg.seed = 123;
  const BridgeEnsemble ens = sample_bridge(cfg);

  // Ends pinned exactly.
  for (int p = 0; p < cfg.n_paths; p += 997) {
    REQUIRE(ens.at(p, 0) == 0.0);
    REQUIRE(ens.at(p, cfg.n_steps) == 0.0);
  }

  // Dense oracle: the inverse of the discrete (-D2 + alpha^2) with zero
  // boundary conditions approximates dt times the Green function, so the
  // covariance (twice the Green function) is its inverse scaled by 2/dt.
  const int m = cfg.n_steps - 1;
  const double dt = (cfg.tau_end - cfg.sigma_start) / cfg.n_steps;
  Eigen::MatrixXd prec = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i) {
    prec(i, i) = 2.0 / (dt * dt) + cfg.alpha * cfg.alpha;
    if (i + 1 < m) prec(i, i + 1) = prec(i + 1, i) = -1.0 / (dt * dt);
  }
  const Eigen::MatrixXd cov = (2.0 / dt) * prec.inverse();

  // Sample mean stays within a few standard errors of zero.
  for (int i = 0; i < m; ++i) {
    double mean = 0.0;
    for (int p = 0; p < cfg.n_paths; ++p) mean += ens.at(p, i + 1);
    mean /= cfg.n_paths;
    REQUIRE(std::abs(mean) <= 4.0 * std::sqrt(cov(i, i) / cfg.n_paths));
  }

  // Empirical covariance against the oracle, in correlation units.
  double worst = 0.0;
  for (int i = 0; i < m; i += 5)
    for (int j = i; j < m; j += 5) {
      double acc = 0.0;
      for (int p = 0; p < cfg.n_paths; ++p) acc += ens.at(p, i + 1) * ens.at(p, j + 1);
      acc /= cfg.n_paths;
      worst = std::max(worst,
                       std::abs(acc - cov(i, j)) / std::sqrt(cov(i, i) * cov(j, j)));
    }
  REQUIRE(worst <= 0.05);

  // Same seed, bit-identical ensemble.
  const BridgeEnsemble again = sample_bridge(cfg);
  REQUIRE(again.values == ens.values);

  // Interior variance decays like 1/alpha at fixed interior time, per the
  // covariance formula itself: compare the midpoint entry against the
  // closed form 2 sinh^2(alpha/2) / (alpha sinh alpha) and check the rate.
  std::vector<double> mid_var;
  for (double a : {2.0, 4.0, 8.0}) {
    Eigen::MatrixXd pa = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) {
      pa(i, i) = 2.0 / (dt * dt) + a * a;
      if (i + 1 < m) pa(i, i + 1) = pa(i + 1, i) = -1.0 / (dt * dt);
    }
    const Eigen::MatrixXd ca = (2.0 / dt) * pa.inverse();
    const int mid = m / 2;
    mid_var.push_back(ca(mid, mid));
    const double t = (mid + 1) * dt;
    const double exact = 2.0 * std::sinh(a * t) * std::sinh(a * (1.0 - t)) /
                         (a * std::sinh(a));
    REQUIRE(ca(mid, mid) == Catch::Approx(exact).epsilon(0.02));
  }
  REQUIRE(mid_var[0] > mid_var[1]);
  REQUIRE(mid_var[1] > mid_var[2]);
  // The 1/alpha law is asymptotic: the halving ratio approaches 2 from
  // below and alpha * variance approaches 1.
  REQUIRE(mid_var[1] / mid_var[2] > mid_var[0] / mid_var[1]);
  REQUIRE(mid_var[1] / mid_var[2] == Catch::Approx(2.0).margin(0.15));
  REQUIRE(8.0 * mid_var[2] == Catch::Approx(1.0).margin(0.05));

  OUBridgeConfig bad = cfg;
  bad.tau_end = cfg.sigma_start;
  REQUIRE_THROWS_AS(sample_bridge(bad), std::invalid_argument);
  bad = cfg;
  bad.n_paths = 0;
  REQUIRE_THROWS_AS(sample_bridge(bad), std::invalid_argument);
}

TEST_CASE("path weights reproduce exact and spectral kernels", "[ou_feynman_kac]") {
  OUBridgeConfig cfg;
  cfg.alpha = 0.5;
  cfg.sigma_start = 0.0;
  cfg.tau_end = 0.6;
  cfg.n_paths = 10000;
  cfg.n_steps = 256;
  cfg.seed = 20260819;
  const double r = cfg.tau_end - cfg.sigma_start;
  const BridgeEnsemble pinned = sample_bridge(cfg);

  {
    // Zero potential: every weight is exactly one.
    const KernelEstimate est = fk_weight(pinned, [](double, double) { return 0.0; });
    REQUIRE(est.mean == 1.0);
    REQUIRE(est.std_error == 0.0);
  }

  {
    // Constant potential: the weight is deterministic.
    const double kappa = -0.37;
    const KernelEstimate est =
        fk_weight(pinned, [&](double, double) { return kappa; });
    REQUIRE(est.mean == Catch::Approx(std::exp(kappa * r)).margin(1e-13));
    REQUIRE(est.std_error <= 1e-13);
  }

  // Three genuinely random potentials: the composed kernel U0 * E matches
  // the spectral propagator with the same potential at selected endpoint
  // pairs, within three standard errors plus the oracle's truncation
  // slack. Degree 80 keeps the oracle's own error well under a standard
  // error for the rational potentials.
  const linear_analysis::HermiteBasis basis = linear_analysis::hermite_basis(cfg.alpha, 80, 1);
  const std::vector<std::function<double(double)>> potentials = {
      [](double z) { return -1e-2 * z * z; },
      [](double z) { return -0.1 * z * z / (1.0 + z * z); },
      [](double z) { return -0.2 / (1.0 + z * z); },
  };
  const std::vector<std::pair<double, double>> ends = {{0.0, 0.0}, {0.8, -0.5}, {-1.2, 0.6}};
  for (const auto& V : potentials) {
    for (const auto& [x, y] : ends) {
      const BridgeEnsemble shifted = shift_bridge(pinned, x, y);
      const KernelEstimate est =
          fk_weight(shifted, [&](double z, double) { return V(z); });
      const double u0 = mehler_kernel(x, y, r, cfg.alpha);
      const double oracle = spectral_kernel(basis, r, V, x, y);
      REQUIRE(std::abs(u0 * est.mean - oracle) <= 3.0 * u0 * est.std_error + 2e-6);
    }
  }
}

TEST_CASE("estimator noise shrinks at the Monte-Carlo rate", "[ou_feynman_kac]") {
  OUBridgeConfig cfg;
  cfg.alpha = 0.5;
  cfg.sigma_start = 0.0;
  cfg.tau_end = 0.5;
  cfg.n_steps = 64;
  cfg.seed = 99;
  const auto V = [](double z, double) { return -0.05 * z * z; };

  std::vector<double> log_n, log_se;
  for (int n : {1000, 10000, 100000}) {
    cfg.n_paths = n;
    const BridgeEnsemble shifted = shift_bridge(sample_bridge(cfg), 0.6, -0.4);
    const KernelEstimate est = fk_weight(shifted, V);
    REQUIRE(est.std_error > 0.0);
    log_n.push_back(std::log(static_cast<double>(n)));
    log_se.push_back(std::log(est.std_error));
  }
  const LinearFit fit = fit_line(log_n, log_se);
  REQUIRE(std::abs(fit.slope + 0.5) <= 0.1);

  // Identical configuration reproduces the estimate bit for bit.
  cfg.n_paths = 2000;
  const BridgeEnsemble a = shift_bridge(sample_bridge(cfg), 0.6, -0.4);
  const BridgeEnsemble b = shift_bridge(sample_bridge(cfg), 0.6, -0.4);
  REQUIRE(a.values == b.values);
  const KernelEstimate ea = fk_weight(a, V);
  const KernelEstimate eb = fk_weight(b, V);
  REQUIRE(ea.mean == eb.mean);
  REQUIRE(ea.std_error == eb.std_error);
}

TEST_CASE("kernel quadratures close the semigroup algebra", "[ou_feynman_kac]") {
  // Positivity and the two moment identities that pin the conjugation.
  for (double alpha : {0.25, 0.5, 1.0}) {
    const double B = 14.0 / std::sqrt(alpha);
    for (double r : {0.1, 1.0}) {
      const double grow = std::exp(2.0 * alpha * r);
      for (double x : {0.0, 0.9, -1.7}) {
        REQUIRE(mehler_kernel(x, 0.3, r, alpha) > 0.0);
        const double mass = trapezoid(
            [&](double y) { return mehler_kernel(x, y, r, alpha); }, -B, B, 4000);
        REQUIRE(std::abs(mass - grow) / grow <= 1e-8);
        const double quad = trapezoid(
            [&](double y) {
              return mehler_kernel(x, y, r, alpha) * (alpha * y * y - 1.0);
            },
            -B, B, 4000);
        const double want = alpha * x * x - 1.0;
        REQUIRE(std::abs(quad - want) <= 1e-8 * std::max(1.0, std::abs(want)));
      }
    }
  }

  {
    // Two short flows compose into the long one.
    const double alpha = 0.6, r1 = 0.3, r2 = 0.5;
    const double B = 14.0 / std::sqrt(alpha);
    for (const auto& [x, y] : std::vector<std::pair<double, double>>{{0.4, -0.9}, {0.0, 1.3}}) {
      const double composed = trapezoid(
          [&](double u) {
            return mehler_kernel(x, u, r1, alpha) * mehler_kernel(u, y, r2, alpha);
          },
          -B, B, 6000);
      const double direct = mehler_kernel(x, y, r1 + r2, alpha);
      REQUIRE(std::abs(composed - direct) / direct <= 1e-8);
    }
  }

  REQUIRE_THROWS_AS(mehler_kernel(0.0, 0.0, 0.0, 0.5), std::invalid_argument);
  REQUIRE_THROWS_AS(mehler_kernel(0.0, 0.0, -1.0, 0.5), std::invalid_argument);
  REQUIRE_THROWS_AS(mehler_kernel(0.0, 0.0, 1.0, 0.0), std::invalid_argument);
}

TEST_CASE("gradient of the kernel estimate respects the drift bound", "[ou_feynman_kac]") {
  OUBridgeConfig cfg;
  cfg.alpha = 0.5;
  cfg.sigma_start = 0.0;
  cfg.tau_end = 0.4;
  cfg.n_paths = 40000;
  cfg.n_steps = 64;
  cfg.seed = 7;
  const double r = cfg.tau_end - cfg.sigma_start;

  {
    // Zero and constant potentials have exactly flat estimates.
    const GradientReport flat =
        fk_gradient_check(cfg, 0.3, -0.2, [](double, double) { return 0.0; }, 0.0);
    REQUIRE(flat.gradient == 0.0);
    REQUIRE(flat.bound_ratio == 0.0);
    REQUIRE(flat.conclusive);
    const GradientReport shifted =
        fk_gradient_check(cfg, 0.3, -0.2, [](double, double) { return -0.3; }, 0.0);
    REQUIRE(shifted.gradient == 0.0);
    REQUIRE(shifted.conclusive);
  }

  // Bounded-slope family: the measured derivative honors the corollary
  // bound, and the beta^{1/2}-normalized size stays bounded across the
  // sweep.
  for (double beta : {1e-2, 1e-3, 1e-4}) {
    const auto V = [beta](double z, double) { return -beta * z * z / (1.0 + z * z); };
    // max |dV/dz| = beta * max 2z/(1+z^2)^2 at z = 1/sqrt(3).
    const double g_max = beta * 3.0 * std::sqrt(3.0) / 8.0;
    const GradientReport rep = fk_gradient_check(cfg, 0.3, -0.2, V, g_max);
    if (beta >= 1e-3) REQUIRE(rep.conclusive);
    if (rep.conclusive) REQUIRE(rep.bound_ratio <= 1.1);
    REQUIRE(std::abs(rep.gradient) / (r * std::sqrt(beta)) <= 1.0);
  }

  REQUIRE_THROWS_AS(
      fk_gradient_check(cfg, 0.0, 0.0, [](double, double) { return 0.0; }, -1.0),
      std::invalid_argument);
}
