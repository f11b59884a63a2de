#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "nlheat/modulation.hpp"

using namespace nlheat;
using namespace nlheat::modulation;

namespace {

SymMat sym1(double v) {
  SymMat m(1);
  m.at(0, 0) = v;
  return m;
}

SymMat sym2(double d0, double d1, double off) {
  SymMat m(2);
  m.at(0, 0) = d0;
  m.at(1, 1) = d1;
  m.at(1, 0) = off;
  return m;
}

// Matrix RK4 for db/dtau = -(4p/(p-1)^2) b^2, independent of the header's
// integrator; used as the ODE oracle for the closed form.
SymMat pure_flow_rk4(const SymMat& b0, double p, double tau_end, double dtau) {
  const double q = 4.0 * p / ((p - 1.0) * (p - 1.0));
  auto f = [&](const SymMat& b) { return -q * b.square(); };
  SymMat b = b0;
  const std::size_t n = static_cast<std::size_t>(std::llround(tau_end / dtau));
  for (std::size_t k = 0; k < n; ++k) {
    const SymMat k1 = f(b);
    const SymMat k2 = f(b + (0.5 * dtau) * k1);
    const SymMat k3 = f(b + (0.5 * dtau) * k2);
    const SymMat k4 = f(b + dtau * k3);
    b += (dtau / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return b;
}

}  // namespace

TEST_CASE("modulation exponents", "[modulation]") {
  const ModConstants c3(3.0);
  REQUIRE(c3.p == 3.0);
  REQUIRE(c3.kappa == 0.5);

  REQUIRE(ModConstants(1.5).kappa == Catch::Approx(0.25).margin(1e-15));
  REQUIRE(ModConstants(2.0).kappa == Catch::Approx(0.5).margin(1e-15));
  REQUIRE(ModConstants(7.0).kappa == 0.5);

  for (double p : {1.2, 1.9, 2.0, 3.0, 5.0, 9.0}) {
    const ModConstants c(p);
    REQUIRE(c.kappa > 0.0);
    REQUIRE(c.kappa <= 0.5);
  }
  REQUIRE_THROWS_AS(ModConstants(1.0), std::invalid_argument);
  REQUIRE_THROWS_AS(ModConstants(0.5), std::invalid_argument);
}

TEST_CASE("closed form attractor flow", "[modulation]") {
  SECTION("tau zero returns the initial matrix unchanged") {
    const SymMat b0 = sym2(0.1, 0.03, 0.01);
    const SymMat r = beta_tilde(0.0, b0, 3.0);
    for (int k = 0; k < b0.size(); ++k) REQUIRE(r.packed(k) == b0.packed(k));
  }

  SECTION("isotropic start stays isotropic with the scalar law") {
    // 4 p tau / (p-1)^2 = 10 at p = 3, tau = 10/3: (10 + 10)^{-1} = 0.05.
    const SymMat b0 = SymMat::scaled_identity(2, 0.1);
    const SymMat r = beta_tilde(10.0 / 3.0, b0, 3.0);
    REQUIRE(r.at(0, 0) == Catch::Approx(0.05).margin(1e-14));
    REQUIRE(r.at(1, 1) == Catch::Approx(0.05).margin(1e-14));
    REQUIRE(std::abs(r.at(1, 0)) < 1e-15);
  }

  SECTION("largest eigenvalue follows the scalar map") {
    const SymMat b0 = sym2(0.1, 0.02, 0.0);
    const double beta = beta_scalar(2.0, b0, 3.0);
    REQUIRE(beta == Catch::Approx(0.1 / 1.6).margin(1e-14));
    REQUIRE(beta_tilde(2.0, b0, 3.0).max_eigenvalue() ==
            Catch::Approx(beta).margin(1e-13));
  }

  SECTION("degenerate or invalid inputs are rejected") {
    REQUIRE_THROWS_AS(beta_tilde(1.0, sym2(0.1, 0.0, 0.0), 3.0), std::invalid_argument);
    REQUIRE_THROWS_AS(beta_tilde(1.0, sym1(-0.05), 3.0), std::invalid_argument);
    REQUIRE_THROWS_AS(beta_tilde(-0.5, sym1(0.1), 3.0), std::invalid_argument);
    REQUIRE_THROWS_AS(beta_scalar(1.0, sym2(0.1, 0.0, 0.0), 3.0), std::invalid_argument);
  }

  SECTION("satisfies its own differential equation") {
    const SymMat b0 = sym2(0.09, 0.04, 0.015);
    const double p = 3.0;
    const double tau = 2.0, eps = 1e-4;
    const SymMat hi = beta_tilde(tau + eps, b0, p);
    const SymMat lo = beta_tilde(tau - eps, b0, p);
    const SymMat mid = beta_tilde(tau, b0, p);
    const SymMat expect = -3.0 * mid.square();
    for (int k = 0; k < b0.size(); ++k) {
      const double fd = (hi.packed(k) - lo.packed(k)) / (2.0 * eps);
      REQUIRE(fd == Catch::Approx(expect.packed(k)).margin(1e-8));
    }
  }

  SECTION("matches an independent ODE integration") {
    const SymMat b0 = sym2(0.08, 0.03, 0.02);
    const double p = 2.5;
    const SymMat num = pure_flow_rk4(b0, p, 5.0, 0.01);
    const SymMat exact = beta_tilde(5.0, b0, p);
    for (int k = 0; k < b0.size(); ++k)
      REQUIRE(num.packed(k) == Catch::Approx(exact.packed(k)).margin(1e-8));
  }
}

TEST_CASE("modulation vector field", "[modulation]") {
  SECTION("the target point is an exact fixed point") {
    for (int n : {1, 2, 3}) {
      const auto d = modulation_rhs(0.5, SymMat(n), 3.0);
      REQUIRE(d.a_dot == 0.0);
      REQUIRE(d.b_dot.max_abs() == 0.0);
    }
  }

  SECTION("worked scalar values") {
    // n=1, p=3, a=0.45, b=0.1: the three b terms are -0.03, -0.01, +0.005.
    const auto d = modulation_rhs(0.45, sym1(0.1), 3.0);
    REQUIRE(d.b_dot.at(0, 0) == Catch::Approx(-0.035).margin(1e-15));
    REQUIRE(d.a_dot == Catch::Approx(-0.0475).margin(1e-15));
  }

  SECTION("matches the componentwise formula in 2d") {
    const double a = 0.48, p = 3.0;
    const SymMat b = sym2(0.04, 0.02, 0.01);
    const auto d = modulation_rhs(a, b, p);
    const Eigen::MatrixXd bd = b.dense();
    const Eigen::MatrixXd expect =
        -3.0 * (bd * bd) + ((0.5 - a) - b.trace()) * bd;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        REQUIRE(d.b_dot.at(i, j) == Catch::Approx(expect(i, j)).margin(1e-15));
    REQUIRE(d.a_dot ==
            Catch::Approx((a + 0.5) * ((0.5 - a) - b.trace())).margin(1e-15));
  }

  SECTION("slaving relation cancels the linear terms exactly") {
    // dyadic entries keep a = 1/2 - tr b representable, so the cancellation
    // is bitwise rather than merely at roundoff level.
    const SymMat b = sym2(0.0625, 0.03125, 0.015625);
    const double p = 3.0;
    const double a = 0.5 - 2.0 * b.trace() / (p - 1.0);
    const auto d = modulation_rhs(a, b, p);
    REQUIRE(d.a_dot == 0.0);
    const SymMat pure = b.square();
    for (int k = 0; k < b.size(); ++k)
      REQUIRE(d.b_dot.packed(k) == -3.0 * pure.packed(k));
  }

  SECTION("slaving cancellation at generic values is at machine precision") {
    const SymMat b = sym2(0.06, 0.03, 0.015);
    const double p = 3.0;
    const double a = 0.5 - 2.0 * b.trace() / (p - 1.0);
    const auto d = modulation_rhs(a, b, p);
    REQUIRE(std::abs(d.a_dot) <= 1e-15);
    const SymMat pure = b.square();
    for (int k = 0; k < b.size(); ++k)
      REQUIRE(d.b_dot.packed(k) ==
              Catch::Approx(-3.0 * pure.packed(k)).margin(1e-15));
  }

  SECTION("slaving cancellation at a non-integer exponent") {
    const SymMat b = sym1(0.046875);
    const double p = 2.0;
    const double a = 0.5 - 2.0 * b.trace() / (p - 1.0);
    const auto d = modulation_rhs(a, b, p);
    REQUIRE(d.a_dot == 0.0);
    const double q = 4.0 * p / ((p - 1.0) * (p - 1.0));
    REQUIRE(d.b_dot.at(0, 0) == -q * (0.046875 * 0.046875));
  }
}

TEST_CASE("slaved integration reproduces the closed form", "[modulation]") {
  SECTION("scalar flow over a long horizon") {
    const SymMat b0 = sym1(0.05);
    const auto tr = integrate_modulation(0.5, b0, 3.0, 1000.0, 0.01, true);
    REQUIRE_FALSE(tr.left_attracting_regime);
    REQUIRE(tr.taus.size() == 100001);

    double max_abs = 0.0, max_rel = 0.0;
    for (std::size_t k = 0; k < tr.taus.size(); k += 10) {
      const double exact = beta_scalar(tr.taus[k], b0, 3.0);
      const double dev = std::abs(tr.b[k].at(0, 0) - exact);
      max_abs = std::max(max_abs, dev);
      max_rel = std::max(max_rel, dev / exact);
    }
    REQUIRE(max_abs <= 1e-8);
    REQUIRE(max_rel <= 1e-6);
  }

  SECTION("anisotropic flow in 2d") {
    const SymMat b0 = sym2(0.07, 0.02, 0.015);
    const auto tr = integrate_modulation(0.5, b0, 3.0, 50.0, 0.01, true);
    REQUIRE_FALSE(tr.left_attracting_regime);
    double max_dev = 0.0;
    for (std::size_t k = 0; k < tr.taus.size(); k += 50) {
      const SymMat exact = beta_tilde(tr.taus[k], b0, 3.0);
      max_dev = std::max(max_dev, (tr.b[k] - exact).frobenius_norm());
    }
    REQUIRE(max_dev <= 1e-8);
  }
}

TEST_CASE("full modulation flow relaxes to the attractor", "[modulation]") {
  SECTION("long scalar run reaches the universal decay rate") {
    const SymMat b0 = sym1(0.05);
    const auto tr = integrate_modulation(0.5, b0, 3.0, 1000.0, 0.01, false);
    REQUIRE_FALSE(tr.left_attracting_regime);
    REQUIRE(tr.taus.back() == Catch::Approx(1000.0).margin(1e-9));

    // tau * beta -> (p-1)^2 / (4p) = 1/3 within 2 percent.
    const double prod = tr.taus.back() * tr.b.back().max_eigenvalue();
    REQUIRE(std::abs(prod * 3.0 - 1.0) <= 0.02);

    // a relaxes to 1/2.
    REQUIRE(std::abs(tr.a.back() - 0.5) <= 1e-3);

    // deviation from the closed form stays below beta^{3/2} scale.
    double max_ratio = 0.0;
    for (std::size_t k = 1000; k < tr.taus.size(); k += 2000) {
      const SymMat exact = beta_tilde(tr.taus[k], b0, 3.0);
      const double beta = beta_scalar(tr.taus[k], b0, 3.0);
      const double ratio = (tr.b[k] - exact).frobenius_norm() / std::pow(beta, 1.5);
      max_ratio = std::max(max_ratio, ratio);
    }
    REQUIRE(max_ratio > 0.0);
    REQUIRE(max_ratio <= 1.0);
  }

  SECTION("2d run stays PSD and lands near the fixed point") {
    const SymMat b0 = sym2(0.05, 0.04, 0.02);
    const auto tr = integrate_modulation(0.55, b0, 3.0, 200.0, 0.01, false);
    REQUIRE_FALSE(tr.left_attracting_regime);
    for (std::size_t k = 0; k < tr.taus.size(); k += 500)
      REQUIRE(tr.b[k].is_psd(1e-12));
    REQUIRE(std::abs(tr.a.back() - 0.5) <= 5e-3);
    REQUIRE(tr.b.back().max_eigenvalue() < 2e-3);
  }

  SECTION("zero curvature is an invariant subspace") {
    const auto tr = integrate_modulation(0.8, SymMat(2), 3.0, 20.0, 0.01, false);
    REQUIRE_FALSE(tr.left_attracting_regime);
    for (std::size_t k = 0; k < tr.taus.size(); k += 100)
      REQUIRE(tr.b[k].max_abs() == 0.0);
    REQUIRE(std::abs(tr.a.back() - 0.5) <= 1e-7);
  }

  SECTION("invalid starts are rejected") {
    REQUIRE_THROWS_AS(integrate_modulation(0.5, sym1(-0.1), 3.0, 1.0),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(integrate_modulation(-0.6, sym1(0.1), 3.0, 1.0),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(integrate_modulation(0.5, sym1(0.1), 3.0, 1.0, -0.01),
                      std::invalid_argument);
  }
}

TEST_CASE("parameter blow-off is flagged", "[modulation]") {
  // At p = 9 the quadratic damping is weak enough that a start near the
  // degenerate edge a = -1/2 lets the linear term drive b an order of
  // magnitude past its initial size before a recovers.
  const auto tr = integrate_modulation(-0.48, sym1(0.05), 9.0, 40.0, 0.01, false);
  REQUIRE(tr.left_attracting_regime);
  REQUIRE(tr.tau_flagged > 0.0);
  REQUIRE(tr.taus.back() < 40.0);
  // stored states stop before the runaway values.
  REQUIRE(tr.b.back().frobenius_norm() <= 0.5);
}

TEST_CASE("source terms from manifold motion", "[modulation]") {
  SECTION("derivatives from the vector field null the gamma coefficients") {
    ModulationState st(2);
    st.a = 0.48;
    st.b = sym2(0.05, 0.03, 0.01);
    const auto d = modulation_rhs(st.a, st.b, 3.0);
    const auto g = gamma_terms(st, d, 3.0, 0.25, 5.0);
    REQUIRE(std::abs(g.gamma0) <= 1e-15);
    REQUIRE(g.gamma.max_abs() <= 1e-15);
  }

  SECTION("gradient correction vanishes without curvature") {
    ModulationState st(1);
    st.a = 0.5;
    st.b = SymMat(1);
    ParameterDerivatives d;
    d.a_dot = 0.01;
    d.b_dot = SymMat(1);
    const auto g = gamma_terms(st, d, 3.0, 0.1, 4.0);
    REQUIRE(g.g1.sup_norm() == 0.0);
    // with gamma zero except gamma0, the source is gamma0 V / (p-1).
    const double v0 = std::pow(1.0 / 2.0, 0.5);
    REQUIRE(g.source.value_at_origin() ==
            Catch::Approx(g.gamma0 * v0 / 2.0).margin(1e-15));
    REQUIRE(g.gamma0 == Catch::Approx(-0.01).margin(1e-15));
  }

  SECTION("worked coefficient values") {
    ModulationState st(1);
    st.a = 0.45;
    st.b = sym1(0.1);
    ParameterDerivatives d;
    d.a_dot = 0.01;
    d.b_dot = sym1(0.02);
    const auto g = gamma_terms(st, d, 3.0, 0.1, 4.0);
    REQUIRE(g.gamma0 == Catch::Approx(-0.01 / 0.95 + 0.05 - 0.1).margin(1e-14));
    REQUIRE(g.gamma.at(0, 0) ==
            Catch::Approx((0.02 - 0.005 + 0.01 + 0.03) / 0.9).margin(1e-14));

    // assembled source at an interior node, recomputed from the pieces.
    const int idx = static_cast<int>(std::lround((1.3 + 4.0) / 0.1));
    const double y = g.source.coordinate(idx);
    const double yby = 0.1 * y * y;
    const double den = 2.0 + yby;
    const double g1 = -3.0 * yby * (0.01 * y * y) / (den * den);
    const double v = std::pow(0.95 / den, 0.5);
    const double expect =
        0.5 * (g.gamma0 + g.gamma.at(0, 0) * 2.0 * 0.45 * y * y / den + g1) * v;
    std::array<int, kMaxDim> node{};
    node[0] = idx;
    REQUIRE(g.source.at(node) == Catch::Approx(expect).margin(1e-14));
    REQUIRE(g.g1.at(node) == Catch::Approx(g1).margin(1e-16));
  }

  SECTION("weighted source scales like beta to the five halves") {
    std::vector<double> log_beta, log_sup;
    for (double beta : {0.02, 0.01, 0.005}) {
      ModulationState st(1);
      st.b = sym1(beta);
      st.a = 0.5 - 2.0 * st.b.trace() / 2.0;
      const auto d = modulation_rhs(st.a, st.b, 3.0);
      const double window = 8.0 / std::sqrt(beta);
      const auto g = gamma_terms(st, d, 3.0, window / 400.0, window);
      log_beta.push_back(std::log(beta));
      log_sup.push_back(std::log(g.source.weighted_sup_norm(3.0)));
    }
    const LinearFit fit = fit_line(log_beta, log_sup);
    REQUIRE(fit.slope >= 2.4);
    REQUIRE(fit.slope <= 2.6);
  }
}

TEST_CASE("majorants along a split trajectory", "[modulation]") {
  const double p = 3.0;
  const SymMat b0 = sym2(0.08, 0.03, 0.02);

  auto attractor_split = [&](double tau) {
    profile_manifold::SplitResult s;
    s.mu = ModulationState(2);
    s.mu.b = beta_tilde(tau, b0, p);
    s.mu.a = 0.5 - 2.0 * s.mu.b.trace() / (p - 1.0);
    s.mu.tau = tau;
    s.xi = Field(2, 0.5, 3.0);
    s.converged = true;
    return s;
  };

  SECTION("exact attractor data gives all zeros") {
    std::vector<profile_manifold::SplitResult> splits = {
        attractor_split(0.0), attractor_split(0.7), attractor_split(3.1)};
    const auto reps = majorants(splits, p);
    REQUIRE(reps.size() == 3);
    for (const auto& r : reps) {
      REQUIRE(r.M1 == 0.0);
      REQUIRE(r.M2 == 0.0);
      // a = 1/2 - tr b is stored rounded, so A is zero only to roundoff.
      REQUIRE(r.A <= 1e-13);
      REQUIRE(r.B == 0.0);
    }
    REQUIRE(reps[0].beta == Catch::Approx(b0.max_eigenvalue()).margin(1e-13));
    REQUIRE(reps[2].beta < reps[1].beta);
    REQUIRE(reps[2].tau == 3.1);
  }

  SECTION("doubling the remainder doubles the sup majorants") {
    auto make = [&](double amp) {
      std::vector<profile_manifold::SplitResult> splits = {attractor_split(0.0),
                                                           attractor_split(1.0)};
      for (auto& s : splits)
        s.xi.fill([&](const double* y) {
          return amp * std::exp(-(y[0] * y[0] + y[1] * y[1]) / 4.0) * (1.0 + y[0]);
        });
      return majorants(splits, p);
    };
    const auto r1 = make(0.3);
    const auto r2 = make(0.6);
    REQUIRE(r1.back().M1 > 0.0);
    REQUIRE(r2.back().M1 == 2.0 * r1.back().M1);
    REQUIRE(r2.back().M2 == 2.0 * r1.back().M2);
    REQUIRE(r2.back().A == r1.back().A);
    REQUIRE(r2.back().B == r1.back().B);
  }

  SECTION("reports are running maxima") {
    std::vector<profile_manifold::SplitResult> splits = {attractor_split(0.0),
                                                         attractor_split(2.0)};
    // the second remainder shrinks faster than beta^2, so neither running
    // sup can be displaced.
    splits[0].xi.fill([](const double* y) { return std::exp(-y[0] * y[0] - y[1] * y[1]); });
    splits[1].xi.fill(
        [](const double* y) { return 0.2 * std::exp(-y[0] * y[0] - y[1] * y[1]); });
    const auto reps = majorants(splits, p);
    REQUIRE(reps[1].M2 == reps[0].M2);
    REQUIRE(reps[1].M1 == reps[0].M1);
  }

  SECTION("deviation majorant uses the kappa exponent") {
    std::vector<profile_manifold::SplitResult> splits = {attractor_split(0.0),
                                                         attractor_split(1.0)};
    SymMat off = SymMat::scaled_identity(2, 1e-4);
    splits[1].mu.b += off;
    const auto reps = majorants(splits, p);
    const double beta1 = beta_scalar(1.0, b0, p);
    const double expect = off.frobenius_norm() / std::pow(beta1, 1.5);
    REQUIRE(reps[1].B == Catch::Approx(expect).epsilon(1e-10));
    REQUIRE(reps[0].B == 0.0);
  }

  SECTION("degenerate trajectories are rejected") {
    REQUIRE_THROWS_AS(majorants({}, p), std::invalid_argument);
    std::vector<profile_manifold::SplitResult> splits = {attractor_split(1.0),
                                                         attractor_split(0.5)};
    REQUIRE_THROWS_AS(majorants(splits, p), std::invalid_argument);
  }
}
