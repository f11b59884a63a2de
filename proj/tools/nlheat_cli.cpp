// Command-line driver: each subcommand reads a key = value config file and
// writes CSV reports. Exit codes: 0 success, 2 pipeline truncation, 1 invalid
// config or I/O failure.
#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nlheat/linear_analysis.hpp"
#include "nlheat/modulation.hpp"
#include "nlheat/ou_feynman_kac.hpp"
#include "nlheat/pde_core.hpp"
#include "nlheat/profile_manifold.hpp"
#include "nlheat/study_harness.hpp"

namespace {

using namespace nlheat;

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "problem.p",       "problem.n",
      "grid.h",          "grid.L",
      "init.c0",         "init.b0",          "init.delta0",
      "init.delta3_coeff", "init.bump_width",
      "time.dt",         "time.cutoff",      "time.t_end",
      "study.R",         "study.window",     "study.hy",
      "study.dtau",      "study.tau_end",    "study.store_every",
      "study.zeta_bound", "study.profile_tau_span",
      "seeds.master",    "output.dir",
      "fk.alpha",        "fk.r",             "fk.beta",
      "fk.paths",        "fk.steps",         "fk.x",  "fk.y",
      "propagator.alpha", "propagator.r",    "propagator.beta",
      "propagator.horizon", "propagator.degree",
  };
  return keys;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read config file " + path);
  ConfigMap map;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": empty key or value");
    if (!known_keys().count(key))
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": unknown key " + key);
    if (map.count(key))
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": duplicate key " + key);
    map[key] = value;
  }
  return map;
}

double parse_double(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("key " + key + ": cannot parse number from '" + text + "'");
  }
  if (trim(text.substr(used)) != "")
    throw std::invalid_argument("key " + key + ": trailing characters in '" + text + "'");
  return v;
}

double get_num(const ConfigMap& map, const std::string& key, double fallback) {
  const auto it = map.find(key);
  return it == map.end() ? fallback : parse_double(key, it->second);
}

long long get_int(const ConfigMap& map, const std::string& key, long long fallback) {
  const double v = get_num(map, key, static_cast<double>(fallback));
  const long long r = static_cast<long long>(v);
  if (static_cast<double>(r) != v)
    throw std::invalid_argument("key " + key + ": expected an integer");
  return r;
}

// b0 accepts either one scalar (isotropic) or the packed lower triangle.
SymMat get_b0(const ConfigMap& map, int n) {
  SymMat b(n);
  const auto it = map.find("init.b0");
  if (it == map.end()) return b;
  std::string text = it->second;
  for (char& c : text)
    if (c == ',' || c == ';') c = ' ';
  std::istringstream ss(text);
  std::vector<double> vals;
  double v;
  while (ss >> v) vals.push_back(v);
  if (!ss.eof()) throw std::invalid_argument("key init.b0: cannot parse matrix entries");
  if (vals.size() == 1) return SymMat::scaled_identity(n, vals[0]);
  if (vals.size() == static_cast<std::size_t>(SymMat::packed_size(n))) {
    for (int k = 0; k < b.size(); ++k) b.packed(k) = vals[static_cast<std::size_t>(k)];
    return b;
  }
  throw std::invalid_argument("key init.b0: expected 1 or " +
                              std::to_string(SymMat::packed_size(n)) + " entries for n = " +
                              std::to_string(n));
}

struct CommonArgs {
  std::string config_path;
  std::string out_dir;  // empty means config output.dir, then "out"
  std::optional<std::uint64_t> seed;
  bool verbose = false;
};

std::string resolve_out_dir(const CommonArgs& args, const ConfigMap& map) {
  if (!args.out_dir.empty()) return args.out_dir;
  const auto it = map.find("output.dir");
  return it == map.end() ? "out" : it->second;
}

std::uint64_t resolve_seed(const CommonArgs& args, const ConfigMap& map) {
  if (args.seed) return *args.seed;
  const double v = get_num(map, "seeds.master", 1.0);
  if (v < 0.0 || static_cast<double>(static_cast<std::uint64_t>(v)) != v)
    throw std::invalid_argument("key seeds.master: expected a nonnegative integer");
  return static_cast<std::uint64_t>(v);
}

study_harness::StudyConfig build_study_config(const CommonArgs& args, const ConfigMap& map) {
  study_harness::StudyConfig cfg;
  cfg.p = get_num(map, "problem.p", cfg.p);
  const long long n = get_int(map, "problem.n", cfg.n);
  if (n < 1 || n > kMaxDim) throw std::invalid_argument("key problem.n: must be 1..3");
  cfg.n = static_cast<int>(n);
  cfg.h = get_num(map, "grid.h", cfg.h);
  cfg.L = get_num(map, "grid.L", cfg.L);
  cfg.c0 = get_num(map, "init.c0", cfg.c0);
  cfg.b0 = get_b0(map, cfg.n);
  cfg.delta0 = get_num(map, "init.delta0", cfg.delta0);
  cfg.delta3_coeff = get_num(map, "init.delta3_coeff", cfg.delta3_coeff);
  cfg.bump_width = get_num(map, "init.bump_width", cfg.bump_width);
  cfg.dt = get_num(map, "time.dt", cfg.dt);
  cfg.blowup_cutoff = get_num(map, "time.cutoff", cfg.blowup_cutoff);
  cfg.t_end = get_num(map, "time.t_end", cfg.t_end);
  cfg.R = get_num(map, "study.R", cfg.R);
  cfg.window = get_num(map, "study.window", cfg.window);
  cfg.hy = get_num(map, "study.hy", cfg.hy);
  cfg.dtau = get_num(map, "study.dtau", cfg.dtau);
  cfg.tau_end = get_num(map, "study.tau_end", cfg.tau_end);
  cfg.store_every = static_cast<int>(get_int(map, "study.store_every", cfg.store_every));
  cfg.zeta_bound = get_num(map, "study.zeta_bound", cfg.zeta_bound);
  cfg.profile_tau_span = get_num(map, "study.profile_tau_span", cfg.profile_tau_span);
  cfg.seed = resolve_seed(args, map);
  cfg.validate();
  return cfg;
}

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void write_file(const std::string& dir, const std::string& name, const std::string& body) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir), ec);
  if (ec) throw std::runtime_error("export: cannot create directory " + dir);
  const fs::path path = fs::path(dir) / name;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("export: cannot open " + path.string());
  out << body;
  if (!out) throw std::runtime_error("export: write failed for " + path.string());
  std::printf("wrote %s\n", path.string().c_str());
}

void echo_config(const CommonArgs& args, const ConfigMap& map) {
  if (!args.verbose) return;
  std::printf("config %s:\n", args.config_path.c_str());
  for (const auto& [k, v] : map) std::printf("  %s = %s\n", k.c_str(), v.c_str());
}

int cmd_simulate(const CommonArgs& args) {
  const ConfigMap map = parse_config(args.config_path);
  echo_config(args, map);
  const study_harness::StudyConfig cfg = build_study_config(args, map);
  const std::string out = resolve_out_dir(args, map);

  const Field u0 = study_harness::make_initial_data(cfg);
  pde_core::SolveConfig scfg;
  scfg.p = cfg.p;
  scfg.dt = cfg.dt;
  scfg.t_end = cfg.t_end;
  scfg.blowup_cutoff = cfg.blowup_cutoff;
  if (args.verbose) std::printf("solving to sup cutoff %g, dt = %g\n", scfg.blowup_cutoff, scfg.dt);
  const pde_core::Trajectory traj = pde_core::solve_direct(u0, scfg);

  std::string sup = "t,sup\n";
  for (std::size_t i = 0; i < traj.times.size(); ++i)
    sup += fmt17(traj.times[i]) + ',' + fmt17(traj.sup_norms[i]) + '\n';
  write_file(out, "direct_sup.csv", sup);

  const Field& last = traj.last_frame();
  std::string fin = "x,u\n";
  last.for_each([&](const std::array<int, kMaxDim>& idx, std::size_t flat) {
    double x[kMaxDim] = {0, 0, 0};
    last.coordinates_of(idx, x);
    std::string row = fmt17(x[0]);
    for (int d = 1; d < last.dim; ++d) row += ' ' + fmt17(x[d]);
    fin += row + ',' + fmt17(last.values[flat]) + '\n';
  });
  write_file(out, "direct_final.csv", fin);

  if (traj.cutoff_triggered) {
    const double t_star = study_harness::fit_blowup_time(traj, cfg.p);
    std::printf("cutoff reached at t = %.10g, fitted blowup time t* = %.10g\n",
                traj.times.back(), t_star);
  } else {
    std::printf("no blowup before t_end = %g (final sup %.6g)\n", cfg.t_end,
                traj.sup_norms.back());
  }
  return 0;
}

int cmd_split(const CommonArgs& args) {
  const ConfigMap map = parse_config(args.config_path);
  echo_config(args, map);
  const study_harness::StudyConfig cfg = build_study_config(args, map);
  const std::string out = resolve_out_dir(args, map);

  // Rescale the configured data onto the y window and take one split.
  const double lambda0 = study_harness::initial_lambda(cfg);
  const auto f0 = study_harness::initial_data_function(cfg);
  Field v(cfg.n, cfg.hy, cfg.window);
  const double amp0 = std::pow(lambda0, -2.0 / (cfg.p - 1.0));
  v.fill([&](const double* y) {
    double x[kMaxDim];
    for (int d = 0; d < cfg.n; ++d) x[d] = y[d] / lambda0;
    return amp0 * f0(x);
  });

  blowup_frame::ModulationState guess(cfg.n);
  guess.a = cfg.c0 / (lambda0 * lambda0) - 0.5;
  guess.b = cfg.b0;
  guess.b *= 1.0 / (lambda0 * lambda0);

  profile_manifold::SplitOptions opt;
  opt.tol = cfg.split_tol;
  opt.max_iter = cfg.split_max_iter;
  const profile_manifold::SplitResult r = profile_manifold::split(v, guess, cfg.p, opt);

  std::printf("a = %.12g  (c = %.12g)\n", r.mu.a, r.mu.a + 0.5);
  for (int i = 0; i < cfg.n; ++i)
    for (int j = 0; j <= i; ++j)
      std::printf("b[%d,%d] = %.12g\n", i, j, r.mu.b.at(i, j));
  for (int d = 0; d < cfg.n; ++d) std::printf("z[%d] = %.12g\n", d, r.mu.z[d]);
  std::printf("residual = %.3e after %d iterations (%s)\n", r.residual, r.iterations,
              r.converged ? "converged" : "stalled");
  if (!r.xi.values.empty())
    std::printf("correction norms: sup %.3e, weighted-3 %.3e\n", r.xi.sup_norm(),
                r.xi.weighted_sup_norm(3.0));

  std::string csv = "a,c";
  for (int i = 0; i < cfg.n; ++i)
    for (int j = 0; j <= i; ++j) csv += ",b_" + std::to_string(i) + std::to_string(j);
  for (int d = 0; d < cfg.n; ++d) csv += ",z_" + std::to_string(d);
  csv += ",residual,iterations\n";
  csv += fmt17(r.mu.a) + ',' + fmt17(r.mu.a + 0.5);
  for (int k = 0; k < r.mu.b.size(); ++k) csv += ',' + fmt17(r.mu.b.packed(k));
  for (int d = 0; d < cfg.n; ++d) csv += ',' + fmt17(r.mu.z[d]);
  csv += ',' + fmt17(r.residual) + ',' + std::to_string(r.iterations) + '\n';
  write_file(out, "split.csv", csv);

  return r.converged ? 0 : 2;
}

int cmd_modulation(const CommonArgs& args) {
  const ConfigMap map = parse_config(args.config_path);
  echo_config(args, map);
  const study_harness::StudyConfig cfg = build_study_config(args, map);
  const std::string out = resolve_out_dir(args, map);

  const double lambda0 = study_harness::initial_lambda(cfg);
  const double a0 = cfg.c0 / (lambda0 * lambda0) - 0.5;
  SymMat b0 = cfg.b0;
  b0 *= 1.0 / (lambda0 * lambda0);

  const modulation::ModulationTrajectory traj =
      modulation::integrate_modulation(a0, b0, cfg.p, cfg.tau_end, cfg.dtau);

  const bool have_attractor = b0.min_eigenvalue() > 1e-12;
  std::string csv = "tau,a";
  for (int i = 0; i < cfg.n; ++i)
    for (int j = 0; j <= i; ++j) csv += ",b_" + std::to_string(i) + std::to_string(j);
  csv += ",attractor_gap\n";
  for (std::size_t k = 0; k < traj.taus.size(); ++k) {
    csv += fmt17(traj.taus[k]) + ',' + fmt17(traj.a[k]);
    for (int q = 0; q < traj.b[k].size(); ++q) csv += ',' + fmt17(traj.b[k].packed(q));
    const double gap = have_attractor
                           ? (traj.b[k] - modulation::beta_tilde(traj.taus[k], b0, cfg.p))
                                 .frobenius_norm()
                           : traj.b[k].frobenius_norm();
    csv += ',' + fmt17(gap) + '\n';
  }
  write_file(out, "modulation.csv", csv);

  std::printf("integrated to tau = %.6g: a = %.10g, |a - 1/2| = %.3e\n", traj.taus.back(),
              traj.a.back(), std::abs(traj.a.back() - 0.5));
  if (have_attractor) {
    const double gap =
        (traj.b.back() - modulation::beta_tilde(traj.taus.back(), b0, cfg.p)).frobenius_norm();
    std::printf("closed-form attractor gap at the end: %.3e\n", gap);
  }
  if (traj.left_attracting_regime) {
    std::printf("integration left the attracting regime at tau = %.6g\n", traj.tau_flagged);
    return 2;
  }
  return 0;
}

int cmd_propagator(const CommonArgs& args) {
  const ConfigMap map = parse_config(args.config_path);
  echo_config(args, map);
  const std::string out = resolve_out_dir(args, map);
  const double alpha = get_num(map, "propagator.alpha", 0.5);
  const double r = get_num(map, "propagator.r", 1.0);
  const double beta = get_num(map, "propagator.beta", 1e-3);
  const double horizon = get_num(map, "propagator.horizon", 12.0);
  const int degree = static_cast<int>(get_int(map, "propagator.degree", 40));
  const double p = get_num(map, "problem.p", 3.0);
  if (!(alpha > 0.0) || !(r > 0.0) || !(horizon > 0.0) || degree < 8)
    throw std::invalid_argument("propagator: alpha, r, horizon must be positive, degree >= 8");

  // Flow identities through the spectral route: constants scale by e^{2 alpha r}
  // and the quadratic harmonic is invariant.
  const linear_analysis::HermiteBasis basis = linear_analysis::hermite_basis(alpha, degree, 1);
  const double zm = 7.0 / std::sqrt(alpha);
  {
    std::vector<double> c = basis.coefficients([](const double*) { return 1.0; });
    linear_analysis::semigroup_scale(basis, r, c);
    double worst = 0.0;
    for (int i = 0; i <= 256; ++i) {
      const double z = -zm + 2.0 * zm * i / 256.0;
      double acc = 0.0;
      for (int m = 0; m <= degree; ++m)
        acc += c[static_cast<std::size_t>(m)] * basis.axis_value(m, z);
      worst = std::max(worst, std::abs(acc - std::exp(2.0 * alpha * r)) /
                                  std::exp(2.0 * alpha * r));
    }
    std::printf("constant-flow identity: max relative error %.3e\n", worst);
  }
  {
    std::vector<double> c =
        basis.coefficients([&](const double* y) { return alpha * y[0] * y[0] - 1.0; });
    linear_analysis::semigroup_scale(basis, r, c);
    double worst = 0.0;
    for (int i = 0; i <= 256; ++i) {
      const double z = -zm + 2.0 * zm * i / 256.0;
      double acc = 0.0;
      for (int m = 0; m <= degree; ++m)
        acc += c[static_cast<std::size_t>(m)] * basis.axis_value(m, z);
      worst = std::max(worst, std::abs(acc - (alpha * z * z - 1.0)));
    }
    std::printf("harmonic invariance: max absolute error %.3e\n", worst);
  }

  const linear_analysis::DecayMeasurement dm = linear_analysis::measure_propagator_decay(
      alpha, beta, horizon, p, degree, resolve_seed(args, map));
  std::printf("decay on the low-mode complement: rate %.6g (target >= %.6g), R^2 = %.4f%s\n",
              dm.rate, 0.8 * alpha, dm.r_squared, dm.conclusive ? "" : " [inconclusive]");

  std::string csv = "sigma,weighted_sup\n";
  for (std::size_t i = 0; i < dm.sigmas.size(); ++i)
    csv += fmt17(dm.sigmas[i]) + ',' + fmt17(dm.norms[i]) + '\n';
  write_file(out, "propagator_decay.csv", csv);
  return 0;
}

int cmd_fk(const CommonArgs& args) {
  const ConfigMap map = parse_config(args.config_path);
  echo_config(args, map);
  const std::string out = resolve_out_dir(args, map);
  ou_feynman_kac::OUBridgeConfig cfg;
  cfg.alpha = get_num(map, "fk.alpha", 0.5);
  cfg.tau_end = get_num(map, "fk.r", 0.5);
  cfg.n_paths = static_cast<int>(get_int(map, "fk.paths", 10000));
  cfg.n_steps = static_cast<int>(get_int(map, "fk.steps", 64));
  cfg.seed = resolve_seed(args, map);
  cfg.validate();
  const double beta = get_num(map, "fk.beta", 0.1);
  const double x = get_num(map, "fk.x", 0.0);
  const double y = get_num(map, "fk.y", 0.0);

  const ou_feynman_kac::BridgeEnsemble paths =
      ou_feynman_kac::shift_bridge(ou_feynman_kac::sample_bridge(cfg), x, y);

  struct Demo {
    std::string name;
    std::function<double(double)> V;
  };
  const std::vector<Demo> demos = {
      {"zero", [](double) { return 0.0; }},
      {"constant", [&](double) { return -beta; }},
      {"rational", [&](double z) { return -beta * z * z / (1.0 + z * z); }},
  };

  std::string csv = "potential,mean,std_error,n_paths\n";
  for (const Demo& d : demos) {
    const ou_feynman_kac::KernelEstimate est = ou_feynman_kac::fk_weight(
        paths, [&](double z, double) { return d.V(z); });
    std::printf("%-9s mean = %.10g  std_error = %.3e  (%d paths)\n", d.name.c_str(), est.mean,
                est.std_error, est.n_paths);
    csv += d.name + ',' + fmt17(est.mean) + ',' + fmt17(est.std_error) + ',' +
           std::to_string(est.n_paths) + '\n';
  }
  const double mass = ou_feynman_kac::mehler_kernel(x, y, cfg.tau_end, cfg.alpha);
  std::printf("closed-form kernel value at these endpoints: %.10g\n", mass);
  write_file(out, "fk.csv", csv);
  return 0;
}

int cmd_study(const CommonArgs& args) {
  const ConfigMap map = parse_config(args.config_path);
  echo_config(args, map);
  const study_harness::StudyConfig cfg = build_study_config(args, map);
  const std::string out = resolve_out_dir(args, map);

  if (args.verbose)
    std::printf("running study: n = %d, p = %g, window = %g, tau_end = %g\n", cfg.n, cfg.p,
                cfg.window, cfg.tau_end);
  const study_harness::StudyReport rep = study_harness::run_blowup_study(cfg);

  std::vector<std::string> files;
  try {
    files = study_harness::export_report(rep, out);
  } catch (const std::runtime_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  for (const std::string& f : files) std::printf("wrote %s\n", f.c_str());

  if (rep.truncated) {
    std::printf("study truncated: %s\n", rep.diagnostics.c_str());
    return 2;
  }

  std::printf("blowup time: t* = %.10g (march closure), %.10g (direct fit)\n", rep.t_star,
              rep.t_star_direct);
  const double rem_end = rep.t_star - rep.samples.back().t;
  double lr_lo = 1e300, lr_hi = -1e300, br_lo = 1e300, br_hi = -1e300, cdev = 0.0;
  double m1 = 0.0, m2 = 0.0, ma = 0.0, mb = 0.0;
  for (const study_harness::StudySample& s : rep.samples) {
    m1 = std::max(m1, s.M1);
    m2 = std::max(m2, s.M2);
    ma = std::max(ma, s.A);
    mb = std::max(mb, s.B);
    const double rem = rep.t_star - s.t;
    if (rem > 10.0 * rem_end) continue;
    lr_lo = std::min(lr_lo, s.lambda_ratio);
    lr_hi = std::max(lr_hi, s.lambda_ratio);
    br_lo = std::min(br_lo, s.b_ratio);
    br_hi = std::max(br_hi, s.b_ratio);
    cdev = std::max(cdev, std::abs(s.c - 1.0));
  }
  std::printf("final decade: lambda (t*-t)^(1/2) in [%.4f, %.4f], b ratio in [%.4f, %.4f], "
              "max |c-1| = %.4f\n",
              lr_lo, lr_hi, br_lo, br_hi, cdev);
  std::printf("majorants: M1 = %.4g, M2 = %.4g, A = %.4g, B = %.4g\n", m1, m2, ma, mb);
  std::printf("center: max |zeta| = %.3e (%s bound %g)\n", rep.zeta_max,
              rep.zeta_bounded ? "within" : "EXCEEDS", cfg.zeta_bound);
  if (!rep.profile.times.empty())
    std::printf("profile: y = 0 error %.4g, sup error %.4g -> %.4g over %zu late frames\n",
                rep.profile_error_y0, rep.profile.sup_errors.front(),
                rep.profile.sup_errors.back(), rep.profile.times.size());
  std::printf("runtime: %.1f s\n", rep.runtime_seconds);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"blowup laboratory for the focusing nonlinear heat equation"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string seed_text;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("config", args.config_path, "key = value config file")
        ->required();
    sub->add_option("--out", args.out_dir, "output directory (default: output.dir key, then ./out)");
    sub->add_option("--seed", seed_text, "override seeds.master");
    sub->add_flag("--verbose", args.verbose, "echo the parsed config and progress");
  };

  CLI::App* sim = app.add_subcommand("simulate", "direct solve to the sup-norm cutoff");
  CLI::App* spl = app.add_subcommand("split", "one parameter split of the configured data");
  CLI::App* mod = app.add_subcommand("modulation", "integrate the parameter system");
  CLI::App* prp = app.add_subcommand("propagator", "flow identities and decay measurement");
  CLI::App* fkc = app.add_subcommand("fk", "bridge sampling estimates of the weighted kernel");
  CLI::App* stu = app.add_subcommand("study", "full blowup experiment with CSV report");
  for (CLI::App* sub : {sim, spl, mod, prp, fkc, stu}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (!seed_text.empty()) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(seed_text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != seed_text.size()) {
      std::fprintf(stderr, "invalid --seed value '%s'\n", seed_text.c_str());
      return 1;
    }
    args.seed = v;
  }

  try {
    if (sim->parsed()) return cmd_simulate(args);
    if (spl->parsed()) return cmd_split(args);
    if (mod->parsed()) return cmd_modulation(args);
    if (prp->parsed()) return cmd_propagator(args);
    if (fkc->parsed()) return cmd_fk(args);
    if (stu->parsed()) return cmd_study(args);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid config: %s\n", e.what());
    return 1;
  } catch (const std::runtime_error& e) {
    std::fprintf(stderr, "pipeline failure: %s\n", e.what());
    return 2;
  }
  return 1;
}
