#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace nlheat {

inline constexpr int kMaxDim = 3;

// |u|^{p-1} u, the odd power nonlinearity.
inline double pow_signed(double u, double p) {
  if (u == 0.0) return 0.0;
  return std::copysign(std::pow(std::abs(u), p), u);
}

// Symmetric n x n matrix, n <= 3, stored as the packed lower triangle.
// Packing order: (0,0); (1,0),(1,1); (2,0),(2,1),(2,2).
class SymMat {
 public:
  SymMat() = default;
  explicit SymMat(int n) : n_(check_dim(n)) { v_.fill(0.0); }

  static SymMat scaled_identity(int n, double s) {
    SymMat m(n);
    for (int i = 0; i < n; ++i) m.at(i, i) = s;
    return m;
  }

  static int packed_size(int n) { return n * (n + 1) / 2; }

  int dim() const { return n_; }
  int size() const { return packed_size(n_); }

  double& at(int i, int j) { return v_[packed_index(i, j)]; }
  double at(int i, int j) const { return v_[packed_index(i, j)]; }

  double& packed(int k) { return v_[k]; }
  double packed(int k) const { return v_[k]; }

  double trace() const {
    double t = 0.0;
    for (int i = 0; i < n_; ++i) t += at(i, i);
    return t;
  }

  // (m y)_i for a coordinate vector y.
  double row_dot(int i, const double* y) const {
    double s = 0.0;
    for (int j = 0; j < n_; ++j) s += at(i, j) * y[j];
    return s;
  }

  // y^T m y.
  double quadratic_form(const double* y) const {
    double s = 0.0;
    for (int i = 0; i < n_; ++i) s += y[i] * row_dot(i, y);
    return s;
  }

  SymMat square() const {  // m*m, symmetric again
    SymMat r(n_);
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j <= i; ++j) {
        double s = 0.0;
        for (int k = 0; k < n_; ++k) s += at(i, k) * at(k, j);
        r.at(i, j) = s;
      }
    return r;
  }

  SymMat& operator+=(const SymMat& o) {
    for (int k = 0; k < size(); ++k) v_[k] += o.v_[k];
    return *this;
  }
  SymMat& operator-=(const SymMat& o) {
    for (int k = 0; k < size(); ++k) v_[k] -= o.v_[k];
    return *this;
  }
  SymMat& operator*=(double s) {
    for (int k = 0; k < size(); ++k) v_[k] *= s;
    return *this;
  }
  friend SymMat operator+(SymMat a, const SymMat& b) { return a += b; }
  friend SymMat operator-(SymMat a, const SymMat& b) { return a -= b; }
  friend SymMat operator*(double s, SymMat a) { return a *= s; }

  double frobenius_norm() const {
    double s = 0.0;
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j) s += at(i, j) * at(i, j);
    return std::sqrt(s);
  }

  double max_abs() const {
    double s = 0.0;
    for (int k = 0; k < size(); ++k) s = std::max(s, std::abs(v_[k]));
    return s;
  }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd m(n_, n_);
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j) m(i, j) = at(i, j);
    return m;
  }

  static SymMat from_dense(const Eigen::MatrixXd& m) {
    SymMat r(static_cast<int>(m.rows()));
    for (int i = 0; i < r.n_; ++i)
      for (int j = 0; j <= i; ++j) r.at(i, j) = 0.5 * (m(i, j) + m(j, i));
    return r;
  }

  Eigen::VectorXd eigenvalues() const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense());
    return es.eigenvalues();
  }

  double min_eigenvalue() const { return eigenvalues().minCoeff(); }
  double max_eigenvalue() const { return eigenvalues().maxCoeff(); }

  bool is_psd(double tol = 0.0) const { return min_eigenvalue() >= -tol; }

  SymMat inverse() const {
    Eigen::MatrixXd inv = dense().inverse();
    return from_dense(inv);
  }

 private:
  static int check_dim(int n) {
    if (n < 1 || n > kMaxDim) throw std::invalid_argument("SymMat: dim must be 1..3");
    return n;
  }
  int packed_index(int i, int j) const {
    if (i < 0 || j < 0 || i >= n_ || j >= n_) throw std::out_of_range("SymMat: index");
    if (i < j) std::swap(i, j);
    return i * (i + 1) / 2 + j;
  }

  int n_ = 0;
  std::array<double, 6> v_{};
};

// Least-squares line fit y ~ slope*x + intercept with coefficient of determination.
struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

inline LinearFit fit_line(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw std::invalid_argument("fit_line: need >= 2 matched samples");
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_line: degenerate abscissae");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r_squared = (syy == 0.0) ? 1.0 : (sxy * sxy) / (sxx * syy);
  return f;
}

// Thomas algorithm for a tridiagonal system; diagonals are modified in place.
// lower[i] multiplies x[i-1] in row i, upper[i] multiplies x[i+1].
inline void solve_tridiagonal(std::vector<double>& lower, std::vector<double>& diag,
                              std::vector<double>& upper, std::vector<double>& rhs) {
  const size_t n = diag.size();
  for (size_t i = 1; i < n; ++i) {
    const double w = lower[i] / diag[i - 1];
    diag[i] -= w * upper[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  rhs[n - 1] /= diag[n - 1];
  for (size_t i = n - 1; i-- > 0;) {
    rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
  }
}

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace nlheat
