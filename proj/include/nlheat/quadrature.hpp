#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "nlheat/common.hpp"

namespace nlheat {

// Gauss-Hermite rule for the weight e^{-s^2} on the real line, built by the
// Golub-Welsch eigenvalue method. Exact for polynomials of degree <= 2m-1.
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline const GaussHermite& gauss_hermite(int m) {
  static std::map<int, GaussHermite> cache;
  auto it = cache.find(m);
  if (it != cache.end()) return it->second;
  if (m < 1) throw std::invalid_argument("gauss_hermite: order must be >= 1");

  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(m, m);
  for (int k = 1; k < m; ++k) {
    const double off = std::sqrt(k / 2.0);
    jacobi(k, k - 1) = off;
    jacobi(k - 1, k) = off;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
  GaussHermite rule;
  rule.nodes.resize(m);
  rule.weights.resize(m);
  for (int k = 0; k < m; ++k) {
    rule.nodes[k] = es.eigenvalues()(k);
    // Reciprocal Christoffel sum over the orthonormal polynomials. Unlike
    // the squared eigenvector component, this keeps full relative accuracy
    // in the far tail, where the weights are exponentially small.
    const double x = rule.nodes[k];
    double prev = std::pow(M_PI, -0.25);
    double sum = prev * prev;
    double cur = std::sqrt(2.0) * x * prev;
    for (int j = 1; j < m; ++j) {
      sum += cur * cur;
      const double next =
          (x * cur - std::sqrt(j / 2.0) * prev) / std::sqrt((j + 1) / 2.0);
      prev = cur;
      cur = next;
    }
    rule.weights[k] = 1.0 / sum;
  }
  return cache.emplace(m, std::move(rule)).first->second;
}

// Tensor quadrature for integrals against the Gaussian weight e^{-a|y|^2/2}
// over R^dim. Nodes are the rescaled Gauss-Hermite nodes y = sqrt(2/a) s.
class GaussianQuadrature {
 public:
  GaussianQuadrature(double a, int dim, int order = 64)
      : a_(a), dim_(dim), order_(order) {
    if (a <= 0.0) throw std::invalid_argument("GaussianQuadrature: a must be positive");
    if (dim < 1 || dim > kMaxDim) throw std::invalid_argument("GaussianQuadrature: dim 1..3");
    const GaussHermite& gh = gauss_hermite(order);
    const double scale = std::sqrt(2.0 / a);
    axis_nodes_.resize(order);
    axis_weights_.resize(order);
    for (int k = 0; k < order; ++k) {
      axis_nodes_[k] = scale * gh.nodes[k];
      axis_weights_[k] = scale * gh.weights[k];
    }
  }

  double a() const { return a_; }
  int dim() const { return dim_; }
  int order() const { return order_; }
  const std::vector<double>& axis_nodes() const { return axis_nodes_; }

  // Largest |y| coordinate any node reaches.
  double node_radius() const { return std::abs(axis_nodes_.back()); }

  // Integrates f(y) e^{-a|y|^2/2} dy; f receives the node coordinates.
  template <typename Fn>
  double integrate(Fn&& f) const {
    double total = 0.0;
    std::array<int, kMaxDim> k{};
    std::array<double, kMaxDim> y{};
    integrate_axis(0, 1.0, k, y, total, f);
    return total;
  }

 private:
  template <typename Fn>
  void integrate_axis(int d, double w, std::array<int, kMaxDim>& k,
                      std::array<double, kMaxDim>& y, double& total, Fn&& f) const {
    if (d == dim_) {
      total += w * f(y.data());
      return;
    }
    for (int i = 0; i < order_; ++i) {
      k[d] = i;
      y[d] = axis_nodes_[i];
      integrate_axis(d + 1, w * axis_weights_[i], k, y, total, f);
    }
  }

  double a_;
  int dim_;
  int order_;
  std::vector<double> axis_nodes_;
  std::vector<double> axis_weights_;
};

}  // namespace nlheat
