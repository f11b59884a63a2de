#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "nlheat/common.hpp"

namespace nlheat {

// Scalar samples on a uniform tensor grid over [-L, L]^dim with spacing h.
// Per-axis point count is 2*round(L/h)+1, so the origin is always a node.
struct Field {
  std::vector<double> values;
  int dim = 1;
  double h = 1.0;
  double L = 1.0;

  Field() = default;
  Field(int dim_, double h_, double L_) : dim(dim_), h(h_), L(L_) {
    if (dim < 1 || dim > kMaxDim) throw std::invalid_argument("Field: dim must be 1..3");
    if (h <= 0.0 || L <= 0.0) throw std::invalid_argument("Field: h and L must be positive");
    values.assign(total_points(), 0.0);
  }

  int points_per_axis() const { return 2 * static_cast<int>(std::lround(L / h)) + 1; }

  std::size_t total_points() const {
    std::size_t t = 1;
    for (int d = 0; d < dim; ++d) t *= static_cast<std::size_t>(points_per_axis());
    return t;
  }

  bool valid() const {
    return dim >= 1 && dim <= kMaxDim && h > 0.0 && L > 0.0 &&
           values.size() == total_points() && all_finite(values);
  }

  bool same_grid(const Field& o) const {
    return dim == o.dim && h == o.h && L == o.L && values.size() == o.values.size();
  }

  double coordinate(int i) const { return -L + i * h; }

  std::size_t flat_index(const std::array<int, kMaxDim>& idx) const {
    const int n = points_per_axis();
    std::size_t f = 0;
    for (int d = 0; d < dim; ++d) f = f * n + static_cast<std::size_t>(idx[d]);
    return f;
  }

  double& at(const std::array<int, kMaxDim>& idx) { return values[flat_index(idx)]; }
  double at(const std::array<int, kMaxDim>& idx) const { return values[flat_index(idx)]; }

  // Calls fn(multi_index, flat_index) over every node in flat order.
  template <typename Fn>
  void for_each(Fn&& fn) const {
    const int n = points_per_axis();
    std::array<int, kMaxDim> idx{};
    const std::size_t total = total_points();
    for (std::size_t f = 0; f < total; ++f) {
      std::size_t r = f;
      for (int d = dim - 1; d >= 0; --d) {
        idx[d] = static_cast<int>(r % n);
        r /= n;
      }
      fn(idx, f);
    }
  }

  void coordinates_of(const std::array<int, kMaxDim>& idx, double* x) const {
    for (int d = 0; d < dim; ++d) x[d] = coordinate(idx[d]);
  }

  // Samples a callable f(const double* x) at every node.
  void fill(const std::function<double(const double*)>& f) {
    for_each([&](const std::array<int, kMaxDim>& idx, std::size_t flat) {
      double x[kMaxDim] = {0, 0, 0};
      coordinates_of(idx, x);
      values[flat] = f(x);
    });
  }

  double sup_norm() const {
    double m = 0.0;
    for (double v : values) m = std::max(m, std::abs(v));
    return m;
  }

  // sup over nodes of |f(y)| (1+|y|^2)^{-k/2}, the <y>^{-k}-weighted sup norm.
  double weighted_sup_norm(double k) const {
    double m = 0.0;
    for_each([&](const std::array<int, kMaxDim>& idx, std::size_t flat) {
      double r2 = 0.0;
      for (int d = 0; d < dim; ++d) {
        const double c = coordinate(idx[d]);
        r2 += c * c;
      }
      m = std::max(m, std::abs(values[flat]) * std::pow(1.0 + r2, -0.5 * k));
    });
    return m;
  }

  // Location of the maximal |value|.
  void argmax(double* x) const {
    std::size_t best = 0;
    double m = -1.0;
    for (std::size_t f = 0; f < values.size(); ++f) {
      if (std::abs(values[f]) > m) {
        m = std::abs(values[f]);
        best = f;
      }
    }
    const int n = points_per_axis();
    std::size_t r = best;
    for (int d = dim - 1; d >= 0; --d) {
      x[d] = coordinate(static_cast<int>(r % n));
      r /= n;
    }
  }

  double value_at_origin() const {
    std::array<int, kMaxDim> idx{};
    const int mid = points_per_axis() / 2;
    for (int d = 0; d < dim; ++d) idx[d] = mid;
    return at(idx);
  }
};

namespace detail {

// 4-point Lagrange weights for evaluating at offset t in [0,1] relative to the
// second point of the stencil {x0, x0+h, x0+2h, x0+3h}.
inline std::array<double, 4> lagrange4_weights(double t) {
  const double t1 = t + 1.0, t2 = t - 1.0, t3 = t - 2.0;
  return {-t * t2 * t3 / 6.0, t1 * t2 * t3 / 2.0, -t1 * t * t3 / 2.0, t1 * t * t2 / 6.0};
}

struct AxisStencil {
  int base;                     // first grid index of the 4-point stencil
  std::array<double, 4> w;
};

inline AxisStencil axis_stencil(double x, double h, double L, int pts) {
  // Clamp outside queries to the boundary value (flat extension).
  double u = (x + L) / h;
  if (u <= 0.0) return {0, {1.0, 0.0, 0.0, 0.0}};
  if (u >= pts - 1) return {pts - 4, {0.0, 0.0, 0.0, 1.0}};
  int cell = static_cast<int>(u);
  if (cell >= pts - 1) cell = pts - 2;
  int base = std::clamp(cell - 1, 0, pts - 4);
  const double t = u - base - 1.0;
  return {base, lagrange4_weights(t)};
}

}  // namespace detail

// Cubic tensor-product interpolation; outside the box the nearest boundary
// value is used (flat extension).
inline double interpolate(const Field& f, const double* x) {
  const int pts = f.points_per_axis();
  if (pts < 4) throw std::invalid_argument("interpolate: need at least 4 points per axis");
  std::array<detail::AxisStencil, kMaxDim> st;
  for (int d = 0; d < f.dim; ++d) st[d] = detail::axis_stencil(x[d], f.h, f.L, pts);

  const int n = pts;
  double acc = 0.0;
  if (f.dim == 1) {
    for (int i = 0; i < 4; ++i)
      acc += st[0].w[i] * f.values[static_cast<std::size_t>(st[0].base + i)];
  } else if (f.dim == 2) {
    for (int i = 0; i < 4; ++i) {
      const std::size_t row = static_cast<std::size_t>(st[0].base + i) * n;
      double s = 0.0;
      for (int j = 0; j < 4; ++j) s += st[1].w[j] * f.values[row + st[1].base + j];
      acc += st[0].w[i] * s;
    }
  } else {
    for (int i = 0; i < 4; ++i) {
      double si = 0.0;
      for (int j = 0; j < 4; ++j) {
        const std::size_t row =
            (static_cast<std::size_t>(st[0].base + i) * n + st[1].base + j) * n;
        double sj = 0.0;
        for (int k = 0; k < 4; ++k) sj += st[2].w[k] * f.values[row + st[2].base + k];
        si += st[1].w[j] * sj;
      }
      acc += st[0].w[i] * si;
    }
  }
  return acc;
}

}  // namespace nlheat
