#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "cglue/field.hpp"

// Closed-form reference fields: bumps, point-charge fields and a
// compactly supported trace-free tensor with its divergence.

namespace cglue::analytic {

using Components = std::array<double, 6>;
using FieldFunction = std::function<Components(const Point&)>;

/// Samples fn on the masked cells of a domain.
inline TensorField sample(std::shared_ptr<const Domain> domain, BundleType bundle, const FieldFunction& fn) {
  TensorField f = TensorField::on_domain(domain, bundle);
  for (std::size_t cell = 0; cell < f.cell_count(); ++cell) {
    if (!domain->inside(cell)) continue;
    const Components v = fn(domain->grid().center(cell));
    for (int c = 0; c < f.components(); ++c) f.at(c, cell) = v[c];
  }
  return f;
}

/// Samples fn on every cell where defined(p) holds; other cells stay zero.
inline TensorField sample_ambient(std::shared_ptr<const Grid> grid, BundleType bundle, const FieldFunction& fn,
                                  const std::function<bool(const Point&)>& defined = {}) {
  TensorField f = TensorField::ambient(grid, bundle);
  for (std::size_t cell = 0; cell < f.cell_count(); ++cell) {
    const Point p = grid->center(cell);
    if (defined && !defined(p)) continue;
    const Components v = fn(p);
    for (int c = 0; c < f.components(); ++c) f.at(c, cell) = v[c];
  }
  return f;
}

inline std::vector<std::uint8_t> defined_mask(const Grid& grid, const std::function<bool(const Point&)>& defined) {
  std::vector<std::uint8_t> mask(grid.size(), 0);
  for (std::size_t cell = 0; cell < grid.size(); ++cell) mask[cell] = defined(grid.center(cell)) ? 1 : 0;
  return mask;
}

/// Random values on domain cells at least `margin` cells (per axis) inside the mask.
inline TensorField random_interior_field(std::shared_ptr<const Domain> domain, BundleType bundle, std::mt19937_64& rng,
                                         int margin = 2) {
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  TensorField f = TensorField::on_domain(domain, bundle);
  const Grid& grid = domain->grid();
  for (std::size_t cell = 0; cell < f.cell_count(); ++cell) {
    if (!domain->inside(cell)) continue;
    const CellIndex idx = grid.unravel(cell);
    bool deep = true;
    for (int axis = 0; axis < grid.dim() && deep; ++axis)
      for (int k = -margin; k <= margin && deep; ++k) {
        CellIndex j = idx;
        j[axis] += k;
        if (j[axis] < 0 || j[axis] >= grid.cells()[axis] || !domain->inside(grid.linear(j))) deep = false;
      }
    if (!deep) continue;
    for (int c = 0; c < f.components(); ++c) f.at(c, cell) = uni(rng);
  }
  return f;
}

// ---------------------------------------------------------------------------
// bumps in one variable

/// (1 - t^2)^8 on |t| < 1.
inline double poly_bump(double t) {
  if (std::abs(t) >= 1.0) return 0.0;
  return std::pow(1.0 - t * t, 8);
}
inline double poly_bump_derivative(double t) {
  if (std::abs(t) >= 1.0) return 0.0;
  return -16.0 * t * std::pow(1.0 - t * t, 7);
}

/// e^4 exp(-1/(t(1-t))) on (0, 1): smooth, peak 1 at t = 1/2.
inline double smooth_bump(double t) {
  if (t <= 0.0 || t >= 1.0) return 0.0;
  return std::exp(4.0 - 1.0 / (t * (1.0 - t)));
}
inline double smooth_bump_derivative(double t) {
  if (t <= 0.0 || t >= 1.0) return 0.0;
  const double q = t * (1.0 - t);
  return smooth_bump(t) * (1.0 - 2.0 * t) / (q * q);
}

/// Radial profile b(r) = smooth_bump((r - r0)/(r1 - r0)).
struct RadialBump {
  double r0 = 0.2;
  double r1 = 0.7;
  double value(double r) const { return smooth_bump((r - r0) / (r1 - r0)); }
  double derivative(double r) const { return smooth_bump_derivative((r - r0) / (r1 - r0)) / (r1 - r0); }
  /// -(1/r^(n-1)) (r^(n-1) b)': minus the divergence of b(r) r_hat in n dimensions.
  double source(double r, int n) const {
    if (r <= 0.0) return 0.0;
    return -(derivative(r) + (n - 1) * value(r) / r);
  }
};

// ---------------------------------------------------------------------------
// charges

/// Enclosed-charge fraction of the smoothed charge profile at t = rho / eps.
inline double enclosed_fraction(double t) {
  if (t >= 1.0) return 1.0;
  const double t3 = t * t * t;
  return (35.0 * t3 - 42.0 * t3 * t * t + 15.0 * t3 * t3 * t) / 8.0;
}

/// Charge Q at `center`, spread over radius `smoothing` (0 for a point charge).
struct Charge {
  Point center{};
  double q = 1.0;
  double smoothing = 0.0;
};

/// Area of the unit sphere in R^n.
inline double sphere_area(int n) { return n == 3 ? 4.0 * std::numbers::pi : (n == 2 ? 2.0 * std::numbers::pi : 2.0); }

/// Electric field Q/|S^{n-1}| r_vec / r^n summed over charges, as a one-form.
inline Components coulomb(const std::vector<Charge>& charges, const Point& p, int n) {
  Components e{};
  for (const auto& c : charges) {
    double r2 = 0.0;
    for (int a = 0; a < n; ++a) r2 += (p[a] - c.center[a]) * (p[a] - c.center[a]);
    const double r = std::sqrt(r2);
    if (r == 0.0) continue;
    double frac = 1.0;
    if (c.smoothing > 0.0) frac = enclosed_fraction(r / c.smoothing);
    const double scale = c.q * frac / (sphere_area(n) * std::pow(r, n));
    for (int a = 0; a < n; ++a) e[a] += scale * (p[a] - c.center[a]);
  }
  return e;
}

// ---------------------------------------------------------------------------
// trace-free tensors

/// Smooth trace-free symmetric tensor in R^3: polynomial entries times a
/// Gaussian of width `width`, cut to zero beyond `cut` widths where the
/// envelope is below 1e-17. Resolved on grids with h <= width / 2.
struct TracefreeBlob {
  Point center{};
  double width = 0.1;
  double cut = 9.0;

  using Matrix = std::array<std::array<double, 3>, 3>;

  double support_radius() const { return cut * width; }

  /// Polynomial factor in scaled coordinates y, before removing the trace.
  static Matrix polynomial(const Point& y) {
    Matrix m{};
    m[0][0] = 1.0 + 0.8 * y[0] - 0.3 * y[1] * y[2];
    m[1][1] = -0.4 + 0.5 * y[2] + 0.6 * y[0] * y[1];
    m[2][2] = 0.3 - 0.7 * y[1];
    m[0][1] = m[1][0] = 0.5 * y[1] + 0.2;
    m[0][2] = m[2][0] = -0.3 + 0.4 * y[0] * y[2];
    m[1][2] = m[2][1] = 0.6 * y[0] - 0.25;
    return m;
  }

  /// d/dy_k of polynomial().
  static Matrix polynomial_derivative(const Point& y, int k) {
    Matrix m{};
    m[0][0] = (k == 0 ? 0.8 : 0.0) - 0.3 * (k == 1 ? y[2] : 0.0) - 0.3 * (k == 2 ? y[1] : 0.0);
    m[1][1] = (k == 2 ? 0.5 : 0.0) + 0.6 * (k == 0 ? y[1] : 0.0) + 0.6 * (k == 1 ? y[0] : 0.0);
    m[2][2] = k == 1 ? -0.7 : 0.0;
    m[0][1] = m[1][0] = k == 1 ? 0.5 : 0.0;
    m[0][2] = m[2][0] = 0.4 * (k == 0 ? y[2] : 0.0) + 0.4 * (k == 2 ? y[0] : 0.0);
    m[1][2] = m[2][1] = k == 0 ? 0.6 : 0.0;
    return m;
  }

  static void remove_trace(Matrix& m) {
    const double shift = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    for (int a = 0; a < 3; ++a) m[a][a] -= shift;
  }

  Point scaled(const Point& p) const {
    Point y{};
    for (int a = 0; a < 3; ++a) y[a] = (p[a] - center[a]) / width;
    return y;
  }

  /// Full 3x3 symmetric matrix.
  Matrix matrix(const Point& p) const {
    const Point y = scaled(p);
    const double r2 = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
    if (r2 >= cut * cut) return {};
    Matrix m = polynomial(y);
    remove_trace(m);
    const double envelope = std::exp(-0.5 * r2);
    for (auto& row : m)
      for (double& v : row) v *= envelope;
    return m;
  }

  /// Stored trace-free components.
  Components stored(const Point& p) const {
    const BundleType b{BundleKind::Sym2TraceFree, 3};
    Components out{};
    contract_tensor(b, matrix(p), out.data());
    return out;
  }

  /// Divergence sum_i d_i T_ia in closed form.
  Components divergence(const Point& p) const {
    const Point y = scaled(p);
    const double r2 = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
    Components d{};
    if (r2 >= cut * cut) return d;
    const double envelope = std::exp(-0.5 * r2);
    Matrix m = polynomial(y);
    remove_trace(m);
    for (int i = 0; i < 3; ++i) {
      Matrix dm = polynomial_derivative(y, i);
      remove_trace(dm);
      for (int a = 0; a < 3; ++a) d[a] += envelope * (dm[i][a] - y[i] * m[i][a]) / width;
    }
    return d;
  }
};

}  // namespace cglue::analytic
