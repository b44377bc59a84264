#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "cglue/error.hpp"
#include "cglue/grid.hpp"

namespace cglue {

struct Ball {
  Point center{};
  double radius = 1.0;
};

struct Annulus {
  Point center{};
  double r_in = 1.0;
  double r_out = 2.0;
};

/// Outer ball with a smaller closed ball removed from its interior.
struct BallDifference {
  Ball outer;
  Ball removed;
};

using ShapeSpec = std::variant<Ball, Annulus, BallDifference>;

/// Boundary components: Inner is where a cutoff equals 1, Outer where it vanishes.
enum class BoundaryLabel { Inner, Outer };

namespace detail {

inline double dist(const Point& p, const Point& c, int n) {
  double r2 = 0.0;
  for (int axis = 0; axis < n; ++axis) r2 += (p[axis] - c[axis]) * (p[axis] - c[axis]);
  return std::sqrt(r2);
}

struct ShapeGeometry {
  int n;
  double operator()(const Ball& b, const Point& p) const { return b.radius - dist(p, b.center, n); }
  double operator()(const Annulus& a, const Point& p) const {
    const double r = dist(p, a.center, n);
    return std::min(r - a.r_in, a.r_out - r);
  }
  double operator()(const BallDifference& d, const Point& p) const {
    return std::min(d.outer.radius - dist(p, d.outer.center, n), dist(p, d.removed.center, n) - d.removed.radius);
  }
};

}  // namespace detail

/// Signed analytic distance to the boundary of the shape: positive inside.
inline double signed_distance(const ShapeSpec& shape, const Point& p, int n) {
  return std::visit([&](const auto& s) { return detail::ShapeGeometry{n}(s, p); }, shape);
}

/// Centre of the outer sphere (the whole shape lies within `outer_radius` of it).
inline Point shape_center(const ShapeSpec& shape) {
  if (const auto* b = std::get_if<Ball>(&shape)) return b->center;
  if (const auto* a = std::get_if<Annulus>(&shape)) return a->center;
  return std::get<BallDifference>(shape).outer.center;
}

inline double outer_radius(const ShapeSpec& shape) {
  if (const auto* b = std::get_if<Ball>(&shape)) return b->radius;
  if (const auto* a = std::get_if<Annulus>(&shape)) return a->r_out;
  return std::get<BallDifference>(shape).outer.radius;
}

/// Masked grid with the exact distance-to-boundary function x. Immutable.
class Domain {
 public:
  Domain(std::shared_ptr<const Grid> grid, ShapeSpec shape) : grid_(std::move(grid)), shape_(std::move(shape)) {
    const int n = grid_->dim();
    validate_shape(n);
    check_margin(n);

    mask_.assign(grid_->size(), 0);
    x_.assign(grid_->size(), 0.0);
    for (std::size_t cell = 0; cell < grid_->size(); ++cell) {
      const double d = signed_distance(shape_, grid_->center(cell), n);
      if (d > 0.0) {
        mask_[cell] = 1;
        x_[cell] = d;
        ++masked_count_;
      }
    }
    require(masked_count_ > 0, ErrorCode::InvalidArgument, "shape contains no cell centres");

    if (std::holds_alternative<Ball>(shape_)) {
      boundary_labels_ = {BoundaryLabel::Outer};
    } else {
      boundary_labels_ = {BoundaryLabel::Inner, BoundaryLabel::Outer};
    }
  }

  const Grid& grid() const noexcept { return *grid_; }
  const std::shared_ptr<const Grid>& grid_ptr() const noexcept { return grid_; }
  const ShapeSpec& shape() const noexcept { return shape_; }
  int dim() const noexcept { return grid_->dim(); }
  std::size_t size() const noexcept { return grid_->size(); }
  std::size_t masked_count() const noexcept { return masked_count_; }
  bool inside(std::size_t cell) const noexcept { return mask_[cell] != 0; }
  const std::vector<std::uint8_t>& mask() const noexcept { return mask_; }
  double x(std::size_t cell) const noexcept { return x_[cell]; }
  const std::vector<double>& x() const noexcept { return x_; }
  const std::vector<BoundaryLabel>& boundary_labels() const noexcept { return boundary_labels_; }
  bool has_inner_boundary() const noexcept { return boundary_labels_.size() == 2; }

  /// Centre of the sphere bounding the inner boundary component (the cutoff's radial origin).
  Point inner_center() const {
    if (const auto* a = std::get_if<Annulus>(&shape_)) return a->center;
    if (const auto* d = std::get_if<BallDifference>(&shape_)) return d->removed.center;
    return std::get<Ball>(shape_).center;
  }

 private:
  void validate_shape(int n) const {
    if (const auto* b = std::get_if<Ball>(&shape_)) {
      require(b->radius > 0.0, ErrorCode::InvalidArgument, "ball radius must be positive");
    } else if (const auto* a = std::get_if<Annulus>(&shape_)) {
      require(n >= 2, ErrorCode::DisconnectedDomain, "an annulus in one dimension is two intervals");
      require(a->r_in > 0.0 && a->r_out > a->r_in, ErrorCode::InvalidArgument, "annulus needs 0 < r_in < r_out");
    } else {
      const auto& d = std::get<BallDifference>(shape_);
      require(n >= 2, ErrorCode::DisconnectedDomain, "a ball difference in one dimension is disconnected");
      require(d.removed.radius > 0.0 && d.outer.radius > 0.0, ErrorCode::InvalidArgument, "radii must be positive");
      require(detail::dist(d.removed.center, d.outer.center, n) + d.removed.radius < d.outer.radius,
              ErrorCode::InvalidArgument, "removed ball must lie strictly inside the outer ball");
    }
  }

  void check_margin(int n) const {
    const Point c = shape_center(shape_);
    const double r = outer_radius(shape_);
    for (int axis = 0; axis < n; ++axis) {
      const double margin = 2.0 * grid_->h()[axis];
      if (c[axis] - r < grid_->lower()[axis] + margin || c[axis] + r > grid_->upper()[axis] - margin) {
        fail(ErrorCode::ShapeTooLarge, "shape needs at least two cells of margin on axis " + std::to_string(axis));
      }
    }
  }

  std::shared_ptr<const Grid> grid_;
  ShapeSpec shape_;
  std::vector<std::uint8_t> mask_;
  std::vector<double> x_;
  std::vector<BoundaryLabel> boundary_labels_;
  std::size_t masked_count_ = 0;
};

inline std::shared_ptr<const Domain> build_domain(const ShapeSpec& shape, std::shared_ptr<const Grid> grid) {
  require(grid != nullptr, ErrorCode::InvalidArgument, "grid is null");
  return std::make_shared<const Domain>(std::move(grid), shape);
}

// ---------------------------------------------------------------------------
// Weights

/// phi = x^2, psi = x^(2a-n) e^(-s/x), varphi = x^(2a) e^(-s/x).
struct WeightConfig {
  int a = 1;
  double s = 1.0;
  int m = 1;
  double underflow_floor = 1e-300;

  static WeightConfig defaults(int n) { return WeightConfig{(n + 1) / 2, 1.0, 1, 1e-300}; }

  void validate() const {
    require(a >= 1, ErrorCode::InvalidArgument, "weight exponent a must be >= 1");
    require(s > 0.0 && std::isfinite(s), ErrorCode::InvalidArgument, "decay rate s must be positive");
    require(m == 1, ErrorCode::InvalidArgument, "only first-order operators are supported (m = 1)");
    require(underflow_floor > 0.0, ErrorCode::InvalidArgument, "underflow floor must be positive");
  }
};

struct WeightValues {
  double phi;
  double psi;
  double varphi;
};

namespace detail {
inline WeightValues weights_at(double x, int n, const WeightConfig& cfg) {
  const double lx = std::log(x);
  auto clamp = [&](double v) { return v < cfg.underflow_floor ? 0.0 : v; };
  return {clamp(x * x), clamp(std::exp((2 * cfg.a - n) * lx - cfg.s / x)), clamp(std::exp(2 * cfg.a * lx - cfg.s / x))};
}
}  // namespace detail

inline WeightValues eval_weights(const Domain& domain, const WeightConfig& cfg, std::size_t cell) {
  cfg.validate();
  require(cell < domain.size() && domain.inside(cell), ErrorCode::OutsideDomain, "weights requested on an unmasked cell");
  return detail::weights_at(domain.x(cell), domain.dim(), cfg);
}

/// Per-cell weights on a domain, zero on unmasked cells. A cell is active
/// (carries an unknown in the solves) iff psi^2 survives the underflow floor.
class WeightField {
 public:
  WeightField(std::shared_ptr<const Domain> domain, const WeightConfig& cfg) : domain_(std::move(domain)), cfg_(cfg) {
    cfg_.validate();
    const std::size_t size = domain_->size();
    phi_.assign(size, 0.0);
    psi_.assign(size, 0.0);
    psi2_.assign(size, 0.0);
    active_.assign(size, 0);
    for (std::size_t cell = 0; cell < size; ++cell) {
      if (!domain_->inside(cell)) continue;
      const auto w = detail::weights_at(domain_->x(cell), domain_->dim(), cfg_);
      phi_[cell] = w.phi;
      psi_[cell] = w.psi;
      // psi^2 can underflow where psi itself does not; such cells are frozen as well
      const double p2 = w.psi * w.psi;
      psi2_[cell] = p2 < cfg_.underflow_floor ? 0.0 : p2;
      if (psi2_[cell] > 0.0) {
        active_[cell] = 1;
        ++active_count_;
      }
    }
  }

  const Domain& domain() const noexcept { return *domain_; }
  const std::shared_ptr<const Domain>& domain_ptr() const noexcept { return domain_; }
  const WeightConfig& config() const noexcept { return cfg_; }
  double phi(std::size_t cell) const noexcept { return phi_[cell]; }
  double psi(std::size_t cell) const noexcept { return psi_[cell]; }
  double psi2(std::size_t cell) const noexcept { return psi2_[cell]; }
  bool active(std::size_t cell) const noexcept { return active_[cell] != 0; }
  const std::vector<double>& psi2() const noexcept { return psi2_; }
  const std::vector<double>& phi() const noexcept { return phi_; }
  const std::vector<std::uint8_t>& active() const noexcept { return active_; }
  std::size_t active_count() const noexcept { return active_count_; }

 private:
  std::shared_ptr<const Domain> domain_;
  WeightConfig cfg_;
  std::vector<double> phi_, psi_, psi2_;
  std::vector<std::uint8_t> active_;
  std::size_t active_count_ = 0;
};

// ---------------------------------------------------------------------------
// Cutoffs

/// C^2 quintic smoothstep on [0, 1]; peak slope 15/8 at t = 1/2.
inline double smoothstep(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  return t * t * t * (t * (6.0 * t - 15.0) + 10.0);
}

/// Radial transition: the cutoff is 1 for rho <= inner and 0 for rho >= outer,
/// rho being the distance to the centre of the inner boundary sphere.
struct CollarSpec {
  double inner = 0.0;
  double outer = 0.0;
};

/// Grid-wide smooth field falling from 1 to 0 across a radial transition.
/// Serves as the gluing cutoff and as the flux-measuring indicator.
struct CutoffField {
  std::shared_ptr<const Grid> grid;
  Point center{};
  double inner = 0.0;
  double outer = 0.0;
  std::vector<double> values;

  double transition_width() const noexcept { return outer - inner; }
  double radial(std::size_t cell) const { return detail::dist(grid->center(cell), center, grid->dim()); }
};

inline CutoffField make_radial_cutoff(std::shared_ptr<const Grid> grid, const Point& center, double inner, double outer) {
  require(outer > inner, ErrorCode::InvalidCollars, "cutoff transition must have positive width");
  CutoffField chi{std::move(grid), center, inner, outer, {}};
  chi.values.resize(chi.grid->size());
  for (std::size_t cell = 0; cell < chi.values.size(); ++cell) {
    chi.values[cell] = 1.0 - smoothstep((chi.radial(cell) - inner) / (outer - inner));
  }
  return chi;
}

/// Cutoff equal to 1 near the inner boundary and 0 near the outer boundary of the domain.
inline CutoffField build_cutoff(const Domain& domain, const CollarSpec& collar) {
  require(domain.has_inner_boundary(), ErrorCode::InvalidCollars, "cutoff needs a domain with an inner boundary");
  require(collar.inner < collar.outer, ErrorCode::InvalidCollars, "inner and outer collars overlap");
  const int n = domain.dim();
  double r_in = 0.0;
  bool fits = false;
  if (const auto* a = std::get_if<Annulus>(&domain.shape())) {
    r_in = a->r_in;
    fits = collar.outer < a->r_out;
  } else {
    const auto& d = std::get<BallDifference>(domain.shape());
    r_in = d.removed.radius;
    fits = detail::dist(d.removed.center, d.outer.center, n) + collar.outer < d.outer.radius;
  }
  require(collar.inner > r_in && fits, ErrorCode::InvalidCollars, "collars must lie strictly inside the domain");
  return make_radial_cutoff(domain.grid_ptr(), domain.inner_center(), collar.inner, collar.outer);
}

/// Smeared indicator of the ball of radius `radius`: 1 inside, 0 outside,
/// transitioning over [radius - width/2, radius + width/2].
inline CutoffField make_shell_indicator(std::shared_ptr<const Grid> grid, const Point& center, double radius, double width) {
  return make_radial_cutoff(std::move(grid), center, radius - 0.5 * width, radius + 0.5 * width);
}

}  // namespace cglue
