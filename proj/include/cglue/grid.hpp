#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cglue/error.hpp"

namespace cglue {

using Point = std::array<double, 3>;
using CellIndex = std::array<int, 3>;

/// Uniform cell-centred grid over a box in R^n, n in {1,2,3}. Unused axes
/// carry a single cell so that three-level loops work for every n.
class Grid {
 public:
  Grid(int n, std::span<const double> lower, std::span<const double> upper, std::span<const int> cells) : n_(n) {
    require(n >= 1 && n <= 3, ErrorCode::UnsupportedDimension, "grid dimension must be 1, 2 or 3, got " + std::to_string(n));
    require(lower.size() == static_cast<std::size_t>(n) && upper.size() == lower.size() && cells.size() == lower.size(),
            ErrorCode::InvalidArgument, "grid bounds and cell counts must have one entry per axis");
    for (int axis = 0; axis < 3; ++axis) {
      if (axis < n) {
        require(cells[axis] >= 1, ErrorCode::InvalidArgument, "cell count must be positive");
        lower_[axis] = lower[axis];
        upper_[axis] = upper[axis];
        cells_[axis] = cells[axis];
        h_[axis] = (upper[axis] - lower[axis]) / cells[axis];
        require(h_[axis] > 0.0 && std::isfinite(h_[axis]), ErrorCode::InvalidArgument, "grid spacing must be positive");
      } else {
        lower_[axis] = 0.0;
        upper_[axis] = 1.0;
        cells_[axis] = 1;
        h_[axis] = 1.0;
      }
    }
    stride_ = {static_cast<std::ptrdiff_t>(cells_[1]) * cells_[2], cells_[2], 1};
  }

  /// Cubic grid [lower, upper]^n with `cells` cells per axis.
  static std::shared_ptr<const Grid> cube(int n, double lower, double upper, int cells) {
    std::vector<double> lo(n, lower), hi(n, upper);
    std::vector<int> c(n, cells);
    return std::make_shared<const Grid>(n, lo, hi, c);
  }

  int dim() const noexcept { return n_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(cells_[0]) * cells_[1] * cells_[2]; }
  const std::array<int, 3>& cells() const noexcept { return cells_; }
  const std::array<double, 3>& h() const noexcept { return h_; }
  const std::array<double, 3>& lower() const noexcept { return lower_; }
  const std::array<double, 3>& upper() const noexcept { return upper_; }
  const std::array<std::ptrdiff_t, 3>& stride() const noexcept { return stride_; }

  double cell_volume() const noexcept {
    double v = 1.0;
    for (int axis = 0; axis < n_; ++axis) v *= h_[axis];
    return v;
  }
  double h_max() const noexcept {
    double m = 0.0;
    for (int axis = 0; axis < n_; ++axis) m = std::max(m, h_[axis]);
    return m;
  }
  double h_min() const noexcept {
    double m = h_[0];
    for (int axis = 1; axis < n_; ++axis) m = std::min(m, h_[axis]);
    return m;
  }

  std::size_t linear(const CellIndex& c) const noexcept {
    return static_cast<std::size_t>(c[0] * stride_[0] + c[1] * stride_[1] + c[2]);
  }
  CellIndex unravel(std::size_t cell) const noexcept {
    const auto k = static_cast<int>(cell % cells_[2]);
    const auto rest = cell / cells_[2];
    return {static_cast<int>(rest / cells_[1]), static_cast<int>(rest % cells_[1]), k};
  }
  Point center(const CellIndex& c) const noexcept {
    Point p{0.0, 0.0, 0.0};
    for (int axis = 0; axis < n_; ++axis) p[axis] = lower_[axis] + (c[axis] + 0.5) * h_[axis];
    return p;
  }
  Point center(std::size_t cell) const noexcept { return center(unravel(cell)); }

  bool operator==(const Grid& other) const noexcept {
    return n_ == other.n_ && cells_ == other.cells_ && lower_ == other.lower_ && upper_ == other.upper_;
  }

 private:
  int n_;
  std::array<double, 3> lower_{}, upper_{}, h_{};
  std::array<int, 3> cells_{};
  std::array<std::ptrdiff_t, 3> stride_{};
};

inline double norm(const Point& p) { return std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]); }
inline Point operator-(const Point& a, const Point& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

}  // namespace cglue
