#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "cglue/bundle.hpp"
#include "cglue/domain.hpp"

namespace cglue {

/// Component-major array of a section over every grid cell.
///
/// A field is either bound to a domain (zero off the mask by convention,
/// operators re-mask their output) or ambient (defined over the whole grid,
/// used for the inputs of gluing and for analytic reference fields).
class TensorField {
 public:
  TensorField() = default;

  static TensorField on_domain(std::shared_ptr<const Domain> domain, BundleType bundle) {
    require(domain != nullptr, ErrorCode::InvalidArgument, "domain is null");
    TensorField f;
    f.grid_ = domain->grid_ptr();
    f.domain_ = std::move(domain);
    f.init(bundle);
    return f;
  }

  static TensorField ambient(std::shared_ptr<const Grid> grid, BundleType bundle) {
    require(grid != nullptr, ErrorCode::InvalidArgument, "grid is null");
    TensorField f;
    f.grid_ = std::move(grid);
    f.init(bundle);
    return f;
  }

  /// Same grid, domain binding and bundle, all zeros.
  TensorField zeros_like() const {
    TensorField f = *this;
    std::fill(f.values_.begin(), f.values_.end(), 0.0);
    return f;
  }

  /// Copy bound to `domain` with values off its mask set to zero.
  TensorField restricted_to(std::shared_ptr<const Domain> domain) const {
    require(domain != nullptr && domain->grid() == *grid_, ErrorCode::DomainMismatch, "restriction needs the same grid");
    TensorField f = on_domain(std::move(domain), bundle_);
    for (int c = 0; c < components_; ++c)
      for (std::size_t cell = 0; cell < cell_count(); ++cell)
        if (f.domain_->inside(cell)) f.at(c, cell) = at(c, cell);
    return f;
  }

  /// Copy with the domain binding dropped.
  TensorField as_ambient() const {
    TensorField f = *this;
    f.domain_.reset();
    return f;
  }

  const Grid& grid() const noexcept { return *grid_; }
  const std::shared_ptr<const Grid>& grid_ptr() const noexcept { return grid_; }
  const Domain* domain() const noexcept { return domain_.get(); }
  const std::shared_ptr<const Domain>& domain_ptr() const noexcept { return domain_; }
  const BundleType& bundle() const noexcept { return bundle_; }
  int components() const noexcept { return components_; }
  std::size_t cell_count() const noexcept { return grid_->size(); }

  double& at(int c, std::size_t cell) noexcept { return values_[c * cell_count() + cell]; }
  double at(int c, std::size_t cell) const noexcept { return values_[c * cell_count() + cell]; }
  std::span<double> component(int c) { return {values_.data() + c * cell_count(), cell_count()}; }
  std::span<const double> component(int c) const { return {values_.data() + c * cell_count(), cell_count()}; }
  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  /// Zero every component on cells where keep[cell] == 0.
  void mask_with(const std::vector<std::uint8_t>& keep) {
    for (int c = 0; c < components_; ++c)
      for (std::size_t cell = 0; cell < cell_count(); ++cell)
        if (!keep[cell]) at(c, cell) = 0.0;
  }

  TensorField& operator+=(const TensorField& o) {
    check_compatible(o);
    for (std::size_t k = 0; k < values_.size(); ++k) values_[k] += o.values_[k];
    return *this;
  }
  TensorField& operator-=(const TensorField& o) {
    check_compatible(o);
    for (std::size_t k = 0; k < values_.size(); ++k) values_[k] -= o.values_[k];
    return *this;
  }
  TensorField& operator*=(double s) {
    for (double& v : values_) v *= s;
    return *this;
  }
  /// this += s * o
  void axpy(double s, const TensorField& o) {
    check_compatible(o);
    for (std::size_t k = 0; k < values_.size(); ++k) values_[k] += s * o.values_[k];
  }

  void check_compatible(const TensorField& o) const {
    require(bundle_ == o.bundle_, ErrorCode::BundleMismatch, describe(bundle_) + " vs " + describe(o.bundle_));
    require(grid_ == o.grid_ || *grid_ == *o.grid_, ErrorCode::DomainMismatch, "fields live on different grids");
  }

 private:
  void init(BundleType bundle) {
    require(bundle.n == grid_->dim(), ErrorCode::BundleMismatch, "bundle dimension differs from grid dimension");
    bundle_ = bundle;
    components_ = bundle.components();
    values_.assign(static_cast<std::size_t>(components_) * grid_->size(), 0.0);
  }

  std::shared_ptr<const Grid> grid_;
  std::shared_ptr<const Domain> domain_;
  BundleType bundle_{};
  int components_ = 0;
  std::vector<double> values_;
};

inline TensorField operator+(TensorField a, const TensorField& b) { return a += b; }
inline TensorField operator-(TensorField a, const TensorField& b) { return a -= b; }
inline TensorField operator*(double s, TensorField a) { return a *= s; }

/// Max absolute component over all cells.
inline double max_abs(const TensorField& f) {
  double m = 0.0;
  for (double v : f.values()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace cglue
