#pragma once

#include <cmath>
#include <vector>

#include "cglue/operators.hpp"

namespace cglue {

namespace detail {

inline bool same_domain(const TensorField& u, const TensorField& v) {
  if (u.domain() == v.domain()) return true;
  if (!u.domain() || !v.domain()) return false;
  return u.domain()->grid() == v.domain()->grid() && u.domain()->mask() == v.domain()->mask();
}

/// sum over cells of w(cell) * <u, v>_g, serial and lexicographic.
template <typename CellWeight>
double weighted_sum(const TensorField& u, const TensorField& v, CellWeight&& w) {
  u.check_compatible(v);
  const int c = u.components();
  const auto g = u.bundle().metric();
  double total = 0.0;
  for (std::size_t cell = 0; cell < u.cell_count(); ++cell) {
    const double wc = w(cell);
    if (wc == 0.0) continue;
    double local = 0.0;
    for (int b = 0; b < c; ++b) {
      const double ub = u.at(b, cell);
      if (ub == 0.0) continue;
      for (int b2 = 0; b2 < c; ++b2) {
        const double gb = g[b * c + b2];
        if (gb != 0.0) local += gb * ub * v.at(b2, cell);
      }
    }
    total += wc * local;
  }
  return total;
}

}  // namespace detail

/// Unweighted discrete L^2 pairing: sum <u, v>_g h^n.
inline double l2_inner(const TensorField& u, const TensorField& v) {
  return detail::weighted_sum(u, v, [](std::size_t) { return 1.0; }) * u.grid().cell_volume();
}

inline double l2_norm(const TensorField& u) { return std::sqrt(std::max(0.0, l2_inner(u, u))); }

/// sum phi^(2 power) <u, v>_g psi^2 h^n over the weight field's domain.
inline double weighted_inner(const TensorField& u, const TensorField& v, const WeightField& weights, int power = 0) {
  require(power >= 0, ErrorCode::InvalidArgument, "power must be non-negative");
  require(detail::same_domain(u, v), ErrorCode::DomainMismatch, "weighted_inner needs fields on the same domain");
  require(u.grid() == weights.domain().grid(), ErrorCode::DomainMismatch, "weights live on another grid");
  const auto& psi2 = weights.psi2();
  const auto& phi = weights.phi();
  const double vol = u.grid().cell_volume();
  if (power == 0) return detail::weighted_sum(u, v, [&](std::size_t cell) { return psi2[cell]; }) * vol;
  return detail::weighted_sum(u, v, [&](std::size_t cell) { return std::pow(phi[cell], 2 * power) * psi2[cell]; }) * vol;
}

inline double weighted_inner(const TensorField& u, const TensorField& v, const WeightConfig& cfg, int power = 0) {
  require(u.domain() != nullptr, ErrorCode::DomainMismatch, "weighted_inner needs a domain-bound field");
  return weighted_inner(u, v, WeightField(u.domain_ptr(), cfg), power);
}

inline double psi_norm(const TensorField& u, const WeightField& weights) {
  return std::sqrt(std::max(0.0, weighted_inner(u, u, weights)));
}

/// H^k_{phi,psi} norm for k in {0, 1}; derivatives are centred differences per component.
inline double sobolev_norm(const TensorField& u, const WeightField& weights, int k) {
  require(k >= 0, ErrorCode::InvalidArgument, "order must be non-negative");
  require(k <= 1, ErrorCode::UnsupportedOrder, "first-order operators need at most one derivative");
  double total = weighted_inner(u, u, weights, 0);
  if (k == 1) {
    const Grid& grid = u.grid();
    TensorField du = u.zeros_like();
    for (int axis = 0; axis < grid.dim(); ++axis) {
      std::fill(du.values().begin(), du.values().end(), 0.0);
      std::vector<detail::StencilTerm> terms;
      for (int c = 0; c < u.components(); ++c) terms.push_back({c, c, axis, 1.0});
      detail::apply_stencil(terms, u, du);
      if (u.domain()) du.mask_with(u.domain()->mask());
      total += weighted_inner(du, du, weights, 1);
    }
  }
  return std::sqrt(std::max(0.0, total));
}

inline double sobolev_norm(const TensorField& u, const WeightConfig& cfg, int k) {
  require(u.domain() != nullptr, ErrorCode::DomainMismatch, "sobolev_norm needs a domain-bound field");
  return sobolev_norm(u, WeightField(u.domain_ptr(), cfg), k);
}

/// Boundary pairing of W (P-domain) with v (P*-domain) through the smeared
/// shell of `indicator`: sum ind (<P W, v> - <W, P* v>) h^n. Evaluated as
/// <W, P*(ind v) - ind P* v> h^n, which is the same sum by exact transposition
/// and only reads W where the indicator varies.
inline double surface_flux(const TensorField& W, const TensorField& v, const OperatorSpec& op, const CutoffField& indicator) {
  require(W.bundle() == op.forward_domain(), ErrorCode::BundleMismatch, "flux field must lie in the domain of P");
  require(v.bundle() == op.adjoint_domain(), ErrorCode::BundleMismatch, "test field must lie in the domain of P*");
  require(indicator.grid && *indicator.grid == W.grid() && W.grid() == v.grid(), ErrorCode::DomainMismatch,
          "flux inputs live on different grids");
  require(indicator.transition_width() >= 4.0 * W.grid().h_max(), ErrorCode::IndicatorTooSharp,
          "indicator transition must span at least four cells");

  const TensorField va = v.as_ambient();
  TensorField ind_v = va;
  for (int c = 0; c < ind_v.components(); ++c)
    for (std::size_t cell = 0; cell < ind_v.cell_count(); ++cell) ind_v.at(c, cell) *= indicator.values[cell];
  TensorField commutator = apply_adjoint(op, ind_v);
  const TensorField pv = apply_adjoint(op, va);
  for (int c = 0; c < commutator.components(); ++c)
    for (std::size_t cell = 0; cell < commutator.cell_count(); ++cell)
      commutator.at(c, cell) -= indicator.values[cell] * pv.at(c, cell);
  return l2_inner(W.as_ambient(), commutator);
}

}  // namespace cglue
