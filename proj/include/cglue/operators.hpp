#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "cglue/field.hpp"
#include "cglue/parallel.hpp"

namespace cglue {

/// GRAD: P* = d on scalars. KILLING: P*w = Dw + (Dw)^T on one-forms.
/// CONF_KILLING: P*w = trace-free part of the symmetrised gradient (n = 3 only).
enum class OperatorKind { Grad, Killing, ConfKilling };

constexpr std::string_view to_string(OperatorKind kind) {
  switch (kind) {
    case OperatorKind::Grad: return "GRAD";
    case OperatorKind::Killing: return "KILLING";
    case OperatorKind::ConfKilling: return "CONF_KILLING";
  }
  return "UNKNOWN";
}

inline OperatorKind operator_kind_from_string(std::string_view name) {
  if (name == "GRAD") return OperatorKind::Grad;
  if (name == "KILLING") return OperatorKind::Killing;
  if (name == "CONF_KILLING") return OperatorKind::ConfKilling;
  fail(ErrorCode::InvalidArgument, "unknown operator '" + std::string(name) + "'");
}

struct OperatorSpec {
  OperatorKind kind = OperatorKind::Grad;
  int n = 1;
  int m = 1;

  void validate() const {
    require(n >= 1 && n <= 3, ErrorCode::UnsupportedDimension, "operator dimension must be 1, 2 or 3");
    require(m == 1, ErrorCode::InvalidArgument, "only first-order operators are supported");
    if (kind == OperatorKind::ConfKilling)
      require(n >= 3, ErrorCode::UnsupportedOperator,
              "CONF_KILLING needs n >= 3: for n = 2 its adjoint is determined elliptic with an infinite-dimensional kernel");
  }

  /// Bundle of u (input of P*).
  BundleType adjoint_domain() const {
    return {kind == OperatorKind::Grad ? BundleKind::Scalar : BundleKind::OneForm, n};
  }
  /// Bundle of U (input of P, output of P*).
  BundleType forward_domain() const {
    switch (kind) {
      case OperatorKind::Grad: return {BundleKind::OneForm, n};
      case OperatorKind::Killing: return {BundleKind::Sym2, n};
      case OperatorKind::ConfKilling: return {BundleKind::Sym2TraceFree, n};
    }
    return {};
  }

  bool operator==(const OperatorSpec&) const = default;
};

namespace detail {

/// One term out[out_comp] += coef * D_axis in[in_comp] of a first-order stencil.
struct StencilTerm {
  int out_comp;
  int in_comp;
  int axis;
  double coef;
};

/// Principal symbol C[b][a][i]: (P* u)_b = sum_{a,i} C[b][a][i] D_i u_a.
inline double symbol(const OperatorSpec& op, int b, int a, int i) {
  const BundleType out = op.forward_domain();
  switch (op.kind) {
    case OperatorKind::Grad: return (b == i && a == 0) ? 1.0 : 0.0;
    case OperatorKind::Killing: {
      const auto [p, q] = out.pair(b);
      return double(i == p && a == q) + double(i == q && a == p);
    }
    case OperatorKind::ConfKilling: {
      const auto [p, q] = out.pair(b);
      double c = 0.5 * (double(i == p && a == q) + double(i == q && a == p));
      if (p == q && i == a) c -= 1.0 / op.n;
      return c;
    }
  }
  return 0.0;
}

inline std::vector<StencilTerm> adjoint_terms(const OperatorSpec& op) {
  std::vector<StencilTerm> terms;
  const int nb = op.forward_domain().components();
  const int na = op.adjoint_domain().components();
  for (int b = 0; b < nb; ++b)
    for (int a = 0; a < na; ++a)
      for (int i = 0; i < op.n; ++i)
        if (const double c = symbol(op, b, a, i); c != 0.0) terms.push_back({b, a, i, c});
  return terms;
}

/// (P U)_a = -sum_i D_i (sum_{b,b'} C[b][a][i] g_bb' U_b'), the transpose of
/// adjoint_terms under the fibre metric; centred differences are skew.
inline std::vector<StencilTerm> forward_terms(const OperatorSpec& op) {
  std::vector<StencilTerm> terms;
  const BundleType fb = op.forward_domain();
  const int nb = fb.components();
  const int na = op.adjoint_domain().components();
  const auto g = fb.metric();
  for (int a = 0; a < na; ++a)
    for (int i = 0; i < op.n; ++i)
      for (int b2 = 0; b2 < nb; ++b2) {
        double k = 0.0;
        for (int b = 0; b < nb; ++b) k += symbol(op, b, a, i) * g[b * nb + b2];
        if (k != 0.0) terms.push_back({a, b2, i, -k});
      }
  return terms;
}

/// Applies sum of terms with centred differences and zero extension beyond the grid.
inline void apply_stencil(const std::vector<StencilTerm>& terms, const TensorField& in, TensorField& out) {
  const Grid& grid = in.grid();
  const auto& cells = grid.cells();
  const auto& stride = grid.stride();
  const auto& h = grid.h();
  parallel_for(grid.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t cell = begin; cell < end; ++cell) {
      const CellIndex idx = grid.unravel(cell);
      for (const auto& t : terms) {
        const std::size_t base = static_cast<std::size_t>(t.in_comp) * grid.size();
        const double up = idx[t.axis] + 1 < cells[t.axis] ? in.values()[base + cell + stride[t.axis]] : 0.0;
        const double down = idx[t.axis] > 0 ? in.values()[base + cell - stride[t.axis]] : 0.0;
        out.at(t.out_comp, cell) += t.coef * (up - down) / (2.0 * h[t.axis]);
      }
    }
  });
}

inline TensorField output_like(const TensorField& in, BundleType bundle) {
  return in.domain() ? TensorField::on_domain(in.domain_ptr(), bundle) : TensorField::ambient(in.grid_ptr(), bundle);
}

}  // namespace detail

/// P* applied with centred differences; result masked to the input's domain if it has one.
inline TensorField apply_adjoint(const OperatorSpec& op, const TensorField& u) {
  op.validate();
  require(u.bundle() == op.adjoint_domain(), ErrorCode::BundleMismatch,
          std::string(to_string(op.kind)) + " adjoint expects " + describe(op.adjoint_domain()) + ", got " + describe(u.bundle()));
  TensorField out = detail::output_like(u, op.forward_domain());
  detail::apply_stencil(detail::adjoint_terms(op), u, out);
  if (u.domain()) out.mask_with(u.domain()->mask());
  return out;
}

/// P, the exact discrete transpose of apply_adjoint in the unweighted pairing.
inline TensorField apply_forward(const OperatorSpec& op, const TensorField& U) {
  op.validate();
  require(U.bundle() == op.forward_domain(), ErrorCode::BundleMismatch,
          std::string(to_string(op.kind)) + " expects " + describe(op.forward_domain()) + ", got " + describe(U.bundle()));
  TensorField out = detail::output_like(U, op.adjoint_domain());
  detail::apply_stencil(detail::forward_terms(op), U, out);
  if (U.domain()) out.mask_with(U.domain()->mask());
  return out;
}

}  // namespace cglue
