#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <vector>

#include "cglue/solver.hpp"

namespace cglue {

/// Two solutions of P U = 0 to be joined across the annular region `domain`:
/// V near the inner boundary (where chi = 1), W near the outer one (chi = 0).
/// V and W are grid-wide fields; the masks say where each is meaningful.
struct GluingProblem {
  OperatorSpec op;
  std::shared_ptr<const Domain> domain;
  TensorField V;
  std::vector<std::uint8_t> v_defined;
  TensorField W;
  std::vector<std::uint8_t> w_defined;
  CutoffField chi;
  KernelBasis basis;
};

struct GluingReport {
  FluxReport flux_V;
  FluxReport flux_W;
  std::vector<double> flux_mismatch;  ///< flux_W - flux_V per basis member
  SolveReport solve_report;
  double glued_divergence_residual = 0.0;  ///< ||P(T + U)||_L2 over the domain
};

struct GluingResult {
  TensorField glued;
  TensorField correction;  ///< U, supported in the closure of the domain
  GluingReport report;
};

inline std::vector<std::uint8_t> all_defined(const Grid& grid) { return std::vector<std::uint8_t>(grid.size(), 1); }

inline GluingProblem make_gluing_problem(const OperatorSpec& op, std::shared_ptr<const Domain> domain, TensorField V,
                                         std::vector<std::uint8_t> v_defined, TensorField W,
                                         std::vector<std::uint8_t> w_defined, CutoffField chi, const WeightConfig& cfg) {
  op.validate();
  require(V.bundle() == op.forward_domain() && W.bundle() == op.forward_domain(), ErrorCode::BundleMismatch,
          "glued fields must lie in the domain of P");
  require(V.grid() == domain->grid() && W.grid() == domain->grid() && *chi.grid == domain->grid(),
          ErrorCode::DomainMismatch, "gluing inputs live on different grids");
  require(v_defined.size() == domain->size() && w_defined.size() == domain->size(), ErrorCode::InvalidArgument,
          "definition masks must cover the grid");
  KernelBasis basis = build_kernel_basis(op, domain, cfg);
  return {op, std::move(domain), V.as_ambient(), std::move(v_defined), W.as_ambient(), std::move(w_defined), std::move(chi),
          std::move(basis)};
}

namespace detail {

/// Every cell whose value the cutoff-weighted stencils read must carry data.
inline void check_defined(const GluingProblem& p) {
  const Grid& grid = p.domain->grid();
  const auto& chi = p.chi.values;
  for (std::size_t cell = 0; cell < grid.size(); ++cell) {
    const bool needs_v = chi[cell] > 0.0 && p.domain->inside(cell);
    const bool needs_w = chi[cell] < 1.0 && p.domain->inside(cell);
    if (needs_v && !p.v_defined[cell])
      fail(ErrorCode::MissingData, "inner field undefined at a cell where the cutoff is positive");
    if (needs_w && !p.w_defined[cell])
      fail(ErrorCode::MissingData, "outer field undefined at a cell where the cutoff is below one");
  }
}

/// P(chi V + (1-chi) W) - chi P V - (1-chi) P W: vanishes wherever chi is
/// constant across the stencil, so it lives in the transition collar only.
inline TensorField cutoff_commutator(const GluingProblem& p, const TensorField& T) {
  TensorField out = apply_forward(p.op, T);
  const TensorField pv = apply_forward(p.op, p.V);
  const TensorField pw = apply_forward(p.op, p.W);
  const auto& chi = p.chi.values;
  for (int c = 0; c < out.components(); ++c)
    for (std::size_t cell = 0; cell < out.cell_count(); ++cell)
      out.at(c, cell) -= chi[cell] * pv.at(c, cell) + (1.0 - chi[cell]) * pw.at(c, cell);
  return out;
}

}  // namespace detail

/// T = chi V + (1 - chi) W, equal to V bitwise where chi = 1 and to W where chi = 0.
inline TensorField interpolate(const GluingProblem& p) {
  detail::check_defined(p);
  TensorField T = TensorField::ambient(p.V.grid_ptr(), p.V.bundle());
  const auto& chi = p.chi.values;
  for (int c = 0; c < T.components(); ++c)
    for (std::size_t cell = 0; cell < T.cell_count(); ++cell) {
      const double k = chi[cell];
      if (k == 1.0) {
        T.at(c, cell) = p.v_defined[cell] ? p.V.at(c, cell) : 0.0;
      } else if (k == 0.0) {
        T.at(c, cell) = p.w_defined[cell] ? p.W.at(c, cell) : 0.0;
      } else {
        T.at(c, cell) = k * p.V.at(c, cell) + (1.0 - k) * p.W.at(c, cell);
      }
    }
  return T;
}

/// Glues V and W: solves P U = -(P T - chi P V - (1 - chi) P W) on the domain
/// and returns T + U. Fluxes are measured through the cutoff's own transition
/// shell, so the solve's kernel coefficients equal minus the flux mismatch.
/// A mismatch is reported, not fatal.
inline GluingResult glue(const GluingProblem& p, const SolveConfig& cfg = {}) {
  require(p.chi.transition_width() >= 4.0 * p.domain->grid().h_max(), ErrorCode::IndicatorTooSharp,
          "cutoff transition must span at least four cells");
  const TensorField T = interpolate(p);

  GluingReport report;
  report.flux_V = flux_functionals(p.V, p.basis, p.chi);
  report.flux_W = flux_functionals(p.W, p.basis, p.chi);
  for (std::size_t i = 0; i < p.basis.size(); ++i)
    report.flux_mismatch.push_back(report.flux_W.coefficients[i] - report.flux_V.coefficients[i]);

  TensorField f = detail::cutoff_commutator(p, T);
  f *= -1.0;
  f = f.restricted_to(p.domain);
  SolveResult solved = detail::solve_normal_equations(p.basis, f, cfg);
  solved.report.forward_residual = detail::relative_misfit(apply_forward(p.op, solved.U), f);
  detail::throw_if_unconverged(solved.report);

  GluingResult out{T, solved.U, {}};
  for (int c = 0; c < out.glued.components(); ++c)
    for (std::size_t cell = 0; cell < out.glued.cell_count(); ++cell)
      if (p.domain->inside(cell)) out.glued.at(c, cell) += solved.U.at(c, cell);

  TensorField div = apply_forward(p.op, out.glued);
  div.mask_with(p.domain->mask());
  report.glued_divergence_residual = l2_norm(div);
  report.solve_report = solved.report;
  out.report = std::move(report);
  return out;
}

/// Glue with the zero solution outside: a compactly supported cut-off of V.
inline GluingResult truncate(const OperatorSpec& op, const TensorField& V, std::vector<std::uint8_t> v_defined,
                             std::shared_ptr<const Domain> domain, CutoffField chi, const WeightConfig& wcfg,
                             const SolveConfig& scfg = {}) {
  TensorField W = TensorField::ambient(V.grid_ptr(), V.bundle());
  auto w_defined = all_defined(V.grid());
  return glue(make_gluing_problem(op, std::move(domain), V, std::move(v_defined), W, std::move(w_defined), std::move(chi), wcfg),
              scfg);
}

struct FamilyMember {
  TensorField field;
  std::vector<std::uint8_t> defined;
};

struct FluxMatch {
  std::vector<double> parameters;
  GluingProblem problem;  ///< W replaced by sum c_k W_k
  double residual = 0.0;  ///< ||M c - flux_V|| / ||flux_V||
  double condition = 0.0;
};

/// Least-squares choice of the outer solution within a finite family so that
/// its fluxes match those of V.
inline FluxMatch flux_match(const GluingProblem& p, const std::vector<FamilyMember>& family) {
  require(!family.empty(), ErrorCode::InvalidArgument, "flux family is empty");
  require(family.size() >= p.basis.size(), ErrorCode::InvalidArgument,
          "flux family must have at least as many members as the kernel basis");
  const auto rows = static_cast<Eigen::Index>(p.basis.size());
  const auto cols = static_cast<Eigen::Index>(family.size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index k = 0; k < cols; ++k) {
    const FluxReport fr = flux_functionals(family[k].field.as_ambient(), p.basis, p.chi);
    for (Eigen::Index i = 0; i < rows; ++i) m(i, k) = fr.coefficients[i];
  }
  const FluxReport fv = flux_functionals(p.V, p.basis, p.chi);
  Eigen::VectorXd target(rows);
  for (Eigen::Index i = 0; i < rows; ++i) target(i) = fv.coefficients[i];

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double smax = sv(0);
  const double smin = sv(sv.size() - 1);
  const double condition = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
  require(smax > 0.0 && condition <= 1e12, ErrorCode::FamilyDegenerate,
          "flux matrix of the family is rank-deficient (condition " + std::to_string(condition) + ")");
  const Eigen::VectorXd c = svd.solve(target);

  FluxMatch out{{}, p, 0.0, condition};
  out.parameters.assign(c.data(), c.data() + c.size());
  out.problem.W = TensorField::ambient(p.V.grid_ptr(), p.V.bundle());
  out.problem.w_defined = all_defined(p.V.grid());
  for (Eigen::Index k = 0; k < cols; ++k) {
    out.problem.W.axpy(c(k), family[k].field.as_ambient());
    for (std::size_t cell = 0; cell < out.problem.w_defined.size(); ++cell)
      out.problem.w_defined[cell] = out.problem.w_defined[cell] && family[k].defined[cell];
  }
  const double tn = target.norm();
  out.residual = tn > 0.0 ? (m * c - target).norm() / tn : (m * c).norm();
  return out;
}

}  // namespace cglue
