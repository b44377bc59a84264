#pragma once

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "cglue/kernel.hpp"

namespace cglue {

enum class Preconditioner { None, Diagonal };

constexpr std::string_view to_string(Preconditioner p) { return p == Preconditioner::None ? "NONE" : "DIAGONAL"; }

inline Preconditioner preconditioner_from_string(std::string_view name) {
  if (name == "NONE") return Preconditioner::None;
  if (name == "DIAGONAL") return Preconditioner::Diagonal;
  fail(ErrorCode::InvalidArgument, "unknown preconditioner '" + std::string(name) + "'");
}

struct IterationInfo {
  long iteration;
  double rel_residual;
  double energy;  ///< 1/2 <L u, u>_psi - <g, u>_psi at the current iterate
};

struct SolveConfig {
  double rel_tolerance = 1e-8;
  long max_iterations = 0;  ///< 0 selects 10x the unknown count
  Preconditioner preconditioner = Preconditioner::Diagonal;
  std::function<void(const IterationInfo&)> observer;

  void validate() const {
    require(rel_tolerance > 0.0 && rel_tolerance < 1.0, ErrorCode::InvalidArgument, "rel_tolerance must lie in (0, 1)");
    require(max_iterations >= 0, ErrorCode::InvalidArgument, "max_iterations must be non-negative");
  }
};

struct SolveReport {
  long iterations = 0;
  double final_rel_residual = 0.0;
  std::vector<double> kernel_coefficients;
  double forward_residual = 0.0;
  double decay_slope = std::numeric_limits<double>::quiet_NaN();
  bool converged = true;
};

class NoConvergenceError : public Error {
 public:
  NoConvergenceError(SolveReport report, const std::string& what)
      : Error(ErrorCode::NoConvergence, what), report_(std::move(report)) {}
  const SolveReport& report() const noexcept { return report_; }

 private:
  SolveReport report_;
};

class IncompatibleSourceError : public Error {
 public:
  IncompatibleSourceError(std::vector<double> pairings, const std::string& what)
      : Error(ErrorCode::IncompatibleSource, what), pairings_(std::move(pairings)) {}
  /// Unweighted pairings <f, v_i> with every basis member.
  const std::vector<double>& pairings() const noexcept { return pairings_; }

 private:
  std::vector<double> pairings_;
};

struct SolveResult {
  TensorField u;  ///< minimiser, psi-orthogonal to the kernel
  TensorField U;  ///< psi^2 phi^2 P* u, zero off the active cells
  SolveReport report;
};

namespace detail {

inline double dot(const TensorField& a, const TensorField& b) {
  double s = 0.0;
  const auto& x = a.values();
  const auto& y = b.values();
  for (std::size_t k = 0; k < x.size(); ++k) s += x[k] * y[k];
  return s;
}

/// Euclidean form A = P diag(psi^2 phi^2) P* on a set of unknown cells.
/// The psi-weighted normal operator is L = psi^-2 A, so psi-CG on L is plain CG on A.
class NormalSystem {
 public:
  NormalSystem(const OperatorSpec& op, const WeightField& weights, std::vector<std::uint8_t> unknowns,
               std::vector<TensorField> basis)
      : op_(op), weights_(weights), unknowns_(std::move(unknowns)), basis_(std::move(basis)) {
    const std::size_t size = weights_.domain().size();
    coef_.assign(size, 0.0);
    for (std::size_t cell = 0; cell < size; ++cell) {
      if (weights_.active(cell)) coef_[cell] = weights_.psi2(cell) * weights_.phi(cell) * weights_.phi(cell);
    }
    vol_ = weights_.domain().grid().cell_volume();
    build_twisted_space();
    count_ = 0;
    for (auto flag : unknowns_) count_ += flag;
    count_ *= op_.adjoint_domain().components();
  }

  std::size_t unknown_count() const noexcept { return count_; }
  const std::vector<std::uint8_t>& unknowns() const noexcept { return unknowns_; }
  const std::vector<TensorField>& basis() const noexcept { return basis_; }
  const WeightField& weights() const noexcept { return weights_; }

  TensorField physical(const TensorField& u) const {
    TensorField U = apply_adjoint(op_, u);
    for (int c = 0; c < U.components(); ++c)
      for (std::size_t cell = 0; cell < U.cell_count(); ++cell) U.at(c, cell) *= coef_[cell];
    return U;
  }

  TensorField apply(const TensorField& u) const {
    TensorField y = apply_forward(op_, physical(u));
    y.mask_with(unknowns_);
    return y;
  }

  /// psi-orthogonal projection off the discrete null space of P*. Centred
  /// differences see the grid as 2^n interleaved sublattices, so besides
  /// the kernel members v it contains the parity-twisted fields
  /// eps_sigma(cell) v(R_sigma y), eps_sigma = (-1)^(sigma . index) and
  /// R_sigma reflecting the axes in sigma. These vanish under P* away from
  /// the edge of the active set and are projected out alongside v.
  void project(TensorField& x) const {
    if (!twisted_.empty()) subtract(x, solve_twisted(pairings(x, true)), false);
    x.mask_with(unknowns_);
  }
  /// Transpose of project. Returns the unweighted pairings (y, v_i) taken
  /// before the projection.
  std::vector<double> project_transpose(TensorField& y) const {
    y.mask_with(unknowns_);
    std::vector<double> coefs(basis_.size());
    for (std::size_t i = 0; i < basis_.size(); ++i) coefs[i] = dot(y, basis_[i]) * vol_;
    if (!twisted_.empty()) subtract(y, solve_twisted(pairings(y, false)), true);
    y.mask_with(unknowns_);
    return coefs;
  }

  /// Inverse of the exact diagonal of A (DIAGONAL) or psi^-2 (NONE); zero freezes an unknown.
  TensorField inverse_diagonal(Preconditioner kind, const TensorField& like) const {
    TensorField dinv = like.zeros_like();
    const Grid& grid = like.grid();
    const auto& cells = grid.cells();
    const auto& stride = grid.stride();
    const auto& h = grid.h();
    const auto terms = adjoint_terms(op_);
    const BundleType fb = op_.forward_domain();
    const int nb = fb.components();
    const auto g = fb.metric();
    // q[a][i] = sum_{b,b'} C[b][a][i] g_bb' C[b'][a][i]
    std::vector<std::array<double, 3>> q(op_.adjoint_domain().components(), {0.0, 0.0, 0.0});
    for (const auto& t1 : terms)
      for (const auto& t2 : terms)
        if (t1.in_comp == t2.in_comp && t1.axis == t2.axis) q[t1.in_comp][t1.axis] += t1.coef * g[t1.out_comp * nb + t2.out_comp] * t2.coef;

    for (std::size_t cell = 0; cell < grid.size(); ++cell) {
      if (!unknowns_[cell]) continue;
      const CellIndex idx = grid.unravel(cell);
      for (int a = 0; a < dinv.components(); ++a) {
        double d = 0.0;
        if (kind == Preconditioner::Diagonal) {
          for (int i = 0; i < grid.dim(); ++i) {
            const double up = idx[i] + 1 < cells[i] ? coef_[cell + stride[i]] : 0.0;
            const double down = idx[i] > 0 ? coef_[cell - stride[i]] : 0.0;
            d += (up + down) * q[a][i] / (4.0 * h[i] * h[i]);
          }
        } else {
          d = weights_.psi2(cell);
        }
        dinv.at(a, cell) = d > 1e-290 ? 1.0 / d : 0.0;
      }
    }
    return dinv;
  }

 private:
  OperatorSpec op_;
  const WeightField& weights_;
  std::vector<std::uint8_t> unknowns_;
  std::vector<TensorField> basis_;
  std::vector<double> coef_;
  double vol_ = 1.0;
  std::size_t count_ = 0;

  // Twisted null space, stored as an orthonormal basis `span_` of the
  // reflected generators v_j o R_sigma plus coordinates coord_(t, d) of
  // twisted member t = (sigma, j) in that basis.
  std::vector<std::uint8_t> parity_;
  int blocks_ = 1;
  std::vector<TensorField> twisted_;
  Eigen::MatrixXd coord_;
  Eigen::MatrixXd sign_;  ///< sign_(t, k) = eps_sigma(t) on sublattice k
  Eigen::MatrixXd gram_pinv_;

  using Blocks = std::vector<Eigen::VectorXd>;

  void build_twisted_space() {
    if (basis_.empty()) return;
    const Domain& domain = weights_.domain();
    const Grid& grid = domain.grid();
    const int n = grid.dim();
    blocks_ = 1 << n;
    parity_.assign(grid.size(), 0);
    for (std::size_t cell = 0; cell < grid.size(); ++cell) {
      const CellIndex idx = grid.unravel(cell);
      int k = 0;
      for (int i = 0; i < n; ++i) k |= (idx[i] & 1) << i;
      parity_[cell] = static_cast<std::uint8_t>(k);
    }

    const auto gens = kernel_generators(op_);
    const Point centre = shape_center(domain.shape());
    const double scale = outer_radius(domain.shape());
    const auto members = static_cast<Eigen::Index>(blocks_ * gens.size());
    std::vector<Eigen::VectorXd> raw_coords;
    sign_.resize(members, blocks_);
    Eigen::Index t = 0;
    for (int sigma = 0; sigma < blocks_; ++sigma) {
      for (const auto& gen : gens) {
        TensorField f = TensorField::on_domain(weights_.domain_ptr(), op_.adjoint_domain());
        for (std::size_t cell = 0; cell < grid.size(); ++cell) {
          if (!unknowns_[cell]) continue;
          const Point p = grid.center(cell);
          Point y{};
          for (int a = 0; a < n; ++a) y[a] = ((sigma >> a) & 1 ? -1.0 : 1.0) * (p[a] - centre[a]) / scale;
          const Point v = gen(y);
          for (int c = 0; c < f.components(); ++c) f.at(c, cell) = v[c];
        }
        // Gram-Schmidt against the span found so far; keep what is new.
        const double norm0 = std::sqrt(dot(f, f));
        Eigen::VectorXd coords = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(twisted_.size()) + 1);
        for (int pass = 0; pass < 2; ++pass)
          for (std::size_t d = 0; d < twisted_.size(); ++d) {
            const double c = dot(f, twisted_[d]);
            coords(static_cast<Eigen::Index>(d)) += c;
            f.axpy(-c, twisted_[d]);
          }
        const double rest = std::sqrt(dot(f, f));
        if (norm0 > 0.0 && rest > 1e-9 * norm0) {
          f *= 1.0 / rest;
          coords(static_cast<Eigen::Index>(twisted_.size())) = rest;
          twisted_.push_back(std::move(f));
        } else {
          coords.conservativeResize(static_cast<Eigen::Index>(twisted_.size()));
        }
        raw_coords.push_back(std::move(coords));
        for (int k = 0; k < blocks_; ++k) sign_(t, k) = std::popcount(static_cast<unsigned>(sigma & k)) % 2 ? -1.0 : 1.0;
        ++t;
      }
    }
    const auto dim = static_cast<Eigen::Index>(twisted_.size());
    coord_ = Eigen::MatrixXd::Zero(members, dim);
    for (Eigen::Index m = 0; m < members; ++m) coord_.row(m).head(raw_coords[m].size()) = raw_coords[m].transpose();

    // psi-Gram of the twisted members from per-sublattice Grams of the span.
    std::vector<Eigen::MatrixXd> local(blocks_, Eigen::MatrixXd::Zero(dim, dim));
    const int nc = twisted_.front().components();
    for (std::size_t cell = 0; cell < grid.size(); ++cell) {
      if (!unknowns_[cell]) continue;
      const double w = weights_.psi2(cell) * vol_;
      if (w == 0.0) continue;
      auto& g = local[parity_[cell]];
      for (Eigen::Index i = 0; i < dim; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) {
          double s = 0.0;
          for (int c = 0; c < nc; ++c) s += twisted_[i].at(c, cell) * twisted_[j].at(c, cell);
          g(i, j) += w * s;
        }
    }
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(members, members);
    for (int k = 0; k < blocks_; ++k) {
      const Eigen::MatrixXd g = local[k].selfadjointView<Eigen::Lower>();
      const Eigen::MatrixXd sc = sign_.col(k).asDiagonal() * coord_;
      gram += sc * g * sc.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    const Eigen::VectorXd& ev = eig.eigenvalues();
    const double cut = 1e-13 * ev.cwiseAbs().maxCoeff();
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(members);
    for (Eigen::Index i = 0; i < members; ++i)
      if (ev(i) > cut) inv(i) = 1.0 / ev(i);
    gram_pinv_ = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
  }

  /// Per-sublattice pairings with the span basis, psi-weighted or unweighted.
  Blocks pairings(const TensorField& x, bool weighted) const {
    const auto dim = static_cast<Eigen::Index>(twisted_.size());
    Blocks p(blocks_, Eigen::VectorXd::Zero(dim));
    const int nc = x.components();
    for (std::size_t cell = 0; cell < x.cell_count(); ++cell) {
      if (!unknowns_[cell]) continue;
      const double w = weighted ? weights_.psi2(cell) * vol_ : 1.0;
      if (w == 0.0) continue;
      auto& pk = p[parity_[cell]];
      for (Eigen::Index d = 0; d < dim; ++d) {
        double s = 0.0;
        for (int c = 0; c < nc; ++c) s += twisted_[d].at(c, cell) * x.at(c, cell);
        pk(d) += w * s;
      }
    }
    return p;
  }

  /// Coefficients of the span basis on each sublattice for the removed component.
  Blocks solve_twisted(const Blocks& p) const {
    Eigen::VectorXd b = Eigen::VectorXd::Zero(coord_.rows());
    for (int k = 0; k < blocks_; ++k) b += sign_.col(k).asDiagonal() * (coord_ * p[k]);
    const Eigen::VectorXd a = gram_pinv_ * b;
    Blocks c(blocks_);
    for (int k = 0; k < blocks_; ++k) c[k] = coord_.transpose() * (sign_.col(k).asDiagonal() * a);
    return c;
  }

  /// x -= sum_d c_k[d] w_d on each sublattice k, times psi^2 vol when `weighted`.
  void subtract(TensorField& x, const Blocks& c, bool weighted) const {
    const auto dim = static_cast<Eigen::Index>(twisted_.size());
    const int nc = x.components();
    for (std::size_t cell = 0; cell < x.cell_count(); ++cell) {
      if (!unknowns_[cell]) continue;
      const double w = weighted ? weights_.psi2(cell) * vol_ : 1.0;
      if (w == 0.0) continue;
      const auto& ck = c[parity_[cell]];
      for (int comp = 0; comp < nc; ++comp) {
        double s = 0.0;
        for (Eigen::Index d = 0; d < dim; ++d) s += ck(d) * twisted_[d].at(comp, cell);
        x.at(comp, cell) -= w * s;
      }
    }
  }
};

struct CgOutcome {
  TensorField x;
  std::vector<double> coefficients;
  long iterations = 0;
  double rel_residual = 0.0;
  bool converged = true;
};

/// Projected preconditioned CG for A x = rhs on the complement of the kernel basis.
inline CgOutcome projected_cg(const NormalSystem& sys, TensorField rhs, const SolveConfig& cfg) {
  cfg.validate();
  rhs.mask_with(sys.unknowns());
  const double full_norm = std::sqrt(dot(rhs, rhs));
  CgOutcome out{rhs.zeros_like(), sys.project_transpose(rhs), 0, 0.0, true};
  const double norm0 = std::sqrt(dot(rhs, rhs));
  if (norm0 == 0.0 || norm0 <= 1e-12 * full_norm) return out;

  const long max_it = cfg.max_iterations > 0 ? cfg.max_iterations : static_cast<long>(10 * sys.unknown_count()) + 10;
  const TensorField dinv = sys.inverse_diagonal(cfg.preconditioner, rhs);
  auto precondition = [&](const TensorField& r) {
    TensorField z = r;
    for (std::size_t k = 0; k < z.values().size(); ++k) z.values()[k] *= dinv.values()[k];
    sys.project(z);
    return z;
  };

  TensorField& x = out.x;
  TensorField r = rhs;
  TensorField z = precondition(r);
  TensorField p = z;
  double rz = dot(r, z);
  out.converged = false;
  out.rel_residual = 1.0;
  for (long it = 1; it <= max_it; ++it) {
    TensorField q = sys.apply(p);
    const double pq = dot(p, q);
    if (!(pq > 0.0) || !(rz > 0.0)) break;
    const double alpha = rz / pq;
    x.axpy(alpha, p);
    sys.project_transpose(q);
    r.axpy(-alpha, q);
    out.iterations = it;
    out.rel_residual = std::sqrt(dot(r, r)) / norm0;
    if (cfg.observer) {
      const double vol = rhs.grid().cell_volume();
      cfg.observer({it, out.rel_residual, -0.5 * (dot(x, r) + dot(rhs, x)) * vol});
    }
    if (out.rel_residual <= cfg.rel_tolerance) {
      out.converged = true;
      break;
    }
    z = precondition(r);
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t k = 0; k < p.values().size(); ++k) p.values()[k] = z.values()[k] + beta * p.values()[k];
    sys.project(p);
  }
  sys.project(x);
  return out;
}

inline std::vector<std::uint8_t> active_mask(const WeightField& w) { return w.active(); }

inline double relative_misfit(const TensorField& a, const TensorField& b) {
  const double nb = l2_norm(b);
  TensorField d = a;
  d -= b;
  const double nd = l2_norm(d);
  return nb > 0.0 ? nd / nb : nd;
}

/// Shared path of the public solves: psi2_rhs is the Euclidean right-hand side psi^2 g.
inline SolveResult solve_normal_equations(const KernelBasis& basis, const TensorField& psi2_rhs, const SolveConfig& cfg) {
  const WeightField& weights = *basis.weights;
  NormalSystem sys(basis.op, weights, active_mask(weights), basis.members);
  TensorField rhs = TensorField::on_domain(weights.domain_ptr(), basis.op.adjoint_domain());
  rhs.values() = psi2_rhs.values();
  CgOutcome cg = projected_cg(sys, rhs, cfg);

  SolveResult result{cg.x, sys.physical(cg.x), {}};
  result.report.iterations = cg.iterations;
  result.report.final_rel_residual = cg.rel_residual;
  result.report.kernel_coefficients = cg.coefficients;
  result.report.converged = cg.converged;

  TensorField target = rhs;
  target.mask_with(sys.unknowns());
  sys.project_transpose(target);
  result.report.forward_residual = relative_misfit(apply_forward(basis.op, result.U), target);
  return result;
}

inline void throw_if_unconverged(const SolveReport& report) {
  if (!report.converged)
    throw NoConvergenceError(report, "CG stopped after " + std::to_string(report.iterations) +
                                         " iterations at relative residual " + std::to_string(report.final_rel_residual));
}

}  // namespace detail

/// L_h u = psi^-2 P psi^2 phi^2 P* u on active cells, zero elsewhere.
inline TensorField apply_normal_operator(const OperatorSpec& op, const WeightField& weights, const TensorField& u) {
  detail::NormalSystem sys(op, weights, weights.active(), {});
  TensorField y = sys.apply(u);
  for (int c = 0; c < y.components(); ++c)
    for (std::size_t cell = 0; cell < y.cell_count(); ++cell)
      y.at(c, cell) = weights.active(cell) ? y.at(c, cell) / weights.psi2(cell) : 0.0;
  return y;
}

/// Minimises 1/2 |phi P* u|^2_psi - <g, u>_psi over the psi-complement of the kernel,
/// i.e. solves pi L u = pi g. kernel_coefficients are <g, v_i>_psi.
inline SolveResult solve_projected(const KernelBasis& basis, const TensorField& g, const SolveConfig& cfg = {}) {
  require(g.bundle() == basis.op.adjoint_domain(), ErrorCode::BundleMismatch, "right-hand side must lie in the domain of P*");
  const WeightField& w = *basis.weights;
  TensorField rhs = g;
  for (int c = 0; c < rhs.components(); ++c)
    for (std::size_t cell = 0; cell < rhs.cell_count(); ++cell) rhs.at(c, cell) *= w.psi2(cell);
  SolveResult result = detail::solve_normal_equations(basis, rhs, cfg);
  detail::throw_if_unconverged(result.report);
  return result;
}

/// Unweighted pairings (f, v_i) against the basis.
inline std::vector<double> kernel_pairings(const TensorField& f, const KernelBasis& basis) {
  std::vector<double> out;
  for (const auto& v : basis.members) out.push_back(l2_inner(f, v));
  return out;
}

/// f - sum (f, v_i) psi^2 v_i: the nearest source with vanishing unweighted
/// pairings. Sampled closed-form sources only pair with the kernel at the
/// quadrature error, which this removes.
inline TensorField compatible_part(const TensorField& f, const KernelBasis& basis) {
  TensorField out = f;
  const auto pairings = kernel_pairings(f, basis);
  for (std::size_t i = 0; i < basis.size(); ++i) {
    const TensorField& v = basis.members[i];
    for (int c = 0; c < out.components(); ++c)
      for (std::size_t cell = 0; cell < out.cell_count(); ++cell)
        out.at(c, cell) -= pairings[i] * basis.weights->psi2(cell) * v.at(c, cell);
  }
  return out;
}

inline double decay_fit(const TensorField& U, const WeightConfig& cfg);

/// Solves P U = f with U supported in the closure of the domain, f compatible with the kernel.
inline SolveResult solve_compact_support(const KernelBasis& basis, const TensorField& f, const SolveConfig& cfg = {}) {
  require(f.bundle() == basis.op.adjoint_domain(), ErrorCode::BundleMismatch, "source must lie in the codomain of P");
  const double fn = l2_norm(f);
  const auto pairings = kernel_pairings(f, basis);
  for (std::size_t i = 0; i < pairings.size(); ++i) {
    const double tol = 1e-8 * fn * l2_norm(basis.members[i]);
    if (std::abs(pairings[i]) > tol)
      throw IncompatibleSourceError(pairings, "source pairs with kernel member " + std::to_string(i) + " to " +
                                                  std::to_string(pairings[i]) + " (tolerance " + std::to_string(tol) + ")");
  }
  SolveResult result = detail::solve_normal_equations(basis, f, cfg);
  result.report.forward_residual = detail::relative_misfit(apply_forward(basis.op, result.U), f);
  try {
    result.report.decay_slope = decay_fit(result.U, basis.weights->config());
  } catch (const Error& e) {
    if (e.code() != ErrorCode::InsufficientDecayData) throw;
  }
  detail::throw_if_unconverged(result.report);
  return result;
}

/// Fitted rate s in |U| ~ x^(2(a-n+m)) e^(-s/x), from the per-level maxima of |U|
/// in bins of width h_min of the distance function.
inline double decay_fit(const TensorField& U, const WeightConfig& cfg) {
  require(U.domain() != nullptr, ErrorCode::DomainMismatch, "decay_fit needs a domain-bound field");
  const Domain& dom = *U.domain();
  const double h = dom.grid().h_min();
  const int n = dom.dim();
  std::vector<double> level_max, level_x;
  for (std::size_t cell = 0; cell < U.cell_count(); ++cell) {
    if (!dom.inside(cell)) continue;
    double m = 0.0;
    for (int c = 0; c < U.components(); ++c) m = std::max(m, std::abs(U.at(c, cell)));
    const auto level = static_cast<std::size_t>(dom.x(cell) / h);
    if (level >= level_max.size()) {
      level_max.resize(level + 1, 0.0);
      level_x.resize(level + 1, 0.0);
    }
    if (m > level_max[level]) {
      level_max[level] = m;
      level_x[level] = dom.x(cell);
    }
  }
  const double exponent = 2.0 * (cfg.a - n + cfg.m);
  std::vector<double> ts, ys;
  for (std::size_t k = 0; k < level_max.size(); ++k) {
    if (!(level_max[k] > 1e-250)) continue;
    ts.push_back(-1.0 / level_x[k]);
    ys.push_back(std::log(level_max[k]) - exponent * std::log(level_x[k]));
  }
  require(ts.size() >= 4, ErrorCode::InsufficientDecayData,
          "only " + std::to_string(ts.size()) + " usable distance levels for the decay fit");
  double tm = 0.0, ym = 0.0;
  for (std::size_t k = 0; k < ts.size(); ++k) {
    tm += ts[k];
    ym += ys[k];
  }
  tm /= ts.size();
  ym /= ts.size();
  double stt = 0.0, sty = 0.0;
  for (std::size_t k = 0; k < ts.size(); ++k) {
    stt += (ts[k] - tm) * (ts[k] - tm);
    sty += (ts[k] - tm) * (ys[k] - ym);
  }
  return sty / stt;
}

struct ApiEstimate {
  double lambda = 0.0;             ///< smallest Rayleigh quotient seen
  std::vector<double> quotients;   ///< per inverse iteration
  std::size_t collar_cells = 0;
};

/// Smallest ||phi P* u||^2_psi / ||u||^2_psi over u supported in {x < collar_width}
/// and psi-orthogonal to the kernel restricted there, by inverse iteration.
inline ApiEstimate estimate_api_constant_detailed(const OperatorSpec& op, std::shared_ptr<const Domain> domain,
                                                  const WeightConfig& cfg, double collar_width, int sample_count,
                                                  std::uint64_t seed = 7) {
  op.validate();
  require(sample_count >= 20, ErrorCode::InvalidArgument, "sample_count must be at least 20");
  auto weights = std::make_shared<const WeightField>(domain, cfg);
  std::vector<std::uint8_t> collar(domain->size(), 0);
  std::size_t collar_cells = 0;
  for (std::size_t cell = 0; cell < collar.size(); ++cell)
    if (weights->active(cell) && domain->x(cell) < collar_width) {
      collar[cell] = 1;
      ++collar_cells;
    }
  require(collar_cells > 0, ErrorCode::EmptyCollar, "no active cells closer than the collar width to the boundary");

  // kernel members restricted to the collar, re-orthonormalised there
  const KernelBasis full = build_kernel_basis(op, weights);
  std::vector<TensorField> restricted;
  for (const auto& v : full.members) {
    TensorField r = v;
    r.mask_with(collar);
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& prev : restricted) r.axpy(-weighted_inner(r, prev, *weights), prev);
    const double nrm = psi_norm(r, *weights);
    if (nrm > 1e-8 * psi_norm(v, *weights)) {
      r *= 1.0 / nrm;
      restricted.push_back(std::move(r));
    }
  }
  detail::NormalSystem sys(op, *weights, collar, restricted);

  TensorField x = TensorField::on_domain(domain, op.adjoint_domain());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (double& v : x.values()) v = uni(rng);
  sys.project(x);

  auto psi2_times = [&](const TensorField& f) {
    TensorField out = f;
    for (int c = 0; c < out.components(); ++c)
      for (std::size_t cell = 0; cell < out.cell_count(); ++cell) out.at(c, cell) *= weights->psi2(cell);
    return out;
  };

  ApiEstimate est;
  est.collar_cells = collar_cells;
  est.lambda = std::numeric_limits<double>::infinity();
  SolveConfig inner;
  inner.rel_tolerance = 1e-8;

  // Rayleigh-Ritz on span{x, A^-1 psi^2 x, previous x}: one inner solve per
  // sample, far faster than plain inverse iteration when the gap is small.
  std::vector<TensorField> prev;
  for (int sample = 0; sample < sample_count; ++sample) {
    std::vector<TensorField> span{x, detail::projected_cg(sys, psi2_times(x), inner).x};
    for (auto& p : prev) span.push_back(std::move(p));
    const auto k = static_cast<Eigen::Index>(span.size());
    std::vector<TensorField> images, masses;
    for (const auto& v : span) {
      images.push_back(sys.apply(v));
      masses.push_back(psi2_times(v));
    }
    Eigen::MatrixXd a(k, k), m(k, k);
    for (Eigen::Index i = 0; i < k; ++i)
      for (Eigen::Index j = 0; j <= i; ++j) {
        a(i, j) = a(j, i) = 0.5 * (detail::dot(span[i], images[j]) + detail::dot(span[j], images[i]));
        m(i, j) = m(j, i) = detail::dot(span[i], masses[j]);
      }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> meig(m);
    const double top = meig.eigenvalues().maxCoeff();
    require(top > 0.0, ErrorCode::EmptyCollar, "collar carries no weighted mass");
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < k; ++i)
      if (meig.eigenvalues()(i) > 1e-12 * top) keep.push_back(i);
    Eigen::MatrixXd whiten(k, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j)
      whiten.col(j) = meig.eigenvectors().col(keep[j]) / std::sqrt(meig.eigenvalues()(keep[j]));
    const Eigen::MatrixXd reduced = whiten.transpose() * a * whiten;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (reduced + reduced.transpose()));
    const Eigen::VectorXd coef = whiten * eig.eigenvectors().col(0);

    TensorField next = x.zeros_like();
    for (Eigen::Index i = 0; i < k; ++i) next.axpy(coef(i), span[i]);
    sys.project(next);
    const double mass = detail::dot(next, psi2_times(next));
    next *= 1.0 / std::sqrt(mass);
    const double quotient = detail::dot(next, sys.apply(next));
    est.quotients.push_back(quotient);
    est.lambda = std::min(est.lambda, quotient);
    prev.clear();
    prev.push_back(std::move(x));
    x = std::move(next);
  }
  return est;
}

inline double estimate_api_constant(const OperatorSpec& op, std::shared_ptr<const Domain> domain, const WeightConfig& cfg,
                                    double collar_width, int sample_count) {
  return estimate_api_constant_detailed(op, std::move(domain), cfg, collar_width, sample_count).lambda;
}

}  // namespace cglue
