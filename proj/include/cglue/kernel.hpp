#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cglue/norms.hpp"

namespace cglue {

/// psi-orthonormal basis of the kernel of P* on a domain.
struct KernelBasis {
  OperatorSpec op;
  std::shared_ptr<const WeightField> weights;
  std::vector<TensorField> members;
  Eigen::MatrixXd gram_log;  ///< psi-Gram matrix of the raw generators

  std::size_t size() const noexcept { return members.size(); }
};

/// Analytic kernel dimension on a connected flat domain.
inline int analytic_kernel_dim(const OperatorSpec& op) {
  switch (op.kind) {
    case OperatorKind::Grad: return 1;
    case OperatorKind::Killing: return op.n * (op.n + 1) / 2;
    case OperatorKind::ConfKilling: return (op.n + 1) * (op.n + 2) / 2;
  }
  return 0;
}

namespace detail {

using VectorGenerator = std::function<Point(const Point&)>;

/// Flat-space generators in coordinates y = (p - centre) / scale.
inline std::vector<VectorGenerator> kernel_generators(const OperatorSpec& op) {
  std::vector<VectorGenerator> gens;
  const int n = op.n;
  if (op.kind == OperatorKind::Grad) {
    gens.push_back([](const Point&) { return Point{1.0, 0.0, 0.0}; });
    return gens;
  }
  for (int k = 0; k < n; ++k)
    gens.push_back([k](const Point&) {
      Point e{};
      e[k] = 1.0;
      return e;
    });
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      gens.push_back([i, j](const Point& y) {
        Point e{};
        e[j] = y[i];
        e[i] = -y[j];
        return e;
      });
  if (op.kind == OperatorKind::ConfKilling) {
    gens.push_back([](const Point& y) { return y; });
    for (int k = 0; k < n; ++k)
      gens.push_back([k, n](const Point& y) {
        double r2 = 0.0;
        for (int a = 0; a < n; ++a) r2 += y[a] * y[a];
        Point e{};
        for (int a = 0; a < n; ++a) e[a] = 2.0 * y[k] * y[a];
        e[k] -= r2;
        return e;
      });
  }
  return gens;
}

inline TensorField sample_generator(const OperatorSpec& op, const std::shared_ptr<const Domain>& domain,
                                    const VectorGenerator& gen) {
  TensorField f = TensorField::on_domain(domain, op.adjoint_domain());
  const Point c = shape_center(domain->shape());
  const double scale = outer_radius(domain->shape());
  for (std::size_t cell = 0; cell < f.cell_count(); ++cell) {
    if (!domain->inside(cell)) continue;
    const Point p = domain->grid().center(cell);
    Point y{};
    for (int a = 0; a < op.n; ++a) y[a] = (p[a] - c[a]) / scale;
    const Point v = gen(y);
    for (int comp = 0; comp < f.components(); ++comp) f.at(comp, cell) = v[comp];
  }
  return f;
}

inline Eigen::MatrixXd psi_gram(const std::vector<TensorField>& fields, const WeightField& weights) {
  const auto k = static_cast<Eigen::Index>(fields.size());
  Eigen::MatrixXd g(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) g(i, j) = g(j, i) = weighted_inner(fields[i], fields[j], weights);
  return g;
}

/// Modified Gram-Schmidt in the psi-pairing with one re-orthogonalisation pass.
inline void orthonormalize(std::vector<TensorField>& fields, const WeightField& weights) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t j = 0; j < i; ++j) fields[i].axpy(-weighted_inner(fields[i], fields[j], weights), fields[j]);
    const double nrm = psi_norm(fields[i], weights);
    require(nrm > 0.0, ErrorCode::DegenerateBasis, "kernel generator vanishes in the weighted norm");
    fields[i] *= 1.0 / nrm;
  }
}

inline void check_gram(const Eigen::MatrixXd& gram) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  require(hi > 0.0 && lo >= 1e-10 * hi, ErrorCode::DegenerateBasis,
          "kernel Gram matrix is numerically rank-deficient (min/max eigenvalue " + std::to_string(lo / hi) + ")");
}

}  // namespace detail

inline KernelBasis build_kernel_basis(const OperatorSpec& op, std::shared_ptr<const WeightField> weights) {
  op.validate();
  require(weights != nullptr, ErrorCode::InvalidArgument, "weights are null");
  require(op.n == weights->domain().dim(), ErrorCode::DomainMismatch, "operator and domain dimensions differ");
  KernelBasis basis{op, weights, {}, {}};
  for (const auto& gen : detail::kernel_generators(op))
    basis.members.push_back(detail::sample_generator(op, weights->domain_ptr(), gen));
  basis.gram_log = detail::psi_gram(basis.members, *weights);
  detail::check_gram(basis.gram_log);
  detail::orthonormalize(basis.members, *weights);
  return basis;
}

inline KernelBasis build_kernel_basis(const OperatorSpec& op, std::shared_ptr<const Domain> domain, const WeightConfig& cfg) {
  return build_kernel_basis(op, std::make_shared<const WeightField>(std::move(domain), cfg));
}

struct Projection {
  TensorField result;
  std::vector<double> coefficients;
};

/// f minus its psi-orthogonal projection onto the basis, with the coefficients removed.
inline Projection project_off(const TensorField& f, const KernelBasis& basis) {
  Projection p{f, std::vector<double>(basis.size(), 0.0)};
  if (!basis.members.empty()) basis.members.front().check_compatible(f);
  for (std::size_t i = 0; i < basis.size(); ++i) {
    p.coefficients[i] = weighted_inner(f, basis.members[i], *basis.weights);
  }
  for (std::size_t i = 0; i < basis.size(); ++i) p.result.axpy(-p.coefficients[i], basis.members[i]);
  // second sweep removes what rounding left behind, without touching the reported coefficients
  for (std::size_t i = 0; i < basis.size(); ++i)
    p.result.axpy(-weighted_inner(p.result, basis.members[i], *basis.weights), basis.members[i]);
  return p;
}

/// Counts eigenvalues below 10 h^2 of the weighted Rayleigh quotient
/// ||phi P* v||^2_psi / ||v||^2_psi on the span of the analytic generators
/// plus random smooth fields.
inline int numeric_kernel_dim(const OperatorSpec& op, std::shared_ptr<const Domain> domain, const WeightConfig& cfg,
                              int candidate_count, std::uint64_t seed = 20240601) {
  op.validate();
  const int dim = analytic_kernel_dim(op);
  require(candidate_count >= dim + 5, ErrorCode::InvalidArgument,
          "candidate_count must exceed the analytic dimension by at least 5");
  const WeightField weights(domain, cfg);

  std::vector<TensorField> cands;
  for (const auto& gen : detail::kernel_generators(op)) cands.push_back(detail::sample_generator(op, domain, gen));

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> wave(-3.0, 3.0), phase(0.0, 2.0 * M_PI), amp(-1.0, 1.0);
  const int comps = op.adjoint_domain().components();
  while (static_cast<int>(cands.size()) < candidate_count) {
    struct Mode {
      Point k;
      double phase, amp;
    };
    std::vector<std::vector<Mode>> modes(comps);
    for (auto& per_comp : modes)
      for (int t = 0; t < 3; ++t) {
        Mode m{{wave(rng), wave(rng), wave(rng)}, phase(rng), amp(rng)};
        per_comp.push_back(m);
      }
    cands.push_back(detail::sample_generator(op, domain, [&](const Point& y) {
      Point v{};
      for (int c = 0; c < comps; ++c)
        for (const auto& m : modes[c]) {
          double arg = m.phase;
          for (int a = 0; a < op.n; ++a) arg += m.k[a] * y[a];
          v[c] += m.amp * std::cos(arg);
        }
      return v;
    }));
  }

  const auto count = static_cast<Eigen::Index>(cands.size());
  std::vector<TensorField> images;
  for (const auto& c : cands) images.push_back(apply_adjoint(op, c));
  Eigen::MatrixXd mass = detail::psi_gram(cands, weights);
  Eigen::MatrixXd stiff(count, count);
  for (Eigen::Index i = 0; i < count; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) stiff(i, j) = stiff(j, i) = weighted_inner(images[i], images[j], weights, 1);

  // restrict to the numerically independent part of the span, then solve the reduced problem
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> mass_eig(mass);
  const double top = mass_eig.eigenvalues().maxCoeff();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < count; ++i)
    if (mass_eig.eigenvalues()(i) > 1e-12 * top) keep.push_back(i);
  Eigen::MatrixXd whiten(count, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j)
    whiten.col(j) = mass_eig.eigenvectors().col(keep[j]) / std::sqrt(mass_eig.eigenvalues()(keep[j]));
  const Eigen::MatrixXd reduced = whiten.transpose() * stiff * whiten;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (reduced + reduced.transpose()), Eigen::EigenvaluesOnly);

  const double h = domain->grid().h_max();
  const double tau = 10.0 * h * h;
  int near_kernel = 0;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i)
    if (eig.eigenvalues()(i) < tau) ++near_kernel;
  return near_kernel;
}

struct FluxReport {
  std::vector<double> coefficients;
  std::string surface_label;
};

/// Pairings of T against every basis member through the indicator's shell.
inline FluxReport flux_functionals(const TensorField& T, const KernelBasis& basis, const CutoffField& indicator) {
  FluxReport report;
  report.surface_label = "shell r in [" + std::to_string(indicator.inner) + ", " + std::to_string(indicator.outer) + "]";
  for (const auto& v : basis.members) report.coefficients.push_back(surface_flux(T, v, basis.op, indicator));
  return report;
}

}  // namespace cglue
