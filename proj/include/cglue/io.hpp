#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <string>

#include "json.hpp"

#include "cglue/gluing.hpp"

// Field dumps and flat JSON reports.

namespace cglue {

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// NaN and infinities become null; JSON has no spelling for them.
inline nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace detail

/// Header `n cells... h... bundle_kind component_count`, then one row
/// `i[,j[,k]],x,c0,c1,...` per cell in lexicographic order. Domain-bound
/// fields list the masked cells; grid-wide fields list every cell, with x
/// taken from `domain` where given (zero outside it).
inline void write_field_csv(std::ostream& os, const TensorField& f, const Domain* domain = nullptr) {
  const Grid& grid = f.grid();
  const int n = grid.dim();
  if (f.domain() != nullptr) domain = f.domain();
  os << n;
  for (int i = 0; i < n; ++i) os << ' ' << grid.cells()[i];
  for (int i = 0; i < n; ++i) os << ' ' << detail::format_double(grid.h()[i]);
  os << ' ' << to_string(f.bundle().kind) << ' ' << f.components() << '\n';
  for (std::size_t cell = 0; cell < grid.size(); ++cell) {
    const bool masked = domain != nullptr && domain->inside(cell);
    if (f.domain() != nullptr && !masked) continue;
    const CellIndex idx = grid.unravel(cell);
    for (int i = 0; i < n; ++i) os << idx[i] << ',';
    os << detail::format_double(masked ? domain->x(cell) : 0.0);
    for (int c = 0; c < f.components(); ++c) os << ',' << detail::format_double(f.at(c, cell));
    os << '\n';
  }
}

inline void write_field_csv(const std::string& path, const TensorField& f, const Domain* domain = nullptr) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::InvalidArgument, "cannot open " + path + " for writing");
  write_field_csv(out, f, domain);
}

inline nlohmann::json to_json(const SolveReport& r) {
  return {{"iterations", r.iterations},
          {"final_rel_residual", detail::number_or_null(r.final_rel_residual)},
          {"kernel_coefficients", r.kernel_coefficients},
          {"forward_residual", detail::number_or_null(r.forward_residual)},
          {"decay_slope", detail::number_or_null(r.decay_slope)},
          {"converged", r.converged}};
}

/// Flat: the solve's keys carry a `solve_` prefix.
inline nlohmann::json to_json(const GluingReport& r) {
  nlohmann::json j{{"flux_V", r.flux_V.coefficients},
                   {"flux_W", r.flux_W.coefficients},
                   {"flux_mismatch", r.flux_mismatch},
                   {"glued_divergence_residual", detail::number_or_null(r.glued_divergence_residual)}};
  const nlohmann::json solve = to_json(r.solve_report);
  for (const auto& [key, value] : solve.items()) j["solve_" + key] = value;
  return j;
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::InvalidArgument, "cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
}

}  // namespace cglue
