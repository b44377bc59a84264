#pragma once

#include <array>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cglue/error.hpp"

namespace cglue {

enum class BundleKind { Scalar, OneForm, Sym2, Sym2TraceFree };

constexpr std::string_view to_string(BundleKind kind) {
  switch (kind) {
    case BundleKind::Scalar: return "SCALAR";
    case BundleKind::OneForm: return "ONE_FORM";
    case BundleKind::Sym2: return "SYM2";
    case BundleKind::Sym2TraceFree: return "SYM2_TRACEFREE";
  }
  return "UNKNOWN";
}

inline BundleKind bundle_kind_from_string(std::string_view name) {
  if (name == "SCALAR") return BundleKind::Scalar;
  if (name == "ONE_FORM") return BundleKind::OneForm;
  if (name == "SYM2") return BundleKind::Sym2;
  if (name == "SYM2_TRACEFREE") return BundleKind::Sym2TraceFree;
  fail(ErrorCode::InvalidArgument, "unknown bundle kind '" + std::string(name) + "'");
}

/// Symmetric 2-tensors are stored by upper-triangle pairs in row-major order.
/// The trace-free variant drops the last diagonal entry, recovered as minus
/// the sum of the other diagonal entries.
struct BundleType {
  BundleKind kind = BundleKind::Scalar;
  int n = 1;

  int components() const {
    switch (kind) {
      case BundleKind::Scalar: return 1;
      case BundleKind::OneForm: return n;
      case BundleKind::Sym2: return n * (n + 1) / 2;
      case BundleKind::Sym2TraceFree: return n * (n + 1) / 2 - 1;
    }
    return 0;
  }

  bool is_tensor() const { return kind == BundleKind::Sym2 || kind == BundleKind::Sym2TraceFree; }

  /// (row, col) of stored component c for tensor bundles.
  std::pair<int, int> pair(int c) const {
    for (int i = 0, k = 0; i < n; ++i)
      for (int j = i; j < n; ++j, ++k)
        if (k == c) return {i, j};
    fail(ErrorCode::InvalidArgument, "component index out of range");
  }

  /// Stored component holding (i, j), or -1 for the eliminated trace entry.
  int index(int i, int j) const {
    if (i > j) std::swap(i, j);
    if (kind == BundleKind::Sym2TraceFree && i == n - 1 && j == n - 1) return -1;
    return i * n - i * (i - 1) / 2 + (j - i);
  }

  /// Fibre metric on stored components: the pairing sum_{bb'} g_bb' u_b v_b'
  /// equals the full contraction of the expanded tensors.
  std::vector<double> metric() const {
    const int c = components();
    std::vector<double> g(static_cast<std::size_t>(c) * c, 0.0);
    for (int b = 0; b < c; ++b) {
      if (!is_tensor()) {
        g[b * c + b] = 1.0;
        continue;
      }
      const auto [i, j] = pair(b);
      if (i != j) {
        g[b * c + b] = 2.0;
        continue;
      }
      g[b * c + b] = 1.0;
      if (kind == BundleKind::Sym2TraceFree) {
        for (int b2 = 0; b2 < c; ++b2) {
          const auto [k, l] = pair(b2);
          if (k == l) g[b * c + b2] += 1.0;
        }
      }
    }
    return g;
  }

  bool operator==(const BundleType&) const = default;
};

inline std::string describe(const BundleType& b) { return std::string(to_string(b.kind)) + "(n=" + std::to_string(b.n) + ")"; }

/// Full n x n symmetric matrix from stored components.
inline std::array<std::array<double, 3>, 3> expand_tensor(const BundleType& b, const double* stored) {
  std::array<std::array<double, 3>, 3> t{};
  const int c = b.components();
  for (int k = 0; k < c; ++k) {
    const auto [i, j] = b.pair(k);
    t[i][j] = t[j][i] = stored[k];
  }
  if (b.kind == BundleKind::Sym2TraceFree) {
    double trace = 0.0;
    for (int i = 0; i < b.n - 1; ++i) trace += t[i][i];
    t[b.n - 1][b.n - 1] = -trace;
  }
  return t;
}

/// Stored components of a symmetric matrix; the trace-free variant first removes the trace.
inline void contract_tensor(const BundleType& b, const std::array<std::array<double, 3>, 3>& t, double* stored) {
  double shift = 0.0;
  if (b.kind == BundleKind::Sym2TraceFree) {
    for (int i = 0; i < b.n; ++i) shift += t[i][i];
    shift /= b.n;
  }
  const int c = b.components();
  for (int k = 0; k < c; ++k) {
    const auto [i, j] = b.pair(k);
    stored[k] = 0.5 * (t[i][j] + t[j][i]) - (i == j ? shift : 0.0);
  }
}

}  // namespace cglue
