#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace cglue;
using cglue::testing::unit_interval;

namespace {

template <class F>
void expect_error(ErrorCode code, F&& f) {
  try {
    f();
    FAIL() << "expected " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

}  // namespace

TEST(Grid, SpacingAndCentres) {
  const auto g = Grid::cube(2, -1.0, 1.0, 8);
  EXPECT_DOUBLE_EQ(g->h()[0], 0.25);
  EXPECT_DOUBLE_EQ(g->h()[1], 0.25);
  EXPECT_EQ(g->size(), 64u);
  const Point p = g->center(CellIndex{0, 7, 0});
  EXPECT_DOUBLE_EQ(p[0], -0.875);
  EXPECT_DOUBLE_EQ(p[1], 0.875);
  for (std::size_t cell = 0; cell < g->size(); ++cell) EXPECT_EQ(g->linear(g->unravel(cell)), cell);
}

TEST(Grid, RejectsBadInput) {
  expect_error(ErrorCode::UnsupportedDimension, [] { Grid::cube(4, 0.0, 1.0, 4); });
  expect_error(ErrorCode::InvalidArgument, [] { Grid::cube(2, 1.0, 0.0, 4); });
}

TEST(BuildDomain, BallMaskMatchesDefinition) {
  auto d = build_domain(Ball{{0.0, 0.0, 0.0}, 1.0}, Grid::cube(3, -2.0, 2.0, 64));
  std::size_t count = 0;
  for (std::size_t cell = 0; cell < d->size(); ++cell) {
    const double r = norm(d->grid().center(cell));
    EXPECT_EQ(d->inside(cell), r < 1.0);
    count += d->inside(cell);
  }
  EXPECT_EQ(count, d->masked_count());
  // volume within a few percent of 4 pi / 3
  EXPECT_NEAR(count * d->grid().cell_volume(), 4.0 * std::numbers::pi / 3.0, 0.03);
  EXPECT_EQ(d->boundary_labels().size(), 1u);
}

TEST(BuildDomain, AnnulusDistance) {
  auto d = build_domain(Annulus{{0.0, 0.0, 0.0}, 1.0, 2.0}, Grid::cube(3, -3.0, 3.0, 40));
  ASSERT_TRUE(d->has_inner_boundary());
  EXPECT_EQ(d->boundary_labels()[0], BoundaryLabel::Inner);
  EXPECT_EQ(d->boundary_labels()[1], BoundaryLabel::Outer);
  for (std::size_t cell = 0; cell < d->size(); ++cell) {
    const double r = norm(d->grid().center(cell));
    if (d->inside(cell)) {
      EXPECT_NEAR(d->x(cell), std::min(r - 1.0, 2.0 - r), 1e-14);
      EXPECT_GT(d->x(cell), 0.0);
    } else {
      EXPECT_EQ(d->x(cell), 0.0);
    }
  }
}

TEST(BuildDomain, IntervalDistance) {
  auto d = unit_interval(512);
  std::size_t count = 0;
  for (std::size_t cell = 0; cell < d->size(); ++cell) {
    if (!d->inside(cell)) continue;
    const double p = d->grid().center(cell)[0];
    EXPECT_NEAR(d->x(cell), std::min(p, 1.0 - p), 1e-14);
    ++count;
  }
  EXPECT_EQ(count, 512u);
}

TEST(BuildDomain, BallDifferenceDistance) {
  auto d = build_domain(BallDifference{Ball{{0.0, 0.0, 0.0}, 1.0}, Ball{{0.2, 0.0, 0.0}, 0.3}},
                        Grid::cube(2, -1.5, 1.5, 60));
  EXPECT_TRUE(d->has_inner_boundary());
  EXPECT_EQ(d->inner_center()[0], 0.2);
  for (std::size_t cell = 0; cell < d->size(); ++cell) {
    if (!d->inside(cell)) continue;
    const Point p = d->grid().center(cell);
    const double outer = 1.0 - std::hypot(p[0], p[1]);
    const double inner = std::hypot(p[0] - 0.2, p[1]) - 0.3;
    EXPECT_NEAR(d->x(cell), std::min(outer, inner), 1e-14);
  }
}

TEST(BuildDomain, Errors) {
  expect_error(ErrorCode::ShapeTooLarge, [] { build_domain(Ball{{0.0, 0.0, 0.0}, 1.0}, Grid::cube(2, -1.05, 1.05, 20)); });
  expect_error(ErrorCode::DisconnectedDomain,
               [] { build_domain(Annulus{{0.0, 0.0, 0.0}, 0.2, 0.5}, Grid::cube(1, -1.0, 1.0, 20)); });
  expect_error(ErrorCode::InvalidArgument,
               [] { build_domain(Annulus{{0.0, 0.0, 0.0}, 0.5, 0.2}, Grid::cube(2, -1.0, 1.0, 20)); });
}

TEST(DistanceFunction, OneLipschitzOnNeighbours) {
  for (const ShapeSpec& shape : {ShapeSpec{Ball{{0.1, -0.2, 0.05}, 0.9}}, ShapeSpec{Annulus{{0.0, 0.0, 0.0}, 0.4, 1.0}},
                                 ShapeSpec{BallDifference{Ball{{0.0, 0.0, 0.0}, 1.0}, Ball{{0.3, 0.1, 0.0}, 0.25}}}}) {
    auto d = build_domain(shape, Grid::cube(3, -1.3, 1.3, 32));
    const Grid& g = d->grid();
    for (std::size_t cell = 0; cell < d->size(); ++cell) {
      if (!d->inside(cell)) continue;
      const CellIndex idx = g.unravel(cell);
      for (int axis = 0; axis < 3; ++axis) {
        CellIndex j = idx;
        if (++j[axis] >= g.cells()[axis]) continue;
        const std::size_t nb = g.linear(j);
        if (!d->inside(nb)) continue;
        EXPECT_LE(std::abs(d->x(cell) - d->x(nb)), g.h()[axis] * (1.0 + 1e-12));
      }
    }
  }
}

TEST(Weights, ClosedFormValues) {
  auto d = build_domain(Ball{{0.0, 0.0, 0.0}, 1.0}, Grid::cube(3, -1.5, 1.5, 30));
  const WeightConfig cfg{2, 1.0, 1, 1e-300};
  const auto w = detail::weights_at(0.5, 3, cfg);
  EXPECT_DOUBLE_EQ(w.phi, 0.25);
  EXPECT_NEAR(w.psi, 0.5 * std::exp(-2.0), 1e-15);
  EXPECT_NEAR(w.psi, 0.06767, 1e-5);
  for (int a = 1; a <= 4; ++a) {
    const auto one = detail::weights_at(1.0, 3, WeightConfig{a, 1.0, 1, 1e-300});
    EXPECT_NEAR(one.psi, std::exp(-1.0), 1e-15);
    EXPECT_NEAR(one.psi, 0.36788, 1e-5);
  }
  // eval_weights agrees with the helper at every masked cell
  for (std::size_t cell = 0; cell < d->size(); ++cell) {
    if (!d->inside(cell)) continue;
    const auto e = eval_weights(*d, cfg, cell);
    const double x = d->x(cell);
    EXPECT_DOUBLE_EQ(e.phi, x * x);
    EXPECT_NEAR(e.psi, x * std::exp(-1.0 / x), 1e-15 * std::max(1.0, e.psi));
  }
}

TEST(Weights, UnderflowClampsToZero) {
  const WeightConfig cfg = WeightConfig::defaults(2);
  // exp(-1/x) < 1e-300 once x < 1/(300 ln 10) ~ 1.45e-3
  EXPECT_EQ(detail::weights_at(1e-3, 2, cfg).psi, 0.0);
  EXPECT_GT(detail::weights_at(2e-3, 2, cfg).psi, 0.0);
  EXPECT_EQ(detail::weights_at(1e-3, 2, cfg).varphi, 0.0);
}

TEST(Weights, OutsideDomainRejected) {
  auto d = build_domain(Ball{{0.0, 0.0, 0.0}, 1.0}, Grid::cube(2, -1.5, 1.5, 20));
  expect_error(ErrorCode::OutsideDomain, [&] { eval_weights(*d, WeightConfig::defaults(2), 0); });
  expect_error(ErrorCode::InvalidArgument, [&] { eval_weights(*d, WeightConfig{1, -1.0, 1, 1e-300}, 210); });
}

TEST(Weights, ThreeWeightIdentity) {
  // psi^2 varphi^-1 phi^m = x^(2(a-n+m)) e^(-s/x)
  for (int n = 1; n <= 3; ++n)
    for (int a = 1; a <= 3; ++a)
      for (double s : {0.5, 1.0, 2.0}) {
        const WeightConfig cfg{a, s, 1, 1e-300};
        for (double x : {0.05, 0.1, 0.3, 0.7, 1.0}) {
          const auto w = detail::weights_at(x, n, cfg);
          const double lhs = w.psi * w.psi / w.varphi * w.phi;
          const double rhs = std::pow(x, 2 * (a - n + 1)) * std::exp(-s / x);
          EXPECT_NEAR(lhs / rhs, 1.0, 1e-13);
        }
      }
}

TEST(WeightField, ActiveCellsCarryPositivePsiSquared) {
  auto d = cglue::testing::unit_ball(2, 64);
  const WeightField w(d, WeightConfig::defaults(2));
  for (std::size_t cell = 0; cell < d->size(); ++cell) {
    EXPECT_EQ(w.active(cell), w.psi2(cell) > 0.0);
    if (!d->inside(cell)) {
      EXPECT_FALSE(w.active(cell));
    }
  }
  EXPECT_GT(w.active_count(), 0u);
  EXPECT_LT(w.active_count(), d->masked_count());
}

TEST(Cutoff, CollarValues) {
  auto d = build_domain(Annulus{{0.0, 0.0, 0.0}, 1.0, 2.0}, Grid::cube(3, -2.3, 2.3, 46));
  const CutoffField chi = build_cutoff(*d, CollarSpec{1.4, 1.6});
  for (std::size_t cell = 0; cell < d->size(); ++cell) {
    const double r = chi.radial(cell);
    const double v = chi.values[cell];
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    if (r <= 1.4) {
      EXPECT_EQ(v, 1.0);
    }
    if (r >= 1.6) {
      EXPECT_EQ(v, 0.0);
    }
  }
  const CutoffField probe = make_radial_cutoff(d->grid_ptr(), {0.0, 0.0, 0.0}, 1.4, 1.6);
  EXPECT_EQ(1.0 - smoothstep((1.2 - 1.4) / 0.2), 1.0);
  EXPECT_EQ(1.0 - smoothstep((1.8 - 1.4) / 0.2), 0.0);
  EXPECT_DOUBLE_EQ(1.0 - smoothstep(0.5), 0.5);
  EXPECT_NEAR(probe.transition_width(), 0.2, 1e-15);
}

TEST(Cutoff, MonotoneAndSlopeBounded) {
  auto d = build_domain(Annulus{{0.0, 0.0, 0.0}, 1.0, 2.0}, Grid::cube(3, -2.3, 2.3, 64));
  const double w = 0.4;
  const CutoffField chi = build_cutoff(*d, CollarSpec{1.3, 1.3 + w});
  const Grid& g = d->grid();
  double max_grad = 0.0;
  for (std::size_t cell = 0; cell < g.size(); ++cell) {
    const CellIndex idx = g.unravel(cell);
    for (int axis = 0; axis < 3; ++axis) {
      CellIndex j = idx;
      if (++j[axis] >= g.cells()[axis]) continue;
      const std::size_t nb = g.linear(j);
      max_grad = std::max(max_grad, std::abs(chi.values[nb] - chi.values[cell]) / g.h()[axis]);
      // monotone in the radial coordinate
      if (chi.radial(nb) > chi.radial(cell)) {
        EXPECT_LE(chi.values[nb], chi.values[cell]);
      }
    }
  }
  // mean value theorem: a one-cell step changes the radius by at most h
  EXPECT_LE(max_grad, 1.875 / w * (1.0 + 1e-12));
  EXPECT_GE(max_grad, 1.875 / w * 0.9);
}

TEST(Cutoff, Errors) {
  auto ann = build_domain(Annulus{{0.0, 0.0, 0.0}, 1.0, 2.0}, Grid::cube(2, -2.5, 2.5, 50));
  expect_error(ErrorCode::InvalidCollars, [&] { build_cutoff(*ann, CollarSpec{1.6, 1.4}); });
  expect_error(ErrorCode::InvalidCollars, [&] { build_cutoff(*ann, CollarSpec{0.9, 1.5}); });
  expect_error(ErrorCode::InvalidCollars, [&] { build_cutoff(*ann, CollarSpec{1.2, 2.1}); });
  auto ball = cglue::testing::unit_ball(2, 20);
  expect_error(ErrorCode::InvalidCollars, [&] { build_cutoff(*ball, CollarSpec{0.2, 0.5}); });
}
