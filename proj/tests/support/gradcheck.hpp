#pragma once

#include "cpnkit/grid.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace cpnkit::testing {

inline constexpr double kFdStep = 1e-4;
inline constexpr double kFdTolerance = 1e-3;
// Gradients smaller than this are compared on an absolute scale.
inline constexpr double kFdFloor = 1e-6;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kFdFloor});
}

/// Central difference of f() with respect to x, restoring x afterwards.
template <typename Fn>
double central_difference(Fn&& f, double& x, double h = kFdStep) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2 * h);
}

/// Uniform values in [lo, hi] kept at least `gap` away from zero, so
/// relu kinks are not straddled by a finite-difference step.
inline void fill_away_from_zero(Grid<double>& g, std::mt19937_64& rng, double lo = -1, double hi = 1, double gap = 0.02) {
  std::uniform_real_distribution<double> u(lo, hi);
  for (Index i = 0; i < g.size(); ++i) {
    double v = u(rng);
    while (std::abs(v) < gap) v = u(rng);
    g[i] = v;
  }
}

inline Grid<double> random_grid(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Grid<double> g(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (Index i = 0; i < g.size(); ++i) g[i] = n(rng);
  return g;
}

}  // namespace cpnkit::testing
