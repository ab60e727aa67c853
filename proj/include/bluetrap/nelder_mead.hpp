#pragma once

// Derivative-free simplex minimization (Nelder & Mead, standard coefficients).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>

namespace bluetrap {

template <std::size_t N>
struct SimplexResult {
  std::array<double, N> x{};
  double value = 0.0;
  int evaluations = 0;
  bool converged = false;
};

struct SimplexOptions {
  int max_evaluations = 2000;
  double relative_tolerance = 1e-10;  // on the spread of function values
  double absolute_tolerance = 1e-300;
  double size_tolerance = 1e-13;      // simplex diameter, in the caller's coordinates
};

template <std::size_t N, class F>
SimplexResult<N> nelder_mead(F&& f, const std::array<double, N>& start, const std::array<double, N>& step,
                             const SimplexOptions& opt = {}) {
  using Point = std::array<double, N>;
  std::array<Point, N + 1> pts;
  std::array<double, N + 1> val;
  SimplexResult<N> out;

  auto eval = [&](const Point& p) {
    ++out.evaluations;
    return f(p);
  };
  pts[0] = start;
  val[0] = eval(start);
  for (std::size_t i = 0; i < N; ++i) {
    pts[i + 1] = start;
    pts[i + 1][i] += step[i];
    val[i + 1] = eval(pts[i + 1]);
  }

  std::array<std::size_t, N + 1> order;
  while (true) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return val[a] < val[b]; });
    const std::size_t best = order.front();
    const std::size_t worst = order.back();
    const std::size_t second = order[N - 1];

    double diameter = 0.0;
    for (std::size_t i = 0; i <= N; ++i)
      for (std::size_t k = 0; k < N; ++k) diameter = std::max(diameter, std::abs(pts[i][k] - pts[best][k]));
    const double spread = val[worst] - val[best];
    if (spread <= opt.relative_tolerance * std::abs(val[best]) + opt.absolute_tolerance ||
        diameter <= opt.size_tolerance) {
      out.converged = true;
      break;
    }
    if (out.evaluations >= opt.max_evaluations) break;

    Point centroid{};
    for (std::size_t i = 0; i <= N; ++i) {
      if (i == worst) continue;
      for (std::size_t k = 0; k < N; ++k) centroid[k] += pts[i][k] / static_cast<double>(N);
    }
    auto along = [&](double t) {
      Point p;
      for (std::size_t k = 0; k < N; ++k) p[k] = centroid[k] + t * (pts[worst][k] - centroid[k]);
      return p;
    };

    const Point reflected = along(-1.0);
    const double fr = eval(reflected);
    if (fr < val[best]) {
      const Point expanded = along(-2.0);
      const double fe = eval(expanded);
      if (fe < fr) {
        pts[worst] = expanded;
        val[worst] = fe;
      } else {
        pts[worst] = reflected;
        val[worst] = fr;
      }
      continue;
    }
    if (fr < val[second]) {
      pts[worst] = reflected;
      val[worst] = fr;
      continue;
    }
    const bool outside = fr < val[worst];
    const Point contracted = along(outside ? -0.5 : 0.5);
    const double fc = eval(contracted);
    if (fc < (outside ? fr : val[worst])) {
      pts[worst] = contracted;
      val[worst] = fc;
      continue;
    }
    // Shrink toward the best vertex.
    for (std::size_t i = 0; i <= N; ++i) {
      if (i == best) continue;
      for (std::size_t k = 0; k < N; ++k) pts[i][k] = pts[best][k] + 0.5 * (pts[i][k] - pts[best][k]);
      val[i] = eval(pts[i]);
    }
  }
  const std::size_t best =
      static_cast<std::size_t>(std::min_element(val.begin(), val.end()) - val.begin());
  out.x = pts[best];
  out.value = val[best];
  return out;
}

}  // namespace bluetrap
