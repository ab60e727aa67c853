#pragma once

// Dipole potential of a set of blue-detuned cavity modes, its analytic force,
// and trap metrics derived from it.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "bluetrap/error.hpp"
#include "bluetrap/modes.hpp"
#include "bluetrap/units.hpp"

namespace bluetrap {

struct TrapConfig {
  CavityGeometry geometry;
  std::vector<ModeSpec> modes;
  bool gravity_on = false;
  double atom_mass = kRubidium85Mass;  // kg
  // Transition shift per unit ground-state shift. Two-level atom: -2.
  double stark_coefficient = -2.0;
  // Constant transition shift from a red-detuned lock laser, angular.
  double stabilization_shift = 0.0;

  void validate() const {
    geometry.validate();
    if (modes.empty()) throw Error(ErrorCode::invalid_params, "trap configuration needs at least one mode");
    if (!(atom_mass > 0.0)) throw Error(ErrorCode::invalid_params, "atom mass must be positive");
    for (const auto& m : modes) validate_mode(geometry, m);
  }
};

// Axial TEM00 pancakes at an odd FSR offset plus a TEM10 guide at an even
// offset. The guide's nodal plane x = 0 forms funnels toward the center.
inline TrapConfig funnel_trap(const CavityGeometry& geometry, double axial_height, double guiding_height,
                              int axial_offset = 3, int ring_offset = 2) {
  TrapConfig c;
  c.geometry = geometry;
  c.modes = {ModeSpec{kTem00, axial_offset, axial_height, 1.0},
             ModeSpec{kTem10, ring_offset, guiding_height, 1.0}};
  c.validate();
  return c;
}

// Axial pancakes plus a doughnut made of TEM10 and TEM01. The two modes are
// non-degenerate, so their intensities add; each carries the full ring height
// so that the ring maximum equals ring_height.
inline TrapConfig closed_trap(const CavityGeometry& geometry, double axial_height, double ring_height,
                              int axial_offset = 3, int ring_offset = 2) {
  TrapConfig c;
  c.geometry = geometry;
  c.modes = {ModeSpec{kTem00, axial_offset, axial_height, 1.0},
             ModeSpec{kTem10, ring_offset, ring_height, 1.0},
             ModeSpec{kTem01, ring_offset, ring_height, 1.0}};
  c.validate();
  return c;
}

// J.
inline double potential_energy(const TrapConfig& config, const Position& r) {
  require_in_cavity(config.geometry, r.z);
  double u = 0.0;
  for (const auto& m : config.modes) {
    if (m.amplitude_scale == 0.0 || m.barrier_height == 0.0) continue;
    u += m.amplitude_scale * m.barrier_height * intensity_normalized(config.geometry, m, r);
  }
  if (config.gravity_on) u += config.atom_mass * kStandardGravity * r.y;
  return u;
}

// N. Exact negative gradient of potential_energy.
inline Vec3 force(const TrapConfig& config, const Position& r) {
  require_in_cavity(config.geometry, r.z);
  Vec3 f;
  for (const auto& m : config.modes) {
    if (m.amplitude_scale == 0.0 || m.barrier_height == 0.0) continue;
    const auto s = intensity_with_gradient(config.geometry, m, r);
    f -= (m.amplitude_scale * m.barrier_height) * s.gradient;
  }
  if (config.gravity_on) f.y -= config.atom_mass * kStandardGravity;
  return f;
}

// Shift of the atomic transition, angular. Positive means blue-shifted.
inline double stark_shift(const TrapConfig& config, const Position& r) {
  require_in_cavity(config.geometry, r.z);
  double u = 0.0;
  for (const auto& m : config.modes) {
    if (m.amplitude_scale == 0.0 || m.barrier_height == 0.0) continue;
    u += m.amplitude_scale * m.barrier_height * intensity_normalized(config.geometry, m, r);
  }
  return config.stark_coefficient * u / kHbar + config.stabilization_shift;
}

enum class EscapeDirection { none, axial, x, y };

inline const char* to_string(EscapeDirection d) {
  switch (d) {
    case EscapeDirection::axial:
      return "axial";
    case EscapeDirection::x:
      return "x";
    case EscapeDirection::y:
      return "y";
    default:
      return "none";
  }
}

struct TrapMetrics {
  Position minimum;            // located trap minimum
  double axial_barrier = 0.0;  // J, along z
  double radial_barrier = 0.0; // J, weakest of the x and y rays
  double guiding_barrier = 0.0;// J, along x
  Vec3 trap_frequencies;       // angular; 0 along non-confining axes
  double center_stark_shift = 0.0;  // angular
  EscapeDirection escape = EscapeDirection::none;
};

namespace detail {

// Golden-section search for the maximum of f on [a, b].
template <class F>
double golden_section_max(F&& f, double a, double b, double rel_tol = 1e-12) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c);
  double fd = f(d);
  const double tol = rel_tol * std::abs(b - a);
  for (int it = 0; it < 200 && std::abs(b - a) > tol; ++it) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return std::max({fc, fd, f(0.5 * (a + b))});
}

inline double curvature(const TrapConfig& config, const Position& r, int axis, double step) {
  Position lo = r, hi = r;
  lo[axis] -= step;
  hi[axis] += step;
  return -(force(config, hi)[axis] - force(config, lo)[axis]) / (2.0 * step);
}

}  // namespace detail

inline constexpr double kAxialHessianStep = 1e-9;
inline constexpr double kTransverseHessianStep = 1e-8;

inline Vec3 hessian_diagonal(const TrapConfig& config, const Position& r) {
  return {detail::curvature(config, r, 0, kTransverseHessianStep),
          detail::curvature(config, r, 1, kTransverseHessianStep),
          detail::curvature(config, r, 2, kAxialHessianStep)};
}

// Per-axis Newton iteration on the force, starting from `guess`. Axes with
// non-positive curvature are left untouched.
inline Position locate_minimum(const TrapConfig& config, Position guess = {}) {
  Position r = guess;
  for (int it = 0; it < 50; ++it) {
    const Vec3 f = force(config, r);
    const Vec3 h = hessian_diagonal(config, r);
    double largest = 0.0;
    for (int a = 0; a < 3; ++a) {
      if (h[a] <= 0.0) continue;
      const double dr = f[a] / h[a];
      r[a] += dr;
      largest = std::max(largest, std::abs(dr));
    }
    if (largest < 1e-16) break;
  }
  return r;
}

inline TrapMetrics trap_metrics(const TrapConfig& input, Position guess = {}) {
  TrapConfig config = input;
  config.gravity_on = false;
  config.validate();

  TrapMetrics out;
  out.minimum = locate_minimum(config, guess);
  const Position m = out.minimum;
  const double u0 = potential_energy(config, m);

  // Axial ray: search up to the next node of the shortest-wavelength TEM00 mode.
  double axial_reach = config.geometry.length / 2.0 - std::abs(m.z);
  for (const auto& mode : config.modes)
    if (mode.order == kTem00 && mode.fsr_offset != 0)
      axial_reach = std::min(axial_reach, mode_wavelength(config.geometry, mode.fsr_offset) / 2.0);
  auto along = [&](int axis, double reach) {
    return detail::golden_section_max(
        [&](double t) {
          Position p = m;
          p[axis] += t;
          return potential_energy(config, p) - u0;
        },
        0.0, reach);
  };
  const double w0 = config.geometry.waist;
  out.axial_barrier = std::max(0.0, along(2, axial_reach));
  const double bx = std::max(0.0, along(0, 3.0 * w0));
  const double by = std::max(0.0, along(1, 3.0 * w0));
  out.guiding_barrier = bx;
  out.radial_barrier = std::min(bx, by);

  const double scale = std::max({out.axial_barrier, bx, by});
  const double floor = 1e-9 * scale;
  if (out.axial_barrier <= floor)
    out.escape = EscapeDirection::axial;
  else if (by <= floor)
    out.escape = EscapeDirection::y;
  else if (bx <= floor)
    out.escape = EscapeDirection::x;

  const Vec3 h = hessian_diagonal(config, m);
  for (int a = 0; a < 3; ++a)
    out.trap_frequencies[a] = h[a] > 0.0 ? std::sqrt(h[a] / config.atom_mass) : 0.0;
  out.center_stark_shift = stark_shift(config, m);
  return out;
}

}  // namespace bluetrap
