#pragma once

// Hermite-Gaussian standing-wave modes of a near-planar Fabry-Perot cavity.
//
// Coordinates: z along the cavity axis with the origin midway between the
// mirrors, y vertical (atoms enter from y < 0), x the remaining transverse
// axis. The waist is taken constant over the cavity length and the Gouy phase
// is dropped; for the default geometry the Rayleigh range is ~3.4 mm against a
// half-length of ~61 um, so both corrections are below 1e-3.

#include <cmath>
#include <sstream>

#include "bluetrap/error.hpp"
#include "bluetrap/units.hpp"

namespace bluetrap {

struct CavityGeometry {
  double length = 0.0;            // m, always probe_index * probe_wavelength / 2
  double waist = 0.0;             // m
  double probe_wavelength = 0.0;  // m
  int probe_index = 0;            // odd: probe antinode at the cavity center
  double finesse = 0.0;           // metadata

  static CavityGeometry from_probe_index(double probe_wavelength, int probe_index, double waist,
                                         double finesse = 0.0) {
    CavityGeometry g;
    g.probe_wavelength = probe_wavelength;
    g.probe_index = probe_index;
    g.length = probe_index * probe_wavelength / 2.0;
    g.waist = waist;
    g.finesse = finesse;
    g.validate();
    return g;
  }

  // Odd longitudinal index closest to 2 L / lambda.
  static int nearest_odd_index(double length, double wavelength) {
    const double ratio = 2.0 * length / wavelength;
    int n = static_cast<int>(std::lround(ratio));
    if (n % 2 == 0) n += (ratio >= n) ? 1 : -1;
    return n < 1 ? 1 : n;
  }

  // L = 0.122 mm, w0 = 29 um, 780.2 nm probe, F = 4.4e5.
  static CavityGeometry nominal() { return from_probe_index(780.2e-9, 313, 29e-6, 4.4e5); }

  double rayleigh_range() const { return std::numbers::pi * waist * waist / probe_wavelength; }

  void validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorCode::invalid_geometry, msg); };
    if (!(probe_wavelength > 0.0)) fail("probe wavelength must be positive");
    if (!(waist > 0.0)) fail("waist must be positive");
    if (probe_index < 1 || probe_index % 2 == 0) fail("probe longitudinal index must be a positive odd integer");
    if (!(length > 0.0)) fail("cavity length must be positive");
    const double closure = probe_index * probe_wavelength / 2.0;
    if (std::abs(length - closure) > 1e-12 * closure)
      fail("cavity length must equal probe_index * probe_wavelength / 2");
    if (!(rayleigh_range() > 10.0 * length / 2.0))
      fail("Rayleigh range must exceed ten half-lengths for the constant-waist model");
  }
};

// Supported transverse orders: (0,0), (1,0), (0,1).
struct TransverseOrder {
  int m = 0;
  int n = 0;
  friend constexpr bool operator==(const TransverseOrder&, const TransverseOrder&) = default;
};

inline constexpr TransverseOrder kTem00{0, 0};
inline constexpr TransverseOrder kTem10{1, 0};
inline constexpr TransverseOrder kTem01{0, 1};

struct ModeSpec {
  TransverseOrder order;
  int fsr_offset = 0;           // longitudinal index = probe_index + fsr_offset
  double barrier_height = 0.0;  // J
  double amplitude_scale = 1.0; // [0, 1]

  friend bool operator==(const ModeSpec&, const ModeSpec&) = default;
};

inline void validate_mode(const CavityGeometry& geometry, const ModeSpec& mode) {
  if (!(mode.order == kTem00 || mode.order == kTem10 || mode.order == kTem01)) {
    std::ostringstream os;
    os << "unsupported transverse order TEM" << mode.order.m << mode.order.n;
    throw Error(ErrorCode::unsupported_mode, os.str());
  }
  if (geometry.probe_index + mode.fsr_offset < 1)
    throw Error(ErrorCode::invalid_params, "mode longitudinal index must be >= 1");
  if (!(mode.barrier_height >= 0.0))
    throw Error(ErrorCode::invalid_params, "barrier height must be non-negative (blue-detuned fields only)");
  if (!(mode.amplitude_scale >= 0.0 && mode.amplitude_scale <= 1.0))
    throw Error(ErrorCode::invalid_params, "amplitude scale must lie in [0, 1]");
}

inline double free_spectral_range(double length) {
  if (!(length > 0.0)) throw Error(ErrorCode::invalid_geometry, "cavity length must be positive");
  return kSpeedOfLight / (2.0 * length);
}

// Hz.
inline double free_spectral_range(const CavityGeometry& geometry) {
  return free_spectral_range(geometry.length);
}

inline int longitudinal_index(const CavityGeometry& geometry, int fsr_offset) {
  return geometry.probe_index + fsr_offset;
}

inline double mode_wavelength(const CavityGeometry& geometry, int fsr_offset) {
  return 2.0 * geometry.length / longitudinal_index(geometry, fsr_offset);
}

// Standing-wave wavenumber n pi / L.
inline double mode_wavenumber(const CavityGeometry& geometry, int fsr_offset) {
  return longitudinal_index(geometry, fsr_offset) * std::numbers::pi / geometry.length;
}

inline void require_in_cavity(const CavityGeometry& geometry, double z) {
  if (!(std::abs(z) <= geometry.length / 2.0)) {
    std::ostringstream os;
    os << "position z = " << z << " m lies outside the cavity (|z| <= " << geometry.length / 2.0 << " m)";
    throw Error(ErrorCode::out_of_cavity, os.str());
  }
}

// sin(n pi (z/L + 1/2)); exact zeros at the mirrors and at center nodes.
inline double longitudinal_amplitude(const CavityGeometry& geometry, int fsr_offset, double z) {
  require_in_cavity(geometry, z);
  const int n = longitudinal_index(geometry, fsr_offset);
  return sin_pi(n * (z / geometry.length + 0.5));
}

struct IntensitySample {
  double value = 0.0;
  Vec3 gradient;  // 1/m
};

namespace detail {

// Transverse profile normalized to a unit maximum, with its gradient.
inline void transverse_profile(TransverseOrder order, double x, double y, double waist, double& value,
                               double& dx, double& dy) {
  const double inv_w2 = 1.0 / (waist * waist);
  const double gauss = std::exp(-2.0 * (x * x + y * y) * inv_w2);
  if (order == kTem00) {
    value = gauss;
    dx = -4.0 * x * inv_w2 * gauss;
    dy = -4.0 * y * inv_w2 * gauss;
    return;
  }
  // TEM10 along x; TEM01 is the same with x and y exchanged.
  const bool along_x = (order == kTem10);
  const double u = along_x ? x : y;
  const double v = along_x ? y : x;
  const double e = std::numbers::e;
  const double poly = 2.0 * e * u * u * inv_w2;
  const double du = 4.0 * e * u * inv_w2 * gauss * (1.0 - 2.0 * u * u * inv_w2);
  const double dv = poly * gauss * (-4.0 * v * inv_w2);
  value = poly * gauss;
  dx = along_x ? du : dv;
  dy = along_x ? dv : du;
}

}  // namespace detail

inline IntensitySample intensity_with_gradient(const CavityGeometry& geometry, const ModeSpec& mode,
                                               const Position& r) {
  validate_mode(geometry, mode);
  require_in_cavity(geometry, r.z);
  const int n = longitudinal_index(geometry, mode.fsr_offset);
  const double phase = n * (r.z / geometry.length + 0.5);
  const double s = sin_pi(phase);
  const double c = cos_pi(phase);
  const double k = n * std::numbers::pi / geometry.length;

  double t = 0.0, tx = 0.0, ty = 0.0;
  detail::transverse_profile(mode.order, r.x, r.y, geometry.waist, t, tx, ty);

  IntensitySample out;
  out.value = t * s * s;
  out.gradient = {tx * s * s, ty * s * s, t * 2.0 * s * c * k};
  return out;
}

// Standing-wave intensity with global maximum 1.
inline double intensity_normalized(const CavityGeometry& geometry, const ModeSpec& mode, const Position& r) {
  return intensity_with_gradient(geometry, mode, r).value;
}

// The fundamental probe mode (TEM00, no FSR offset).
inline ModeSpec probe_mode() { return ModeSpec{kTem00, 0, 0.0, 1.0}; }

}  // namespace bluetrap
