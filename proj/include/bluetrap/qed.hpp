#pragma once

// Weak-excitation steady state of a driven atom-cavity system.
//
// Conventions (all angular frequencies):
//   delta_c  = w_laser - w_cavity
//   delta_ac = w_atom  - w_cavity   (-2pi x 35 MHz: atom below the cavity)
//   delta_a  = delta_c - delta_ac   (laser relative to the atom)
// Worked example: probing the bare cavity (delta_c = 0) with the atom at
// delta_ac = -2pi x 35 MHz gives delta_a = +2pi x 35 MHz.
//
// kappa and gamma are field/polarization decay rates; the corresponding energy
// decay rates are 2 kappa and 2 gamma.

#include <cmath>
#include <complex>

#include "bluetrap/error.hpp"
#include "bluetrap/modes.hpp"
#include "bluetrap/units.hpp"

namespace bluetrap {

struct QedParams {
  double g0 = angular_from_mhz(16.0);
  double kappa = angular_from_mhz(1.4);
  double gamma = angular_from_mhz(3.0);
  double delta_c = 0.0;
  double delta_ac = angular_from_mhz(-35.0);
  double drive_eta = 0.0;
  double detection_efficiency = 0.05;

  void validate() const {
    if (!(kappa > 0.0)) throw Error(ErrorCode::invalid_params, "kappa must be positive");
    if (!(gamma > 0.0)) throw Error(ErrorCode::invalid_params, "gamma must be positive");
    if (!(detection_efficiency >= 0.0 && detection_efficiency <= 1.0))
      throw Error(ErrorCode::invalid_params, "detection efficiency must lie in [0, 1]");
  }
};

struct QedResponse {
  std::complex<double> field_ratio;  // <a> relative to the empty resonant cavity, kappa <a> / eta
  std::complex<double> field;        // <a>
  double photon_number = 0.0;
  double atomic_excitation = 0.0;
  double scatter_rate = 0.0;  // 1/s, into free space
  bool saturation_warning = false;
  bool truncation_warning = false;
};

inline constexpr double kSaturationPhotonNumber = 0.5;
inline constexpr double kSaturationExcitation = 0.1;

inline QedResponse steady_state_response(const QedParams& p, double g_eff) {
  p.validate();
  using cd = std::complex<double>;
  const double delta_a = p.delta_c - p.delta_ac;
  const cd atom = cd(p.gamma, -delta_a);
  const cd denom = cd(p.kappa, -p.delta_c) + g_eff * g_eff / atom;

  QedResponse r;
  r.field = p.drive_eta / denom;
  r.field_ratio = p.kappa / denom;
  r.photon_number = std::norm(r.field);
  r.atomic_excitation = r.photon_number * g_eff * g_eff / (delta_a * delta_a + p.gamma * p.gamma);
  r.scatter_rate = 2.0 * p.gamma * r.atomic_excitation;
  r.saturation_warning =
      r.photon_number >= kSaturationPhotonNumber || r.atomic_excitation > kSaturationExcitation;
  return r;
}

inline double relative_transmission(const QedParams& p, double g_eff) {
  return std::norm(steady_state_response(p, g_eff).field_ratio);
}

// Drive amplitude that puts `photons` into the empty cavity on resonance.
inline double drive_for_bare_photons(const QedParams& p, double photons) {
  return p.kappa * std::sqrt(photons);
}

// Drive amplitude that yields `photons` with the atom present (linear model).
inline double drive_for_photon_number(const QedParams& p, double g_eff, double photons) {
  QedParams unit = p;
  unit.drive_eta = 1.0;
  return std::sqrt(photons / steady_state_response(unit, g_eff).photon_number);
}

inline QedParams with_drive(QedParams p, double eta) {
  p.drive_eta = eta;
  return p;
}

// Coupling to the probe mode (TEM00, FSR offset 0) at r.
inline double position_dependent_coupling(const CavityGeometry& geometry, const Position& r, double g0) {
  require_in_cavity(geometry, r.z);
  const double w = geometry.waist;
  const double envelope = std::exp(-(r.x * r.x + r.y * r.y) / (w * w));
  return g0 * envelope * std::abs(longitudinal_amplitude(geometry, 0, r.z));
}

}  // namespace bluetrap
