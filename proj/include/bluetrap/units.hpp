#pragma once

#include <array>
#include <cmath>
#include <numbers>

namespace bluetrap {

// SI constants (CODATA 2018 exact values where defined).
inline constexpr double kSpeedOfLight = 299792458.0;
inline constexpr double kPlanck = 6.62607015e-34;
inline constexpr double kHbar = kPlanck / (2.0 * std::numbers::pi);
inline constexpr double kBoltzmann = 1.380649e-23;
inline constexpr double kStandardGravity = 9.80665;
inline constexpr double kRubidium85Mass = 1.4099e-25;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Rates and detunings are angular frequencies (rad/s) everywhere inside the
// library. User-facing numbers are ordinary frequencies, X/2pi.
constexpr double angular_from_hz(double hz) { return kTwoPi * hz; }
constexpr double angular_from_mhz(double mhz) { return kTwoPi * mhz * 1e6; }
constexpr double hz_from_angular(double w) { return w / kTwoPi; }
constexpr double mhz_from_angular(double w) { return w / kTwoPi * 1e-6; }

// Energies quoted as h x frequency.
constexpr double joules_from_h_mhz(double mhz) { return kPlanck * mhz * 1e6; }
constexpr double h_mhz_from_joules(double j) { return j / kPlanck * 1e-6; }

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }
  constexpr Vec3& operator*=(double s) {
    x *= s;
    y *= s;
    z *= s;
    return *this;
  }
  constexpr double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
  friend constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
  friend constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
  friend constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

using Position = Vec3;

// sin(pi t) with exact zeros at integers and exact +-1 at half-integers.
inline double sin_pi(double t) {
  double r = std::fmod(t, 2.0);
  if (r < 0.0) r += 2.0;
  double sign = 1.0;
  if (r >= 1.0) {
    r -= 1.0;
    sign = -1.0;
  }
  if (r > 0.5) r = 1.0 - r;
  return sign * std::sin(std::numbers::pi * r);
}

inline double cos_pi(double t) { return sin_pi(t + 0.5); }

}  // namespace bluetrap
