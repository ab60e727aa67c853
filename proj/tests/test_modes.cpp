#include <gtest/gtest.h>

#include <random>

#include "bluetrap/modes.hpp"

using namespace bluetrap;

namespace {

const CavityGeometry kGeom = CavityGeometry::nominal();

double first_antinode_z(int fsr_offset) {
  // Nearest |z| > 0 where the standing wave peaks, for an even longitudinal index.
  return mode_wavelength(kGeom, fsr_offset) / 4.0;
}

}  // namespace

TEST(Geometry, NominalDefaultsCloseBoundaryConditions) {
  EXPECT_EQ(kGeom.probe_index, 313);
  EXPECT_DOUBLE_EQ(kGeom.length, 313 * 780.2e-9 / 2.0);
  EXPECT_NEAR(kGeom.length, 0.122e-3, 0.2e-6);
  EXPECT_GT(kGeom.rayleigh_range(), 50.0 * kGeom.length / 2.0);
  EXPECT_EQ(CavityGeometry::nearest_odd_index(0.122e-3, 780.2e-9), 313);
}

TEST(Geometry, RejectsInvalid) {
  EXPECT_THROW(CavityGeometry::from_probe_index(780.2e-9, 312, 29e-6), Error);
  EXPECT_THROW(CavityGeometry::from_probe_index(780.2e-9, 313, 0.5e-6), Error);
  CavityGeometry g = kGeom;
  g.length *= 1.001;
  EXPECT_THROW(g.validate(), Error);
}

TEST(FreeSpectralRange, Values) {
  EXPECT_NEAR(free_spectral_range(0.122e-3), 1.229e12, 0.001e12);
  EXPECT_DOUBLE_EQ(free_spectral_range(0.150), 999308193.3333334);
  EXPECT_NEAR(free_spectral_range(0.150), 1.0e9, 1e-3 * 1e9);
  // Three FSR above 780.2 nm lands near 772.8 nm.
  const double nu = kSpeedOfLight / 780.2e-9 + 3.0 * free_spectral_range(0.122e-3);
  EXPECT_NEAR(kSpeedOfLight / nu, 772.8e-9, 0.1e-9);
  try {
    free_spectral_range(0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_geometry);
  }
}

TEST(LongitudinalAmplitude, ParityAtCenter) {
  EXPECT_EQ(longitudinal_amplitude(kGeom, 3, 0.0), 0.0);
  EXPECT_EQ(std::abs(longitudinal_amplitude(kGeom, 0, 0.0)), 1.0);
  EXPECT_EQ(std::abs(longitudinal_amplitude(kGeom, 2, 0.0)), 1.0);
  EXPECT_NEAR(std::abs(longitudinal_amplitude(kGeom, 3, first_antinode_z(3))), 1.0, 1e-12);
}

TEST(LongitudinalAmplitude, MirrorsAreNodes) {
  for (int q : {-5, 0, 1, 2, 3, 10}) {
    EXPECT_EQ(longitudinal_amplitude(kGeom, q, kGeom.length / 2.0), 0.0) << q;
    EXPECT_EQ(longitudinal_amplitude(kGeom, q, -kGeom.length / 2.0), 0.0) << q;
  }
}

TEST(LongitudinalAmplitude, OutsideCavityThrows) {
  try {
    longitudinal_amplitude(kGeom, 0, kGeom.length);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::out_of_cavity);
  }
}

TEST(Intensity, NodalPlaneOfTem10) {
  const ModeSpec m{kTem10, 2, 1.0, 1.0};
  for (double y : {-40e-6, 0.0, 3e-6, 20e-6})
    for (double z : {0.0, 1e-7, 3.3e-7, -2e-6}) EXPECT_EQ(intensity_normalized(kGeom, m, {0.0, y, z}), 0.0);
}

TEST(Intensity, Tem10PeakIsOne) {
  const ModeSpec m{kTem10, 2, 1.0, 1.0};
  const double w0 = kGeom.waist;
  EXPECT_NEAR(intensity_normalized(kGeom, m, {w0 / std::sqrt(2.0), 0.0, 0.0}), 1.0, 1e-15);
  const ModeSpec m01{kTem01, 2, 1.0, 1.0};
  EXPECT_NEAR(intensity_normalized(kGeom, m01, {0.0, -w0 / std::sqrt(2.0), 0.0}), 1.0, 1e-15);
}

TEST(Intensity, DarkTrapCenter) {
  EXPECT_EQ(intensity_normalized(kGeom, {kTem00, 3, 1.0, 1.0}, {}), 0.0);
  EXPECT_EQ(intensity_normalized(kGeom, {kTem10, 2, 1.0, 1.0}, {}), 0.0);
  EXPECT_EQ(intensity_normalized(kGeom, {kTem01, 2, 1.0, 1.0}, {}), 0.0);
  EXPECT_EQ(intensity_normalized(kGeom, probe_mode(), {}), 1.0);
}

TEST(Intensity, UnsupportedOrder) {
  try {
    intensity_normalized(kGeom, {{1, 1}, 0, 1.0, 1.0}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::unsupported_mode);
  }
}

// Multi-resolution grid search: a coarse grid over one z period and +-1.5 w0,
// then repeated zoomed grids around the best point.
TEST(Intensity, GridMaximumIsOne) {
  const double w0 = kGeom.waist;
  for (const ModeSpec m : {ModeSpec{kTem00, 3, 1, 1}, ModeSpec{kTem10, 2, 1, 1}, ModeSpec{kTem01, 2, 1, 1},
                           ModeSpec{kTem00, 0, 1, 1}}) {
    const double lam = mode_wavelength(kGeom, m.fsr_offset);
    Position center{0.0, 0.0, 0.0};
    Vec3 half{1.5 * w0, 1.5 * w0, lam / 2.0};
    double best = 0.0, worst = 1.0;
    for (int level = 0; level < 25; ++level) {
      const int n = level == 0 ? 61 : 11;
      Position arg = center;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          for (int k = 0; k < n; ++k) {
            const Position r{center.x - half.x + 2 * half.x * i / (n - 1),
                             center.y - half.y + 2 * half.y * j / (n - 1),
                             center.z - half.z + 2 * half.z * k / (n - 1)};
            const double v = intensity_normalized(kGeom, m, r);
            if (v > best) {
              best = v;
              arg = r;
            }
            worst = std::min(worst, v);
          }
      center = arg;
      half *= 0.4;
    }
    EXPECT_NEAR(best, 1.0, 1e-6) << m.order.m << m.order.n;
    EXPECT_LE(best, 1.0 + 1e-12);
    EXPECT_GE(worst, 0.0);
  }
}

TEST(Intensity, DoughnutIsAzimuthallySymmetric) {
  const ModeSpec a{kTem10, 2, 1.0, 1.0};
  const ModeSpec b{kTem01, 2, 1.0, 1.0};
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> radius(0.0, 2.0 * kGeom.waist);
  std::uniform_real_distribution<double> angle(0.0, kTwoPi);
  std::uniform_real_distribution<double> zpos(-5e-6, 5e-6);
  for (int i = 0; i < 100; ++i) {
    const double rho = radius(rng);
    const double z = zpos(rng);
    const double ref = intensity_normalized(kGeom, a, {rho, 0, z}) + intensity_normalized(kGeom, b, {rho, 0, z});
    const double th = angle(rng);
    const Position p{rho * std::cos(th), rho * std::sin(th), z};
    EXPECT_NEAR(intensity_normalized(kGeom, a, p) + intensity_normalized(kGeom, b, p), ref, 1e-12);
  }
}

TEST(Intensity, GradientMatchesFiniteDifference) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> t(-1.5 * kGeom.waist, 1.5 * kGeom.waist);
  std::uniform_real_distribution<double> zd(-10e-6, 10e-6);
  for (const ModeSpec m : {ModeSpec{kTem00, 3, 1, 1}, ModeSpec{kTem10, 2, 1, 1}, ModeSpec{kTem01, 2, 1, 1}}) {
    for (int i = 0; i < 50; ++i) {
      const Position r{t(rng), t(rng), zd(rng)};
      const auto s = intensity_with_gradient(kGeom, m, r);
      for (int a = 0; a < 3; ++a) {
        const double h = a == 2 ? 1e-11 : 1e-9;
        Position lo = r, hi = r;
        lo[a] -= h;
        hi[a] += h;
        const double fd = (intensity_normalized(kGeom, m, hi) - intensity_normalized(kGeom, m, lo)) / (2 * h);
        const double scale = a == 2 ? mode_wavenumber(kGeom, m.fsr_offset) : 1.0 / kGeom.waist;
        EXPECT_NEAR(s.gradient[a], fd, 1e-5 * scale);
      }
    }
  }
}
