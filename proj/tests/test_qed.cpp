#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <random>

#include "bluetrap/master_equation.hpp"
#include "bluetrap/qed.hpp"

using namespace bluetrap;

namespace {

const QedParams kNominal{};
const double kG83 = 0.83 * kNominal.g0;

// Independent route: solve the coupled linear equations for (<a>, <s^->)
//   0 = (i dc - kappa) a - i g s + eta
//   0 = (i da - gamma) s - i g a
// by Cramer's rule.
std::complex<double> linear_field_oracle(const QedParams& p, double g) {
  using cd = std::complex<double>;
  const double da = p.delta_c - p.delta_ac;
  const cd m11(-p.kappa, p.delta_c), m12(0, -g), m21(0, -g), m22(-p.gamma, da);
  const cd det = m11 * m22 - m12 * m21;
  return (-p.drive_eta * m22) / det;
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

}  // namespace

TEST(SteadyState, EmptyCavityOnResonance) {
  const auto r = steady_state_response(with_drive(kNominal, 1e5), 0.0);
  EXPECT_NEAR(std::abs(r.field_ratio - 1.0), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(relative_transmission(kNominal, 0.0), 1.0);
  EXPECT_EQ(r.atomic_excitation, 0.0);
}

TEST(SteadyState, NominalOperatingPointExcitationAndScattering) {
  const double eta = drive_for_photon_number(kNominal, kG83, 0.022);
  const auto r = steady_state_response(with_drive(kNominal, eta), kG83);
  EXPECT_NEAR(r.photon_number, 0.022, 1e-12);
  EXPECT_NEAR(r.atomic_excitation, 3.1e-3, 0.03 * 3.1e-3);
  EXPECT_NEAR(r.scatter_rate, 117e3, 0.03 * 117e3);
  EXPECT_FALSE(r.saturation_warning);
}

TEST(SteadyState, TransmissionDropAtOperatingPoint) {
  QedParams p = kNominal;
  p.drive_eta = 1.0;
  const double t = relative_transmission(p, kG83);
  EXPECT_NEAR(t, std::norm(linear_field_oracle(p, kG83) * p.kappa), 1e-14);
  EXPECT_NEAR(t, 0.0690993884833912, 1e-12);
  EXPECT_NEAR(1.0 / t, 14.47, 0.01);
  EXPECT_NEAR(1.0 / relative_transmission(p, p.g0), 28.99, 0.01);
}

TEST(SteadyState, FarOffResonanceIsDark) {
  for (double s : {-1.0, 1.0}) {
    QedParams p = kNominal;
    p.delta_c = s * 1e9 * p.kappa;
    EXPECT_LT(relative_transmission(p, kG83), 1e-6);
    EXPECT_LT(relative_transmission(p, 0.0), 1e-6);
  }
}

TEST(SteadyState, InvalidRates) {
  QedParams p = kNominal;
  p.kappa = 0.0;
  try {
    steady_state_response(p, kG83);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_params);
  }
  p = kNominal;
  p.gamma = -1.0;
  EXPECT_THROW(relative_transmission(p, kG83), Error);
}

TEST(SteadyState, AgreesWithLinearSystemOracle) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    QedParams p = kNominal;
    p.delta_c = angular_from_mhz(60.0 * u(rng));
    p.delta_ac = angular_from_mhz(60.0 * u(rng));
    p.kappa = angular_from_mhz(2.0 + 1.5 * u(rng));
    p.gamma = angular_from_mhz(3.0 + 2.0 * u(rng));
    p.drive_eta = angular_from_mhz(0.1 * (1.5 + u(rng)));
    const double g = angular_from_mhz(20.0 * (1.0 + u(rng)));
    const auto r = steady_state_response(p, g);
    const auto a = linear_field_oracle(p, g);
    EXPECT_NEAR(std::abs(r.field - a), 0.0, 1e-12 * std::abs(a));
  }
}

TEST(SteadyState, PassiveTransmissionBound) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    QedParams p = kNominal;
    p.delta_c = angular_from_mhz(100.0 * u(rng));
    p.delta_ac = angular_from_mhz(100.0 * u(rng));
    const double t = relative_transmission(p, angular_from_mhz(30.0 * std::abs(u(rng))));
    EXPECT_GE(t, 0.0);
    EXPECT_LE(t, 1.0 + 1e-9);
  }
}

TEST(SteadyState, QuadraticInDrive) {
  const auto a = steady_state_response(with_drive(kNominal, 1e6), kG83);
  const auto b = steady_state_response(with_drive(kNominal, 3e6), kG83);
  EXPECT_NEAR(b.photon_number / a.photon_number, 9.0, 1e-12);
  EXPECT_NEAR(b.atomic_excitation / a.atomic_excitation, 9.0, 1e-12);
}

TEST(SteadyState, DipDeepensWithCoupling) {
  double last = 1.0;
  for (double frac = 0.05; frac <= 1.5; frac += 0.05) {
    const double t = relative_transmission(kNominal, frac * kNominal.g0);
    EXPECT_LT(t, last);
    last = t;
  }
}

TEST(SteadyState, SaturationFlag) {
  const double eta = drive_for_photon_number(kNominal, kG83, 0.6);
  EXPECT_TRUE(steady_state_response(with_drive(kNominal, eta), kG83).saturation_warning);
}

TEST(Coupling, ProbeModeProfile) {
  const auto geom = CavityGeometry::nominal();
  const double g0 = kNominal.g0;
  EXPECT_DOUBLE_EQ(position_dependent_coupling(geom, {}, g0), g0);
  const double node = geom.probe_wavelength / 4.0;
  EXPECT_NEAR(position_dependent_coupling(geom, {0, 0, node}, g0), 0.0, 1e-9 * g0);
  // Invert the Gaussian envelope for g = 0.83 g0.
  const double rho = geom.waist * std::sqrt(std::log(1.0 / (0.83 * 0.83)) / 2.0);
  EXPECT_NEAR(rho / geom.waist, 0.4317, 1e-4);
  EXPECT_NEAR(position_dependent_coupling(geom, {rho, 0, 0}, g0) / g0, 0.83, 1e-12);
  EXPECT_THROW(position_dependent_coupling(geom, {0, 0, geom.length}, g0), Error);
}

TEST(MasterEquation, EmptyCavityIsExact) {
  QedParams p = kNominal;
  p.delta_c = angular_from_mhz(0.7);
  p.drive_eta = drive_for_bare_photons(p, 0.01);
  const auto m = master_equation_steady_state(p, 0.0);
  const double expected = std::norm(p.drive_eta / std::complex<double>(p.kappa, -p.delta_c));
  EXPECT_NEAR(m.response.photon_number, expected, 1e-10 * expected);
}

// At <a^+a> = 0.022 the atom is already weakly saturated: the linear model
// misses a correction of about 4 <s^+s^-> in the photon number.
TEST(MasterEquation, NominalPointSaturationCorrection) {
  const double eta = drive_for_photon_number(kNominal, kG83, 0.022);
  const QedParams p = with_drive(kNominal, eta);
  const auto an = steady_state_response(p, kG83);
  const auto me = master_equation_steady_state(p, kG83, 5);
  EXPECT_LT(rel(me.response.atomic_excitation, an.atomic_excitation), 0.01);
  EXPECT_NEAR(me.response.photon_number / an.photon_number - 1.0, 0.0123, 0.0005);
  EXPECT_NEAR(std::norm(me.response.field_ratio) / std::norm(an.field_ratio) - 1.0, 0.0114, 0.0005);
  EXPECT_FALSE(me.response.truncation_warning);
  // Same point with a ten times weaker drive sits well inside 1%.
  const QedParams weak = with_drive(kNominal, eta / std::sqrt(10.0));
  const auto an_w = steady_state_response(weak, kG83);
  const auto me_w = master_equation_steady_state(weak, kG83, 5);
  EXPECT_LT(rel(me_w.response.photon_number, an_w.photon_number), 0.01);
  EXPECT_LT(rel(std::norm(me_w.response.field_ratio), std::norm(an_w.field_ratio)), 0.01);
}

TEST(MasterEquation, DivergesUnderStrongDrive) {
  const double eta = drive_for_photon_number(kNominal, kG83, 0.4);
  const QedParams p = with_drive(kNominal, eta);
  const auto an = steady_state_response(p, kG83);
  const auto me = master_equation_steady_state(p, kG83, 8);
  const double dev = std::max(rel(me.response.photon_number, an.photon_number),
                              rel(me.response.atomic_excitation, an.atomic_excitation));
  EXPECT_GT(dev, 0.05);
}

TEST(MasterEquation, TruncationFlag) {
  const QedParams p = with_drive(kNominal, drive_for_bare_photons(kNominal, 1.0));
  EXPECT_TRUE(master_equation_steady_state(p, 0.0, 3).response.truncation_warning);
}

TEST(MasterEquation, DensityMatrixSanity) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 5; ++i) {
    QedParams p = kNominal;
    p.delta_c = angular_from_mhz(20.0 * u(rng));
    p.delta_ac = angular_from_mhz(40.0 * u(rng));
    const double g = kNominal.g0 * (0.5 + 0.5 * std::abs(u(rng)));
    p.drive_eta = drive_for_photon_number(p, g, 0.05);
    const auto me = master_equation_steady_state(p, g);
    const auto& rho = me.density;
    EXPECT_NEAR(std::abs(rho.trace() - 1.0), 0.0, 1e-10);
    EXPECT_LT((rho - rho.adjoint()).cwiseAbs().maxCoeff(), 1e-10);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(0.5 * (rho + rho.adjoint()));
    EXPECT_GT(es.eigenvalues().minCoeff(), -1e-8);
  }
}

TEST(MasterEquation, RejectsTinyTruncation) {
  EXPECT_THROW(master_equation_steady_state(kNominal, kG83, 1), Error);
}
