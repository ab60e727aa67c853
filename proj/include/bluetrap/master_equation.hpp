#pragma once

// Steady state of the driven Jaynes-Cummings master equation on
// (two-level atom) x (Fock space truncated at n_max photons). Serves as an
// independent check of the weak-excitation formulas in qed.hpp.
//
// Frame rotating at the laser frequency, hbar = 1:
//   H = -delta_c a^+a - delta_a s^+s^- + g (a^+ s^- + s^+ a) + i eta (a^+ - a)
//   collapse operators sqrt(2 kappa) a and sqrt(2 gamma) s^-.

#include <Eigen/Dense>

#include <complex>
#include <sstream>

#include "bluetrap/error.hpp"
#include "bluetrap/qed.hpp"

namespace bluetrap {

struct MasterEquationResult {
  QedResponse response;
  Eigen::MatrixXcd density;
  double top_level_population = 0.0;
  double reciprocal_condition = 0.0;
};

inline constexpr double kTruncationPopulationLimit = 1e-6;

namespace detail {

// Column-major vectorization: vec(A X B) = (B^T kron A) vec(X).
inline Eigen::MatrixXcd kron(const Eigen::MatrixXcd& a, const Eigen::MatrixXcd& b) {
  Eigen::MatrixXcd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

}  // namespace detail

inline MasterEquationResult master_equation_steady_state(const QedParams& p, double g_eff, int n_max = 5) {
  p.validate();
  if (n_max < 2) throw Error(ErrorCode::invalid_params, "Fock truncation must be at least 2");

  using cd = std::complex<double>;
  using Mat = Eigen::MatrixXcd;
  const int levels = n_max + 1;
  const int dim = 2 * levels;  // index = atom * levels + photons, atom 0 = ground
  auto idx = [levels](int atom, int n) { return atom * levels + n; };

  Mat a = Mat::Zero(dim, dim);
  Mat sm = Mat::Zero(dim, dim);
  for (int s = 0; s < 2; ++s)
    for (int n = 1; n < levels; ++n) a(idx(s, n - 1), idx(s, n)) = std::sqrt(static_cast<double>(n));
  for (int n = 0; n < levels; ++n) sm(idx(0, n), idx(1, n)) = 1.0;
  const Mat ad = a.adjoint();
  const Mat sp = sm.adjoint();
  const Mat id = Mat::Identity(dim, dim);

  const double delta_a = p.delta_c - p.delta_ac;
  const Mat h = -p.delta_c * (ad * a) - delta_a * (sp * sm) + g_eff * (ad * sm + sp * a) +
                cd(0.0, p.drive_eta) * (ad - a);

  Mat liouvillian = cd(0.0, -1.0) * (detail::kron(id, h) - detail::kron(h.transpose(), id));
  auto dissipate = [&](const Mat& c, double rate) {
    const Mat cdc = c.adjoint() * c;
    liouvillian += rate * (detail::kron(c.conjugate(), c) - 0.5 * detail::kron(id, cdc) -
                           0.5 * detail::kron(cdc.transpose(), id));
  };
  dissipate(a, 2.0 * p.kappa);
  dissipate(sm, 2.0 * p.gamma);

  // Bordered system: replace the first equation with the unit-trace constraint.
  Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(dim * dim);
  liouvillian.row(0).setZero();
  for (int i = 0; i < dim; ++i) liouvillian(0, i + i * dim) = 1.0;
  rhs(0) = 1.0;

  Eigen::PartialPivLU<Mat> lu(liouvillian);
  MasterEquationResult out;
  out.reciprocal_condition = lu.rcond();
  if (!(out.reciprocal_condition > 1e-14)) {
    std::ostringstream os;
    os << "steady-state Liouvillian is singular or ill-conditioned (rcond ~ " << out.reciprocal_condition << ")";
    throw Error(ErrorCode::solver_failure, os.str());
  }
  const Eigen::VectorXcd x = lu.solve(rhs);
  out.density = Eigen::Map<const Mat>(x.data(), dim, dim);

  QedResponse& r = out.response;
  r.field = (a * out.density).trace();
  r.field_ratio = p.drive_eta != 0.0 ? r.field * p.kappa / p.drive_eta : cd(0.0);
  r.photon_number = (ad * a * out.density).trace().real();
  r.atomic_excitation = (sp * sm * out.density).trace().real();
  r.scatter_rate = 2.0 * p.gamma * r.atomic_excitation;
  r.saturation_warning =
      r.photon_number >= kSaturationPhotonNumber || r.atomic_excitation > kSaturationExcitation;
  out.top_level_population = out.density(idx(0, n_max), idx(0, n_max)).real() +
                             out.density(idx(1, n_max), idx(1, n_max)).real();
  r.truncation_warning = out.top_level_population >= kTruncationPopulationLimit;
  return out;
}

}  // namespace bluetrap
