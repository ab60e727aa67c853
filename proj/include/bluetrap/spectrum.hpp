#pragma once

// Normal-mode transmission spectra: model, synthetic data with photon-counting
// noise, and a weighted least-squares fit for (g, stark shift, amplitude).

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bluetrap/error.hpp"
#include "bluetrap/nelder_mead.hpp"
#include "bluetrap/qed.hpp"
#include "bluetrap/random.hpp"

namespace bluetrap {

struct SpectrumPoint {
  double delta_c = 0.0;       // angular
  double transmission = 0.0;  // relative to the bare-cavity peak
  double uncertainty = 0.0;
  friend bool operator==(const SpectrumPoint&, const SpectrumPoint&) = default;
};

struct SpectrumData {
  std::vector<SpectrumPoint> points;
  double photon_calibration = 1.2;  // intracavity photons per pW of transmitted power

  void validate() const {
    if (!(photon_calibration > 0.0)) throw Error(ErrorCode::invalid_params, "photon calibration must be positive");
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!(points[i].uncertainty > 0.0))
        throw Error(ErrorCode::invalid_params, "spectrum uncertainties must be positive");
      if (i > 0 && !(points[i].delta_c > points[i - 1].delta_c))
        throw Error(ErrorCode::invalid_params, "spectrum detunings must be strictly increasing");
    }
  }
  friend bool operator==(const SpectrumData&, const SpectrumData&) = default;
};

// Transmission with the atomic resonance moved by stark_shift.
inline double model_transmission(double delta_c, double g_eff, double stark_shift, const QedParams& params) {
  QedParams p = params;
  p.delta_c = delta_c;
  p.delta_ac = params.delta_ac + stark_shift;
  return relative_transmission(p, g_eff);
}

// Dressed-state positions relative to the bare cavity, lower first (angular).
inline std::pair<double, double> normal_mode_frequencies(double g_eff, double delta_ac) {
  const double center = delta_ac / 2.0;
  const double half = std::sqrt(g_eff * g_eff + delta_ac * delta_ac / 4.0);
  return {center - half, center + half};
}

inline std::vector<double> detuning_grid(double from, double to, double step) {
  if (!(step > 0.0) || !(to >= from)) throw Error(ErrorCode::invalid_params, "invalid detuning grid");
  std::vector<double> grid;
  const auto n = static_cast<std::size_t>(std::floor((to - from) / step + 1e-9)) + 1;
  for (std::size_t i = 0; i < n; ++i) grid.push_back(from + step * static_cast<double>(i));
  return grid;
}

struct SynthesisSettings {
  int samples_per_point = 100;        // probe intervals averaged per grid point
  double probe_interval = 0.1e-3;     // s
  double cooling_interval = 0.5e-3;   // s, probe on bare resonance
  double bare_photons = 1.2;          // empty-cavity photon number at the probe power
  bool noiseless = false;             // use Poisson means instead of draws
  bool qualify = true;                // drop probes whose neighboring cooling intervals are bright
  double qualification_threshold = 0.1;
  double coupling_spread = 0.0;       // relative rms of g across intervals (synthesis only)
  std::uint64_t seed = 1;
  friend bool operator==(const SynthesisSettings&, const SynthesisSettings&) = default;
};

namespace detail {

inline double detected_rate_per_photon(const QedParams& p) { return 2.0 * p.kappa * p.detection_efficiency; }

}  // namespace detail

// Each probe interval is bracketed by two cooling intervals on bare resonance
// and is kept only if both stay below the qualification threshold. A probe
// contributes Poisson counts of model x bare rate x interval. Mean and
// Poisson standard error are recorded relative to the bare-cavity count.
inline SpectrumData synthesize_spectrum(const QedParams& params, double g_eff, double stark_shift,
                                        const std::vector<double>& grid, const SynthesisSettings& s) {
  params.validate();
  if (grid.empty()) throw Error(ErrorCode::invalid_params, "detuning grid is empty");
  if (s.samples_per_point < 1) throw Error(ErrorCode::invalid_params, "samples_per_point must be >= 1");
  if (!(s.probe_interval > 0.0) || !(s.cooling_interval > 0.0))
    throw Error(ErrorCode::invalid_config, "probe and cooling intervals must have positive duration");
  if (!(s.bare_photons > 0.0) || !(params.detection_efficiency > 0.0))
    throw Error(ErrorCode::invalid_config, "bare photon number and detection efficiency must be positive");

  const double rate = detail::detected_rate_per_photon(params) * s.bare_photons;
  const double bare_probe = rate * s.probe_interval;
  const double bare_cool = rate * s.cooling_interval;

  SpectrumData out;
  out.photon_calibration = 1.2;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    Rng rng = make_rng(s.seed, i);
    std::normal_distribution<double> spread(0.0, 1.0);
    auto draw_g = [&] {
      if (s.coupling_spread <= 0.0 || s.noiseless) return g_eff;
      return std::max(0.0, g_eff * (1.0 + s.coupling_spread * spread(rng)));
    };
    auto cooling_ok = [&](double g) {
      if (!s.qualify) return true;
      const double mean = bare_cool * model_transmission(0.0, g, stark_shift, params);
      const double counts = s.noiseless ? mean : static_cast<double>(poisson_draw(rng, mean));
      return counts < s.qualification_threshold * bare_cool;
    };

    double total = 0.0;
    int used = 0;
    for (int k = 0; k < s.samples_per_point; ++k) {
      const double g = draw_g();
      const double mean = bare_probe * model_transmission(grid[i], g, stark_shift, params);
      const double counts = s.noiseless ? mean : static_cast<double>(poisson_draw(rng, mean));
      const bool before = cooling_ok(g);
      const bool after = cooling_ok(g);
      if (before && after) {
        total += counts;
        ++used;
      }
    }
    if (used == 0) continue;
    SpectrumPoint pt;
    pt.delta_c = grid[i];
    pt.transmission = total / (used * bare_probe);
    pt.uncertainty = std::sqrt(std::max(total, 1.0)) / (used * bare_probe);
    out.points.push_back(pt);
  }
  return out;
}

struct FitResult {
  double g_eff = 0.0;        // angular
  double stark_shift = 0.0;  // angular
  double amplitude_scale = 1.0;
  double chi_squared = std::numeric_limits<double>::infinity();
  // Order (g_eff, stark_shift, amplitude_scale), angular units.
  std::array<std::array<double, 3>, 3> covariance{};
  bool converged = false;
  bool degenerate = false;
  int evaluations = 0;
  int degrees_of_freedom = 0;

  double g_error() const { return std::sqrt(std::max(0.0, covariance[0][0])); }
  double stark_error() const { return std::sqrt(std::max(0.0, covariance[1][1])); }
};

struct FitOptions {
  int grid_g = 61;
  int grid_stark = 81;
  double stark_range = angular_from_mhz(10.0);
  double g_range_factor = 1.2;  // scan g over [0, factor x g0]
  int max_evaluations = 2000;
  double relative_tolerance = 1e-10;
};

namespace detail {

struct SpectrumObjective {
  const SpectrumData& data;
  const QedParams& params;

  // Chi-squared with the amplitude profiled out (linear least squares).
  double profiled(double g, double stark, double& amplitude) const {
    double syy = 0.0, sy = 0.0;
    std::vector<double> m(data.points.size());
    for (std::size_t i = 0; i < data.points.size(); ++i) {
      const auto& p = data.points[i];
      m[i] = model_transmission(p.delta_c, g, stark, params);
      const double w = 1.0 / (p.uncertainty * p.uncertainty);
      syy += w * m[i] * m[i];
      sy += w * m[i] * p.transmission;
    }
    amplitude = syy > 0.0 ? sy / syy : 0.0;
    return chi2(g, stark, amplitude, &m);
  }

  double chi2(double g, double stark, double amplitude, const std::vector<double>* cached = nullptr) const {
    double sum = 0.0;
    for (std::size_t i = 0; i < data.points.size(); ++i) {
      const auto& p = data.points[i];
      const double m = cached ? (*cached)[i] : model_transmission(p.delta_c, g, stark, params);
      const double r = (p.transmission - amplitude * m) / p.uncertainty;
      sum += r * r;
    }
    return sum;
  }
};

}  // namespace detail

inline FitResult fit_normal_modes(const SpectrumData& data, const QedParams& params, const FitResult& init,
                                  const FitOptions& opt = {}) {
  data.validate();
  params.validate();
  if (data.points.size() < 8) throw Error(ErrorCode::invalid_params, "fit needs at least 8 spectrum points");
  const double lo = data.points.front().delta_c;
  const double hi = data.points.back().delta_c;
  if (!(lo <= std::min(params.delta_ac, 0.0) && hi >= std::max(params.delta_ac, 0.0)))
    throw Error(ErrorCode::invalid_params, "spectrum must span both the bare atom and the bare cavity");

  const detail::SpectrumObjective obj{data, params};
  const double g_unit = params.g0;
  const double s_unit = angular_from_mhz(1.0);

  // Coarse scan; the caller's initial guess competes with the grid.
  double best_g = init.g_eff, best_s = init.stark_shift, best_a = 1.0;
  double best = obj.profiled(best_g, best_s, best_a);
  for (int i = 0; i < opt.grid_g; ++i) {
    const double g = opt.g_range_factor * params.g0 * i / (opt.grid_g - 1);
    for (int j = 0; j < opt.grid_stark; ++j) {
      const double st = -opt.stark_range + 2.0 * opt.stark_range * j / (opt.grid_stark - 1);
      double a = 0.0;
      const double c = obj.profiled(g, st, a);
      if (c < best) {
        best = c;
        best_g = g;
        best_s = st;
        best_a = a;
      }
    }
  }

  // Simplex refinement in scaled coordinates (g / g0, shift in MHz, A / A0).
  const double a_unit = best_a != 0.0 ? std::abs(best_a) : 1.0;
  auto objective = [&](const std::array<double, 3>& x) { return obj.chi2(x[0] * g_unit, x[1] * s_unit, x[2] * a_unit); };
  SimplexOptions so;
  so.max_evaluations = opt.max_evaluations;
  so.relative_tolerance = opt.relative_tolerance;
  std::array<double, 3> x{best_g / g_unit, best_s / s_unit, best_a / a_unit};
  std::array<double, 3> step{0.02, 0.25, 0.02};
  FitResult out;
  SimplexResult<3> sr;
  int used = 0;
  for (int restart = 0; restart < 3 && used < opt.max_evaluations; ++restart) {
    so.max_evaluations = opt.max_evaluations - used;
    sr = nelder_mead(objective, x, step, so);
    used += sr.evaluations;
    const bool moved = std::abs(sr.x[0] - x[0]) > 1e-9 || std::abs(sr.x[1] - x[1]) > 1e-7;
    x = sr.x;
    step = {1e-3, 1e-2, 1e-3};
    if (sr.converged && !moved) break;
  }
  out.g_eff = std::abs(x[0]) * g_unit;
  out.stark_shift = x[1] * s_unit;
  out.amplitude_scale = x[2] * a_unit;
  out.chi_squared = sr.value;
  out.converged = sr.converged && std::isfinite(sr.value);
  out.evaluations = used + opt.grid_g * opt.grid_stark;
  out.degrees_of_freedom = static_cast<int>(data.points.size()) - 3;

  // Covariance from the curvature of chi^2: chi^2 ~ d^T (2 C^-1 / 2) d, so C = 2 H^-1.
  const std::array<double, 3> h{1e-4, 1e-3, 1e-4};
  Eigen::Matrix3d hess;
  const double f0 = objective(x);
  for (int i = 0; i < 3; ++i) {
    for (int j = i; j < 3; ++j) {
      auto shifted = [&](double si, double sj) {
        std::array<double, 3> p = x;
        p[i] += si * h[i];
        p[j] += sj * h[j];
        return objective(p);
      };
      double v;
      if (i == j)
        v = (shifted(0.5, 0.5) - 2.0 * f0 + shifted(-0.5, -0.5)) / (h[i] * h[i]);
      else
        v = (shifted(1, 1) - shifted(1, -1) - shifted(-1, 1) + shifted(-1, -1)) / (4.0 * h[i] * h[j]);
      hess(i, j) = hess(j, i) = v;
    }
  }
  const std::array<double, 3> unit{g_unit, s_unit, a_unit};
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(hess);
  if (es.eigenvalues().minCoeff() <= 1e-12 * std::max(1.0, es.eigenvalues().maxCoeff())) {
    out.degenerate = true;
    for (auto& row : out.covariance) row.fill(std::numeric_limits<double>::infinity());
  } else {
    const Eigen::Matrix3d cov = 2.0 * hess.inverse();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) out.covariance[i][j] = cov(i, j) * unit[i] * unit[j];
    out.degenerate = out.g_error() > 0.5 * params.g0;
  }
  return out;
}

// Spectrum file: optional '#' comment lines, one header line, then rows
// delta_c_MHz,transmission,uncertainty.
inline constexpr const char* kSpectrumHeader = "delta_c_MHz,transmission,uncertainty";

inline void write_spectrum_csv(std::ostream& os, const SpectrumData& data, const std::string& comment = {}) {
  if (!comment.empty()) os << "# " << comment << '\n';
  os << kSpectrumHeader << '\n';
  char buf[128];
  for (const auto& p : data.points) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", mhz_from_angular(p.delta_c), p.transmission, p.uncertainty);
    os << buf;
  }
}

inline SpectrumData read_spectrum_csv(std::istream& is) {
  SpectrumData data;
  std::string line;
  int line_no = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != kSpectrumHeader)
        throw Error(ErrorCode::parse_error, "line " + std::to_string(line_no) + ": expected header '" +
                                                kSpectrumHeader + "'");
      header = true;
      continue;
    }
    std::istringstream row(line);
    std::array<double, 3> v{};
    for (int k = 0; k < 3; ++k) {
      std::string cell;
      if (!std::getline(row, cell, ','))
        throw Error(ErrorCode::parse_error, "line " + std::to_string(line_no) + ": expected 3 columns");
      try {
        std::size_t used = 0;
        v[k] = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw Error(ErrorCode::parse_error,
                    "line " + std::to_string(line_no) + ", column " + std::to_string(k + 1) + ": not a number");
      }
    }
    data.points.push_back({angular_from_mhz(v[0]), v[1], v[2]});
  }
  if (!header) throw Error(ErrorCode::parse_error, "spectrum file has no header line");
  data.validate();
  return data;
}

}  // namespace bluetrap
