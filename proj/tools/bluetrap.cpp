// bluetrap: command-line driver for the trap, QED, spectrum, detection and
// dynamics modules. Run `bluetrap --help` for the subcommands.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bluetrap/config.hpp"

using namespace bluetrap;
namespace fs = std::filesystem;
using nlohmann::ordered_json;

#ifndef BLUETRAP_DEFAULT_PROFILE_DIR
#define BLUETRAP_DEFAULT_PROFILE_DIR "profiles"
#endif

namespace {

constexpr double kPhotonsPerPicowatt = 1.2;

struct Globals {
  std::string config_file;
  std::string profile;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int workers = -1;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::invalid_config, "cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path profile_path(const std::string& name) {
  fs::path p(name);
  if (p.has_parent_path() || p.extension() == ".profile") {
    if (fs::exists(p)) return p;
  }
  const char* env = std::getenv("BLUETRAP_PROFILE_DIR");
  const fs::path dir = env && *env ? fs::path(env) : fs::path(BLUETRAP_DEFAULT_PROFILE_DIR);
  fs::path candidate = dir / name;
  if (candidate.extension() != ".profile") candidate += ".profile";
  if (!fs::exists(candidate)) throw Error(ErrorCode::invalid_config, "no profile '" + name + "' in " + dir.string());
  return candidate;
}

void prefix_location(Error& e, const std::string& file) { e = Error(e.code(), file + ": " + e.what()); }

// Everything a subcommand needs: the resolved configuration and its output sink.
class Session {
 public:
  Session(const Globals& g, std::string command) : command_(std::move(command)) {
    std::string source = "defaults";
    std::string text;
    if (!g.config_file.empty() && !g.profile.empty())
      throw Error(ErrorCode::invalid_config, "--config and --profile are mutually exclusive");
    if (!g.config_file.empty()) source = g.config_file;
    if (!g.profile.empty()) source = profile_path(g.profile).string();
    if (source != "defaults") text = slurp(source);
    try {
      config_ = parse_config(text);
    } catch (Error& e) {
      prefix_location(e, source);
      throw e;
    }
    if (g.seed_given) config_.run.seed = g.seed;
    if (g.workers >= 0) config_.run.workers = g.workers;
    config_.validate();
    out_dir_ = g.out.empty() ? fs::path(config_.run.output) : fs::path(g.out);
    fs::create_directories(out_dir_);
    // The worker count never changes results, so it is kept out of the hash.
    RunConfig hashed = config_;
    hashed.run.workers = 0;
    hashed.run.output = ".";
    hash_ = config_hash(hashed);
    source_ = source;
  }

  const RunConfig& config() const { return config_; }
  std::uint64_t seed() const { return config_.run.seed; }
  std::string stamp() const { return "config_hash=" + hash_ + " seed=" + std::to_string(seed()); }

  std::ofstream open(const std::string& name) {
    std::ofstream os(out_dir_ / name, std::ios::binary);
    if (!os) throw Error(ErrorCode::invalid_config, "cannot write " + (out_dir_ / name).string());
    files_.push_back(name);
    return os;
  }

  ordered_json& options() { return options_; }

  // Writes the effective configuration and a manifest listing every output.
  void finish() {
    RunConfig replay = config_;
    replay.run.workers = 0;
    replay.run.output = ".";
    {
      std::ofstream os(out_dir_ / "config.profile", std::ios::binary);
      os << emit_config(replay);
    }
    ordered_json m;
    m["program"] = "bluetrap";
    m["version"] = BLUETRAP_VERSION;
    m["command"] = command_;
    m["config_hash"] = hash_;
    m["seed"] = seed();
    m["config_source"] = fs::path(source_).filename().string();
    m["options"] = options_;
    m["versions"] = {{"bluetrap", BLUETRAP_VERSION},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                     {"cli11", CLI11_VERSION},
                     {"compiler", __VERSION__}};
    ordered_json files = ordered_json::array();
    for (const auto& f : files_) files.push_back({{"name", f}, {"fnv1a64", file_hash(out_dir_ / f)}});
    m["files"] = files;
    m["replay_config"] = "config.profile";
    std::ofstream os(out_dir_ / "manifest.json", std::ios::binary);
    os << m.dump(2) << '\n';
  }

 private:
  static std::string file_hash(const fs::path& p) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : slurp(p)) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  std::string command_;
  RunConfig config_;
  fs::path out_dir_;
  std::string hash_;
  std::string source_;
  std::vector<std::string> files_;
  ordered_json options_ = ordered_json::object();
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- potential-map ----

struct MapOptions {
  std::string phase = "closed";
  std::string plane = "xz";
  int points = 41;
  double transverse_span = 2.0;  // waists
  double axial_span = 1.0;       // probe wavelengths
};

int run_potential_map(Session& s, const MapOptions& o) {
  if (o.points < 2) throw Error(ErrorCode::invalid_config, "--points must be >= 2");
  const RunConfig& c = s.config();
  const TrapConfig trap = c.trap_config(o.phase == "guiding" ? TrapPhase::guiding : TrapPhase::closed);
  s.options() = {{"phase", o.phase}, {"plane", o.plane}, {"points", o.points},
                 {"transverse_span", o.transverse_span}, {"axial_span", o.axial_span}};
  const double w = c.geometry.waist * o.transverse_span;
  const double a = c.geometry.probe_wavelength * o.axial_span;
  auto os = s.open("potential_map.csv");
  os << "# " << s.stamp() << " phase=" << o.phase << " plane=" << o.plane << '\n';
  os << "x_m,y_m,z_m,U_hMHz,Fx_N,Fy_N,Fz_N\n";
  char buf[256];
  for (int i = 0; i < o.points; ++i) {
    for (int j = 0; j < o.points; ++j) {
      const double u = -1.0 + 2.0 * i / (o.points - 1);
      const double v = -1.0 + 2.0 * j / (o.points - 1);
      Position r;
      if (o.plane == "xy") r = {u * w, v * w, 0.0};
      else if (o.plane == "yz") r = {0.0, u * w, v * a};
      else r = {u * w, 0.0, v * a};
      const double U = h_mhz_from_joules(potential_energy(trap, r));
      const Vec3 F = force(trap, r);
      std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.12g,%.9g,%.9g,%.9g\n", r.x, r.y, r.z, U, F.x, F.y, F.z);
      os << buf;
    }
  }
  std::cout << "wrote potential_map.csv (" << o.points * o.points << " points, " << o.phase << " phase)\n";
  return 0;
}

// ---- qed-response ----

struct QedOptions {
  double coupling_ratio = -1.0;  // <0: take from [spectrum]
  double photons = -1.0;         // <0: take detection.photons_atom
};

int run_qed_response(Session& s, const QedOptions& o) {
  const RunConfig& c = s.config();
  const double ratio = o.coupling_ratio >= 0.0 ? o.coupling_ratio : c.spectrum.coupling_ratio;
  const double photons = o.photons >= 0.0 ? o.photons : c.detection.photons_atom;
  s.options() = {{"coupling_ratio", ratio}, {"photons", photons}};
  QedParams q = c.qed_params();
  const double g = ratio * q.g0;
  q = with_drive(q, drive_for_photon_number(q, g, photons));
  const QedResponse r = steady_state_response(q, g);
  const double trans = relative_transmission(q, g);
  const double per_window = r.scatter_rate * c.detection.interval;
  char line[512];
  std::snprintf(line, sizeof line,
                "g_MHz=%.6g photon_number=%.6g excitation=%.6g scatter_rate_kHz=%.6g transmission=%.6g "
                "scattered_per_window=%.6g%s",
                mhz_from_angular(g), r.photon_number, r.atomic_excitation, r.scatter_rate * 1e-3, trans, per_window,
                r.saturation_warning ? " warning=saturation" : "");
  std::cout << line << '\n';
  auto os = s.open("qed_response.csv");
  os << "# " << s.stamp() << '\n';
  os << "g_MHz,photon_number,excitation,scatter_rate_per_s,transmission,scattered_per_window\n";
  std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", mhz_from_angular(g), r.photon_number,
                r.atomic_excitation, r.scatter_rate, trans, per_window);
  os << line;
  return 0;
}

// ---- spectrum / fit ----

int run_spectrum(Session& s) {
  const RunConfig& c = s.config();
  const QedParams q = c.qed_params();
  const double g = c.spectrum.coupling_ratio * q.g0;
  const double stark = angular_from_hz(c.spectrum.stark_shift);
  const SpectrumData data = synthesize_spectrum(q, g, stark, c.spectrum_grid(), c.synthesis());
  {
    auto os = s.open("spectrum.csv");
    write_spectrum_csv(os, data, s.stamp());
  }
  const auto [lower, upper] = normal_mode_frequencies(g, q.delta_ac);
  const double bare = c.spectrum.synthesis.bare_photons;
  std::cout << "wrote spectrum.csv (" << data.points.size() << " points); normal modes at "
            << fmt("%.2f", mhz_from_angular(lower)) << " and " << fmt("%.2f", mhz_from_angular(upper))
            << " MHz; probe " << fmt("%.3g", bare / kPhotonsPerPicowatt) << " pW (" << fmt("%.3g", bare)
            << " photons)\n";
  return 0;
}

int run_fit(Session& s, const std::string& input) {
  const RunConfig& c = s.config();
  const QedParams q = c.qed_params();
  s.options() = {{"input", fs::path(input).filename().string()}};
  std::ifstream in(input, std::ios::binary);
  if (!in) throw Error(ErrorCode::invalid_config, "cannot read " + input);
  SpectrumData data;
  try {
    data = read_spectrum_csv(in);
  } catch (Error& e) {
    prefix_location(e, input);
    throw e;
  }
  FitResult init;
  init.g_eff = 0.5 * q.g0;
  const FitResult f = fit_normal_modes(data, q, init);
  char line[512];
  std::snprintf(line, sizeof line,
                "g_over_g0=%.4f g_MHz=%.4f g_err_MHz=%.4f stark_MHz=%.4f stark_err_MHz=%.4f amplitude=%.4f "
                "chi2=%.4g dof=%d converged=%s",
                f.g_eff / q.g0, mhz_from_angular(f.g_eff), mhz_from_angular(f.g_error()),
                mhz_from_angular(f.stark_shift), mhz_from_angular(f.stark_error()), f.amplitude_scale, f.chi_squared,
                f.degrees_of_freedom, f.converged ? "true" : "false");
  std::cout << line << '\n';
  auto os = s.open("fit.csv");
  os << "# " << s.stamp() << '\n';
  os << "g_over_g0,g_MHz,g_err_MHz,stark_MHz,stark_err_MHz,amplitude,chi2,dof,converged\n";
  std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d\n", f.g_eff / q.g0,
                mhz_from_angular(f.g_eff), mhz_from_angular(f.g_error()), mhz_from_angular(f.stark_shift),
                mhz_from_angular(f.stark_error()), f.amplitude_scale, f.chi_squared, f.degrees_of_freedom,
                f.converged ? 1 : 0);
  os << line;
  if (f.degenerate) throw Error(ErrorCode::solver_failure, "fit is degenerate: the data do not constrain the coupling");
  if (!f.converged) throw Error(ErrorCode::solver_failure, "fit did not converge");
  return 0;
}

// ---- detect ----

struct DetectOptions {
  bool simulate = false;
  long long trials = -1;
};

int run_detect(Session& s, const DetectOptions& o) {
  const RunConfig& c = s.config();
  const long long trials = o.trials > 0 ? o.trials : c.detection.trials;
  s.options() = {{"simulate", o.simulate}, {"trials", o.simulate ? trials : 0}};
  const DetectionSetup setup = c.detection_setup();
  const ConfidenceReport r = confidence(setup);
  const ConfidenceCurve curve = confidence_vs_time(setup, c.detection_curve_grid(), c.detection.target);
  std::ostringstream line;
  line << "interval_us=" << fmt("%.4g", setup.interval * 1e6) << " lambda_empty=" << fmt("%.4f", setup.mean_empty())
       << " lambda_atom=" << fmt("%.4f", setup.mean_atom()) << " threshold=" << r.rule.threshold
       << " p_correct=" << fmt("%.5f", r.p_correct) << " p_false_atom=" << fmt("%.5f", r.p_false_atom)
       << " p_missed_atom=" << fmt("%.5f", r.p_missed_atom)
       << " scattered_photons=" << fmt("%.4f", r.expected_scattered_photons);
  if (curve.time_to_target)
    line << " time_to_target_us=" << fmt("%.4g", *curve.time_to_target * 1e6);
  else
    line << " time_to_target_us=none";
  if (o.simulate) {
    const ConfusionMatrix m = simulate_detection(setup, trials, s.seed(), c.workers());
    line << " simulated=" << fmt("%.5f", m.p_correct()) << " simulated_se=" << fmt("%.2g", m.standard_error());
  }
  std::cout << line.str() << '\n';
  auto os = s.open("detect_curve.csv");
  os << "# " << s.stamp() << '\n';
  os << "interval_us,p_correct\n";
  char buf[96];
  for (const auto& [tau, pc] : curve.points) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", tau * 1e6, pc);
    os << buf;
  }
  if (!curve.time_to_target)
    throw Error(ErrorCode::unreachable_target, "confidence target " + fmt("%.4g", c.detection.target) +
                                                   " is not reached within " +
                                                   fmt("%.4g", c.detection.curve_max * 1e6) + " us");
  return 0;
}

// ---- trace ----

void write_trace_svg(std::ostream& os, const EventTrace& trace, const RunConfig& c, const std::string& stamp) {
  // Detected counts per bin shown as transmitted power.
  const QedParams q = c.qed_params();
  const double per_photon = detail::detected_rate_per_photon(q);
  const double W = 800, H = 300, left = 60, bottom = 40, top = 20, right = 20;
  double t_max = 0, p_max = 0;
  std::vector<std::pair<double, double>> pts;
  for (const auto& smp : trace.samples) {
    const double photons = smp.detected_counts / (per_photon * smp.duration);
    const double pw = photons / kPhotonsPerPicowatt;
    pts.emplace_back(smp.t * 1e3, pw);
    t_max = std::max(t_max, smp.t * 1e3 + smp.duration * 1e3);
    p_max = std::max(p_max, pw);
  }
  if (t_max <= 0) t_max = 1;
  if (p_max <= 0) p_max = 1;
  auto X = [&](double t) { return left + (W - left - right) * t / t_max; };
  auto Y = [&](double p) { return H - bottom - (H - bottom - top) * p / p_max; };
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<!-- " << stamp << " -->\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom
     << "\" stroke=\"black\"/>\n";
  os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1\" points=\"";
  char buf[64];
  for (const auto& [t, p] : pts) {
    std::snprintf(buf, sizeof buf, "%.2f,%.2f ", X(t), Y(p));
    os << buf;
  }
  os << "\"/>\n";
  for (const auto& e : trace.events) {
    std::snprintf(buf, sizeof buf, "%.2f", X(e.t * 1e3));
    os << "<line x1=\"" << buf << "\" y1=\"" << top << "\" x2=\"" << buf << "\" y2=\"" << H - bottom
       << "\" stroke=\"firebrick\" stroke-dasharray=\"4,3\"/>\n";
    os << "<text x=\"" << buf << "\" y=\"" << top - 5 << "\" font-size=\"10\">" << to_string(e.kind) << "</text>\n";
  }
  os << "<text x=\"" << W / 2 << "\" y=\"" << H - 8 << "\" font-size=\"12\">time (ms), full scale "
     << fmt("%.3g", t_max) << "</text>\n";
  os << "<text x=\"12\" y=\"" << H / 2 << "\" font-size=\"12\" transform=\"rotate(-90 12 " << H / 2
     << ")\">transmission (pW), full scale " << fmt("%.3g", p_max) << "</text>\n";
  os << "</svg>\n";
}

int run_trace(Session& s, bool svg) {
  const RunConfig& c = s.config();
  s.options() = {{"svg", svg}};
  const EventTrace trace = run_capture(c.injection(), c.protocol_spec(), c.protocol_base(), c.qed_params(), s.seed());
  {
    auto os = s.open("trace.csv");
    write_trace_csv(os, trace, s.stamp());
  }
  {
    auto os = s.open("events.csv");
    write_events_csv(os, trace, s.stamp());
  }
  if (svg) {
    auto os = s.open("trace.svg");
    write_trace_svg(os, trace, c, s.stamp());
  }
  std::cout << "wrote trace.csv (" << trace.samples.size() << " bins); events:";
  for (const auto& e : trace.events) std::cout << ' ' << to_string(e.kind) << '@' << fmt("%.4f", e.t * 1e3) << "ms";
  if (trace.truncated) std::cout << " (truncated)";
  std::cout << '\n';
  const ProtocolSpec p = c.protocol_spec();
  std::cout << "probe " << fmt("%.3g", p.probe_photons_before / kPhotonsPerPicowatt) << " pW before trigger, "
            << fmt("%.3g", p.probe_photons_after / kPhotonsPerPicowatt) << " pW after\n";
  return 0;
}

// ---- storage ----

int run_storage(Session& s, long long atoms_override) {
  const RunConfig& c = s.config();
  const long long atoms = atoms_override > 0 ? atoms_override : c.storage.atoms;
  if (atoms < 10) throw Error(ErrorCode::invalid_config, "--atoms must be >= 10");
  s.options() = {{"atoms", atoms}};
  const ProtocolSpec base_protocol = c.protocol_spec();
  const TrapConfig base = c.protocol_base();
  auto summary = s.open("storage.csv");
  auto times = s.open("storage_times.csv");
  summary << "# " << s.stamp() << '\n';
  summary << "probe_photons,probe_power_pW,atoms,censored,mean_s,median_s,median_censored\n";
  times << "# " << s.stamp() << '\n';
  times << "probe_photons,atom,time_s,censored\n";
  char buf[256];
  for (std::size_t i = 0; i < c.storage.photons.size(); ++i) {
    ProtocolSpec p = base_protocol;
    p.probe_photons_after = c.storage.photons[i];
    // Each power point gets its own stream so the scan order does not matter.
    const std::uint64_t seed = c.run.seed + 0x9e3779b97f4a7c15ULL * (i + 1);
    const StorageSummary r = storage_time_ensemble(base, p, c.qed_params(), c.storage.settings,
                                                   static_cast<std::size_t>(atoms), seed, c.workers());
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%lld,%zu,%.17g,%.17g,%d\n", p.probe_photons_after,
                  p.probe_photons_after / kPhotonsPerPicowatt, atoms, r.censored_count, r.mean, r.median,
                  r.median_censored ? 1 : 0);
    summary << buf;
    for (std::size_t a = 0; a < r.times.size(); ++a) {
      std::snprintf(buf, sizeof buf, "%.17g,%zu,%.17g,%d\n", p.probe_photons_after, a, r.times[a],
                    r.censored[a] ? 1 : 0);
      times << buf;
    }
    std::cout << "photons=" << fmt("%.3g", p.probe_photons_after)
              << " power_pW=" << fmt("%.3g", p.probe_photons_after / kPhotonsPerPicowatt)
              << " median_ms=" << fmt("%.4g", r.median * 1e3) << (r.median_censored ? "+" : "")
              << " mean_ms=" << fmt("%.4g", r.mean * 1e3) << " censored=" << r.censored_count << '/' << atoms
              << std::endl;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Blue-detuned intracavity dipole trap: potentials, cavity QED response, spectra, detection and "
               "atom dynamics"};
  app.set_version_flag("--version", BLUETRAP_VERSION);
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_file, "Configuration file (key = value sections)");
  app.add_option("--profile", g.profile,
                 "Shipped profile name, looked up in $BLUETRAP_PROFILE_DIR (default " BLUETRAP_DEFAULT_PROFILE_DIR ")");
  auto* seed_opt = app.add_option("--seed", g.seed, "Override run.seed");
  app.add_option("--out", g.out, "Output directory (default run.output)");
  app.add_option("--workers", g.workers, "Worker threads for ensembles; results do not depend on it")
      ->check(CLI::NonNegativeNumber);

  MapOptions map;
  auto* pm = app.add_subcommand("potential-map", "Potential and force on a plane through the trap");
  pm->add_option("--phase", map.phase, "guiding or closed")->check(CLI::IsMember({"guiding", "closed"}));
  pm->add_option("--plane", map.plane, "xy, xz or yz")->check(CLI::IsMember({"xy", "xz", "yz"}));
  pm->add_option("--points", map.points, "Grid points per axis");
  pm->add_option("--transverse-span", map.transverse_span, "Half-width across the axis, in waists");
  pm->add_option("--axial-span", map.axial_span, "Half-width along the axis, in probe wavelengths");

  QedOptions qo;
  auto* qr = app.add_subcommand("qed-response", "Weak-drive steady state at one coupling");
  qr->add_option("--coupling-ratio", qo.coupling_ratio, "g / g0 (default spectrum.coupling_ratio)");
  qr->add_option("--photons", qo.photons, "Intracavity photon number (default detection.photons_atom)");

  auto* sp = app.add_subcommand("spectrum", "Synthesize a transmission spectrum");

  std::string fit_input;
  auto* ft = app.add_subcommand("fit", "Fit coupling and Stark shift to a spectrum file");
  ft->add_option("--input", fit_input, "Spectrum file (default <out>/spectrum.csv)");

  DetectOptions dopt;
  auto* dt = app.add_subcommand("detect", "Atom detection confidence from photon counting");
  dt->add_flag("--simulate", dopt.simulate, "Add a Monte Carlo estimate");
  dt->add_option("--trials", dopt.trials, "Monte Carlo trials (default detection.trials)");

  bool svg = false;
  auto* tr = app.add_subcommand("trace", "Simulate one capture: guide, trigger, store, escape");
  tr->add_flag("--svg", svg, "Also write trace.svg");

  long long atoms = -1;
  auto* st = app.add_subcommand("storage", "Storage-time ensembles over the probe-power scan");
  st->add_option("--atoms", atoms, "Atoms per power point (default storage.atoms)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ErrorClass::config);
  }
  g.seed_given = seed_opt->count() > 0;

  CLI::App* chosen = app.get_subcommands().front();
  try {
    Session s(g, chosen->get_name());
    int rc = 0;
    try {
      if (chosen == pm) rc = run_potential_map(s, map);
      else if (chosen == qr) rc = run_qed_response(s, qo);
      else if (chosen == sp) rc = run_spectrum(s);
      else if (chosen == ft) rc = run_fit(s, fit_input.empty() ? (fs::path(g.out.empty() ? s.config().run.output : g.out) / "spectrum.csv").string() : fit_input);
      else if (chosen == dt) rc = run_detect(s, dopt);
      else if (chosen == tr) rc = run_trace(s, svg);
      else if (chosen == st) rc = run_storage(s, atoms);
    } catch (...) {
      s.finish();
      throw;
    }
    s.finish();
    return rc;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorClass::config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorClass::numerical);
  }
}
