#pragma once

// Plain-text run configuration: `[section]` headers, `key = value` lines,
// numbers with unit suffixes. Frequencies are stored as ordinary Hz and trap
// heights as h x Hz so that emit -> parse reproduces every field bit for bit.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "bluetrap/detect.hpp"
#include "bluetrap/dynamics.hpp"
#include "bluetrap/error.hpp"
#include "bluetrap/modes.hpp"
#include "bluetrap/potential.hpp"
#include "bluetrap/qed.hpp"
#include "bluetrap/spectrum.hpp"
#include "bluetrap/units.hpp"

namespace bluetrap {

enum class ModeRole { axial, guide, doughnut, always };

inline const char* to_string(ModeRole r) {
  switch (r) {
    case ModeRole::axial: return "axial";
    case ModeRole::guide: return "guide";
    case ModeRole::doughnut: return "doughnut";
    case ModeRole::always: return "always";
  }
  return "?";
}

struct ModeEntry {
  std::string name;
  TransverseOrder order = kTem00;
  int fsr_offset = 0;
  double height = 0.0;  // h x Hz
  double scale = 1.0;
  ModeRole role = ModeRole::always;
  friend bool operator==(const ModeEntry& a, const ModeEntry& b) {
    return a.name == b.name && a.order.m == b.order.m && a.order.n == b.order.n && a.fsr_offset == b.fsr_offset &&
           a.height == b.height && a.scale == b.scale && a.role == b.role;
  }
};

struct RunConfig {
  struct Geometry {
    double probe_wavelength = 780.2e-9;
    int probe_index = 313;
    double waist = 29e-6;
    double finesse = 4.4e5;
    friend bool operator==(const Geometry&, const Geometry&) = default;
  } geometry;

  struct Qed {  // Hz
    double g0 = 16e6;
    double kappa = 1.4e6;
    double gamma = 3e6;
    double delta_c = 0.0;
    double delta_ac = -35e6;
    double detection_efficiency = 0.05;
    friend bool operator==(const Qed&, const Qed&) = default;
  } qed;

  struct Trap {
    bool gravity = false;
    double atom_mass = kRubidium85Mass;
    double stark_coefficient = -2.0;
    double stabilization_shift = 0.0;  // Hz
    friend bool operator==(const Trap&, const Trap&) = default;
  } trap;

  std::vector<ModeEntry> modes = {
      {"axial", kTem00, 3, 346e6, 1.0, ModeRole::axial},
      {"guide", kTem10, 2, 20.6e6, 1.0, ModeRole::guide},
      {"doughnut_x", kTem10, 2, 30e6, 1.0, ModeRole::doughnut},
      {"doughnut_y", kTem01, 2, 30e6, 1.0, ModeRole::doughnut},
  };

  // Heights and FSR offsets here are ignored; they come from `modes`.
  ProtocolSpec protocol;

  struct Trace {
    double x = 0.0;             // m, injection offset from the funnel plane
    double vy = 0.08;           // m/s
    double start_radius = 3.0;  // waists below the axis
    friend bool operator==(const Trace&, const Trace&) = default;
  } trace;

  struct Detection {
    double interval = 10e-6;
    double prior = 0.5;
    double dark_rate = 0.0;  // counts/s
    double photons_empty = 0.44;
    double photons_atom = 0.022;
    double coupling_ratio = 0.83;  // g / g0 of the present atom, for its scattering budget
    double target = 0.95;
    double curve_max = 40e-6;
    int curve_points = 160;
    long long trials = 1000000;
    friend bool operator==(const Detection&, const Detection&) = default;
  } detection;

  struct Spectrum {
    double from = -50e6;  // Hz
    double to = 15e6;
    double step = 0.5e6;
    double coupling_ratio = 0.83;  // g / g0 used for synthesis
    double stark_shift = 0.7e6;    // Hz
    SynthesisSettings synthesis;   // seed is taken from [run]
    friend bool operator==(const Spectrum&, const Spectrum&) = default;
  } spectrum;

  struct Storage {
    StorageSettings settings;
    long long atoms = 100;
    std::vector<double> photons = {1.0, 2.0, 4.0, 8.0};
    friend bool operator==(const Storage&, const Storage&) = default;
  } storage;

  struct Run {
    std::uint64_t seed = 1;
    int workers = 0;  // 0: all hardware threads
    std::string output = ".";
    friend bool operator==(const Run&, const Run&) = default;
  } run;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;

  // ---- derived module inputs ----

  CavityGeometry cavity() const {
    return CavityGeometry::from_probe_index(geometry.probe_wavelength, geometry.probe_index, geometry.waist,
                                            geometry.finesse);
  }

  QedParams qed_params() const {
    QedParams p;
    p.g0 = angular_from_hz(qed.g0);
    p.kappa = angular_from_hz(qed.kappa);
    p.gamma = angular_from_hz(qed.gamma);
    p.delta_c = angular_from_hz(qed.delta_c);
    p.delta_ac = angular_from_hz(qed.delta_ac);
    p.detection_efficiency = qed.detection_efficiency;
    return p;
  }

  // Modes active in a phase: axial and always-on modes plus guide or doughnut.
  TrapConfig trap_config(TrapPhase phase) const {
    TrapConfig c;
    c.geometry = cavity();
    c.gravity_on = trap.gravity;
    c.atom_mass = trap.atom_mass;
    c.stark_coefficient = trap.stark_coefficient;
    c.stabilization_shift = angular_from_hz(trap.stabilization_shift);
    for (const auto& m : modes) {
      const bool on = m.role == ModeRole::axial || m.role == ModeRole::always ||
                      (m.role == ModeRole::guide && phase == TrapPhase::guiding) ||
                      (m.role == ModeRole::doughnut && phase == TrapPhase::closed);
      if (on) c.modes.push_back(ModeSpec{m.order, m.fsr_offset, kPlanck * m.height, m.scale});
    }
    if (c.modes.empty()) throw Error(ErrorCode::invalid_config, "no mode is active in this phase");
    c.validate();
    return c;
  }

  // The protocol needs the standard layout: one TEM00 axial mode, one TEM10
  // guide and a TEM10 + TEM01 doughnut sharing the guide's FSR offset.
  ProtocolSpec protocol_spec() const {
    const ModeEntry* axial = nullptr;
    const ModeEntry* guide = nullptr;
    std::vector<const ModeEntry*> ring;
    for (const auto& m : modes) {
      if (m.role == ModeRole::axial) {
        if (axial) throw Error(ErrorCode::invalid_config, "capture protocol needs exactly one axial mode");
        axial = &m;
      } else if (m.role == ModeRole::guide) {
        if (guide) throw Error(ErrorCode::invalid_config, "capture protocol needs exactly one guide mode");
        guide = &m;
      } else if (m.role == ModeRole::doughnut) {
        ring.push_back(&m);
      } else {
        throw Error(ErrorCode::invalid_config, "capture protocol does not support always-on modes");
      }
    }
    auto fail = [](const char* msg) { throw Error(ErrorCode::invalid_config, msg); };
    if (!axial || !(axial->order == kTem00)) fail("capture protocol needs one TEM00 axial mode");
    if (!guide || !(guide->order == kTem10)) fail("capture protocol needs one TEM10 guide mode");
    if (ring.size() != 2 || !(ring[0]->order == kTem10 || ring[1]->order == kTem10) ||
        !(ring[0]->order == kTem01 || ring[1]->order == kTem01))
      fail("capture protocol needs a TEM10 + TEM01 doughnut");
    if (ring[0]->fsr_offset != guide->fsr_offset || ring[1]->fsr_offset != guide->fsr_offset)
      fail("doughnut and guide modes must share one FSR offset");
    if (ring[0]->height * ring[0]->scale != ring[1]->height * ring[1]->scale)
      fail("both doughnut modes must carry the same height");
    ProtocolSpec p = protocol;
    p.axial_height = kPlanck * axial->height * axial->scale;
    p.guiding_height = kPlanck * guide->height * guide->scale;
    p.doughnut_height = kPlanck * ring[0]->height * ring[0]->scale;
    p.axial_offset = axial->fsr_offset;
    p.ring_offset = guide->fsr_offset;
    p.validate();
    return p;
  }

  TrapConfig protocol_base() const {
    TrapConfig c = trap_config(TrapPhase::closed);
    c.gravity_on = protocol.gravity;
    return c;
  }

  AtomState injection() const {
    return funnel_injection(cavity(), trace.x, trace.vy, trace.start_radius);
  }

  DetectionSetup detection_setup() const {
    const QedParams q = qed_params();
    DetectionSetup s = detection_setup_from_photons(detection.photons_empty, detection.photons_atom, q,
                                                    detection.interval, detection.prior, detection.dark_rate);
    const double g = detection.coupling_ratio * q.g0;
    s.atom_scatter_rate =
        steady_state_response(with_drive(q, drive_for_photon_number(q, g, detection.photons_atom)), g).scatter_rate;
    return s;
  }

  std::vector<double> detection_curve_grid() const {
    std::vector<double> grid;
    for (int i = 1; i <= detection.curve_points; ++i) grid.push_back(detection.curve_max * i / detection.curve_points);
    return grid;
  }

  std::vector<double> spectrum_grid() const {
    return detuning_grid(angular_from_hz(spectrum.from), angular_from_hz(spectrum.to), angular_from_hz(spectrum.step));
  }

  SynthesisSettings synthesis() const {
    SynthesisSettings s = spectrum.synthesis;
    s.seed = run.seed;
    return s;
  }

  unsigned workers() const { return run.workers > 0 ? static_cast<unsigned>(run.workers) : default_workers(); }

  void validate() const;
};

namespace config_detail {

enum class Kind {
  length, frequency, time, temperature, velocity, mass, damping, number, integer, count, seed, flag, text,
  integrator, order, role, number_list,
};

// Sub-unit prefixes divide by an exact power of ten, so "780.2 nm" parses to
// the same double as the literal 780.2e-9.
struct Unit {
  std::string_view name;
  double scale;
  double to_si(double v) const { return scale < 1.0 ? v / std::round(1.0 / scale) : v * scale; }
  double from_si(double x) const { return scale < 1.0 ? x * std::round(1.0 / scale) : x / scale; }
};

inline const std::vector<Unit>& units_for(Kind k) {
  static const std::vector<Unit> length{{"um", 1e-6}, {"nm", 1e-9}, {"mm", 1e-3}, {"m", 1.0}, {"µm", 1e-6}};
  static const std::vector<Unit> frequency{{"MHz", 1e6}, {"kHz", 1e3}, {"GHz", 1e9}, {"Hz", 1.0}};
  static const std::vector<Unit> time{{"ms", 1e-3}, {"us", 1e-6}, {"ns", 1e-9}, {"s", 1.0}, {"µs", 1e-6}};
  static const std::vector<Unit> temperature{{"mK", 1e-3}, {"uK", 1e-6}, {"K", 1.0}, {"µK", 1e-6}};
  static const std::vector<Unit> velocity{{"m/s", 1.0}, {"mm/s", 1e-3}};
  static const std::vector<Unit> mass{{"kg", 1.0}};
  static const std::vector<Unit> damping{{"kg/s", 1.0}};
  static const std::vector<Unit> none;
  switch (k) {
    case Kind::length: return length;
    case Kind::frequency: return frequency;
    case Kind::time: return time;
    case Kind::temperature: return temperature;
    case Kind::velocity: return velocity;
    case Kind::mass: return mass;
    case Kind::damping: return damping;
    default: return none;
  }
}

struct Field {
  std::string_view key;
  Kind kind;
  void* target;
};

inline std::vector<Field> fields(RunConfig& c, std::string_view section) {
  auto& p = c.protocol;
  auto& sy = c.spectrum.synthesis;
  auto& st = c.storage.settings;
  if (section == "geometry")
    return {{"probe_wavelength", Kind::length, &c.geometry.probe_wavelength},
            {"probe_index", Kind::integer, &c.geometry.probe_index},
            {"waist", Kind::length, &c.geometry.waist},
            {"finesse", Kind::number, &c.geometry.finesse}};
  if (section == "qed")
    return {{"g0", Kind::frequency, &c.qed.g0},
            {"kappa", Kind::frequency, &c.qed.kappa},
            {"gamma", Kind::frequency, &c.qed.gamma},
            {"delta_c", Kind::frequency, &c.qed.delta_c},
            {"delta_ac", Kind::frequency, &c.qed.delta_ac},
            {"detection_efficiency", Kind::number, &c.qed.detection_efficiency}};
  if (section == "trap")
    return {{"gravity", Kind::flag, &c.trap.gravity},
            {"atom_mass", Kind::mass, &c.trap.atom_mass},
            {"stark_coefficient", Kind::number, &c.trap.stark_coefficient},
            {"stabilization_shift", Kind::frequency, &c.trap.stabilization_shift}};
  if (section == "protocol")
    return {{"arm_time", Kind::time, &p.arm_time},
            {"trigger_fraction", Kind::number, &p.trigger_fraction},
            {"escape_fraction", Kind::number, &p.escape_fraction},
            {"probe_photons_before", Kind::number, &p.probe_photons_before},
            {"probe_photons_after", Kind::number, &p.probe_photons_after},
            {"cooling_interval", Kind::time, &p.schedule.cooling},
            {"probing_interval", Kind::time, &p.schedule.probing},
            {"friction_beta", Kind::damping, &p.friction_beta},
            {"trigger_latency", Kind::time, &p.trigger_latency},
            {"estimator_window", Kind::time, &p.estimator_window},
            {"escape_window", Kind::time, &p.escape_window},
            {"sample_interval", Kind::time, &p.sample_interval},
            {"max_time", Kind::time, &p.max_time},
            {"post_escape_time", Kind::time, &p.post_escape_time},
            {"mode_volume_radius", Kind::number, &p.mode_volume_radius},
            {"gravity", Kind::flag, &p.gravity},
            {"integrator", Kind::integrator, &p.integrator},
            {"probe_force", Kind::flag, &p.probe_force}};
  if (section == "trace")
    return {{"x", Kind::length, &c.trace.x},
            {"vy", Kind::velocity, &c.trace.vy},
            {"start_radius", Kind::number, &c.trace.start_radius}};
  if (section == "detection")
    return {{"interval", Kind::time, &c.detection.interval},
            {"prior", Kind::number, &c.detection.prior},
            {"dark_rate", Kind::frequency, &c.detection.dark_rate},
            {"photons_empty", Kind::number, &c.detection.photons_empty},
            {"photons_atom", Kind::number, &c.detection.photons_atom},
            {"coupling_ratio", Kind::number, &c.detection.coupling_ratio},
            {"target", Kind::number, &c.detection.target},
            {"curve_max", Kind::time, &c.detection.curve_max},
            {"curve_points", Kind::integer, &c.detection.curve_points},
            {"trials", Kind::count, &c.detection.trials}};
  if (section == "spectrum")
    return {{"from", Kind::frequency, &c.spectrum.from},
            {"to", Kind::frequency, &c.spectrum.to},
            {"step", Kind::frequency, &c.spectrum.step},
            {"coupling_ratio", Kind::number, &c.spectrum.coupling_ratio},
            {"stark_shift", Kind::frequency, &c.spectrum.stark_shift},
            {"samples_per_point", Kind::integer, &sy.samples_per_point},
            {"probe_interval", Kind::time, &sy.probe_interval},
            {"cooling_interval", Kind::time, &sy.cooling_interval},
            {"bare_photons", Kind::number, &sy.bare_photons},
            {"noiseless", Kind::flag, &sy.noiseless},
            {"qualify", Kind::flag, &sy.qualify},
            {"qualification_threshold", Kind::number, &sy.qualification_threshold},
            {"coupling_spread", Kind::number, &sy.coupling_spread}};
  if (section == "storage")
    return {{"atoms", Kind::count, &c.storage.atoms},
            {"photons", Kind::number_list, &c.storage.photons},
            {"temperature", Kind::temperature, &st.temperature},
            {"max_time", Kind::time, &st.max_time},
            {"scattering", Kind::flag, &st.scattering},
            {"friction", Kind::flag, &st.friction}};
  if (section == "run")
    return {{"seed", Kind::seed, &c.run.seed},
            {"workers", Kind::integer, &c.run.workers},
            {"output", Kind::text, &c.run.output}};
  return {};
}

inline const std::vector<std::string_view>& section_order() {
  static const std::vector<std::string_view> order{"geometry", "qed",       "trap",     "protocol", "trace",
                                                   "detection", "spectrum", "storage", "run"};
  return order;
}

inline std::string trim(std::string_view s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string_view::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return std::string(s.substr(a, b - a + 1));
}

[[noreturn]] inline void fail_at(int line, int column, const std::string& msg) {
  std::ostringstream os;
  os << "line " << line << ", column " << column << ": " << msg;
  throw Error(ErrorCode::parse_error, os.str());
}

inline bool parse_double(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc() && r.ptr == s.data() + s.size() && std::isfinite(out);
}

template <class Int>
bool parse_int(std::string_view s, Int& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

inline std::string shortest(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

inline TransverseOrder parse_order(std::string_view s, bool& ok) {
  ok = true;
  if (s == "TEM00") return kTem00;
  if (s == "TEM10") return kTem10;
  if (s == "TEM01") return kTem01;
  ok = false;
  return kTem00;
}

inline std::string order_name(TransverseOrder o) {
  return "TEM" + std::to_string(o.m) + std::to_string(o.n);
}

// Number with an optional unit; dimensioned kinds require the unit.
inline double parse_quantity(Kind kind, const std::string& text, int line, int column) {
  const auto& units = units_for(kind);
  std::string number = text;
  Unit chosen{"", 1.0};
  const auto space = text.find_first_of(" \t");
  if (space != std::string::npos) {
    number = trim(std::string_view(text).substr(0, space));
    const std::string unit = trim(std::string_view(text).substr(space));
    bool found = false;
    for (const auto& u : units)
      if (u.name == unit) {
        chosen = u;
        found = true;
      }
    if (!found) {
      std::string allowed;
      for (const auto& u : units) allowed += (allowed.empty() ? "" : ", ") + std::string(u.name);
      fail_at(line, column + static_cast<int>(text.find(unit)),
              "unknown unit '" + unit + "'" + (allowed.empty() ? " (value is dimensionless)" : " (expected one of " + allowed + ")"));
    }
  } else if (!units.empty()) {
    fail_at(line, column, "value '" + text + "' needs a unit such as " + std::string(units.front().name));
  }
  double v = 0.0;
  if (!parse_double(number, v)) fail_at(line, column, "'" + number + "' is not a number");
  return chosen.to_si(v);
}

// Shortest text that parses back to exactly x, preferring the first unit.
inline std::string emit_quantity(Kind kind, double x) {
  const auto& units = units_for(kind);
  if (units.empty()) return shortest(x);
  std::string best;
  for (const auto& u : units) {
    const std::string s = shortest(u.from_si(x));
    double back = 0.0;
    parse_double(s, back);
    if (u.to_si(back) == x) {
      const std::string candidate = s + " " + std::string(u.name);
      if (best.empty() || candidate.size() < best.size()) best = candidate;
    }
  }
  if (best.empty()) {
    // Base unit always round-trips.
    for (const auto& u : units)
      if (u.scale == 1.0) return shortest(x) + " " + std::string(u.name);
  }
  return best;
}

inline void assign(const Field& f, const std::string& value, int line, int column) {
  switch (f.kind) {
    case Kind::integer: {
      int v = 0;
      if (!parse_int(value, v)) fail_at(line, column, "'" + value + "' is not an integer");
      *static_cast<int*>(f.target) = v;
      return;
    }
    case Kind::count: {
      long long v = 0;
      if (!parse_int(value, v)) fail_at(line, column, "'" + value + "' is not an integer");
      *static_cast<long long*>(f.target) = v;
      return;
    }
    case Kind::seed: {
      std::uint64_t v = 0;
      if (!parse_int(value, v)) fail_at(line, column, "'" + value + "' is not an unsigned 64-bit integer");
      *static_cast<std::uint64_t*>(f.target) = v;
      return;
    }
    case Kind::flag: {
      bool v = false;
      if (value == "true") v = true;
      else if (value == "false") v = false;
      else fail_at(line, column, "'" + value + "' is not true or false");
      *static_cast<bool*>(f.target) = v;
      return;
    }
    case Kind::text:
      *static_cast<std::string*>(f.target) = value;
      return;
    case Kind::integrator: {
      auto& out = *static_cast<Integrator*>(f.target);
      if (value == "verlet") out = Integrator::verlet;
      else if (value == "yoshida4") out = Integrator::yoshida4;
      else if (value == "yoshida6") out = Integrator::yoshida6;
      else fail_at(line, column, "integrator must be verlet, yoshida4 or yoshida6");
      return;
    }
    case Kind::number_list: {
      std::vector<double> out;
      std::size_t start = 0;
      while (start <= value.size()) {
        const auto comma = value.find(',', start);
        const std::string item = trim(std::string_view(value).substr(start, comma - start));
        double v = 0.0;
        if (!parse_double(item, v)) fail_at(line, column + static_cast<int>(start), "'" + item + "' is not a number");
        out.push_back(v);
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      *static_cast<std::vector<double>*>(f.target) = out;
      return;
    }
    default:
      *static_cast<double*>(f.target) = parse_quantity(f.kind, value, line, column);
  }
}

inline std::string render(const Field& f) {
  switch (f.kind) {
    case Kind::integer: return std::to_string(*static_cast<const int*>(f.target));
    case Kind::count: return std::to_string(*static_cast<const long long*>(f.target));
    case Kind::seed: return std::to_string(*static_cast<const std::uint64_t*>(f.target));
    case Kind::flag: return *static_cast<const bool*>(f.target) ? "true" : "false";
    case Kind::text: return *static_cast<const std::string*>(f.target);
    case Kind::integrator: return to_string(*static_cast<const Integrator*>(f.target));
    case Kind::number_list: {
      std::string s;
      for (double v : *static_cast<const std::vector<double>*>(f.target)) s += (s.empty() ? "" : ", ") + shortest(v);
      return s;
    }
    default: return emit_quantity(f.kind, *static_cast<const double*>(f.target));
  }
}

}  // namespace config_detail

// Parses configuration text on top of the built-in defaults and validates it.
inline RunConfig parse_config(std::string_view text) {
  using namespace config_detail;
  RunConfig cfg;
  std::string section;
  ModeEntry* mode = nullptr;
  bool modes_replaced = false;
  std::set<std::string> seen;
  std::optional<double> length;
  int length_line = 0;
  bool index_given = false;

  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto eol = text.find('\n', pos);
    std::string_view raw = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
    pos = (eol == std::string_view::npos) ? text.size() + 1 : eol + 1;
    ++line_no;
    const auto hash = raw.find('#');
    const std::string_view body = raw.substr(0, hash);
    const std::string line = trim(body);
    if (line.empty()) continue;
    const int indent = static_cast<int>(body.find_first_not_of(" \t")) + 1;

    if (line.front() == '[') {
      if (line.back() != ']') fail_at(line_no, indent, "section header must end with ']'");
      const std::string name = trim(std::string_view(line).substr(1, line.size() - 2));
      mode = nullptr;
      if (name.rfind("mode", 0) == 0 && (name.size() == 4 || name[4] == ' ' || name[4] == '\t')) {
        const std::string mode_name = trim(std::string_view(name).substr(4));
        if (mode_name.empty()) fail_at(line_no, indent, "mode section needs a name, as in [mode axial]");
        if (!modes_replaced) {
          cfg.modes.clear();
          modes_replaced = true;
        }
        for (const auto& m : cfg.modes)
          if (m.name == mode_name) fail_at(line_no, indent, "duplicate mode '" + mode_name + "'");
        cfg.modes.push_back(ModeEntry{mode_name, kTem00, 0, 0.0, 1.0, ModeRole::always});
        mode = &cfg.modes.back();
        section = "mode " + mode_name;
        continue;
      }
      bool known = false;
      for (auto s : section_order()) known = known || s == name;
      if (!known) fail_at(line_no, indent + 1, "unknown section '" + name + "'");
      section = name;
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string::npos) fail_at(line_no, indent, "expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const int value_col = static_cast<int>(body.find(value.empty() ? "=" : value, body.find('='))) + 1;
    if (section.empty()) fail_at(line_no, indent, "key '" + key + "' appears before any section");
    if (value.empty()) fail_at(line_no, value_col, "key '" + key + "' has no value");
    if (!seen.insert(section + "." + key).second)
      fail_at(line_no, indent, "duplicate key '" + key + "' in [" + section + "]");

    if (mode) {
      if (key == "order") {
        bool ok = false;
        mode->order = parse_order(value, ok);
        if (!ok) fail_at(line_no, value_col, "order must be TEM00, TEM10 or TEM01");
      } else if (key == "fsr_offset") {
        if (!parse_int(value, mode->fsr_offset)) fail_at(line_no, value_col, "'" + value + "' is not an integer");
      } else if (key == "height") {
        mode->height = parse_quantity(Kind::frequency, value, line_no, value_col);
      } else if (key == "scale") {
        mode->scale = parse_quantity(Kind::number, value, line_no, value_col);
      } else if (key == "role") {
        if (value == "axial") mode->role = ModeRole::axial;
        else if (value == "guide") mode->role = ModeRole::guide;
        else if (value == "doughnut") mode->role = ModeRole::doughnut;
        else if (value == "always") mode->role = ModeRole::always;
        else fail_at(line_no, value_col, "role must be axial, guide, doughnut or always");
      } else {
        fail_at(line_no, indent, "unknown key '" + key + "' in [" + section + "]");
      }
      continue;
    }

    if (section == "geometry" && key == "length") {
      length = parse_quantity(Kind::length, value, line_no, value_col);
      length_line = line_no;
      continue;
    }
    if (section == "geometry" && key == "probe_index") index_given = true;
    bool matched = false;
    for (const auto& f : fields(cfg, section))
      if (f.key == key) {
        assign(f, value, line_no, value_col);
        matched = true;
      }
    if (!matched) fail_at(line_no, indent, "unknown key '" + key + "' in [" + section + "]");
  }

  if (length) {
    if (!(*length > 0.0)) fail_at(length_line, 1, "geometry.length must be positive");
    const int n = CavityGeometry::nearest_odd_index(*length, cfg.geometry.probe_wavelength);
    if (index_given && n != cfg.geometry.probe_index)
      fail_at(length_line, 1, "geometry.length disagrees with geometry.probe_index");
    cfg.geometry.probe_index = n;
  }
  cfg.validate();
  return cfg;
}

// Canonical text. parse_config(emit_config(c)) == c for every valid c.
inline std::string emit_config(const RunConfig& input) {
  using namespace config_detail;
  RunConfig c = input;
  std::ostringstream os;
  bool first = true;
  for (auto section : section_order()) {
    if (!first) os << '\n';
    first = false;
    os << '[' << section << "]\n";
    for (const auto& f : fields(c, section)) os << f.key << " = " << render(f) << '\n';
    if (section == "trap") {
      for (const auto& m : c.modes) {
        os << "\n[mode " << m.name << "]\n";
        os << "order = " << order_name(m.order) << '\n';
        os << "fsr_offset = " << m.fsr_offset << '\n';
        os << "height = " << emit_quantity(Kind::frequency, m.height) << '\n';
        os << "scale = " << shortest(m.scale) << '\n';
        os << "role = " << to_string(m.role) << '\n';
      }
    }
  }
  return os.str();
}

// 64-bit FNV-1a of the canonical text, as 16 hex digits.
inline std::string config_hash(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : emit_config(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::invalid_config, msg); };
  auto positive = [&](double v, const char* name) {
    if (!(v > 0.0)) fail(std::string(name) + " must be positive (" + name + " > 0)");
  };
  positive(qed.g0, "qed.g0");
  positive(qed.kappa, "qed.kappa");
  positive(qed.gamma, "qed.gamma");
  if (!(qed.detection_efficiency >= 0.0 && qed.detection_efficiency <= 1.0))
    fail("qed.detection_efficiency must lie in [0, 1]");
  positive(trap.atom_mass, "trap.atom_mass");
  if (modes.empty()) fail("at least one [mode NAME] section is required");
  for (const auto& m : modes) {
    if (!(m.height >= 0.0)) fail("mode " + m.name + ": height must be >= 0");
    if (!(m.scale >= 0.0 && m.scale <= 1.0)) fail("mode " + m.name + ": scale must lie in [0, 1]");
  }
  if (!(trace.start_radius > 0.0)) fail("trace.start_radius must be positive");
  if (!(detection.interval >= 0.0)) fail("detection.interval must be >= 0");
  if (!(detection.prior >= 0.0 && detection.prior <= 1.0)) fail("detection.prior must lie in [0, 1]");
  if (!(detection.dark_rate >= 0.0)) fail("detection.dark_rate must be >= 0");
  if (!(detection.photons_empty >= 0.0) || !(detection.photons_atom >= 0.0))
    fail("detection photon numbers must be >= 0");
  if (!(detection.coupling_ratio > 0.0)) fail("detection.coupling_ratio must be positive");
  if (!(detection.target > 0.0 && detection.target < 1.0)) fail("detection.target must lie in (0, 1)");
  positive(detection.curve_max, "detection.curve_max");
  if (detection.curve_points < 1) fail("detection.curve_points must be >= 1");
  if (detection.trials < 1) fail("detection.trials must be >= 1");
  positive(spectrum.step, "spectrum.step");
  if (!(spectrum.to > spectrum.from)) fail("spectrum.to must exceed spectrum.from");
  if (!(spectrum.coupling_ratio >= 0.0)) fail("spectrum.coupling_ratio must be >= 0");
  if (spectrum.synthesis.samples_per_point < 1) fail("spectrum.samples_per_point must be >= 1");
  positive(spectrum.synthesis.probe_interval, "spectrum.probe_interval");
  positive(spectrum.synthesis.cooling_interval, "spectrum.cooling_interval");
  positive(spectrum.synthesis.bare_photons, "spectrum.bare_photons");
  if (!(spectrum.synthesis.qualification_threshold > 0.0)) fail("spectrum.qualification_threshold must be > 0");
  if (!(spectrum.synthesis.coupling_spread >= 0.0)) fail("spectrum.coupling_spread must be >= 0");
  if (storage.atoms < 10) fail("storage.atoms must be >= 10");
  if (storage.photons.empty()) fail("storage.photons needs at least one value");
  for (double p : storage.photons)
    if (!(p > 0.0)) fail("storage.photons values must be positive");
  if (run.workers < 0) fail("run.workers must be >= 0");

  // Module invariants, re-labelled as configuration errors.
  try {
    cavity();
    qed_params().validate();
    trap_config(TrapPhase::guiding);
    trap_config(TrapPhase::closed);
    ProtocolSpec p = protocol;
    p.validate();
    storage.settings.validate();
  } catch (const Error& e) {
    fail(std::string("invalid configuration: ") + e.what());
  }
}

inline RunConfig default_config() { return RunConfig{}; }

}  // namespace bluetrap
