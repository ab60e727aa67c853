#pragma once

// Semiclassical point-particle motion in the composed dipole potential with
// recoil noise from probe and trap-light scattering, a phenomenological axial
// friction, the capture protocol, and storage-time ensembles.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "bluetrap/error.hpp"
#include "bluetrap/modes.hpp"
#include "bluetrap/parallel.hpp"
#include "bluetrap/potential.hpp"
#include "bluetrap/qed.hpp"
#include "bluetrap/random.hpp"
#include "bluetrap/units.hpp"

namespace bluetrap {

struct AtomState {
  Position position;  // m
  Vec3 velocity;      // m/s
  double time = 0.0;  // s

  bool finite() const {
    for (int i = 0; i < 3; ++i)
      if (!std::isfinite(position[i]) || !std::isfinite(velocity[i])) return false;
    return std::isfinite(time);
  }
};

// Symmetric compositions of the velocity-Verlet step. Orders 2, 4 and 6.
enum class Integrator { verlet, yoshida4, yoshida6 };

inline const char* to_string(Integrator i) {
  switch (i) {
    case Integrator::verlet: return "verlet";
    case Integrator::yoshida4: return "yoshida4";
    case Integrator::yoshida6: return "yoshida6";
  }
  return "?";
}

namespace detail {

// Triple-jump composition (order 2k -> 2k + 2).
inline std::vector<double> composition_weights(Integrator integrator) {
  std::vector<double> w{1.0};
  const int levels = integrator == Integrator::verlet ? 0 : (integrator == Integrator::yoshida4 ? 1 : 2);
  for (int level = 1; level <= levels; ++level) {
    const double root = std::pow(2.0, 1.0 / (2 * level + 1));
    const double outer = 1.0 / (2.0 - root);
    const double inner = -root * outer;
    std::vector<double> next;
    for (double f : {outer, inner, outer})
      for (double x : w) next.push_back(f * x);
    w = std::move(next);
  }
  return w;
}

}  // namespace detail

struct StepControls {
  Integrator integrator = Integrator::verlet;
  double steps_per_period = 64.0;  // >= 50 sub-steps per shortest oscillation period
  double max_step = 50e-9;         // s; the only limit when frozen
  double probe_photons = 0.0;      // bare-cavity photon number of the probe drive
  bool probe_scattering = true;
  bool trap_scattering = true;
  bool probe_force = false;
  double friction_beta = 0.0;  // kg/s, acts on v_z while cooling is on
  bool cooling = false;
  bool frozen = false;  // hold the position fixed; kicks still change the velocity

  void validate() const {
    if (!(steps_per_period >= 50.0)) throw Error(ErrorCode::invalid_params, "steps_per_period must be >= 50");
    if (!(max_step > 0.0)) throw Error(ErrorCode::invalid_params, "max_step must be positive");
    if (!(probe_photons >= 0.0)) throw Error(ErrorCode::invalid_params, "probe photon number must be >= 0");
    if (!(friction_beta >= 0.0)) throw Error(ErrorCode::invalid_params, "friction must be >= 0");
  }
};

// What happened during one call to Stepper::step.
struct StepReport {
  double elapsed = 0.0;
  double transmission_time = 0.0;  // integral of relative transmission over time
  long long probe_events = 0;
  long long trap_events = 0;
  double expected_events = 0.0;  // integral of the total scattering rate

  double mean_transmission() const { return elapsed > 0.0 ? transmission_time / elapsed : 0.0; }
};

struct LocalOptics {
  double coupling = 0.0;      // g, angular
  double stark_shift = 0.0;   // transition shift, angular
  double transmission = 0.0;  // relative to the empty resonant cavity
  double photon_number = 0.0;
  double excitation = 0.0;
  double probe_rate = 0.0;  // 1/s
  double trap_rate = 0.0;   // 1/s, all trap fields
};

// Evolves one atom under a fixed trap configuration and probe level.
//
// Recoil convention: every scattering event kicks the atom by hbar k along
// +z or -z (absorption from the standing wave) and by hbar k in a uniformly
// random direction (emission). Per event the momentum variance therefore
// grows by (hbar k)^2 (1 + 1/3) along z and (hbar k)^2 / 3 along x and y.
class Stepper {
 public:
  Stepper(const TrapConfig& config, const QedParams& qed, StepControls controls)
      : config_(config), qed_(qed), controls_(controls) {
    config_.validate();
    qed_.validate();
    controls_.validate();
    const auto& g = config_.geometry;
    for (const auto& m : config_.modes) {
      const double height = m.amplitude_scale * m.barrier_height;
      if (height == 0.0) continue;
      Term t;
      t.order = m.order;
      t.height = height;
      t.n = longitudinal_index(g, m.fsr_offset);
      t.k = mode_wavenumber(g, m.fsr_offset);
      if (m.fsr_offset != 0) {
        const double detuning = kTwoPi * std::abs(m.fsr_offset) * free_spectral_range(g);
        t.scatter_per_joule = 2.0 * qed_.gamma / detuning / kHbar;
      }
      terms_.push_back(t);
    }
    probe_k_ = kTwoPi / g.probe_wavelength;
    probe_n_ = g.probe_index;
    probe_kz_ = mode_wavenumber(g, 0);
    drive_ = drive_for_bare_photons(qed_, controls_.probe_photons);
    weights_ = detail::composition_weights(controls_.integrator);
    max_substep_ = controls_.frozen ? controls_.max_step
                                    : std::min(controls_.max_step, shortest_period() / controls_.steps_per_period);
  }

  const TrapConfig& config() const { return config_; }
  const StepControls& controls() const { return controls_; }
  void set_cooling(bool on) { controls_.cooling = on; }

  // Lower bound on the local oscillation period anywhere in the cavity, from
  // bounds on the curvature of each field.
  double shortest_period() const {
    const double w2 = config_.geometry.waist * config_.geometry.waist;
    double curvature = 0.0;  // J/m^2
    for (const auto& t : terms_) curvature += t.height * (2.0 * t.k * t.k + 12.0 * std::numbers::e / w2);
    if (controls_.probe_force) {
      const double probe_scale = probe_force_scale(controls_.probe_photons);
      curvature += std::abs(probe_scale) * (2.0 * probe_kz_ * probe_kz_ + 4.0 / w2);
    }
    if (curvature == 0.0) return std::numeric_limits<double>::infinity();
    return kTwoPi / std::sqrt(curvature / config_.atom_mass);
  }

  double max_substep() const { return max_substep_; }

  // Light potential (no gravity) and total conservative force at r.
  void fields(const Position& r, double& light, Vec3& f) const {
    require_in_cavity(config_.geometry, r.z);
    light = 0.0;
    f = {};
    const double w = config_.geometry.waist;
    const double inv_w2 = 1.0 / (w * w);
    const double gauss = std::exp(-2.0 * (r.x * r.x + r.y * r.y) * inv_w2);
    for (const auto& t : terms_) {
      double s = 0.0, c = 0.0;
      standing_wave(t.n, t.k, r.z, s, c);
      double tv = 0.0, tx = 0.0, ty = 0.0;
      transverse(t.order, r.x, r.y, inv_w2, gauss, tv, tx, ty);
      const double s2 = s * s;
      t.light = t.height * tv * s2;
      light += t.light;
      f.x -= t.height * tx * s2;
      f.y -= t.height * ty * s2;
      f.z -= t.height * tv * 2.0 * s * c * t.k;
    }
    if (config_.gravity_on) f.y -= config_.atom_mass * kStandardGravity;
    if (controls_.probe_force && controls_.probe_photons > 0.0) {
      // Dispersive light shift hbar n g^2 / Delta_a with the photon number
      // held fixed at its local value.
      const auto local = optics(r, light);
      const double scale = probe_force_scale(local.photon_number);
      double s = 0.0, c = 0.0;
      standing_wave(probe_n_, probe_kz_, r.z, s, c);
      f.x -= scale * (-4.0 * r.x * inv_w2) * gauss * s * s;
      f.y -= scale * (-4.0 * r.y * inv_w2) * gauss * s * s;
      f.z -= scale * gauss * 2.0 * s * c * probe_kz_;
    }
  }

  // Probe response and scattering rates at r given the local light potential.
  LocalOptics optics(const Position& r, double light) const {
    LocalOptics o = probe_optics(r, light);
    if (controls_.trap_scattering) o.trap_rate = trap_rates(r, nullptr);
    return o;
  }

  LocalOptics optics(const Position& r) const {
    double light = 0.0;
    Vec3 f;
    fields(r, light, f);
    return optics(r, light);
  }

  // Advances by dt, splitting into sub-steps no longer than max_substep().
  AtomState step(const AtomState& state, double dt, Rng& rng, StepReport* report = nullptr) {
    if (!(dt > 0.0)) throw Error(ErrorCode::invalid_params, "time step must be positive");
    const auto n = static_cast<long long>(std::ceil(dt / max_substep_ * (1.0 - 1e-12)));
    const double h = dt / static_cast<double>(std::max(1LL, n));
    AtomState s = state;
    for (long long i = 0; i < std::max(1LL, n); ++i) substep(s, h, rng, report);
    s.time = state.time + dt;
    return s;
  }

  // Drops cached force and pending scattering clock (after external changes).
  void reset() {
    have_force_ = false;
    have_clock_ = false;
  }

 private:
  LocalOptics probe_optics(const Position& r, double light) const {
    LocalOptics o;
    const double w = config_.geometry.waist;
    double s = 0.0, c = 0.0;
    standing_wave(probe_n_, probe_kz_, r.z, s, c);
    o.coupling = qed_.g0 * std::exp(-(r.x * r.x + r.y * r.y) / (w * w)) * std::abs(s);
    o.stark_shift = config_.stark_coefficient * light / kHbar + config_.stabilization_shift;
    using cd = std::complex<double>;
    const double delta_a = qed_.delta_c - (qed_.delta_ac + o.stark_shift);
    const cd denom = cd(qed_.kappa, -qed_.delta_c) + o.coupling * o.coupling / cd(qed_.gamma, -delta_a);
    o.transmission = std::norm(qed_.kappa / denom);
    o.photon_number = std::norm(drive_ / denom);
    o.excitation = o.photon_number * o.coupling * o.coupling / (delta_a * delta_a + qed_.gamma * qed_.gamma);
    if (controls_.probe_scattering) o.probe_rate = 2.0 * qed_.gamma * o.excitation;
    return o;
  }

  struct Term {
    TransverseOrder order;
    double height = 0.0;  // J
    int n = 0;
    double k = 0.0;
    double scatter_per_joule = 0.0;  // 1/(s J)
    mutable double light = 0.0;      // J, at the last position passed to fields()
  };

  // sin and cos of n pi (z/L + 1/2) = k z + n pi / 2.
  static void standing_wave(int n, double k, double z, double& s, double& c) {
    const double a = std::sin(k * z);
    const double b = std::cos(k * z);
    switch (((n % 4) + 4) % 4) {
      case 0: s = a; c = b; break;
      case 1: s = b; c = -a; break;
      case 2: s = -a; c = -b; break;
      default: s = -b; c = a; break;
    }
  }

  static void transverse(TransverseOrder order, double x, double y, double inv_w2, double gauss, double& v,
                         double& dx, double& dy) {
    if (order == kTem00) {
      v = gauss;
      dx = -4.0 * x * inv_w2 * gauss;
      dy = -4.0 * y * inv_w2 * gauss;
      return;
    }
    const bool along_x = (order == kTem10);
    const double u = along_x ? x : y;
    const double o = along_x ? y : x;
    constexpr double e = std::numbers::e;
    const double poly = 2.0 * e * u * u * inv_w2;
    const double du = 4.0 * e * u * inv_w2 * gauss * (1.0 - 2.0 * u * u * inv_w2);
    const double dov = poly * gauss * (-4.0 * o * inv_w2);
    v = poly * gauss;
    dx = along_x ? du : dov;
    dy = along_x ? dov : du;
  }

  double probe_force_scale(double photons) const {
    const double delta_a = qed_.delta_c - qed_.delta_ac;
    if (delta_a == 0.0) return 0.0;
    return kHbar * photons * qed_.g0 * qed_.g0 / delta_a;
  }

  // Total trap-light scattering rate; optionally the per-term rates.
  double trap_rates(const Position& r, std::vector<double>* per_term) const {
    const double w = config_.geometry.waist;
    const double inv_w2 = 1.0 / (w * w);
    const double gauss = std::exp(-2.0 * (r.x * r.x + r.y * r.y) * inv_w2);
    double total = 0.0;
    if (per_term) per_term->clear();
    for (const auto& t : terms_) {
      double s = 0.0, c = 0.0, tv = 0.0, tx = 0.0, ty = 0.0;
      standing_wave(t.n, t.k, r.z, s, c);
      transverse(t.order, r.x, r.y, inv_w2, gauss, tv, tx, ty);
      const double rate = t.scatter_per_joule * t.height * tv * s * s;
      total += rate;
      if (per_term) per_term->push_back(rate);
    }
    return total;
  }

  void kick(AtomState& s, double k, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double dv = kHbar * k / config_.atom_mass;
    s.velocity.z += (u(rng) < 0.5 ? -dv : dv);
    const double cz = 2.0 * u(rng) - 1.0;
    const double phi = kTwoPi * u(rng);
    const double sz = std::sqrt(std::max(0.0, 1.0 - cz * cz));
    s.velocity += dv * Vec3{sz * std::cos(phi), sz * std::sin(phi), cz};
  }

  void substep(AtomState& s, double h, Rng& rng, StepReport* report) {
    const double m = config_.atom_mass;
    double light = 0.0;
    if (!controls_.frozen) {
      if (!have_force_) {
        fields(s.position, light_, force_);
        have_force_ = true;
      }
      for (double w : weights_) {
        const double hw = h * w;
        s.velocity += (0.5 * hw / m) * force_;
        s.position += hw * s.velocity;
        fields(s.position, light_, force_);
        s.velocity += (0.5 * hw / m) * force_;
      }
      light = light_;
      if (controls_.cooling && controls_.friction_beta > 0.0)
        s.velocity.z *= std::exp(-controls_.friction_beta * h / m);
    } else {
      Vec3 f;
      fields(s.position, light, f);
    }

    // Per-term light values are current for s.position here.
    LocalOptics o = probe_optics(s.position, light);
    if (controls_.trap_scattering)
      for (const auto& t : terms_) o.trap_rate += t.scatter_per_joule * t.light;
    const double rate = o.probe_rate + o.trap_rate;
    if (report) {
      report->elapsed += h;
      report->transmission_time += o.transmission * h;
      report->expected_events += rate * h;
    }
    if (rate <= 0.0) return;
    std::exponential_distribution<double> expo(1.0);
    if (!have_clock_) {
      clock_ = expo(rng);
      have_clock_ = true;
    }
    clock_ -= rate * h;
    while (clock_ <= 0.0) {
      std::uniform_real_distribution<double> u(0.0, rate);
      const double pick = u(rng);
      if (pick < o.probe_rate) {
        kick(s, probe_k_, rng);
        if (report) ++report->probe_events;
      } else {
        trap_rates(s.position, &scratch_);
        double acc = o.probe_rate;
        std::size_t i = 0;
        for (; i + 1 < terms_.size(); ++i) {
          acc += scratch_[i];
          if (pick < acc) break;
        }
        kick(s, terms_[i].k, rng);
        if (report) ++report->trap_events;
      }
      clock_ += expo(rng);
    }
  }

  TrapConfig config_;
  QedParams qed_;
  StepControls controls_;
  std::vector<Term> terms_;
  std::vector<double> weights_;
  std::vector<double> scratch_;
  double probe_k_ = 0.0;
  int probe_n_ = 0;
  double probe_kz_ = 0.0;
  double drive_ = 0.0;
  double max_substep_ = 0.0;
  bool have_force_ = false;
  double light_ = 0.0;
  Vec3 force_;
  bool have_clock_ = false;
  double clock_ = 0.0;
};

inline double kinetic_energy(const TrapConfig& config, const AtomState& s) {
  return 0.5 * config.atom_mass * dot(s.velocity, s.velocity);
}

inline double total_energy(const TrapConfig& config, const AtomState& s) {
  return kinetic_energy(config, s) + potential_energy(config, s.position);
}

// Default step: min(50 ns, T / 64) with T the shortest oscillation period bound.
inline double default_time_step(const Stepper& stepper) {
  return std::min(50e-9, stepper.shortest_period() / 64.0);
}

// ---------------------------------------------------------------------------
// Capture protocol

enum class EventKind { armed, triggered, trap_closed, escaped, lost };

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::armed: return "armed";
    case EventKind::triggered: return "triggered";
    case EventKind::trap_closed: return "trap_closed";
    case EventKind::escaped: return "escaped";
    case EventKind::lost: return "lost";
  }
  return "?";
}

struct IntervalSchedule {
  double cooling = 0.5e-3;  // s
  double probing = 0.1e-3;  // s
  double origin = 0.0;      // start of the first cooling interval

  void validate() const {
    if (!(cooling > 0.0) || !(probing > 0.0))
      throw Error(ErrorCode::invalid_params, "interval durations must be > 0");
  }
  double period() const { return cooling + probing; }
  friend bool operator==(const IntervalSchedule&, const IntervalSchedule&) = default;
  bool cooling_at(double t) const {
    if (t < origin) return false;
    return std::fmod(t - origin, period()) < cooling;
  }
};

struct ProtocolSpec {
  double arm_time = 0.0;            // s after injection
  double trigger_fraction = 0.1;    // estimate below this x bare triggers
  double escape_fraction = 0.5;     // estimate above this x bare after closure means escaped
  double probe_photons_before = 0.1;   // bare-cavity photons while waiting
  double probe_photons_after = 0.05;   // bare-cavity photons once trapped
  double axial_height = joules_from_h_mhz(346.0);
  double guiding_height = joules_from_h_mhz(20.6);
  double doughnut_height = joules_from_h_mhz(30.0);
  int axial_offset = 3;
  int ring_offset = 2;
  IntervalSchedule schedule;        // origin is taken relative to trap closure
  // Axial oscillation energy decays as exp(-beta t / m): 1/e in 5 ms.
  double friction_beta = kRubidium85Mass / 5e-3;
  double trigger_latency = 1e-6;    // s from trigger decision to closed trap
  double estimator_window = 100e-6; // s, EWMA time constant of the trigger estimate
  double escape_window = 1e-3;      // s, EWMA time constant of the escape estimate
  double sample_interval = 10e-6;   // s, counting bin
  double max_time = 0.2;            // s
  double post_escape_time = 1e-3;   // s recorded after the escape
  double mode_volume_radius = 3.0;  // waists
  bool gravity = true;
  Integrator integrator = Integrator::verlet;
  bool probe_force = false;

  void validate() const {
    if (!(trigger_fraction > 0.0 && trigger_fraction < escape_fraction && escape_fraction <= 1.0))
      throw Error(ErrorCode::invalid_params, "need 0 < trigger_fraction < escape_fraction <= 1");
    schedule.validate();
    if (!(arm_time >= 0.0)) throw Error(ErrorCode::invalid_params, "arm_time must be >= 0");
    if (!(probe_photons_before > 0.0) || !(probe_photons_after > 0.0))
      throw Error(ErrorCode::invalid_params, "probe photon numbers must be > 0");
    if (!(axial_height >= 0.0 && guiding_height >= 0.0 && doughnut_height >= 0.0))
      throw Error(ErrorCode::invalid_params, "trap heights must be >= 0");
    if (!(friction_beta >= 0.0)) throw Error(ErrorCode::invalid_params, "friction_beta must be >= 0");
    if (!(trigger_latency > 0.0)) throw Error(ErrorCode::invalid_params, "trigger_latency must be > 0");
    if (!(estimator_window > 0.0) || !(sample_interval > 0.0) || sample_interval > estimator_window ||
        sample_interval > escape_window)
      throw Error(ErrorCode::invalid_params, "need 0 < sample_interval <= estimator_window, escape_window");
    if (!(max_time > 0.0) || !(post_escape_time >= 0.0))
      throw Error(ErrorCode::invalid_params, "max_time must be > 0 and post_escape_time >= 0");
    if (!(mode_volume_radius > 0.0)) throw Error(ErrorCode::invalid_params, "mode_volume_radius must be > 0");
  }

  friend bool operator==(const ProtocolSpec&, const ProtocolSpec&) = default;

  TrapConfig guiding(const TrapConfig& base) const {
    TrapConfig c = funnel_trap(base.geometry, axial_height, guiding_height, axial_offset, ring_offset);
    inherit(c, base);
    return c;
  }
  TrapConfig closed(const TrapConfig& base) const {
    TrapConfig c = closed_trap(base.geometry, axial_height, doughnut_height, axial_offset, ring_offset);
    inherit(c, base);
    return c;
  }

 private:
  void inherit(TrapConfig& c, const TrapConfig& base) const {
    c.atom_mass = base.atom_mass;
    c.stark_coefficient = base.stark_coefficient;
    c.stabilization_shift = base.stabilization_shift;
    c.gravity_on = gravity;
  }
};

enum class TrapPhase { guiding, closed };

struct TraceSample {
  double t = 0.0;                      // bin start, s
  double duration = 0.0;               // bin length, s
  double transmission_expected = 0.0;  // bin average, relative to bare
  double bare_counts = 0.0;            // expected counts for the empty cavity in this bin
  long long detected_counts = 0;
  double estimate = 0.0;  // trigger estimator after this bin, relative to bare
  Position position;      // at bin end
  TrapPhase phase = TrapPhase::guiding;
  bool atom_present = true;
};

struct TraceEvent {
  double t = 0.0;
  EventKind kind = EventKind::armed;
};

struct EventTrace {
  std::vector<TraceSample> samples;
  std::vector<TraceEvent> events;
  bool truncated = false;  // reached max_time without a terminal event

  std::optional<double> time_of(EventKind k) const {
    for (const auto& e : events)
      if (e.kind == k) return e.t;
    return std::nullopt;
  }
  bool has(EventKind k) const { return time_of(k).has_value(); }
};

// Atom below the mode on the funnel plane z = 0 moving up along y.
inline AtomState funnel_injection(const CavityGeometry& geometry, double x, double vy = 0.08,
                                  double start_radius = 3.0) {
  AtomState s;
  s.position = {x, -start_radius * geometry.waist, 0.0};
  s.velocity = {0.0, vy, 0.0};
  return s;
}

namespace detail {

inline double radius(const Position& r) { return std::sqrt(r.x * r.x + r.y * r.y); }

}  // namespace detail

inline EventTrace run_capture(const AtomState& initial, const ProtocolSpec& protocol, const TrapConfig& base,
                              const QedParams& qed, std::uint64_t seed) {
  protocol.validate();
  qed.validate();
  if (!initial.finite()) throw Error(ErrorCode::invalid_params, "initial atom state must be finite");
  const auto& geom = base.geometry;
  require_in_cavity(geom, initial.position.z);

  Rng motion = make_rng(seed, 0);
  Rng counting = make_rng(seed, 1);

  auto controls_for = [&](double photons) {
    StepControls c;
    c.integrator = protocol.integrator;
    c.probe_photons = photons;
    c.probe_force = protocol.probe_force;
    c.friction_beta = protocol.friction_beta;
    return c;
  };
  Stepper stepper(protocol.guiding(base), qed, controls_for(protocol.probe_photons_before));
  double photons = protocol.probe_photons_before;
  TrapPhase phase = TrapPhase::guiding;
  IntervalSchedule schedule = protocol.schedule;

  EventTrace trace;
  AtomState s = initial;
  s.time = 0.0;
  bool present = true;
  bool entered = false;
  bool armed = false;
  std::optional<double> escape_time;
  double estimate = 1.0;
  const double rmv = protocol.mode_volume_radius * geom.waist;
  const double wall = 0.5 * geom.length * (1.0 - 1e-9);
  const double base_dt = default_time_step(stepper);
  const double detected_rate_per_photon = 2.0 * qed.kappa * qed.detection_efficiency;

  auto emit = [&](double t, EventKind k) { trace.events.push_back({t, k}); };

  // Evolves for `duration`, returning the time-averaged transmission.
  auto evolve = [&](double duration) {
    if (!present) {
      s.time += duration;
      return 1.0;
    }
    StepReport report;
    const auto n = static_cast<long long>(std::ceil(duration / base_dt * (1.0 - 1e-12)));
    const double h = duration / static_cast<double>(std::max(1LL, n));
    for (long long i = 0; i < std::max(1LL, n); ++i) {
      if (phase == TrapPhase::closed) stepper.set_cooling(schedule.cooling_at(s.time));
      const double t0 = s.time;
      s = stepper.step(s, h, motion, &report);
      s.time = t0 + h;
      if (std::abs(s.position.z) >= wall || detail::radius(s.position) > 10.0 * rmv) {
        present = false;
        const double left = duration - (i + 1) * h;
        report.elapsed += left;
        report.transmission_time += left;
        s.time += left;
        break;
      }
    }
    return report.mean_transmission();
  };

  if (protocol.arm_time == 0.0) {
    emit(0.0, EventKind::armed);
    armed = true;
  }

  const double bin = protocol.sample_interval;
  // The reduced probe gives few counts per bin, so escape uses a longer window.
  const double trigger_alpha = 1.0 - std::exp(-bin / protocol.estimator_window);
  const double escape_alpha = 1.0 - std::exp(-bin / protocol.escape_window);
  while (true) {
    if (s.time >= protocol.max_time - 1e-15) {
      trace.truncated = !escape_time.has_value();
      break;
    }
    const double t0 = s.time;
    const double T = evolve(bin);
    TraceSample sample;
    sample.t = t0;
    sample.duration = bin;
    sample.transmission_expected = T;
    sample.bare_counts = detected_rate_per_photon * photons * bin;
    sample.detected_counts = poisson_draw(counting, sample.bare_counts * T);
    const double alpha = phase == TrapPhase::guiding ? trigger_alpha : escape_alpha;
    estimate += alpha * (static_cast<double>(sample.detected_counts) / sample.bare_counts - estimate);
    sample.estimate = estimate;
    sample.position = s.position;
    sample.phase = phase;
    sample.atom_present = present;
    trace.samples.push_back(sample);

    if (escape_time) {
      if (s.time >= *escape_time + protocol.post_escape_time - 1e-15) break;
      continue;
    }
    if (!armed && s.time >= protocol.arm_time) {
      emit(s.time, EventKind::armed);
      armed = true;
    }
    if (phase == TrapPhase::guiding) {
      if (present && detail::radius(s.position) <= rmv) entered = true;
      if (armed && estimate < protocol.trigger_fraction) {
        emit(s.time, EventKind::triggered);
        evolve(protocol.trigger_latency);
        emit(s.time, EventKind::trap_closed);
        phase = TrapPhase::closed;
        photons = protocol.probe_photons_after;
        schedule.origin = s.time + protocol.schedule.origin;
        const AtomState keep = s;
        stepper = Stepper(protocol.closed(base), qed, controls_for(photons));
        s = keep;
        continue;
      }
      const bool passed = s.position.y > rmv;
      const bool left = entered && detail::radius(s.position) > rmv;
      if (!present || passed || left) {
        emit(s.time, EventKind::lost);
        break;
      }
    } else if (estimate > protocol.escape_fraction) {
      emit(s.time, EventKind::escaped);
      escape_time = s.time;
      if (protocol.post_escape_time == 0.0) break;
    }
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Qualification of probing intervals

struct QualifiedInterval {
  double start = 0.0;
  double end = 0.0;
  double before = 0.0;  // mean relative transmission in the preceding cooling interval
  double after = 0.0;   // ... and in the following one
  bool qualified = false;
};

struct QualificationResult {
  std::vector<QualifiedInterval> intervals;
  bool partial = false;  // trace ended before the schedule did
  std::string warning;
};

enum class TransmissionSource { detected, expected };

inline QualificationResult qualify_intervals(const EventTrace& trace, const IntervalSchedule& schedule,
                                             double threshold_fraction = 0.10,
                                             TransmissionSource source = TransmissionSource::detected,
                                             std::optional<double> schedule_end = std::nullopt) {
  schedule.validate();
  if (!(threshold_fraction > 0.0)) throw Error(ErrorCode::invalid_params, "threshold_fraction must be > 0");
  QualificationResult out;
  if (trace.samples.empty()) {
    out.partial = true;
    out.warning = "empty trace";
    return out;
  }
  for (const auto& s : trace.samples)
    if (s.duration > std::min(schedule.cooling, schedule.probing))
      throw Error(ErrorCode::invalid_params, "trace must be sampled finer than the interval schedule");

  const double trace_end = trace.samples.back().t + trace.samples.back().duration;
  const double end = schedule_end.value_or(trace_end);
  // Mean transmission inside [a, b) from samples whose midpoints fall there.
  auto mean_in = [&](double a, double b, bool& covered) {
    double num = 0.0, den = 0.0;
    for (const auto& s : trace.samples) {
      const double mid = s.t + 0.5 * s.duration;
      if (mid < a || mid >= b) continue;
      if (source == TransmissionSource::detected) {
        num += static_cast<double>(s.detected_counts);
        den += s.bare_counts;
      } else {
        num += s.transmission_expected * s.duration;
        den += s.duration;
      }
    }
    covered = den > 0.0 && a >= trace.samples.front().t - 1e-15 && b <= trace_end + 1e-15;
    return den > 0.0 ? num / den : 0.0;
  };

  const double p = schedule.period();
  for (long long i = 0;; ++i) {
    const double c0 = schedule.origin + i * p;
    const double probe_start = c0 + schedule.cooling;
    const double probe_end = probe_start + schedule.probing;
    const double next_end = probe_end + schedule.cooling;
    if (probe_start >= end) break;
    bool cov_a = false, cov_b = false;
    QualifiedInterval q;
    q.start = probe_start;
    q.end = probe_end;
    q.before = mean_in(c0, probe_start, cov_a);
    q.after = mean_in(probe_end, next_end, cov_b);
    if (!cov_a || !cov_b) {
      out.partial = true;
      out.warning = "schedule extends past the trace; trailing probe intervals left unqualified";
      break;
    }
    q.qualified = q.before < threshold_fraction && q.after < threshold_fraction;
    out.intervals.push_back(q);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Storage-time ensembles

struct StorageSettings {
  double temperature = 1e-4;  // K, initial thermal distribution
  double max_time = 0.2;      // s, censoring time
  bool scattering = true;
  bool friction = true;
  std::size_t histogram_bins = 20;

  void validate() const {
    if (!(temperature >= 0.0)) throw Error(ErrorCode::invalid_params, "temperature must be >= 0");
    if (!(max_time > 0.0)) throw Error(ErrorCode::invalid_params, "max_time must be > 0");
    if (histogram_bins == 0) throw Error(ErrorCode::invalid_params, "histogram needs at least one bin");
  }
  friend bool operator==(const StorageSettings&, const StorageSettings&) = default;
};

struct StorageSummary {
  std::vector<double> times;   // s, per atom (max_time when censored)
  std::vector<bool> censored;
  std::size_t censored_count = 0;
  double mean = 0.0;     // lower bound when any atom is censored
  double median = 0.0;
  bool median_censored = false;
  std::vector<double> histogram_edges;
  std::vector<std::size_t> histogram_counts;
};

namespace detail {

inline bool escaped_site(const Position& r, double waist, double site) {
  return radius(r) > waist || std::abs(r.z) > site;
}

}  // namespace detail

// Storage time of one atom started thermally at the trap center.
inline std::pair<double, bool> storage_time(const TrapConfig& closed, const ProtocolSpec& protocol,
                                            const QedParams& qed, const StorageSettings& settings, Rng& rng,
                                            const Vec3& omega) {
  StepControls controls;
  controls.integrator = protocol.integrator;
  controls.probe_photons = protocol.probe_photons_after;
  controls.probe_force = protocol.probe_force;
  controls.probe_scattering = settings.scattering;
  controls.trap_scattering = settings.scattering;
  controls.friction_beta = settings.friction ? protocol.friction_beta : 0.0;
  Stepper stepper(closed, qed, controls);

  AtomState s;
  const double sigma_v = std::sqrt(kBoltzmann * settings.temperature / closed.atom_mass);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < 3; ++i) {
    s.position[i] = sigma_v > 0.0 ? sigma_v / omega[i] * normal(rng) : 0.0;
    s.velocity[i] = sigma_v * normal(rng);
  }
  const double site = 0.5 * mode_wavelength(closed.geometry, protocol.axial_offset);
  if (detail::escaped_site(s.position, closed.geometry.waist, site)) return {0.0, false};

  IntervalSchedule schedule = protocol.schedule;
  const double dt = default_time_step(stepper);
  const auto steps = static_cast<long long>(std::ceil(settings.max_time / dt));
  for (long long i = 0; i < steps; ++i) {
    stepper.set_cooling(schedule.cooling_at(s.time));
    s = stepper.step(s, dt, rng);
    s.time = (i + 1) * dt;
    if (detail::escaped_site(s.position, closed.geometry.waist, site)) return {s.time, false};
  }
  return {settings.max_time, true};
}

inline StorageSummary storage_time_ensemble(const TrapConfig& base, const ProtocolSpec& protocol,
                                            const QedParams& qed, const StorageSettings& settings,
                                            std::size_t n_atoms, std::uint64_t seed,
                                            unsigned workers = default_workers()) {
  protocol.validate();
  settings.validate();
  if (n_atoms < 10) throw Error(ErrorCode::invalid_params, "storage ensembles need at least 10 atoms");
  const TrapConfig closed = protocol.closed(base);
  TrapConfig conservative = closed;
  conservative.gravity_on = false;
  const Vec3 omega = trap_metrics(conservative).trap_frequencies;

  StorageSummary out;
  out.times.assign(n_atoms, 0.0);
  std::vector<char> cens(n_atoms, 0);
  parallel_for(n_atoms, workers, [&](std::size_t i) {
    Rng rng = make_rng(seed, i);
    const auto [t, c] = storage_time(closed, protocol, qed, settings, rng, omega);
    out.times[i] = t;
    cens[i] = c ? 1 : 0;
  });
  out.censored.assign(cens.begin(), cens.end());
  out.censored_count = static_cast<std::size_t>(std::count(cens.begin(), cens.end(), 1));

  double sum = 0.0;
  for (double t : out.times) sum += t;
  out.mean = sum / static_cast<double>(n_atoms);
  std::vector<double> sorted = out.times;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = n_atoms / 2;
  out.median = (n_atoms % 2 == 1) ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  out.median_censored = out.censored_count * 2 >= n_atoms;

  const std::size_t bins = settings.histogram_bins;
  out.histogram_counts.assign(bins, 0);
  for (std::size_t b = 0; b <= bins; ++b)
    out.histogram_edges.push_back(settings.max_time * static_cast<double>(b) / static_cast<double>(bins));
  for (double t : out.times) {
    auto b = static_cast<std::size_t>(t / settings.max_time * static_cast<double>(bins));
    ++out.histogram_counts[std::min(b, bins - 1)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline void write_trace_csv(std::ostream& os, const EventTrace& trace, const std::string& comment = {}) {
  if (!comment.empty()) os << "# " << comment << '\n';
  os << "t_s,duration_s,transmission_expected,bare_counts,detected_counts,estimate,x_m,y_m,z_m,phase,atom_present\n";
  char buf[512];
  for (const auto& s : trace.samples) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%lld,%.17g,%.17g,%.17g,%.17g,%s,%d\n", s.t,
                  s.duration, s.transmission_expected, s.bare_counts, s.detected_counts, s.estimate,
                  s.position.x, s.position.y, s.position.z,
                  s.phase == TrapPhase::guiding ? "guiding" : "closed", s.atom_present ? 1 : 0);
    os << buf;
  }
}

inline void write_events_csv(std::ostream& os, const EventTrace& trace, const std::string& comment = {}) {
  if (!comment.empty()) os << "# " << comment << '\n';
  os << "t_s,event\n";
  char buf[128];
  for (const auto& e : trace.events) {
    std::snprintf(buf, sizeof buf, "%.17g,%s\n", e.t, to_string(e.kind));
    os << buf;
  }
}

}  // namespace bluetrap
