#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "bluetrap/config.hpp"

using namespace bluetrap;

namespace {

std::string read_profile(const std::string& name) {
  std::ifstream in(std::string(BLUETRAP_PROFILE_DIR) + "/" + name);
  EXPECT_TRUE(in.good()) << name;
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Returns the error message, or "" when parsing succeeds.
std::string parse_failure(const std::string& text, ErrorCode expected) {
  try {
    parse_config(text);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), expected) << e.what();
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, EmptyTextGivesDefaults) {
  EXPECT_EQ(parse_config(""), default_config());
  EXPECT_EQ(parse_config("# only a comment\n\n"), default_config());
}

TEST(Config, NominalProfileReportsCouplingAndDecayRates) {
  const RunConfig c = parse_config(read_profile("nominal.profile"));
  EXPECT_EQ(c, default_config());
  const QedParams q = c.qed_params();
  EXPECT_NEAR(mhz_from_angular(q.g0), 16.0, 1e-12);
  EXPECT_NEAR(mhz_from_angular(q.gamma), 3.0, 1e-12);
  EXPECT_NEAR(mhz_from_angular(q.kappa), 1.4, 1e-12);
  EXPECT_NEAR(c.cavity().length, 0.122e-3, 0.001e-3);
  EXPECT_DOUBLE_EQ(c.geometry.waist, 29e-6);
}

TEST(Config, ShippedScenarioProfilesParse) {
  const RunConfig f3 = parse_config(read_profile("fig3.profile"));
  EXPECT_DOUBLE_EQ(f3.protocol_spec().axial_height, joules_from_h_mhz(346.0));
  const RunConfig f4 = parse_config(read_profile("fig4.profile"));
  EXPECT_DOUBLE_EQ(f4.protocol_spec().axial_height, joules_from_h_mhz(265.0));
  EXPECT_DOUBLE_EQ(f4.spectrum.coupling_ratio, 0.83);
  const RunConfig d = parse_config(read_profile("detect.profile"));
  EXPECT_DOUBLE_EQ(d.detection.interval, 10e-6);
}

TEST(Config, NegativeKappaNamesTheInvariant) {
  const std::string msg = parse_failure("[qed]\nkappa = -1 MHz\n", ErrorCode::invalid_config);
  EXPECT_NE(msg.find("kappa"), std::string::npos) << msg;
  EXPECT_NE(msg.find("positive"), std::string::npos) << msg;
}

TEST(Config, UnknownKeyReportsLocation) {
  const std::string msg = parse_failure("[qed]\ng0 = 16 MHz\n  kapa = 1 MHz\n", ErrorCode::parse_error);
  EXPECT_NE(msg.find("line 3, column 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("kapa"), std::string::npos) << msg;
}

TEST(Config, SyntaxErrorsCarryLineAndColumn) {
  EXPECT_NE(parse_failure("[bogus]\n", ErrorCode::parse_error).find("line 1"), std::string::npos);
  EXPECT_NE(parse_failure("[qed]\ng0 16 MHz\n", ErrorCode::parse_error).find("line 2"), std::string::npos);
  EXPECT_NE(parse_failure("[qed]\ng0 = 16 furlongs\n", ErrorCode::parse_error).find("column 9"), std::string::npos);
  EXPECT_NE(parse_failure("[qed]\ng0 = 16\n", ErrorCode::parse_error).find("needs a unit"), std::string::npos);
  EXPECT_NE(parse_failure("[qed]\ng0 = 1 MHz\ng0 = 2 MHz\n", ErrorCode::parse_error).find("duplicate"),
            std::string::npos);
  EXPECT_NE(parse_failure("g0 = 1 MHz\n", ErrorCode::parse_error).find("before any section"), std::string::npos);
  EXPECT_NE(parse_failure("[run]\nseed = -4\n", ErrorCode::parse_error).find("line 2"), std::string::npos);
}

// Every frequency a user can type is ordinary Hz; the modules receive 2*pi*Hz
// or h*Hz.
TEST(Config, UnitConversionForEveryExposedFrequency) {
  const RunConfig c = parse_config(
      "[qed]\ng0 = 12 MHz\nkappa = 1500 kHz\ngamma = 0.003 GHz\ndelta_c = -2 MHz\ndelta_ac = -40 MHz\n"
      "[trap]\nstabilization_shift = 250 kHz\n"
      "[spectrum]\nfrom = -10 MHz\nto = 10 MHz\nstep = 5 MHz\n"
      "[detection]\ndark_rate = 100 Hz\n");
  const double tp = 2.0 * std::numbers::pi;
  const QedParams q = c.qed_params();
  EXPECT_DOUBLE_EQ(q.g0, tp * 12e6);
  EXPECT_DOUBLE_EQ(q.kappa, tp * 1.5e6);
  EXPECT_DOUBLE_EQ(q.gamma, tp * 3e6);
  EXPECT_DOUBLE_EQ(q.delta_c, tp * -2e6);
  EXPECT_DOUBLE_EQ(q.delta_ac, tp * -40e6);
  EXPECT_DOUBLE_EQ(c.trap_config(TrapPhase::closed).stabilization_shift, tp * 250e3);
  const auto grid = c.spectrum_grid();
  ASSERT_EQ(grid.size(), 5u);
  EXPECT_DOUBLE_EQ(grid.front(), tp * -10e6);
  EXPECT_DOUBLE_EQ(grid.back(), tp * 10e6);
  // Dark counts are an event rate, not an angular frequency.
  EXPECT_DOUBLE_EQ(c.detection_setup().dark_rate, 100.0);

  const TrapConfig closed = c.trap_config(TrapPhase::closed);
  ASSERT_EQ(closed.modes.size(), 3u);
  EXPECT_DOUBLE_EQ(closed.modes[0].barrier_height, 6.62607015e-34 * 346e6);
  EXPECT_DOUBLE_EQ(closed.modes[1].barrier_height, 6.62607015e-34 * 30e6);
  const TrapConfig guiding = c.trap_config(TrapPhase::guiding);
  ASSERT_EQ(guiding.modes.size(), 2u);
  EXPECT_DOUBLE_EQ(guiding.modes[1].barrier_height, 6.62607015e-34 * 20.6e6);
  EXPECT_DOUBLE_EQ(c.protocol_spec().guiding_height, 6.62607015e-34 * 20.6e6);
}

TEST(Config, PrefixedUnitsScaleExactly) {
  const RunConfig c = parse_config(
      "[geometry]\nprobe_wavelength = 780.2 nm\nwaist = 0.029 mm\n"
      "[protocol]\nsample_interval = 10000 ns\nmax_time = 50 ms\n[storage]\ntemperature = 100 uK\n"
      "[trace]\nvy = 0.05 m/s\n");
  EXPECT_DOUBLE_EQ(c.geometry.probe_wavelength, 780.2e-9);
  EXPECT_DOUBLE_EQ(c.geometry.waist, 29e-6);
  EXPECT_DOUBLE_EQ(c.protocol.sample_interval, 10e-6);
  EXPECT_DOUBLE_EQ(c.protocol.max_time, 0.05);
  EXPECT_DOUBLE_EQ(c.storage.settings.temperature, 1e-4);
  EXPECT_DOUBLE_EQ(c.trace.vy, 0.05);
}

TEST(Config, LengthSelectsNearestOddIndex) {
  EXPECT_EQ(parse_config("[geometry]\nlength = 0.122 mm\n").geometry.probe_index, 313);
  EXPECT_EQ(parse_config("[geometry]\nlength = 0.122 mm\nprobe_index = 313\n").geometry.probe_index, 313);
  parse_failure("[geometry]\nlength = 0.122 mm\nprobe_index = 301\n", ErrorCode::parse_error);
}

TEST(Config, ModeSectionsReplaceDefaults) {
  const RunConfig c = parse_config("[mode solo]\norder = TEM00\nfsr_offset = 3\nheight = 100 MHz\n");
  ASSERT_EQ(c.modes.size(), 1u);
  EXPECT_EQ(c.modes[0].role, ModeRole::always);
  EXPECT_THROW(c.protocol_spec(), Error);
  parse_failure("[mode a]\norder = TEM22\n", ErrorCode::parse_error);
  parse_failure("[mode a]\nheight = 1 MHz\n[mode a]\nheight = 1 MHz\n", ErrorCode::parse_error);
}

TEST(Config, EmitParseRoundTripIsExact) {
  const RunConfig d = default_config();
  EXPECT_EQ(parse_config(emit_config(d)), d);
  EXPECT_EQ(emit_config(parse_config(emit_config(d))), emit_config(d));

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> f(0.5, 1.5);
  for (int trial = 0; trial < 200; ++trial) {
    RunConfig c = d;
    c.geometry.probe_wavelength *= f(rng);
    c.geometry.waist *= 0.5 + f(rng);
    c.geometry.finesse *= f(rng);
    c.qed.g0 *= f(rng);
    c.qed.kappa *= f(rng);
    c.qed.gamma *= f(rng);
    c.qed.delta_c = 1e6 * (f(rng) - 1.0);
    c.qed.delta_ac *= f(rng);
    c.qed.detection_efficiency *= f(rng);
    c.trap.atom_mass *= f(rng);
    c.trap.stabilization_shift = 1e5 * f(rng);
    for (auto& m : c.modes) {
      m.height *= f(rng);
      m.scale = f(rng) / 1.5;
    }
    c.modes[3].height = c.modes[2].height;
    c.modes[3].scale = c.modes[2].scale;
    c.protocol.friction_beta *= f(rng);
    c.protocol.sample_interval *= f(rng);
    c.protocol.max_time *= f(rng);
    c.trace.x = 1e-6 * (f(rng) - 1.0);
    c.trace.vy *= f(rng);
    c.detection.photons_empty *= f(rng);
    c.detection.interval *= f(rng);
    c.detection.dark_rate = 1e3 * f(rng);
    c.spectrum.stark_shift *= f(rng);
    c.spectrum.coupling_ratio *= f(rng);
    c.storage.settings.temperature *= f(rng);
    c.storage.photons = {f(rng), 2 * f(rng)};
    c.run.seed = rng();
    c.run.workers = trial % 4;
    ASSERT_NO_THROW(c.validate()) << trial;
    const std::string text = emit_config(c);
    const RunConfig back = parse_config(text);
    ASSERT_EQ(back, c) << text;
    ASSERT_EQ(config_hash(back), config_hash(c));
  }
}

TEST(Config, HashTracksContent) {
  const RunConfig d = default_config();
  const std::string h = config_hash(d);
  EXPECT_EQ(h.size(), 16u);
  EXPECT_EQ(h, config_hash(parse_config("")));
  EXPECT_NE(h, config_hash(parse_config("[qed]\ng0 = 16.000001 MHz\n")));
  EXPECT_NE(h, config_hash(parse_config("[run]\nseed = 2\n")));
}

TEST(Config, RejectsModuleLevelViolations) {
  parse_failure("[mode a]\nheight = 1 MHz\nscale = 1.5\n", ErrorCode::invalid_config);
  parse_failure("[detection]\ntarget = 1\n", ErrorCode::invalid_config);
  parse_failure("[storage]\natoms = 5\n", ErrorCode::invalid_config);
  parse_failure("[storage]\nphotons = 1, -2\n", ErrorCode::invalid_config);
  parse_failure("[protocol]\nsample_interval = 0 s\n", ErrorCode::invalid_config);
}
