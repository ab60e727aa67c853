#pragma once

// Bayes-optimal decision "atom present" vs "cavity empty" from the number of
// photons detected in one interval, and its exact error probabilities.

#include <algorithm>
#include <array>
#include <climits>
#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "bluetrap/error.hpp"
#include "bluetrap/parallel.hpp"
#include "bluetrap/qed.hpp"
#include "bluetrap/random.hpp"

namespace bluetrap {

struct DetectionSetup {
  double rate_empty = 0.0;  // detected counts/s, cavity empty
  double rate_atom = 0.0;   // detected counts/s, atom present
  double dark_rate = 0.0;   // counts/s added under both hypotheses
  double prior_atom = 0.5;
  double interval = 10e-6;  // s
  double atom_scatter_rate = 0.0;  // 1/s, free-space scattering while the atom is present

  double mean_empty() const { return (rate_empty + dark_rate) * interval; }
  double mean_atom() const { return (rate_atom + dark_rate) * interval; }

  // Priors of exactly 0 or 1 are accepted and yield a flagged, data-blind rule.
  void validate() const {
    if (!(rate_empty >= 0.0) || !(rate_atom >= 0.0) || !(dark_rate >= 0.0))
      throw Error(ErrorCode::invalid_params, "count rates must be non-negative");
    if (!(prior_atom >= 0.0 && prior_atom <= 1.0))
      throw Error(ErrorCode::invalid_params, "prior probability must lie in [0, 1]");
    if (!(interval >= 0.0)) throw Error(ErrorCode::invalid_params, "detection interval must be non-negative");
  }
};

// Detected rate = (photons leaving the cavity, 2 kappa <a^+a>) x efficiency.
inline double detected_rate(double photons, double kappa, double efficiency) {
  return 2.0 * kappa * photons * efficiency;
}

inline DetectionSetup detection_setup_from_photons(double photons_empty, double photons_atom, const QedParams& qed,
                                                   double interval, double prior_atom = 0.5, double dark_rate = 0.0) {
  DetectionSetup s;
  s.rate_empty = detected_rate(photons_empty, qed.kappa, qed.detection_efficiency);
  s.rate_atom = detected_rate(photons_atom, qed.kappa, qed.detection_efficiency);
  s.dark_rate = dark_rate;
  s.prior_atom = prior_atom;
  s.interval = interval;
  s.validate();
  return s;
}

struct DecisionRule {
  static constexpr long long kAlways = LLONG_MAX;
  static constexpr long long kNever = -1;

  // With decide_atom_if_below: atom iff n <= threshold. Otherwise atom iff
  // n >= threshold. Ties in posterior go to "atom present".
  long long threshold = 0;
  bool decide_atom_if_below = true;
  bool degenerate_prior = false;

  bool decides_atom(long long n) const {
    if (decide_atom_if_below) return threshold != kNever && n <= threshold;
    return threshold != kAlways && n >= threshold;
  }
  friend bool operator==(const DecisionRule&, const DecisionRule&) = default;
};

namespace detail {

// log of the Poisson likelihood up to the common -log n! term.
inline double log_likelihood(long long n, double mean) {
  if (mean == 0.0) return n == 0 ? 0.0 : -INFINITY;
  return static_cast<double>(n) * std::log(mean) - mean;
}

inline bool posterior_favors_atom(long long n, double mean_atom, double mean_empty, double prior) {
  return std::log(prior) + log_likelihood(n, mean_atom) >= std::log1p(-prior) + log_likelihood(n, mean_empty);
}

inline double poisson_pmf(long long k, double mean) {
  if (mean == 0.0) return k == 0 ? 1.0 : 0.0;
  return std::exp(static_cast<double>(k) * std::log(mean) - mean - std::lgamma(static_cast<double>(k) + 1.0));
}

// Counts beyond this carry < 1e-12 probability (Chernoff-style margin).
inline long long poisson_upper_reach(double mean) {
  return static_cast<long long>(std::ceil(mean + 12.0 * std::sqrt(mean) + 40.0));
}

// P(N <= n).
inline double poisson_cdf(long long n, double mean) {
  if (n < 0) return 0.0;
  const long long reach = poisson_upper_reach(mean);
  if (n >= reach) return 1.0;
  const long long start = std::max<long long>(0, static_cast<long long>(mean - 12.0 * std::sqrt(mean) - 40.0));
  double sum = 0.0;
  for (long long k = start; k <= n; ++k) sum += poisson_pmf(k, mean);
  return std::min(1.0, sum);
}

// P(N >= n).
inline double poisson_upper_tail(long long n, double mean) {
  if (n <= 0) return 1.0;
  if (n > poisson_upper_reach(mean)) return 0.0;
  if (static_cast<double>(n) <= mean) return 1.0 - poisson_cdf(n - 1, mean);
  double sum = 0.0;
  for (long long k = n, reach = poisson_upper_reach(mean); k <= reach; ++k) sum += poisson_pmf(k, mean);
  return std::min(1.0, sum);
}

}  // namespace detail

inline DecisionRule bayes_rule(const DetectionSetup& setup) {
  setup.validate();
  const double la = setup.mean_atom();
  const double le = setup.mean_empty();
  if (la == le)
    throw Error(ErrorCode::no_information, "identical count means under both hypotheses: detection carries no information");

  DecisionRule rule;
  rule.decide_atom_if_below = la < le;
  const double p = setup.prior_atom;
  if (p == 0.0 || p == 1.0) {
    rule.degenerate_prior = true;
    const bool atom = (p == 1.0);
    if (rule.decide_atom_if_below)
      rule.threshold = atom ? DecisionRule::kAlways : DecisionRule::kNever;
    else
      rule.threshold = atom ? 0 : DecisionRule::kAlways;
    return rule;
  }

  auto atom_at = [&](long long n) { return detail::posterior_favors_atom(n, la, le, p); };
  const long long reach = detail::poisson_upper_reach(std::max(la, le));
  // Real-valued crossing of the log-posterior ratio, then exact adjustment.
  const double log_ratio = std::log(std::max(la, le)) - std::log(std::min(la, le));
  double crossing = (le - la + std::log(p) - std::log1p(-p)) / (rule.decide_atom_if_below ? log_ratio : -log_ratio);
  if (!std::isfinite(crossing)) crossing = 0.0;
  long long n = static_cast<long long>(std::floor(std::clamp(crossing, -1.0, static_cast<double>(reach))));

  if (rule.decide_atom_if_below) {
    // Largest n with atom_at(n); atom_at is monotone non-increasing in n.
    while (n + 1 <= reach && atom_at(n + 1)) ++n;
    while (n >= 0 && !atom_at(n)) --n;
    if (n >= reach) n = DecisionRule::kAlways;
    rule.threshold = n < 0 ? DecisionRule::kNever : n;
  } else {
    // Smallest n with atom_at(n); atom_at is monotone non-decreasing in n.
    n = std::max<long long>(n, 0);
    while (n > 0 && atom_at(n - 1)) --n;
    while (n <= reach && !atom_at(n)) ++n;
    rule.threshold = n > reach ? DecisionRule::kAlways : n;
  }
  return rule;
}

struct ConfidenceReport {
  double p_correct = 0.0;
  double p_false_atom = 0.0;   // P(decide atom | empty)
  double p_missed_atom = 0.0;  // P(decide empty | atom)
  double expected_scattered_photons = 0.0;  // scattered by the atom during one interval, if present
  DecisionRule rule;
};

inline ConfidenceReport evaluate_rule(const DetectionSetup& setup, const DecisionRule& rule) {
  const double la = setup.mean_atom();
  const double le = setup.mean_empty();
  ConfidenceReport r;
  r.rule = rule;
  if (rule.decide_atom_if_below) {
    const long long t = rule.threshold;
    r.p_missed_atom = t == DecisionRule::kAlways ? 0.0 : detail::poisson_upper_tail(t + 1, la);
    r.p_false_atom = t == DecisionRule::kAlways ? 1.0 : detail::poisson_cdf(t, le);
  } else {
    const long long t = rule.threshold;
    r.p_missed_atom = t == DecisionRule::kAlways ? 1.0 : detail::poisson_cdf(t - 1, la);
    r.p_false_atom = t == DecisionRule::kAlways ? 0.0 : detail::poisson_upper_tail(t, le);
  }
  const double p = setup.prior_atom;
  r.p_correct = 1.0 - p * r.p_missed_atom - (1.0 - p) * r.p_false_atom;
  r.expected_scattered_photons = setup.atom_scatter_rate * setup.interval;
  return r;
}

inline ConfidenceReport confidence(const DetectionSetup& setup) {
  setup.validate();
  if (setup.mean_atom() == setup.mean_empty()) {
    // No information: the best rule follows the prior.
    ConfidenceReport r;
    const double p = setup.prior_atom;
    r.rule.threshold = p >= 0.5 ? DecisionRule::kAlways : DecisionRule::kNever;
    r.p_missed_atom = p >= 0.5 ? 0.0 : 1.0;
    r.p_false_atom = p >= 0.5 ? 1.0 : 0.0;
    r.p_correct = std::max(p, 1.0 - p);
    r.expected_scattered_photons = setup.atom_scatter_rate * setup.interval;
    return r;
  }
  return evaluate_rule(setup, bayes_rule(setup));
}

struct ConfidenceCurve {
  std::vector<std::pair<double, double>> points;  // (interval s, p_correct)
  std::optional<double> time_to_target;           // smallest grid interval reaching the target
  double target = 0.95;
};

inline ConfidenceCurve confidence_vs_time(const DetectionSetup& setup, const std::vector<double>& intervals,
                                          double target = 0.95) {
  for (std::size_t i = 1; i < intervals.size(); ++i)
    if (!(intervals[i] > intervals[i - 1]))
      throw Error(ErrorCode::invalid_params, "interval grid must be strictly increasing");
  ConfidenceCurve curve;
  curve.target = target;
  for (double tau : intervals) {
    DetectionSetup s = setup;
    s.interval = tau;
    const double pc = confidence(s).p_correct;
    curve.points.emplace_back(tau, pc);
    if (!curve.time_to_target && pc >= target) curve.time_to_target = tau;
  }
  return curve;
}

inline double scattered_photon_budget(const QedResponse& response, double interval) {
  if (!(interval > 0.0)) throw Error(ErrorCode::invalid_params, "interval must be positive");
  return response.scatter_rate * interval;
}

struct ConfusionMatrix {
  // counts[truth][decision], index 1 = atom present.
  std::array<std::array<long long, 2>, 2> counts{};

  long long trials() const { return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1]; }
  double p_correct() const {
    const long long n = trials();
    return n > 0 ? static_cast<double>(counts[0][0] + counts[1][1]) / static_cast<double>(n) : 0.0;
  }
  double standard_error() const {
    const double p = p_correct();
    const long long n = trials();
    return n > 0 ? std::sqrt(p * (1.0 - p) / static_cast<double>(n)) : 0.0;
  }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline constexpr long long kDetectionBlock = 1 << 16;

// Trials are split into fixed-size blocks, each with its own derived seed, so
// the result does not depend on the number of workers.
inline ConfusionMatrix simulate_detection(const DetectionSetup& setup, long long trials, std::uint64_t seed,
                                          unsigned workers = default_workers()) {
  if (trials < 1) throw Error(ErrorCode::invalid_params, "trials must be >= 1");
  const DecisionRule rule = bayes_rule(setup);
  const double la = setup.mean_atom();
  const double le = setup.mean_empty();
  const auto blocks = static_cast<std::size_t>((trials + kDetectionBlock - 1) / kDetectionBlock);
  std::vector<ConfusionMatrix> partial(blocks);
  parallel_for(blocks, workers, [&](std::size_t b) {
    Rng rng = make_rng(seed, b);
    std::bernoulli_distribution truth(setup.prior_atom);
    const long long begin = static_cast<long long>(b) * kDetectionBlock;
    const long long end = std::min(trials, begin + kDetectionBlock);
    auto& m = partial[b];
    for (long long t = begin; t < end; ++t) {
      const bool atom = truth(rng);
      const long long n = poisson_draw(rng, atom ? la : le);
      ++m.counts[atom ? 1 : 0][rule.decides_atom(n) ? 1 : 0];
    }
  });
  ConfusionMatrix total;
  for (const auto& m : partial)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) total.counts[i][j] += m.counts[i][j];
  return total;
}

}  // namespace bluetrap
