#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace silo {

/// Kaplan-Meier step function. survival[i] holds on [times[i], times[i+1]).
/// Only distinct event times appear; S = 1 before the first.
struct SurvivalCurve {
  std::vector<double> times;
  std::vector<double> survival;

  double at(double t) const;
};

SurvivalCurve kaplan_meier(std::span<const double> times, std::span<const std::uint8_t> events);

struct SurvivalGroup {
  std::vector<double> times;
  std::vector<std::uint8_t> events;
};

struct LogrankResult {
  double statistic = 0.0;
  double p_value = 1.0;
  double observed_a = 0.0;
  double expected_a = 0.0;
  double variance = 0.0;
};

/// Two-group log-rank test, p from the chi-square(1) survival function.
LogrankResult logrank_test(const SurvivalGroup& a, const SurvivalGroup& b);

/// P(X > x) for X ~ chi-square(df).
double chi_square_sf(double x, double df);

}  // namespace silo
