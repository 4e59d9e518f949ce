#include "silo/survival_stats.hpp"

#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <numeric>

#include "silo/error.hpp"

namespace silo {

double SurvivalCurve::at(double t) const {
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 1.0;
  return survival[static_cast<std::size_t>(it - times.begin()) - 1];
}

namespace {

void check_group(std::span<const double> times, std::span<const std::uint8_t> events) {
  if (times.size() != events.size()) throw ConfigError("survival: times/events length mismatch");
  if (times.empty()) throw ConfigError("survival: empty input");
  for (double t : times)
    if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("survival: times must be positive");
}

std::vector<std::size_t> order_by_time(std::span<const double> times) {
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
  return order;
}

}  // namespace

SurvivalCurve kaplan_meier(std::span<const double> times, std::span<const std::uint8_t> events) {
  check_group(times, events);
  const auto order = order_by_time(times);
  SurvivalCurve curve;
  double s = 1.0;
  std::size_t at_risk = times.size();
  std::size_t i = 0;
  while (i < order.size()) {
    const double t = times[order[i]];
    std::size_t deaths = 0, leaving = 0;
    for (; i < order.size() && times[order[i]] == t; ++i, ++leaving) deaths += events[order[i]] != 0;
    if (deaths > 0) {
      s *= 1.0 - static_cast<double>(deaths) / static_cast<double>(at_risk);
      curve.times.push_back(t);
      curve.survival.push_back(s);
    }
    at_risk -= leaving;
  }
  return curve;
}

LogrankResult logrank_test(const SurvivalGroup& a, const SurvivalGroup& b) {
  check_group(a.times, a.events);
  check_group(b.times, b.events);

  struct Obs {
    double time;
    bool event;
    bool in_a;
  };
  std::vector<Obs> all;
  for (std::size_t i = 0; i < a.times.size(); ++i) all.push_back({a.times[i], a.events[i] != 0, true});
  for (std::size_t i = 0; i < b.times.size(); ++i) all.push_back({b.times[i], b.events[i] != 0, false});
  std::stable_sort(all.begin(), all.end(), [](const Obs& x, const Obs& y) { return x.time < y.time; });

  LogrankResult r;
  double n_a = static_cast<double>(a.times.size());
  double n_b = static_cast<double>(b.times.size());
  std::size_t i = 0;
  while (i < all.size()) {
    const double t = all[i].time;
    double d = 0.0, d_a = 0.0, left_a = 0.0, left_b = 0.0;
    for (; i < all.size() && all[i].time == t; ++i) {
      if (all[i].event) {
        d += 1.0;
        d_a += all[i].in_a;
      }
      (all[i].in_a ? left_a : left_b) += 1.0;
    }
    const double n = n_a + n_b;
    if (d > 0.0) {
      r.observed_a += d_a;
      r.expected_a += d * n_a / n;
      if (n > 1.0) r.variance += n_a * n_b * (n - d) * d / (n * n * (n - 1.0));
    }
    n_a -= left_a;
    n_b -= left_b;
  }
  if (!(r.variance > 0.0)) throw UndefinedMetricError("logrank: zero variance");
  const double diff = r.observed_a - r.expected_a;
  r.statistic = diff * diff / r.variance;
  r.p_value = chi_square_sf(r.statistic, 1.0);
  return r;
}

double chi_square_sf(double x, double df) {
  if (!(df > 0.0)) throw ConfigError("chi_square_sf: df must be positive");
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(df / 2.0, x / 2.0);
}

}  // namespace silo
