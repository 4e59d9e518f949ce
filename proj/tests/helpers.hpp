#pragma once

// Independent reference implementations used as test oracles, plus small
// dataset builders. Nothing here calls into the library's metric or transport
// code.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "silo/data.hpp"
#include "silo/models.hpp"

namespace oracle {

// Exhaustive pair count over (positive, negative) pairs; ties count 1/2.
inline double auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      den += 1.0;
      if (s[i] > s[j]) num += 1.0;
      else if (s[i] == s[j]) num += 0.5;
    }
  }
  return num / den;
}

// Harrell's C over ordered pairs (i, j) with event_i and t_j > t_i.
inline double c_index(const std::vector<double>& eta, const std::vector<double>& t,
                      const std::vector<std::uint8_t>& e) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!e[i]) continue;
    for (std::size_t j = 0; j < t.size(); ++j) {
      if (!(t[j] > t[i])) continue;
      den += 1.0;
      if (eta[j] < eta[i]) num += 1.0;
      else if (eta[j] == eta[i]) num += 0.5;
    }
  }
  return num / den;
}

// min over all m! permutations of (1/m) sum ||a_i - b_pi(i)||^2.
inline double w2_bruteforce(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const auto m = static_cast<int>(a.rows());
  std::vector<int> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (int i = 0; i < m; ++i) c += (a.row(i) - b.row(perm[i])).squaredNorm();
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / m;
}

// Upper regularized gamma Q(a, x) = 1 - P(a, x) from the power series of P.
inline double gamma_q_series(double a, double x) {
  if (x <= 0.0) return 1.0;
  double term = 1.0 / a, sum = term;
  for (int n = 1; n < 10000; ++n) {
    term *= x / (a + n);
    sum += term;
    if (term < sum * 1e-17) break;
  }
  const double log_p = a * std::log(x) - x - std::lgamma(a) + std::log(sum);
  return 1.0 - std::exp(log_p);
}

inline double chi2_sf(double x, double df) { return gamma_q_series(df / 2.0, x / 2.0); }

// Central differences of f at p with step h.
template <class F>
Eigen::VectorXd central_diff(F&& f, const Eigen::VectorXd& p, double h = 1e-5) {
  Eigen::VectorXd g(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    Eigen::VectorXd up = p, dn = p;
    up[i] += h;
    dn[i] -= h;
    g[i] = (f(up) - f(dn)) / (2.0 * h);
  }
  return g;
}

inline double rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-8});
  return (a - b).norm() / scale;
}

}  // namespace oracle

namespace fixture {

inline std::vector<double> gaussian_vec(std::mt19937_64& rng, std::size_t n, double mean = 0.0, double sd = 1.0) {
  std::normal_distribution<double> N(mean, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = N(rng);
  return v;
}

inline silo::Sample binary_sample(std::vector<double> x, int y) { return {std::move(x), silo::BinaryLabel{y}}; }

inline silo::Sample survival_sample(std::vector<double> x, double t, bool e) {
  return {std::move(x), silo::SurvivalLabel{t, e}};
}

// Binary logistic data with labels drawn from sigmoid(w . x + shift).
inline std::vector<silo::Sample> logistic_data(std::mt19937_64& rng, std::size_t n, std::size_t d,
                                               double mean_shift = 0.0) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<silo::Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto x = gaussian_vec(rng, d, mean_shift);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += (j % 2 ? -1.0 : 1.0) * x[j];
    const int y = U(rng) < 1.0 / (1.0 + std::exp(-z)) ? 1 : 0;
    out.push_back(binary_sample(std::move(x), y));
  }
  return out;
}

inline silo::FederatedDataset binary_fed(std::uint64_t seed, std::vector<std::size_t> sizes, std::size_t d,
                                         std::vector<double> shifts = {}) {
  std::mt19937_64 rng(seed);
  std::vector<silo::ClientDataset> clients;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    const double shift = k < shifts.size() ? shifts[k] : 0.0;
    auto all = logistic_data(rng, sizes[k], d, shift);
    const std::size_t n_train = sizes[k] * 4 / 5;
    silo::ClientDataset c;
    c.client_id = "c" + std::to_string(k);
    c.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
    c.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train), all.end());
    clients.push_back(std::move(c));
  }
  return silo::FederatedDataset({silo::TaskKind::Binary, 2, 0}, d, std::move(clients));
}

}  // namespace fixture
