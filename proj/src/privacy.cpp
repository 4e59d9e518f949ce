#include "silo/privacy.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>

#include "silo/error.hpp"

namespace silo {

void PrivacyParams::validate() const {
  if (!(clip > 0.0)) throw ConfigError("privacy: clip norm must be positive");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("privacy: noise multiplier must be >= 0");
  if (!(q > 0.0 && q <= 1.0)) throw ConfigError("privacy: sampling rate must be in (0, 1]");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("privacy: delta must be in (0, 1)");
}

namespace {

// Scales `v` in place so that its norm is at most `clip`; returns the final norm.
double clip_in_place(Eigen::VectorXd& v, double clip) {
  double norm = v.norm();
  if (norm <= clip) return norm;
  v *= clip / norm;
  // Rounding can leave the norm an ulp above the bound.
  while ((norm = v.norm()) > clip) v *= std::nextafter(1.0, 0.0);
  return norm;
}

}  // namespace

Eigen::VectorXd clip_to_norm(const Eigen::VectorXd& v, double clip) {
  if (!(clip > 0.0)) throw ConfigError("clip norm must be positive");
  Eigen::VectorXd out = v;
  clip_in_place(out, clip);
  return out;
}

DpLocalResult dp_local_update(const Objective& objective, const ParamVector& start, std::span<const Sample> data,
                              double lr, std::size_t steps, const PrivacyParams& priv, Rng& rng) {
  priv.validate();
  if (data.empty()) throw ConfigError("dp local update: client has no training data");
  if (!objective.separable()) throw ConfigError("dp local update: loss must decompose into per-sample terms");

  const double scale = priv.q * static_cast<double>(data.size());
  const double noise_std = priv.sigma * priv.clip / scale;
  std::bernoulli_distribution take(priv.q);
  std::normal_distribution<double> gauss(0.0, 1.0);

  DpLocalResult out{start, 0, 0.0};
  const auto p = out.params.values.size();
  Eigen::VectorXd sum(p), g(p);
  std::size_t index = 0;
  const std::span<const std::size_t> one(&index, 1);
  for (std::size_t step = 0; step < steps; ++step) {
    sum.setZero();
    for (index = 0; index < data.size(); ++index) {
      if (priv.q < 1.0 && !take(rng)) continue;
      const double loss = objective.evaluate(out.params.values, data, one, &g);
      if (!std::isfinite(loss)) throw DivergedError(step);
      out.max_clipped_norm = std::max(out.max_clipped_norm, clip_in_place(g, priv.clip));
      sum += g;
    }
    sum /= scale;
    if (priv.sigma > 0.0)
      for (Eigen::Index j = 0; j < p; ++j) sum[j] += noise_std * gauss(rng);
    out.params.values -= lr * sum;
    if (!out.params.values.allFinite()) throw DivergedError(step);
    ++out.steps;
  }
  return out;
}

DpLocalResult dp_local_update(const Objective& objective, const ParamVector& start, std::span<const Sample> data,
                              double lr, std::size_t steps, const PrivacyParams& priv, std::uint64_t seed) {
  Rng rng(seed);
  return dp_local_update(objective, start, data, lr, steps, priv, rng);
}

namespace {

double log_binomial(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

}  // namespace

double rdp_subsampled_gaussian(double q, double sigma, int alpha) {
  if (alpha < kMinRdpOrder) throw ConfigError("rdp: order must be at least 2");
  if (!(q > 0.0 && q <= 1.0)) throw ConfigError("rdp: sampling rate must be in (0, 1]");
  if (!(sigma > 0.0)) throw ConfigError("rdp: noise multiplier must be positive");
  const double a = static_cast<double>(alpha);
  if (q == 1.0) return a / (2.0 * sigma * sigma);

  // log A_alpha = log sum_k C(a,k) (1-q)^(a-k) q^k exp((k^2 - k) / (2 sigma^2)).
  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(alpha) + 1);
  const double log_q = std::log(q), log_1mq = std::log1p(-q);
  for (int k = 0; k <= alpha; ++k) {
    const double kd = k;
    terms.push_back(log_binomial(alpha, k) + (a - kd) * log_1mq + kd * log_q +
                    (kd * kd - kd) / (2.0 * sigma * sigma));
  }
  const double top = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += std::exp(t - top);
  return std::max(0.0, (top + std::log(s)) / (a - 1.0));
}

PrivacyLedger::PrivacyLedger(double q, double sigma) {
  for (int a = kMinRdpOrder; a <= kMaxRdpOrder; ++a) per_step_.push_back(rdp_subsampled_gaussian(q, sigma, a));
}

std::vector<double> PrivacyLedger::accumulated() const {
  std::vector<double> out(per_step_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = per_step_[i] * static_cast<double>(steps_);
  return out;
}

double PrivacyLedger::epsilon(double delta) const { return compose_and_convert(*this, steps_, delta); }

double compose_and_convert(const PrivacyLedger& ledger, std::size_t steps, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must be in (0, 1)");
  double best = std::numeric_limits<double>::infinity();
  const double log_inv_delta = -std::log(delta);
  for (std::size_t i = 0; i < ledger.per_step().size(); ++i) {
    const double a = static_cast<double>(kMinRdpOrder) + static_cast<double>(i);
    best = std::min(best, static_cast<double>(steps) * ledger.per_step()[i] + log_inv_delta / (a - 1.0));
  }
  return best;
}

DpTrainResult dp_fedavg_train(const FederatedDataset& fed, const Objective& objective, const StrategyConfig& cfg,
                              const PrivacyParams& priv) {
  priv.validate();
  if (!(priv.sigma > 0.0)) throw ConfigError("dp-fedavg: noise multiplier must be positive");
  if (!(cfg.lr > 0.0) || cfg.local_updates < 1) throw ConfigError("dp-fedavg: lr > 0 and E >= 1 required");
  if (objective.model().dim != fed.dim()) throw ConfigError("model dimension does not match the dataset");
  const auto start = std::chrono::steady_clock::now();

  const std::size_t k_count = fed.num_clients();
  std::vector<Rng> streams;
  for (std::size_t k = 0; k < k_count; ++k) streams.emplace_back(client_stream_seed(cfg.seed, k));
  const auto sizes = fed.train_sizes();
  const double total = static_cast<double>(fed.total_train());
  std::vector<double> weights;
  for (auto n : sizes) weights.push_back(static_cast<double>(n) / total);

  DpTrainResult out{{ParamVector::zeros(objective.model()), {}, {}, 0.0},
                    std::vector<PrivacyLedger>(k_count, PrivacyLedger(priv.q, priv.sigma)),
                    0.0};
  ParamVector& global = out.trained.global;
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    std::vector<ParamVector> local;
    for (std::size_t k = 0; k < k_count; ++k) {
      try {
        auto r = dp_local_update(objective, global, fed.client(k).train, cfg.lr, cfg.local_updates, priv,
                                 streams[k]);
        out.ledgers[k].add_steps(r.steps);
        local.push_back(std::move(r.params));
      } catch (const DivergedError& e) {
        throw e.with_context(k, t);
      }
    }
    global = aggregate_weighted(local, weights);
    RoundRecord rec;
    rec.round = t;
    rec.params_hash = hash_doubles({global.values.data(), static_cast<std::size_t>(global.values.size())});
    out.trained.log.push_back(std::move(rec));
  }
  for (const auto& l : out.ledgers) out.epsilon = std::max(out.epsilon, l.epsilon(priv.delta));
  out.trained.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace silo
