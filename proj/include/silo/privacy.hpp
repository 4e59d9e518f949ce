#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "silo/data.hpp"
#include "silo/models.hpp"
#include "silo/rng.hpp"
#include "silo/strategies.hpp"

namespace silo {

struct PrivacyParams {
  double clip = 1.0;    // C
  double sigma = 1.0;   // noise multiplier
  double q = 1.0;       // Poisson sampling rate
  double delta = 1e-5;

  /// sigma may be 0 here (no noise, no guarantee); the accountant needs sigma > 0.
  void validate() const;
};

/// v * min(1, C / ||v||).
Eigen::VectorXd clip_to_norm(const Eigen::VectorXd& v, double clip);

struct DpLocalResult {
  ParamVector params;
  std::size_t steps = 0;
  double max_clipped_norm = 0.0;  // largest per-sample norm after clipping, over all steps
};

/// `steps` DP-SGD steps. Each step Poisson-samples every index with rate q,
/// clips each per-sample gradient to C, divides the sum by q n and adds
/// N(0, (sigma C / (q n))^2) per coordinate.
DpLocalResult dp_local_update(const Objective& objective, const ParamVector& start, std::span<const Sample> data,
                              double lr, std::size_t steps, const PrivacyParams& priv, Rng& rng);
DpLocalResult dp_local_update(const Objective& objective, const ParamVector& start, std::span<const Sample> data,
                              double lr, std::size_t steps, const PrivacyParams& priv, std::uint64_t seed);

inline constexpr int kMinRdpOrder = 2;
inline constexpr int kMaxRdpOrder = 64;

/// Per-step RDP of the Poisson-subsampled Gaussian at integer order alpha.
double rdp_subsampled_gaussian(double q, double sigma, int alpha);

/// RDP bookkeeping of one client: the per-step RDP at orders 2..64 of a fixed
/// (q, sigma) mechanism and the number of steps taken so far.
class PrivacyLedger {
 public:
  PrivacyLedger(double q, double sigma);

  void add_steps(std::size_t n) noexcept { steps_ += n; }
  std::size_t steps() const noexcept { return steps_; }
  /// Per-step RDP, index 0 is order 2.
  const std::vector<double>& per_step() const noexcept { return per_step_; }
  /// Accumulated RDP at each order.
  std::vector<double> accumulated() const;
  double epsilon(double delta) const;

 private:
  std::vector<double> per_step_;
  std::size_t steps_ = 0;
};

/// min over orders of steps * RDP(alpha) + log(1/delta) / (alpha - 1).
double compose_and_convert(const PrivacyLedger& ledger, std::size_t steps, double delta);

struct DpTrainResult {
  TrainedResult trained;
  std::vector<PrivacyLedger> ledgers;  // one per client
  double epsilon = 0.0;                // max over clients
};

/// FedAvg whose local updates are dp_local_update with cfg.local_updates
/// steps and learning rate cfg.lr, for cfg.rounds rounds.
DpTrainResult dp_fedavg_train(const FederatedDataset& fed, const Objective& objective, const StrategyConfig& cfg,
                              const PrivacyParams& priv);

}  // namespace silo
