#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "silo/data.hpp"
#include "silo/metrics.hpp"
#include "silo/models.hpp"

namespace silo {

enum class StrategyKind { FedAvg, FedProx, Scaffold, Cyclic, FedAdagrad, FedAdam, FedYogi };

std::string_view to_string(StrategyKind kind);
StrategyKind parse_strategy_kind(std::string_view name);
bool is_fedopt(StrategyKind kind) noexcept;

/// Tunables of one federated run. Fields a strategy does not use are ignored.
struct StrategyConfig {
  StrategyKind kind = StrategyKind::FedAvg;
  double lr = 0.01;         // client learning rate
  double server_lr = 1.0;   // Scaffold, FedOpt
  double mu = 0.0;          // FedProx
  double beta1 = 0.9;       // FedOpt
  double beta2 = 0.999;     // FedOpt
  double tau = 1e-8;        // FedOpt
  bool shuffle = false;     // Cyclic
  std::size_t batch_size = 4;
  std::size_t local_updates = 100;
  std::size_t rounds = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// n_epochs * floor(n_T / K / B / E); throws BudgetUnderflowError on 0.
std::size_t compute_round_budget(std::size_t n_epochs_pooled, std::size_t n_train_total, std::size_t num_clients,
                                 std::size_t batch_size, std::size_t local_updates);

/// Execution context of one federated run: the clients' training data, the
/// objective, and one minibatch stream per client (seeded with
/// client_stream_seed(seed, k)) that persists across rounds.
class ClientPool {
 public:
  ClientPool(std::span<const ClientDataset> clients, const Objective& objective, std::uint64_t seed);

  std::size_t size() const noexcept { return clients_.size(); }
  const ClientDataset& client(std::size_t k) const { return clients_[k]; }
  const Objective& objective() const noexcept { return objective_; }

  /// n_k / n_T over training sizes.
  const std::vector<double>& weights() const noexcept { return weights_; }

  /// Runs local SGD on client k from `start`, drawing from that client's
  /// stream. Divergence is re-thrown with client and round attached.
  LocalUpdateResult train(std::size_t k, const ParamVector& start, const LocalUpdateConfig& cfg,
                          const Eigen::VectorXd* correction = nullptr);

  /// Round index used in error context; advanced by the round functions.
  std::size_t round = 0;

 private:
  std::span<const ClientDataset> clients_;
  const Objective& objective_;
  std::vector<Rng> streams_;
  std::vector<double> weights_;
};

/// Sum_k weight_k * params_k.
ParamVector aggregate_weighted(std::span<const ParamVector> params, std::span<const double> weights);

struct RoundStats {
  std::vector<double> client_loss;  // mean local minibatch loss per client
};

ParamVector fedavg_round(ClientPool& pool, const ParamVector& global, const StrategyConfig& cfg,
                         RoundStats* stats = nullptr);

/// FedAvg with the proximal term mu/2 ||w - global||^2 on every client.
ParamVector fedprox_round(ClientPool& pool, const ParamVector& global, const StrategyConfig& cfg,
                          RoundStats* stats = nullptr);

struct ScaffoldState {
  Eigen::VectorXd server;                // c
  std::vector<Eigen::VectorXd> clients;  // c_i

  static ScaffoldState zeros(std::size_t num_clients, std::size_t num_params);
};

/// Scaffold, full participation, option-II control variates.
ParamVector scaffold_round(ClientPool& pool, const ParamVector& global, ScaffoldState& state,
                           const StrategyConfig& cfg, RoundStats* stats = nullptr);

/// One full cycle through the clients. With cfg.shuffle the visit order is a
/// permutation drawn from `order_rng`; otherwise dataset order.
ParamVector cyclic_round(ClientPool& pool, const ParamVector& global, const StrategyConfig& cfg, Rng& order_rng,
                         RoundStats* stats = nullptr, std::vector<std::size_t>* visit_order = nullptr);

struct ServerOptState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::size_t steps = 0;

  static ServerOptState zeros(std::size_t num_params);
};

/// Server-side FedAdagrad / FedAdam / FedYogi step on an aggregated delta.
ParamVector fedopt_server_step(const ParamVector& global, const Eigen::VectorXd& delta, ServerOptState& state,
                               const StrategyConfig& cfg);

ParamVector fedopt_round(ClientPool& pool, const ParamVector& global, ServerOptState& state,
                         const StrategyConfig& cfg, RoundStats* stats = nullptr);

struct RoundRecord {
  std::size_t round = 0;
  std::uint64_t params_hash = 0;
  std::vector<double> client_loss;
  std::optional<double> metric_mean;
};

struct TrainedResult {
  ParamVector global;
  std::vector<ParamVector> personalized;  // empty unless personalized
  std::vector<RoundRecord> log;
  double wall_seconds = 0.0;
};

struct TrainOptions {
  /// Evaluate the global model on every client's test set after each round.
  std::optional<MetricKind> eval_metric;
};

/// Runs cfg.rounds rounds of the configured strategy from zero parameters.
TrainedResult train_strategy(const FederatedDataset& fed, const Objective& objective, const StrategyConfig& cfg,
                             const TrainOptions& options = {});

TrainedResult cyclic_run(const FederatedDataset& fed, const Objective& objective, const StrategyConfig& cfg,
                         const TrainOptions& options = {});

struct BaselineConfig {
  double lr = 0.01;
  std::size_t batch_size = 4;
  std::size_t n_epochs = 1;
  std::uint64_t seed = 0;
};

/// SGD on the pooled training set for n_epochs * ceil(n / B) steps. Uses the
/// minibatch stream of client 0.
TrainedResult train_pooled(const FederatedDataset& fed, const Objective& objective, const BaselineConfig& cfg);

/// SGD on client k's training set only, using client k's stream.
TrainedResult train_local(const FederatedDataset& fed, std::size_t k, const Objective& objective,
                          const BaselineConfig& cfg);

/// `updates` local SGD steps per client, starting from `global`.
std::vector<ParamVector> personalize(const ParamVector& global, const FederatedDataset& fed,
                                     const Objective& objective, std::size_t updates, double lr,
                                     std::size_t batch_size, std::uint64_t seed);

/// Metric of one model on one sample set.
double evaluate_model(const ParamVector& params, std::span<const Sample> samples, MetricKind metric,
                      const TaskInfo& task);

struct FederatedEvaluation {
  std::vector<std::optional<double>> per_client;  // nullopt = undefined on that client
  double mean = 0.0;                              // uniform over defined clients
  std::vector<std::string> warnings;
};

FederatedEvaluation evaluate_federated(const ParamVector& model, const FederatedDataset& fed, MetricKind metric);
/// Client k's model is evaluated on client k's test set only.
FederatedEvaluation evaluate_federated(std::span<const ParamVector> per_client, const FederatedDataset& fed,
                                       MetricKind metric);

/// Throws ConfigError when the (task, model, metric) triple is inconsistent.
void check_compatible(const TaskInfo& task, const ModelSpec& model, MetricKind metric);

}  // namespace silo
