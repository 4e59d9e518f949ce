#include "silo/strategies.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "silo/error.hpp"

namespace silo {

std::string_view to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::FedAvg: return "FedAvg";
    case StrategyKind::FedProx: return "FedProx";
    case StrategyKind::Scaffold: return "Scaffold";
    case StrategyKind::Cyclic: return "Cyclic";
    case StrategyKind::FedAdagrad: return "FedAdagrad";
    case StrategyKind::FedAdam: return "FedAdam";
    case StrategyKind::FedYogi: return "FedYogi";
  }
  return "?";
}

StrategyKind parse_strategy_kind(std::string_view name) {
  for (auto k : {StrategyKind::FedAvg, StrategyKind::FedProx, StrategyKind::Scaffold, StrategyKind::Cyclic,
                 StrategyKind::FedAdagrad, StrategyKind::FedAdam, StrategyKind::FedYogi})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

bool is_fedopt(StrategyKind kind) noexcept {
  return kind == StrategyKind::FedAdagrad || kind == StrategyKind::FedAdam || kind == StrategyKind::FedYogi;
}

void StrategyConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("client learning rate must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (local_updates < 1) throw ConfigError("local updates must be at least 1");
  if (kind == StrategyKind::Scaffold || is_fedopt(kind)) {
    if (!(server_lr > 0.0)) throw ConfigError("server learning rate must be positive");
  }
  if (kind == StrategyKind::FedProx && !(mu >= 0.0)) throw ConfigError("mu must be non-negative");
  if (is_fedopt(kind)) {
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("beta1 and beta2 must be in [0, 1)");
  }
}

std::size_t compute_round_budget(std::size_t n_epochs_pooled, std::size_t n_train_total, std::size_t num_clients,
                                 std::size_t batch_size, std::size_t local_updates) {
  if (n_epochs_pooled < 1 || n_train_total < 1 || num_clients < 1 || batch_size < 1 || local_updates < 1)
    throw ConfigError("round budget inputs must all be at least 1");
  // Successive integer divisions equal the floor of the real quotient.
  const std::size_t rounds = n_epochs_pooled * (n_train_total / num_clients / batch_size / local_updates);
  if (rounds == 0) throw BudgetUnderflowError();
  return rounds;
}

ClientPool::ClientPool(std::span<const ClientDataset> clients, const Objective& objective, std::uint64_t seed)
    : clients_(clients), objective_(objective) {
  if (clients_.empty()) throw ConfigError("no clients");
  std::size_t total = 0;
  for (std::size_t k = 0; k < clients_.size(); ++k) {
    streams_.emplace_back(client_stream_seed(seed, k));
    total += clients_[k].train.size();
  }
  if (total == 0) throw ConfigError("no training data on any client");
  for (const auto& c : clients_)
    weights_.push_back(static_cast<double>(c.train.size()) / static_cast<double>(total));
}

LocalUpdateResult ClientPool::train(std::size_t k, const ParamVector& start, const LocalUpdateConfig& cfg,
                                    const Eigen::VectorXd* correction) {
  try {
    return sgd_local_update(objective_, start, clients_[k].train, cfg, streams_[k], correction);
  } catch (const DivergedError& e) {
    throw e.with_context(k, round);
  } catch (const ConfigError& e) {
    throw ConfigError(clients_[k].client_id + ": " + e.what());
  }
}

ParamVector aggregate_weighted(std::span<const ParamVector> params, std::span<const double> weights) {
  if (params.empty() || params.size() != weights.size()) throw ConfigError("aggregate: size mismatch");
  ParamVector out{params[0].layout, Eigen::VectorXd::Zero(params[0].values.size())};
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!(params[k].layout == out.layout)) throw ConfigError("aggregate: clients disagree on model layout");
    out.values += weights[k] * params[k].values;
  }
  return out;
}

namespace {

LocalUpdateConfig local_config(const StrategyConfig& cfg) {
  LocalUpdateConfig local;
  local.lr = cfg.lr;
  local.batch_size = cfg.batch_size;
  local.num_updates = cfg.local_updates;
  return local;
}

ParamVector average_round(ClientPool& pool, const ParamVector& global, const LocalUpdateConfig& local,
                          RoundStats* stats) {
  std::vector<ParamVector> results;
  results.reserve(pool.size());
  if (stats) stats->client_loss.clear();
  for (std::size_t k = 0; k < pool.size(); ++k) {
    auto r = pool.train(k, global, local);
    if (stats) stats->client_loss.push_back(r.mean_loss);
    results.push_back(std::move(r.params));
  }
  return aggregate_weighted(results, pool.weights());
}

Eigen::VectorXd uniform_mean(const std::vector<Eigen::VectorXd>& vs) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(vs.front().size());
  for (const auto& v : vs) sum += v;
  return sum / static_cast<double>(vs.size());
}

}  // namespace

ParamVector fedavg_round(ClientPool& pool, const ParamVector& global, const StrategyConfig& cfg, RoundStats* stats) {
  return average_round(pool, global, local_config(cfg), stats);
}

ParamVector fedprox_round(ClientPool& pool, const ParamVector& global, const StrategyConfig& cfg,
                          RoundStats* stats) {
  auto local = local_config(cfg);
  local.prox = Proximal{cfg.mu, global.values};
  return average_round(pool, global, local, stats);
}

ScaffoldState ScaffoldState::zeros(std::size_t num_clients, std::size_t num_params) {
  const auto n = static_cast<Eigen::Index>(num_params);
  return {Eigen::VectorXd::Zero(n), std::vector<Eigen::VectorXd>(num_clients, Eigen::VectorXd::Zero(n))};
}

ParamVector scaffold_round(ClientPool& pool, const ParamVector& global, ScaffoldState& state,
                           const StrategyConfig& cfg, RoundStats* stats) {
  if (state.clients.size() != pool.size()) throw ConfigError("scaffold: control variate count != client count");
  const auto local = local_config(cfg);
  const double step_scale = 1.0 / (static_cast<double>(cfg.local_updates) * cfg.lr);
  const Eigen::VectorXd& x = global.values;

  std::vector<Eigen::VectorXd> finals;
  std::vector<Eigen::VectorXd> new_controls;
  if (stats) stats->client_loss.clear();
  for (std::size_t k = 0; k < pool.size(); ++k) {
    const Eigen::VectorXd correction = state.server - state.clients[k];
    auto r = pool.train(k, global, local, &correction);
    if (stats) stats->client_loss.push_back(r.mean_loss);
    new_controls.push_back(-correction + (x - r.params.values) * step_scale);
    finals.push_back(std::move(r.params.values));
  }
  // x + eta_s * mean(y_k - x), written so eta_s = 1 returns mean(y_k) exactly.
  ParamVector next{global.layout, (1.0 - cfg.server_lr) * x + cfg.server_lr * uniform_mean(finals)};
  state.clients = std::move(new_controls);
  state.server = uniform_mean(state.clients);
  return next;
}

ParamVector cyclic_round(ClientPool& pool, const ParamVector& global, const StrategyConfig& cfg, Rng& order_rng,
                         RoundStats* stats, std::vector<std::size_t>* visit_order) {
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  if (cfg.shuffle) std::shuffle(order.begin(), order.end(), order_rng);
  if (visit_order) *visit_order = order;
  const auto local = local_config(cfg);
  if (stats) stats->client_loss.assign(pool.size(), 0.0);
  ParamVector model = global;
  for (auto k : order) {
    auto r = pool.train(k, model, local);
    if (stats) stats->client_loss[k] = r.mean_loss;
    model = std::move(r.params);
  }
  return model;
}

ServerOptState ServerOptState::zeros(std::size_t num_params) {
  const auto n = static_cast<Eigen::Index>(num_params);
  return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), 0};
}

ParamVector fedopt_server_step(const ParamVector& global, const Eigen::VectorXd& delta, ServerOptState& state,
                               const StrategyConfig& cfg) {
  if (!is_fedopt(cfg.kind)) throw ConfigError("fedopt step needs FedAdagrad, FedAdam or FedYogi");
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * delta;
  const Eigen::ArrayXd sq = delta.array().square();
  switch (cfg.kind) {
    case StrategyKind::FedAdagrad: state.v = state.v.array() + sq; break;
    case StrategyKind::FedAdam: state.v = cfg.beta2 * state.v.array() + (1.0 - cfg.beta2) * sq; break;
    case StrategyKind::FedYogi:
      state.v = state.v.array() - (1.0 - cfg.beta2) * sq * (state.v.array() - sq).sign();
      break;
    default: break;
  }
  ++state.steps;
  ParamVector next = global;
  next.values.array() += cfg.server_lr * state.m.array() / (state.v.array().sqrt() + cfg.tau);
  return next;
}

ParamVector fedopt_round(ClientPool& pool, const ParamVector& global, ServerOptState& state,
                         const StrategyConfig& cfg, RoundStats* stats) {
  const ParamVector averaged = average_round(pool, global, local_config(cfg), stats);
  return fedopt_server_step(global, averaged.values - global.values, state, cfg);
}

namespace {

constexpr std::uint64_t kCyclicOrderTag = 0x6379636c6963ULL;
constexpr std::uint64_t kPersonalizeTag = 0x706572736fULL;

RoundRecord make_record(std::size_t round, const ParamVector& params, RoundStats& stats) {
  RoundRecord rec;
  rec.round = round;
  rec.params_hash = hash_doubles({params.values.data(), static_cast<std::size_t>(params.values.size())});
  rec.client_loss = std::move(stats.client_loss);
  return rec;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

TrainedResult train_strategy(const FederatedDataset& fed, const Objective& objective, const StrategyConfig& cfg,
                             const TrainOptions& options) {
  cfg.validate();
  if (objective.model().dim != fed.dim()) throw ConfigError("model dimension does not match the dataset");
  const auto start = std::chrono::steady_clock::now();

  ClientPool pool(fed.clients(), objective, cfg.seed);
  ParamVector global = ParamVector::zeros(objective.model());
  ScaffoldState scaffold;
  if (cfg.kind == StrategyKind::Scaffold) scaffold = ScaffoldState::zeros(fed.num_clients(), objective.model().param_count());
  ServerOptState opt = ServerOptState::zeros(objective.model().param_count());
  Rng order_rng(derive_seed(cfg.seed, {kCyclicOrderTag}));

  TrainedResult result{global, {}, {}, 0.0};
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    pool.round = t;
    RoundStats stats;
    switch (cfg.kind) {
      case StrategyKind::FedAvg: global = fedavg_round(pool, global, cfg, &stats); break;
      case StrategyKind::FedProx: global = fedprox_round(pool, global, cfg, &stats); break;
      case StrategyKind::Scaffold: global = scaffold_round(pool, global, scaffold, cfg, &stats); break;
      case StrategyKind::Cyclic: global = cyclic_round(pool, global, cfg, order_rng, &stats); break;
      case StrategyKind::FedAdagrad:
      case StrategyKind::FedAdam:
      case StrategyKind::FedYogi: global = fedopt_round(pool, global, opt, cfg, &stats); break;
    }
    if (!global.values.allFinite()) throw DivergedError(cfg.local_updates, std::nullopt, t);
    auto rec = make_record(t, global, stats);
    if (options.eval_metric) rec.metric_mean = evaluate_federated(global, fed, *options.eval_metric).mean;
    result.log.push_back(std::move(rec));
  }
  result.global = std::move(global);
  result.wall_seconds = seconds_since(start);
  return result;
}

TrainedResult cyclic_run(const FederatedDataset& fed, const Objective& objective, const StrategyConfig& cfg,
                         const TrainOptions& options) {
  StrategyConfig c = cfg;
  c.kind = StrategyKind::Cyclic;
  return train_strategy(fed, objective, c, options);
}

namespace {

TrainedResult sgd_baseline(std::span<const Sample> train, std::size_t stream, const Objective& objective,
                           const BaselineConfig& cfg) {
  if (train.empty()) throw ConfigError("baseline: no training data");
  if (cfg.batch_size < 1 || cfg.n_epochs < 1) throw ConfigError("baseline: batch size and epochs must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  LocalUpdateConfig local;
  local.lr = cfg.lr;
  local.batch_size = cfg.batch_size;
  local.num_updates = cfg.n_epochs * ((train.size() + cfg.batch_size - 1) / cfg.batch_size);
  Rng rng(client_stream_seed(cfg.seed, stream));
  auto r = sgd_local_update(objective, ParamVector::zeros(objective.model()), train, local, rng);
  RoundStats stats{{r.mean_loss}};
  TrainedResult out{r.params, {}, {}, 0.0};
  out.log.push_back(make_record(0, r.params, stats));
  out.wall_seconds = seconds_since(start);
  return out;
}

}  // namespace

TrainedResult train_pooled(const FederatedDataset& fed, const Objective& objective, const BaselineConfig& cfg) {
  const auto pooled = pooled_view(fed);
  return sgd_baseline(pooled.train, 0, objective, cfg);
}

TrainedResult train_local(const FederatedDataset& fed, std::size_t k, const Objective& objective,
                          const BaselineConfig& cfg) {
  if (k >= fed.num_clients()) throw ConfigError("local baseline: client index out of range");
  return sgd_baseline(fed.client(k).train, k, objective, cfg);
}

std::vector<ParamVector> personalize(const ParamVector& global, const FederatedDataset& fed,
                                     const Objective& objective, std::size_t updates, double lr,
                                     std::size_t batch_size, std::uint64_t seed) {
  std::vector<ParamVector> out;
  out.reserve(fed.num_clients());
  for (std::size_t k = 0; k < fed.num_clients(); ++k) {
    const auto& train = fed.client(k).train;
    if (updates == 0 || train.empty()) {
      out.push_back(global);
      continue;
    }
    LocalUpdateConfig local;
    local.lr = lr;
    local.batch_size = batch_size;
    local.num_updates = updates;
    Rng rng(client_stream_seed(derive_seed(seed, {kPersonalizeTag}), k));
    try {
      out.push_back(sgd_local_update(objective, global, train, local, rng).params);
    } catch (const DivergedError& e) {
      throw e.with_context(k, 0);
    }
  }
  return out;
}

void check_compatible(const TaskInfo& task, const ModelSpec& model, MetricKind metric) {
  model.validate();
  const bool ok_model = [&] {
    switch (task.kind) {
      case TaskKind::Binary:
        return model.family == ModelFamily::Logistic ||
               (model.family == ModelFamily::Softmax && model.classes == 2);
      case TaskKind::Multiclass:
        return model.family == ModelFamily::Softmax && model.classes == static_cast<std::size_t>(task.num_classes);
      case TaskKind::Survival: return model.family == ModelFamily::CoxPH;
      case TaskKind::Mask: return false;
    }
    return false;
  }();
  if (!ok_model) throw ConfigError("model does not fit a " + std::string(to_string(task.kind)) + " task");
  const bool ok_metric = [&] {
    switch (metric) {
      case MetricKind::Accuracy:
      case MetricKind::BalancedAccuracy:
        return task.kind == TaskKind::Binary || task.kind == TaskKind::Multiclass;
      case MetricKind::Auc: return task.kind == TaskKind::Binary;
      case MetricKind::CIndex: return task.kind == TaskKind::Survival;
      case MetricKind::DiceScore: return false;
    }
    return false;
  }();
  if (!ok_metric)
    throw ConfigError("metric " + std::string(to_string(metric)) + " does not fit a " +
                      std::string(to_string(task.kind)) + " task with a linear model");
}

double evaluate_model(const ParamVector& params, std::span<const Sample> samples, MetricKind metric,
                      const TaskInfo& task) {
  check_compatible(task, params.layout, metric);
  if (samples.empty()) throw UndefinedMetricError("no test samples");
  const auto n = samples.size();

  if (metric == MetricKind::CIndex) {
    std::vector<double> risk(n), times(n);
    std::vector<std::uint8_t> events(n);
    for (std::size_t i = 0; i < n; ++i) {
      risk[i] = linear_score(params, samples[i].features);
      times[i] = survival_of(samples[i]).time;
      events[i] = survival_of(samples[i]).event;
    }
    return c_index(risk, times, events);
  }

  std::vector<int> truth(n), predicted(n);
  std::vector<double> positive_prob(n);
  for (std::size_t i = 0; i < n; ++i) {
    truth[i] = class_of(samples[i]);
    if (params.layout.family == ModelFamily::Logistic) {
      positive_prob[i] = logistic_forward(params, samples[i].features);
      predicted[i] = positive_prob[i] > 0.5 ? 1 : 0;
    } else {
      const Eigen::VectorXd p = softmax_forward(params, samples[i].features);
      Eigen::Index best = 0;
      p.maxCoeff(&best);
      predicted[i] = static_cast<int>(best);
      positive_prob[i] = p.size() == 2 ? p[1] : 0.0;
    }
  }
  switch (metric) {
    case MetricKind::Accuracy:
      return params.layout.family == ModelFamily::Logistic ? accuracy(positive_prob, truth)
                                                           : class_accuracy(predicted, truth);
    case MetricKind::BalancedAccuracy: return balanced_accuracy(predicted, truth, task.num_classes);
    case MetricKind::Auc: return auc(positive_prob, truth);
    default: break;
  }
  throw ConfigError("unsupported metric");
}

namespace {

FederatedEvaluation finish(std::vector<std::optional<double>> values, std::vector<std::string> warnings) {
  double sum = 0.0;
  std::size_t defined = 0;
  for (const auto& v : values) {
    if (!v) continue;
    sum += *v;
    ++defined;
  }
  if (defined == 0) throw UndefinedMetricError("metric undefined on every client");
  return {std::move(values), sum / static_cast<double>(defined), std::move(warnings)};
}

}  // namespace

FederatedEvaluation evaluate_federated(const ParamVector& model, const FederatedDataset& fed, MetricKind metric) {
  std::vector<ParamVector> copies(fed.num_clients(), model);
  return evaluate_federated(copies, fed, metric);
}

FederatedEvaluation evaluate_federated(std::span<const ParamVector> per_client, const FederatedDataset& fed,
                                       MetricKind metric) {
  if (per_client.size() != fed.num_clients()) throw ConfigError("evaluate: one model per client required");
  std::vector<std::optional<double>> values;
  std::vector<std::string> warnings;
  for (std::size_t k = 0; k < fed.num_clients(); ++k) {
    try {
      values.push_back(evaluate_model(per_client[k], fed.client(k).test, metric, fed.task()));
    } catch (const UndefinedMetricError& e) {
      values.push_back(std::nullopt);
      warnings.push_back(fed.client(k).client_id + ": " + std::string(to_string(metric)) +
                         " undefined, excluded from the mean (" + e.what() + ")");
    }
  }
  return finish(std::move(values), std::move(warnings));
}

}  // namespace silo
