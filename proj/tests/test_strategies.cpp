#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "silo/error.hpp"
#include "silo/rng.hpp"
#include "silo/strategies.hpp"

using namespace silo;

namespace {

StrategyConfig small_cfg(StrategyKind kind, std::size_t rounds = 3) {
  StrategyConfig c;
  c.kind = kind;
  c.lr = 0.05;
  c.batch_size = 4;
  c.local_updates = 7;
  c.rounds = rounds;
  c.seed = 42;
  return c;
}

const std::unique_ptr<Objective>& logistic3() {
  static const auto obj = make_objective(ModelSpec::logistic(3), {});
  return obj;
}

LocalUpdateConfig local_of(const StrategyConfig& c) {
  LocalUpdateConfig l;
  l.lr = c.lr;
  l.batch_size = c.batch_size;
  l.num_updates = c.local_updates;
  return l;
}

}  // namespace

TEST_CASE("round budget") {
  CHECK(compute_round_budget(1, 2 * 4 * 100, 2, 4, 100) == 1);
  CHECK(compute_round_budget(2, 8000, 4, 4, 100) == 10);
  CHECK_THROWS_AS(compute_round_budget(45, 270, 2, 16, 100), BudgetUnderflowError);
  try {
    compute_round_budget(45, 270, 2, 16, 100);
  } catch (const BudgetUnderflowError& e) {
    CHECK(std::string(e.what()) == "round budget underflow; reduce E or B");
  }
  // Floors compose: floor(floor(floor(1000/3)/4)/5) = 16.
  CHECK(compute_round_budget(3, 1000, 3, 4, 5) == 48);
}

TEST_CASE("aggregation weights") {
  const auto layout = ModelSpec::logistic(1);
  std::vector<ParamVector> ps{{layout, Eigen::Vector2d(0.0, 2.0)}, {layout, Eigen::Vector2d(2.0, 0.0)}};
  const std::vector<double> half{0.5, 0.5};
  CHECK(aggregate_weighted(ps, half).values == Eigen::Vector2d(1.0, 1.0));

  const auto fed = fixture::binary_fed(1, {2, 4}, 3);  // train sizes 1 and 3
  ClientPool pool(fed.clients(), *logistic3(), 0);
  CHECK(pool.weights() == std::vector<double>{0.25, 0.75});
  std::vector<ParamVector> ab{{layout, Eigen::Vector2d(4.0, -8.0)}, {layout, Eigen::Vector2d(8.0, 4.0)}};
  CHECK(aggregate_weighted(ab, pool.weights()).values == Eigen::Vector2d(0.25 * 4 + 0.75 * 8, 0.25 * -8 + 0.75 * 4));
}

TEST_CASE("FedProx with mu 0 is FedAvg bit for bit") {
  const auto fed = fixture::binary_fed(2, {40, 25, 60}, 3, {0.0, 1.0, -1.0});
  const auto avg = train_strategy(fed, *logistic3(), small_cfg(StrategyKind::FedAvg, 5));
  auto prox_cfg = small_cfg(StrategyKind::FedProx, 5);
  prox_cfg.mu = 0.0;
  const auto prox = train_strategy(fed, *logistic3(), prox_cfg);
  CHECK(avg.global == prox.global);
  REQUIRE(avg.log.size() == 5);
  for (std::size_t t = 0; t < 5; ++t) CHECK(avg.log[t].params_hash == prox.log[t].params_hash);
}

TEST_CASE("single-client collapse") {
  const auto fed = fixture::binary_fed(3, {50}, 3);
  const auto& train = fed.client(0).train;
  const std::size_t R = 4;

  // Oracle: R chained local updates on the client's own stream.
  auto sgd_chain = [&](const StrategyConfig& c, double mu) {
    Rng rng(client_stream_seed(c.seed, 0));
    auto p = ParamVector::zeros(ModelSpec::logistic(3));
    for (std::size_t t = 0; t < R; ++t) {
      auto l = local_of(c);
      if (mu > 0.0) l.prox = Proximal{mu, p.values};
      p = sgd_local_update(*logistic3(), p, train, l, rng).params;
    }
    return p;
  };

  const auto avg_cfg = small_cfg(StrategyKind::FedAvg, R);
  const auto expected = sgd_chain(avg_cfg, 0.0);
  CHECK(train_strategy(fed, *logistic3(), avg_cfg).global == expected);

  auto prox_cfg = small_cfg(StrategyKind::FedProx, R);
  prox_cfg.mu = 0.3;
  CHECK(train_strategy(fed, *logistic3(), prox_cfg).global == sgd_chain(prox_cfg, 0.3));

  auto scaffold_cfg = small_cfg(StrategyKind::Scaffold, R);
  scaffold_cfg.server_lr = 1.0;
  CHECK(train_strategy(fed, *logistic3(), scaffold_cfg).global == expected);

  // Cyclic with K = 1 is R * E uninterrupted SGD steps.
  auto cyc = small_cfg(StrategyKind::Cyclic, R);
  auto one_shot = local_of(cyc);
  one_shot.num_updates = R * cyc.local_updates;
  Rng rng(client_stream_seed(cyc.seed, 0));
  const auto long_run = sgd_local_update(*logistic3(), ParamVector::zeros(ModelSpec::logistic(3)), train, one_shot, rng);
  CHECK(cyclic_run(fed, *logistic3(), cyc).global == long_run.params);
}

TEST_CASE("Scaffold control variates") {
  const auto fed = fixture::binary_fed(4, {30, 45, 20}, 3, {0.0, 2.0, -1.0});
  auto cfg = small_cfg(StrategyKind::Scaffold);
  cfg.server_lr = 0.7;
  ClientPool pool(fed.clients(), *logistic3(), cfg.seed);
  auto state = ScaffoldState::zeros(3, 4);
  auto global = ParamVector::zeros(ModelSpec::logistic(3));

  // Oracle streams, advanced in lockstep with the pool's.
  std::vector<Rng> streams;
  for (std::size_t k = 0; k < 3; ++k) streams.emplace_back(client_stream_seed(cfg.seed, k));

  for (int round = 0; round < 4; ++round) {
    std::vector<Eigen::VectorXd> y(3), c_new(3);
    for (std::size_t k = 0; k < 3; ++k) {
      const Eigen::VectorXd corr = state.server - state.clients[k];
      y[k] = sgd_local_update(*logistic3(), global, fed.client(k).train, local_of(cfg), streams[k], &corr).params.values;
      c_new[k] = state.clients[k] - state.server + (global.values - y[k]) / (cfg.local_updates * cfg.lr);
    }
    const Eigen::VectorXd y_mean = (y[0] + y[1] + y[2]) / 3.0;
    const Eigen::VectorXd x_expected = global.values + cfg.server_lr * (y_mean - global.values);

    global = scaffold_round(pool, global, state, cfg);
    CHECK((global.values - x_expected).norm() < 1e-12);
    for (std::size_t k = 0; k < 3; ++k) CHECK((state.clients[k] - c_new[k]).norm() < 1e-12);
    const Eigen::VectorXd c_mean = (state.clients[0] + state.clients[1] + state.clients[2]) / 3.0;
    CHECK(state.server == c_mean);
  }
}

namespace {

// Loss that is identically zero, so every gradient vanishes.
class ZeroObjective final : public Objective {
 public:
  const ModelSpec& model() const noexcept override { return spec_; }
  double evaluate(const Eigen::VectorXd& params, std::span<const Sample>, std::span<const std::size_t>,
                  Eigen::VectorXd* grad) const override {
    if (grad) *grad = Eigen::VectorXd::Zero(params.size());
    return 0.0;
  }

 private:
  ModelSpec spec_ = ModelSpec::logistic(3);
};

}  // namespace

TEST_CASE("zero gradients leave Scaffold and FedOpt state fixed") {
  const auto fed = fixture::binary_fed(5, {20, 20}, 3);
  const ZeroObjective zero;
  auto global = ParamVector::zeros(ModelSpec::logistic(3));
  global.values << 0.5, -1.0, 2.0, 0.25;

  auto cfg = small_cfg(StrategyKind::Scaffold);
  ClientPool pool(fed.clients(), zero, 1);
  auto state = ScaffoldState::zeros(2, 4);
  const auto after = scaffold_round(pool, global, state, cfg);
  CHECK(after == global);
  CHECK(state.server.isZero(0.0));

  for (auto kind : {StrategyKind::FedAdagrad, StrategyKind::FedAdam, StrategyKind::FedYogi}) {
    auto fc = small_cfg(kind);
    fc.server_lr = 0.1;
    auto opt = ServerOptState::zeros(4);
    ClientPool p2(fed.clients(), zero, 2);
    auto x = global;
    for (int t = 0; t < 3; ++t) x = fedopt_round(p2, x, opt, fc);
    CHECK(x == global);
    CHECK(opt.v.isZero(0.0));
  }
}

TEST_CASE("FedAdagrad increments follow 1/sqrt(t)") {
  StrategyConfig cfg;
  cfg.kind = StrategyKind::FedAdagrad;
  cfg.beta1 = 0.0;
  cfg.server_lr = 1.0;
  cfg.tau = 1e-300;
  const ModelSpec one{ModelFamily::CoxPH, 1, 2};
  ParamVector x{one, Eigen::VectorXd::Zero(1)};
  auto state = ServerOptState::zeros(1);
  const Eigen::VectorXd delta = Eigen::VectorXd::Ones(1);
  for (int t = 1; t <= 6; ++t) {
    const double before = x.values[0];
    x = fedopt_server_step(x, delta, state, cfg);
    CHECK(x.values[0] - before == doctest::Approx(1.0 / std::sqrt(static_cast<double>(t))).epsilon(1e-14));
  }
}

TEST_CASE("FedProx prox term dominates when mu is large") {
  const auto fed = fixture::binary_fed(6, {60, 60}, 3, {0.0, 1.5});
  auto cfg = small_cfg(StrategyKind::FedProx, 3);
  cfg.lr = 1e-3;
  cfg.local_updates = 100;
  // Explicit prox steps contract only while mu * lr < 2.
  cfg.mu = 1.5e3;
  const auto res = train_strategy(fed, *logistic3(), cfg);
  CHECK(res.global.values.norm() < 1e-3);

  // mu * lr = 1000 flips and amplifies the offset every step; 200 steps
  // overflow.
  cfg.mu = 1e6;
  cfg.local_updates = 200;
  CHECK_THROWS_AS(train_strategy(fed, *logistic3(), cfg), DivergedError);
}

TEST_CASE("cyclic order") {
  const auto fed = fixture::binary_fed(7, {20, 30, 25, 10}, 3);
  auto cfg = small_cfg(StrategyKind::Cyclic);
  CHECK(cyclic_run(fed, *logistic3(), cfg).global == cyclic_run(fed, *logistic3(), cfg).global);

  ClientPool pool(fed.clients(), *logistic3(), 0);
  Rng order(5);
  std::vector<std::size_t> visit;
  cyclic_round(pool, ParamVector::zeros(ModelSpec::logistic(3)), cfg, order, nullptr, &visit);
  CHECK(visit == std::vector<std::size_t>{0, 1, 2, 3});

  cfg.shuffle = true;
  std::vector<std::size_t> seen;
  for (int t = 0; t < 5; ++t) {
    cyclic_round(pool, ParamVector::zeros(ModelSpec::logistic(3)), cfg, order, nullptr, &visit);
    auto sorted = visit;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<std::size_t>{0, 1, 2, 3});
    seen.insert(seen.end(), visit.begin(), visit.end());
  }
  CHECK_FALSE(std::is_sorted(seen.begin(), seen.end()));
}

TEST_CASE("train_strategy determinism and zero rounds") {
  const auto fed = fixture::binary_fed(8, {30, 40}, 3, {0.5, -0.5});
  for (auto kind : {StrategyKind::FedAvg, StrategyKind::FedProx, StrategyKind::Scaffold, StrategyKind::Cyclic,
                    StrategyKind::FedAdagrad, StrategyKind::FedAdam, StrategyKind::FedYogi}) {
    auto cfg = small_cfg(kind);
    cfg.server_lr = 0.05;
    cfg.mu = 0.1;
    const auto a = train_strategy(fed, *logistic3(), cfg);
    const auto b = train_strategy(fed, *logistic3(), cfg);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t t = 0; t < a.log.size(); ++t) CHECK(a.log[t].params_hash == b.log[t].params_hash);
    cfg.rounds = 0;
    const auto none = train_strategy(fed, *logistic3(), cfg);
    CHECK(none.global == ParamVector::zeros(ModelSpec::logistic(3)));
    CHECK(none.log.empty());
  }
}

TEST_CASE("strategy config validation") {
  auto cfg = small_cfg(StrategyKind::FedAdam);
  cfg.tau = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_cfg(StrategyKind::FedAvg);
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  for (auto k : {StrategyKind::FedAvg, StrategyKind::Scaffold, StrategyKind::FedYogi})
    CHECK(parse_strategy_kind(to_string(k)) == k);
}

TEST_CASE("personalization with zero updates returns the global model") {
  const auto fed = fixture::binary_fed(9, {20, 20, 20}, 3);
  auto g = ParamVector::zeros(ModelSpec::logistic(3));
  g.values << 0.3, 0.1, -0.2, 0.05;
  for (const auto& p : personalize(g, fed, *logistic3(), 0, 0.1, 4, 1)) CHECK(p == g);
  // lr 0 means the steps run but move nothing.
  for (const auto& p : personalize(g, fed, *logistic3(), 10, 0.0, 4, 1)) CHECK(p == g);
}

TEST_CASE("federated evaluation averages clients uniformly") {
  ClientDataset small{"small", {fixture::binary_sample({0.0}, 1)}, {}};
  for (int i = 0; i < 10; ++i) small.test.push_back(fixture::binary_sample({0.0}, i < 6 ? 1 : 0));
  ClientDataset big{"big", {fixture::binary_sample({0.0}, 1)}, {}};
  for (int i = 0; i < 1000; ++i) big.test.push_back(fixture::binary_sample({0.0}, 1));
  const FederatedDataset fed({TaskKind::Binary, 2, 0}, 1, {small, big});
  ParamVector always_one{ModelSpec::logistic(1), Eigen::Vector2d(0.0, 3.0)};
  const auto ev = evaluate_federated(always_one, fed, MetricKind::Accuracy);
  CHECK(*ev.per_client[0] == doctest::Approx(0.6));
  CHECK(*ev.per_client[1] == 1.0);
  CHECK(ev.mean == doctest::Approx(0.8));

  // AUC is undefined on single-class test sets: excluded with a warning.
  const auto auc_ev = evaluate_federated(always_one, fed, MetricKind::Auc);
  CHECK_FALSE(auc_ev.per_client[1].has_value());
  CHECK(auc_ev.per_client[0].has_value());
  CHECK(auc_ev.warnings.size() == 1);
}

TEST_CASE("pooled and local baselines use their own streams") {
  const auto fed = fixture::binary_fed(10, {30, 30}, 3);
  BaselineConfig b;
  b.seed = 3;
  b.n_epochs = 2;
  const auto pooled = train_pooled(fed, *logistic3(), b);
  // n_epochs * ceil(n / B) steps on stream 0.
  LocalUpdateConfig l;
  l.lr = b.lr;
  l.batch_size = b.batch_size;
  l.num_updates = 2 * ((48 + 3) / 4);
  Rng rng(client_stream_seed(3, 0));
  CHECK(pooled.global == sgd_local_update(*logistic3(), ParamVector::zeros(ModelSpec::logistic(3)), pooled_view(fed).train, l, rng).params);

  const auto local1 = train_local(fed, 1, *logistic3(), b);
  l.num_updates = 2 * ((24 + 3) / 4);
  Rng rng1(client_stream_seed(3, 1));
  CHECK(local1.global == sgd_local_update(*logistic3(), ParamVector::zeros(ModelSpec::logistic(3)), fed.client(1).train, l, rng1).params);
}

TEST_CASE("incompatible task and model are rejected") {
  CHECK_THROWS_AS(check_compatible({TaskKind::Binary, 2, 0}, ModelSpec::cox(2), MetricKind::Accuracy), ConfigError);
  CHECK_THROWS_AS(check_compatible({TaskKind::Survival, 2, 0}, ModelSpec::cox(2), MetricKind::Accuracy), ConfigError);
  CHECK_NOTHROW(check_compatible({TaskKind::Survival, 2, 0}, ModelSpec::cox(2), MetricKind::CIndex));
}
