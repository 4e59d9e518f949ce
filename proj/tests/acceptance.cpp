// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails. Tolerances are fixed here.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "helpers.hpp"
#include "silo/bench.hpp"
#include "silo/error.hpp"
#include "silo/heterogeneity.hpp"
#include "silo/metrics.hpp"
#include "silo/privacy.hpp"
#include "silo/strategies.hpp"
#include "silo/survival_stats.hpp"

using namespace silo;

namespace {

constexpr double kEntropyTol = 0.01;
constexpr double kCensoringTol = 0.03;
constexpr double kGradRelTol = 1e-5;
constexpr double kOracleRelTol = 1e-12;
constexpr double kPooledOverFedAvg = 0.02;
constexpr double kFedAvgOverLocal = 0.05;
constexpr double kIidGap = 0.02;
constexpr double kRescaleTol = 1e-9;
constexpr double kChi2Tol = 1e-4;
constexpr double kLogrankHandTol = 1e-9;

const std::filesystem::path kConfigs = std::filesystem::path(SILO_SOURCE_DIR) / "configs";

// Collects failed sub-checks of one criterion.
struct Check {
  std::vector<std::string> failures;
  std::ostringstream detail;
  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
};

int g_failed = 0;

void criterion(int id, const char* title, const std::function<void(Check&)>& body) {
  Check c;
  const auto start = std::chrono::steady_clock::now();
  try {
    body(c);
  } catch (const std::exception& e) {
    c.failures.push_back(std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool ok = c.failures.empty();
  if (!ok) ++g_failed;
  std::string fails;
  for (const auto& f : c.failures) fails += (fails.empty() ? "" : "; ") + f;
  std::printf("%s criterion %d: %s [%s] (%.2fs)%s%s\n", ok ? "PASS" : "FAIL", id, title, c.detail.str().c_str(), secs,
              ok ? "" : " -- ", fails.c_str());
  std::fflush(stdout);
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

Eigen::VectorXd random_params(std::mt19937_64& rng, std::size_t n) {
  const auto v = fixture::gaussian_vec(rng, n, 0.0, 0.5);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(n));
}

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

double mean_local(const ResultsTable& t, std::size_t clients) {
  double s = 0.0;
  for (std::size_t k = 0; k < clients; ++k) s += t.seed_mean("Local " + std::to_string(k)).value();
  return s / static_cast<double>(clients);
}

// Average ranks, ties shared.
std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order = iota_n(v.size());
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = (static_cast<double>(i + j) / 2.0) + 1.0;
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n, my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

void c1_entropy(Check& c) {
  struct Row {
    const char* name;
    std::vector<std::size_t> sizes;
    double published;
  };
  const Row rows[] = {{"camelyon16", {243, 156}, 0.97},
                      {"ixi", {311, 181, 74}, 1.38},
                      {"tcga_brca", {311, 196, 206, 162, 162, 51}, 2.44},
                      {"kits19", {12, 14, 12, 12, 16, 30}, 2.49},
                      {"isic2019", {12413, 3954, 3363, 2259, 819, 439}, 1.93},
                      {"heart_disease", {303, 261, 46, 130}, 1.75}};
  for (const auto& r : rows) {
    const double h = client_entropy(r.sizes);
    c.detail << r.name << "=" << fmt(h) << " ";
    c.expect(std::abs(h - r.published) <= kEntropyTol, std::string(r.name) + " off by " + fmt(h - r.published));
  }
}

void c2_censoring(Check& c) {
  const auto cfg = load_bench_config(kConfigs / "tcga_like.json");
  const auto fed = build_dataset(cfg);
  std::size_t n = 0, censored = 0;
  for (const auto& cl : fed.clients())
    for (const auto* split : {&cl.train, &cl.test})
      for (const auto& s : *split) {
        ++n;
        censored += survival_of(s).event ? 0 : 1;
      }
  const double rate = static_cast<double>(censored) / static_cast<double>(n);
  c.detail << "n=" << n << " censored=" << fmt(rate);
  c.expect(n == 1088, "sample count " + std::to_string(n));
  c.expect(std::abs(rate - 0.86) <= kCensoringTol, "censoring rate " + fmt(rate));
}

void c3_strategy_identities(Check& c) {
  const auto obj = make_objective(ModelSpec::logistic(3), {});
  auto cfg_of = [](StrategyKind k, std::size_t rounds) {
    StrategyConfig s;
    s.kind = k;
    s.lr = 0.05;
    s.local_updates = 9;
    s.rounds = rounds;
    s.seed = 17;
    s.server_lr = 1.0;
    return s;
  };

  const auto fed = fixture::binary_fed(70, {50, 35, 65}, 3, {0.0, 1.0, -1.5});
  const auto avg = train_strategy(fed, *obj, cfg_of(StrategyKind::FedAvg, 6));
  auto prox_cfg = cfg_of(StrategyKind::FedProx, 6);
  prox_cfg.mu = 0.0;
  const auto prox = train_strategy(fed, *obj, prox_cfg);
  bool same = avg.global == prox.global;
  for (std::size_t t = 0; t < avg.log.size(); ++t) same = same && avg.log[t].params_hash == prox.log[t].params_hash;
  c.expect(same, "FedProx(mu=0) differs from FedAvg");

  // Single client: every strategy reduces to the client's own SGD chain.
  const auto one = fixture::binary_fed(71, {60}, 3);
  const std::size_t R = 5;
  auto chain = [&](const StrategyConfig& s, double mu) {
    Rng rng(client_stream_seed(s.seed, 0));
    auto p = ParamVector::zeros(ModelSpec::logistic(3));
    for (std::size_t t = 0; t < R; ++t) {
      LocalUpdateConfig l{s.lr, s.batch_size, s.local_updates, std::nullopt, 0};
      if (mu > 0.0) l.prox = Proximal{mu, p.values};
      p = sgd_local_update(*obj, p, one.client(0).train, l, rng).params;
    }
    return p;
  };
  const auto fa = cfg_of(StrategyKind::FedAvg, R);
  c.expect(train_strategy(one, *obj, fa).global == chain(fa, 0.0), "single-client FedAvg");
  auto fp = cfg_of(StrategyKind::FedProx, R);
  fp.mu = 0.5;
  c.expect(train_strategy(one, *obj, fp).global == chain(fp, 0.5), "single-client FedProx");
  c.expect(train_strategy(one, *obj, cfg_of(StrategyKind::Scaffold, R)).global == chain(fa, 0.0),
           "single-client Scaffold");
  c.expect(train_strategy(one, *obj, cfg_of(StrategyKind::Cyclic, R)).global == chain(fa, 0.0), "single-client Cyclic");

  // Scaffold: server variate is the mean of client variates every round.
  auto sc = cfg_of(StrategyKind::Scaffold, 1);
  sc.server_lr = 0.5;
  ClientPool pool(fed.clients(), *obj, sc.seed);
  auto state = ScaffoldState::zeros(fed.num_clients(), 4);
  auto x = ParamVector::zeros(ModelSpec::logistic(3));
  for (int t = 0; t < 6; ++t) {
    x = scaffold_round(pool, x, state, sc);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(4);
    for (const auto& ci : state.clients) sum += ci;
    c.expect(state.server == sum / static_cast<double>(state.clients.size()), "c != mean(c_i) in round " + std::to_string(t));
  }

  // FedOpt with a zero delta leaves x and v unchanged.
  for (auto kind : {StrategyKind::FedAdagrad, StrategyKind::FedAdam, StrategyKind::FedYogi}) {
    auto oc = cfg_of(kind, 1);
    oc.server_lr = 0.3;
    auto st = ServerOptState::zeros(4);
    ParamVector p{ModelSpec::logistic(3), Eigen::Vector4d(0.5, -1.0, 2.0, 0.1)};
    auto q = p;
    for (int t = 0; t < 4; ++t) q = fedopt_server_step(q, Eigen::VectorXd::Zero(4), st, oc);
    c.expect(q == p && st.v.isZero(0.0), std::string(to_string(kind)) + " zero-delta not fixed");
  }
  c.detail << "bitwise equalities checked";
}

void c4_round_budget(Check& c) {
  c.expect(compute_round_budget(1, 4 * 4 * 100, 4, 4, 100) == 1, "exact division");
  c.expect(compute_round_budget(2, 8000, 4, 4, 100) == 10, "2,8000,4,4,100");
  bool threw = false;
  try {
    compute_round_budget(45, 270, 2, 16, 100);
  } catch (const BudgetUnderflowError&) {
    threw = true;
  }
  c.expect(threw, "underflow not raised");
  c.expect(compute_round_budget(3, 1000, 3, 4, 5) == 48, "nested floors");
  c.detail << "4 cases";
}

void c5_oracles(Check& c) {
  std::mt19937_64 rng(80);
  std::uniform_int_distribution<int> N(2, 50), grid(0, 8), M(1, 6), D(1, 4);
  int auc_bad = 0, ci_bad = 0, w2_bad = 0, ci_done = 0;
  for (int it = 0; it < 500; ++it) {
    const auto n = static_cast<std::size_t>(N(rng));
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = grid(rng) / 8.0;
      y[i] = static_cast<int>(rng() & 1U);
    }
    y[0] = 0;
    y[1] = 1;
    const double want = oracle::auc(s, y);
    if (std::abs(auc(s, y) - want) > kOracleRelTol * std::max(1.0, want)) ++auc_bad;
  }
  while (ci_done < 500) {
    const auto n = static_cast<std::size_t>(N(rng));
    std::vector<double> eta(n), t(n);
    std::vector<std::uint8_t> e(n);
    for (std::size_t i = 0; i < n; ++i) {
      eta[i] = grid(rng);
      t[i] = 1 + grid(rng);
      e[i] = static_cast<std::uint8_t>(rng() % 3 != 0);
    }
    const double want = oracle::c_index(eta, t, e);
    if (!std::isfinite(want)) continue;  // no comparable pair
    ++ci_done;
    if (std::abs(c_index(eta, t, e) - want) > kOracleRelTol) ++ci_bad;
  }
  for (int it = 0; it < 200; ++it) {
    const int m = M(rng), d = D(rng);
    Eigen::MatrixXd a(m, d), b(m, d);
    std::normal_distribution<double> G(0.0, 1.0);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < d; ++j) {
        a(i, j) = G(rng);
        b(i, j) = G(rng) + 0.5;
      }
    const double want = oracle::w2_bruteforce(a, b);
    if (std::abs(exact_assignment_w2(a, b) - want) > kOracleRelTol * std::max(1.0, want)) ++w2_bad;
  }
  c.detail << "auc 500, c-index 500, w2 200 instances";
  c.expect(auc_bad == 0, std::to_string(auc_bad) + " AUC mismatches");
  c.expect(ci_bad == 0, std::to_string(ci_bad) + " C-index mismatches");
  c.expect(w2_bad == 0, std::to_string(w2_bad) + " W2 mismatches");
}

void c6_gradients(Check& c) {
  std::mt19937_64 rng(90);
  auto run = [&](const char* name, const ModelSpec& model, const LossSpec& loss,
                 const std::function<std::vector<Sample>()>& make) {
    const auto obj = make_objective(model, loss);
    double worst = 0.0;
    for (int it = 0; it < 100; ++it) {
      const auto data = make();
      const auto batch = iota_n(data.size());
      const auto p = random_params(rng, model.param_count());
      Eigen::VectorXd g;
      obj->evaluate(p, data, batch, &g);
      const auto fd = oracle::central_diff([&](const Eigen::VectorXd& q) { return obj->evaluate(q, data, batch, nullptr); }, p);
      worst = std::max(worst, oracle::rel_error(g, fd));
    }
    c.detail << name << "=" << worst << " ";
    c.expect(worst < kGradRelTol, std::string(name) + " relative error " + std::to_string(worst));
  };
  std::uniform_int_distribution<int> cls(0, 3);
  std::exponential_distribution<double> T(1.0);
  run("logistic", ModelSpec::logistic(5), {LossKind::BinaryCrossEntropy, {}},
      [&] { return fixture::logistic_data(rng, 10, 5); });
  auto class_data = [&] {
    std::vector<Sample> out;
    for (int i = 0; i < 10; ++i) out.push_back({fixture::gaussian_vec(rng, 3), ClassLabel{cls(rng)}});
    return out;
  };
  run("softmax-ce", ModelSpec::softmax(3, 4), {LossKind::CrossEntropy, {}}, class_data);
  run("softmax-focal", ModelSpec::softmax(3, 4), {LossKind::Focal, {2.0, {1.0, 0.5, 2.0, 1.0}}}, class_data);
  run("cox", ModelSpec::cox(4), {LossKind::CoxPartialLikelihood, {}}, [&] {
    std::vector<Sample> out;
    for (int i = 0; i < 8; ++i)
      out.push_back(fixture::survival_sample(fixture::gaussian_vec(rng, 4), T(rng) + 1e-3, (rng() % 3) != 0));
    return out;
  });
}

void c7_benchmark_shape(Check& c) {
  const auto het = run_benchmark(load_bench_config(kConfigs / "label_shift.json"));
  const double P = het.seed_mean("Pooled").value(), F = het.seed_mean("FedAvg").value(), L = mean_local(het, 4);
  const auto iid = run_benchmark(load_bench_config(kConfigs / "label_shift_iid.json"));
  const double Pi = iid.seed_mean("Pooled").value(), Fi = iid.seed_mean("FedAvg").value();
  c.detail << "pooled=" << fmt(P) << " fedavg=" << fmt(F) << " local=" << fmt(L) << " iid pooled=" << fmt(Pi)
           << " iid fedavg=" << fmt(Fi);
  c.expect(P - F >= kPooledOverFedAvg, "pooled - fedavg = " + fmt(P - F));
  c.expect(F - L >= kFedAvgOverLocal, "fedavg - local = " + fmt(F - L));
  c.expect(Pi - Fi <= kIidGap, "iid pooled - fedavg = " + fmt(Pi - Fi));
}

void c8_heterogeneity(Check& c) {
  std::mt19937_64 rng(100);
  auto clients_with = [&](const std::vector<double>& shifts, std::size_t n) {
    std::vector<ClientDataset> out;
    std::normal_distribution<double> G(0.0, 1.0);
    for (std::size_t k = 0; k < shifts.size(); ++k) {
      ClientDataset cl;
      cl.client_id = "k" + std::to_string(k);
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> x{G(rng) + shifts[k], G(rng), G(rng)};
        cl.train.push_back(fixture::binary_sample(std::move(x), static_cast<int>(i % 2)));
      }
      out.push_back(std::move(cl));
    }
    return out;
  };
  const DistanceOptions opt{32, 20};

  const FederatedDataset fed({TaskKind::Binary, 2, 0}, 3, clients_with({0.0, 0.5, 2.0, 1.0, 0.0}, 120));
  const auto natural = pairwise_distance_matrix(fed, DistanceOn::Features, 5, opt);
  const auto iid = iid_baseline_matrix(fed, DistanceOn::Features, 5, opt);
  const auto r = rescale_against_iid(natural, iid);
  const auto off = r.iid.off_diagonal();
  const double n = static_cast<double>(off.size());
  const double mean = std::accumulate(off.begin(), off.end(), 0.0) / n;
  double var = 0.0;
  for (double v : off) var += (v - mean) * (v - mean);
  var /= n;
  c.detail << "iid mean=" << mean << " var=" << var << " ";
  c.expect(std::abs(mean) <= kRescaleTol, "rescaled iid mean " + std::to_string(mean));
  c.expect(std::abs(var - 1.0) <= kRescaleTol, "rescaled iid variance " + std::to_string(var));

  auto dup_clients = clients_with({0.0, 1.5, -1.5}, 120);
  dup_clients.push_back(dup_clients[0]);
  dup_clients.back().client_id = "dup";
  const FederatedDataset dup({TaskKind::Binary, 2, 0}, 3, dup_clients);
  const auto dn = pairwise_distance_matrix(dup, DistanceOn::Features, 6, opt);
  const auto di = iid_baseline_matrix(dup, DistanceOn::Features, 6, opt).off_diagonal();
  const double base_mean = std::accumulate(di.begin(), di.end(), 0.0) / static_cast<double>(di.size());
  c.detail << "dup=" << fmt(dn.values(0, 3)) << " iid mean=" << fmt(base_mean) << " ";
  c.expect(dn.values(0, 3) < base_mean, "duplicated client not below the baseline mean");

  const FederatedDataset mono({TaskKind::Binary, 2, 0}, 3, clients_with({0.0, 1.0, 3.0}, 150));
  const auto dm = pairwise_distance_matrix(mono, DistanceOn::Features, 7, opt);
  c.detail << "d01=" << fmt(dm.values(0, 1)) << " d02=" << fmt(dm.values(0, 2));
  c.expect(dm.values(0, 2) > dm.values(0, 1), "distances not monotone in shift");
}

void c9_logrank(Check& c) {
  const SurvivalGroup a{{2, 3, 5, 8, 9}, {1, 0, 1, 1, 0}};
  const auto same = logrank_test(a, a);
  c.expect(same.p_value == 1.0, "identical groups p = " + std::to_string(same.p_value));
  const double p = chi_square_sf(3.841459, 1);
  c.expect(std::abs(p - 0.05) <= kChi2Tol, "chi2 sf(3.841459) = " + std::to_string(p));
  c.expect(std::abs(oracle::chi2_sf(3.841459, 1) - p) <= 1e-10, "chi2 sf disagrees with the series oracle");
  const auto r = logrank_test({{1, 2}, {1, 1}}, {{3, 4}, {1, 1}});
  const double e_a = 0.5 + 1.0 / 3.0, v = 0.25 + 2.0 / 9.0;
  const double hand = (2.0 - e_a) * (2.0 - e_a) / v;
  c.detail << "hand statistic=" << hand << " got=" << r.statistic;
  c.expect(std::abs(r.statistic - hand) <= kLogrankHandTol, "hand instance");
}

void c10_privacy(Check& c) {
  for (int a = kMinRdpOrder; a <= kMaxRdpOrder; ++a)
    for (double s : {0.5, 1.0, 2.0})
      c.expect(rdp_subsampled_gaussian(1.0, s, a) == a / (2.0 * s * s), "q=1 RDP at alpha " + std::to_string(a));

  bool mono = true;
  for (double q : {0.01, 0.1, 1.0}) {
    double prev = -1.0;
    for (std::size_t steps : {0, 1, 10, 100, 1000}) {
      const double e = compose_and_convert(PrivacyLedger(q, 1.0), steps, 1e-5);
      mono = mono && e >= prev;
      prev = e;
    }
    prev = INFINITY;
    for (double s : {0.5, 1.0, 2.0, 4.0, 8.0}) {
      const double e = compose_and_convert(PrivacyLedger(q, s), 100, 1e-5);
      mono = mono && e <= prev;
      prev = e;
    }
    prev = INFINITY;
    for (double d : {1e-8, 1e-5, 1e-3, 1e-1}) {
      const double e = compose_and_convert(PrivacyLedger(q, 1.0), 100, d);
      mono = mono && e <= prev;
      prev = e;
    }
  }
  c.expect(mono, "epsilon not monotone");

  const std::vector<double> sigmas{0.5, 1.0, 2.0, 4.0};
  auto cfg = load_bench_config(kConfigs / "heart_like_dp.json");
  cfg.seeds = {0, 1, 2, 3, 4};
  const auto rows = dp_sweep(cfg, sigmas);
  std::vector<double> xs, ys;
  for (const auto& r : rows) {
    c.detail << "sigma=" << r.sigma << ":eps=" << fmt(r.epsilon, 3) << ",acc=" << fmt(r.metric_mean) << " ";
    for (double v : r.per_seed) {
      xs.push_back(r.sigma);
      ys.push_back(v);
    }
  }
  for (std::size_t i = 1; i < rows.size(); ++i)
    c.expect(rows[i].epsilon < rows[i - 1].epsilon, "epsilon not decreasing at sigma " + std::to_string(rows[i].sigma));
  const double rho = spearman(xs, ys);
  c.detail << "spearman=" << fmt(rho);
  c.expect(rho < 0.0, "Spearman rho " + fmt(rho));
}

void c11_personalization(Check& c) {
  const auto fed = fixture::binary_fed(110, {40, 40}, 3);
  const auto obj = make_objective(ModelSpec::logistic(3), {});
  ParamVector g{ModelSpec::logistic(3), Eigen::Vector4d(0.2, -0.1, 0.4, 0.3)};
  bool identity = true;
  for (const auto& p : personalize(g, fed, *obj, 0, 0.1, 4, 3)) identity = identity && p == g;
  c.expect(identity, "E'=0 changed the model");

  const auto t = run_benchmark(load_bench_config(kConfigs / "personalization.json"));
  const double global = t.seed_mean("FedAvg").value(), tuned = t.seed_mean("FedAvg+FT").value();
  c.detail << "global=" << fmt(global) << " personalized=" << fmt(tuned);
  c.expect(tuned >= global, "personalized below global");
}

void c12_determinism(Check& c) {
  auto cfg = load_bench_config(kConfigs / "heart_like.json");
  cfg.seeds = {0, 1};
  const auto seq = results_csv(run_benchmark(cfg, {1, nullptr}));
  const auto par = results_csv(run_benchmark(cfg, {4, nullptr}));
  const auto again = results_csv(run_benchmark(cfg, {1, nullptr}));
  c.detail << seq.size() << " bytes";
  c.expect(seq == par, "jobs=1 and jobs=4 differ");
  c.expect(seq == again, "rerun differs");
}

}  // namespace

int main() {
  criterion(1, "entropy of published client sizes", c1_entropy);
  criterion(2, "TCGA-like censoring at n=1088", c2_censoring);
  criterion(3, "strategy identities", c3_strategy_identities);
  criterion(4, "round budget", c4_round_budget);
  criterion(5, "oracle equivalence", c5_oracles);
  criterion(6, "gradient checks", c6_gradients);
  criterion(7, "benchmark shape on label shift", c7_benchmark_shape);
  criterion(8, "heterogeneity pipeline", c8_heterogeneity);
  criterion(9, "log-rank", c9_logrank);
  criterion(10, "differential privacy", c10_privacy);
  criterion(11, "personalization", c11_personalization);
  criterion(12, "determinism", c12_determinism);
  std::printf("%d of 12 criteria failed\n", g_failed);
  return g_failed == 0 ? 0 : 1;
}
