#include "silo/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "silo/error.hpp"
#include "silo/heterogeneity.hpp"
#include "silo/rng.hpp"
#include "silo/survival_stats.hpp"

namespace silo {

namespace {

constexpr std::uint64_t kValidationTag = 0x76616c6964;

// Runs fn(0..n-1) on up to `jobs` threads. Each index writes only its own
// output slot, so the result does not depend on scheduling.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = c == ',' ? ';' : ' ';
  return s;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::size_t strategy_rounds(const BenchConfig& config, const FederatedDataset& fed) {
  if (config.rounds_override) return *config.rounds_override;
  return compute_round_budget(config.n_epochs_pooled, fed.total_train(), fed.num_clients(), config.batch_size,
                              config.local_updates);
}

struct Cell {
  enum class Kind { Pooled, Local, Strategy } kind;
  std::size_t index = 0;  // client for Local, entry for Strategy
  std::uint64_t seed = 0;
  std::string method;
};

struct CellOutput {
  std::vector<ResultRow> rows;
  std::vector<std::string> warnings;
  double seconds = 0.0;
};

void append_evaluation(CellOutput& out, const std::string& method, std::uint64_t seed, std::size_t t_max,
                       const FederatedDataset& fed, const FederatedEvaluation& ev) {
  const auto k = fed.num_clients();
  for (std::size_t i = 0; i < k; ++i) {
    ResultRow r{method, seed, fed.client(i).client_id, i, ev.per_client[i], t_max, "ok"};
    if (!r.value) r.status = "undefined";
    out.rows.push_back(std::move(r));
  }
  out.rows.push_back({method, seed, "mean", k, ev.mean, t_max, "ok"});
  for (const auto& w : ev.warnings) out.warnings.push_back(method + " seed " + std::to_string(seed) + ": " + w);
}

CellOutput run_cell(const Cell& cell, const BenchConfig& config, const FederatedDataset& fed,
                    const Objective& objective) {
  CellOutput out;
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t t_max = 0;
  std::vector<std::string> methods{cell.method};
  try {
    BaselineConfig base{config.pooled_lr, config.batch_size, config.n_epochs_pooled, cell.seed};
    switch (cell.kind) {
      case Cell::Kind::Pooled: {
        auto r = train_pooled(fed, objective, base);
        append_evaluation(out, cell.method, cell.seed, 0, fed, evaluate_federated(r.global, fed, config.metric));
        break;
      }
      case Cell::Kind::Local: {
        base.lr = config.local_lr;
        auto r = train_local(fed, cell.index, objective, base);
        append_evaluation(out, cell.method, cell.seed, 0, fed, evaluate_federated(r.global, fed, config.metric));
        break;
      }
      case Cell::Kind::Strategy: {
        StrategyConfig sc = config.strategies[cell.index].config;
        sc.seed = cell.seed;
        if (sc.kind == StrategyKind::FedAvg && config.personalize_updates > 0) methods.push_back("FedAvg+FT");
        t_max = strategy_rounds(config, fed);
        sc.rounds = t_max;
        auto r = train_strategy(fed, objective, sc);
        append_evaluation(out, cell.method, cell.seed, t_max, fed, evaluate_federated(r.global, fed, config.metric));
        if (methods.size() > 1) {
          const auto tuned = personalize(r.global, fed, objective, config.personalize_updates, sc.lr,
                                         config.batch_size, cell.seed);
          append_evaluation(out, methods[1], cell.seed, t_max, fed, evaluate_federated(tuned, fed, config.metric));
        }
        break;
      }
    }
  } catch (const std::exception& e) {
    out.rows.clear();
    const std::string status = "failed: " + one_line(e.what());
    for (const auto& m : methods) {
      out.rows.push_back({m, cell.seed, "mean", fed.num_clients(), std::nullopt, t_max, status});
      out.warnings.push_back(m + " seed " + std::to_string(cell.seed) + " " + status);
    }
  }
  out.seconds = seconds_since(t0);
  return out;
}

}  // namespace

void ResultsTable::canonicalize() {
  std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
    return std::tie(a.method, a.seed, a.client_index) < std::tie(b.method, b.seed, b.client_index);
  });
}

std::optional<double> ResultsTable::seed_mean(std::string_view method) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.method != method || r.client != "mean" || !r.value) continue;
    sum += *r.value;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

bool all_cells_failed(const ResultsTable& table) {
  if (table.rows.empty()) return false;
  return std::none_of(table.rows.begin(), table.rows.end(),
                      [](const ResultRow& r) { return r.client == "mean" && r.status == "ok"; });
}

ResultsTable run_benchmark(const BenchConfig& config, const RunOptions& options) {
  config.validate();
  ResultsTable table;
  table.metric = std::string(to_string(config.metric));
  const auto fed = build_dataset(config, &table.warnings);
  const auto objective = make_objective(model_spec_for(config, fed), config.loss);

  std::set<StrategyKind> seen;
  for (const auto& s : config.strategies)
    if (!seen.insert(s.config.kind).second)
      throw ConfigError("config: strategy " + std::string(to_string(s.config.kind)) + " listed twice");

  std::vector<Cell> cells;
  for (auto seed : config.seeds) {
    if (config.run_pooled) cells.push_back({Cell::Kind::Pooled, 0, seed, "Pooled"});
    if (config.run_local)
      for (std::size_t k = 0; k < fed.num_clients(); ++k)
        cells.push_back({Cell::Kind::Local, k, seed, "Local " + std::to_string(k)});
    for (std::size_t i = 0; i < config.strategies.size(); ++i)
      cells.push_back({Cell::Kind::Strategy, i, seed, std::string(to_string(config.strategies[i].config.kind))});
  }

  std::vector<CellOutput> outputs(cells.size());
  parallel_for(cells.size(), options.jobs,
               [&](std::size_t i) { outputs[i] = run_cell(cells[i], config, fed, *objective); });

  for (std::size_t i = 0; i < cells.size(); ++i) {
    auto& o = outputs[i];
    table.rows.insert(table.rows.end(), o.rows.begin(), o.rows.end());
    table.warnings.insert(table.warnings.end(), o.warnings.begin(), o.warnings.end());
    if (options.timings) options.timings->push_back({cells[i].method, cells[i].seed, o.seconds});
  }
  table.canonicalize();
  return table;
}

FederatedDataset carve_validation(const FederatedDataset& fed, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("validation fraction must be in (0, 1)");
  std::vector<ClientDataset> clients;
  for (std::size_t k = 0; k < fed.num_clients(); ++k) {
    const auto& c = fed.client(k);
    const std::size_t n = c.train.size();
    std::size_t n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
    if (n >= 2) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(seed, {k}));
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<std::size_t> val(idx.end() - static_cast<std::ptrdiff_t>(n_val), idx.end());
    idx.resize(n - n_val);
    std::sort(idx.begin(), idx.end());
    std::sort(val.begin(), val.end());
    ClientDataset out{c.client_id, {}, {}};
    for (auto i : idx) out.train.push_back(c.train[i]);
    for (auto i : val) out.test.push_back(c.train[i]);
    clients.push_back(std::move(out));
  }
  return FederatedDataset(fed.task(), fed.dim(), std::move(clients));
}

GridResult grid_search(const BenchConfig& config, const RunOptions& options) {
  config.validate();
  GridResult result;
  const auto fed = build_dataset(config, &result.warnings);
  const auto objective = make_objective(model_spec_for(config, fed), config.loss);

  struct Point {
    std::size_t entry;
    StrategyConfig cfg;
  };
  std::vector<Point> points;
  for (std::size_t e = 0; e < config.strategies.size(); ++e) {
    const auto& entry = config.strategies[e];
    if (entry.grid.empty()) continue;
    auto or_base = [](const std::vector<double>& v, double base) { return v.empty() ? std::vector{base} : v; };
    for (double lr : or_base(entry.grid.lr, entry.config.lr))
      for (double slr : or_base(entry.grid.server_lr, entry.config.server_lr))
        for (double mu : or_base(entry.grid.mu, entry.config.mu)) {
          StrategyConfig c = entry.config;
          c.lr = lr;
          c.server_lr = slr;
          c.mu = mu;
          points.push_back({e, c});
        }
  }
  if (points.empty()) throw ConfigError("grid: no strategy has a grid");

  const auto n_seeds = config.seeds.size();
  std::vector<std::optional<double>> values(points.size() * n_seeds);
  std::vector<std::string> errors(values.size());
  parallel_for(values.size(), options.jobs, [&](std::size_t cell) {
    const auto& p = points[cell / n_seeds];
    const auto seed = config.seeds[cell % n_seeds];
    try {
      const auto data = config.select_on == SelectOn::Validation
                            ? carve_validation(fed, config.validation_fraction, derive_seed(seed, {kValidationTag}))
                            : fed;
      StrategyConfig c = p.cfg;
      c.seed = seed;
      c.rounds = strategy_rounds(config, data);
      const auto r = train_strategy(data, *objective, c);
      values[cell] = evaluate_federated(r.global, data, config.metric).mean;
    } catch (const std::exception& e) {
      errors[cell] = one_line(e.what());
    }
  });

  for (std::size_t i = 0; i < points.size(); ++i) {
    GridPoint gp{points[i].cfg.kind, points[i].cfg.lr, points[i].cfg.server_lr, points[i].cfg.mu, std::nullopt, "ok"};
    double sum = 0.0;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const auto& v = values[i * n_seeds + s];
      if (!v) {
        gp.status = "failed: " + errors[i * n_seeds + s];
        break;
      }
      sum += *v;
    }
    if (gp.status == "ok") gp.value = sum / static_cast<double>(n_seeds);
    else result.warnings.push_back(std::string(to_string(gp.kind)) + " grid point " + gp.status);
    result.table.push_back(gp);
  }

  for (std::size_t e = 0; e < config.strategies.size(); ++e) {
    if (config.strategies[e].grid.empty()) continue;
    std::optional<std::size_t> best;
    std::string failures;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (points[i].entry != e) continue;
      const auto& gp = result.table[i];
      if (!gp.value) {
        failures += "\n  lr=" + format_double(gp.lr) + " server_lr=" + format_double(gp.server_lr) +
                    " mu=" + format_double(gp.mu) + ": " + gp.status;
        continue;
      }
      if (!best) {
        best = i;
        continue;
      }
      const auto& b = result.table[*best];
      if (*gp.value > *b.value || (*gp.value == *b.value && gp.lr < b.lr)) best = i;
    }
    if (!best)
      throw Error("grid: every point of " + std::string(to_string(config.strategies[e].config.kind)) +
                  " failed:" + failures);
    result.best.push_back(points[*best].cfg);
  }
  return result;
}

namespace {

std::string json_string(const std::string& s) { return nlohmann::json(s).dump(); }

std::string opt_number(const std::optional<double>& v, const char* missing) {
  return v ? format_double(*v) : std::string(missing);
}

}  // namespace

std::string results_csv(const ResultsTable& table) {
  std::string out = "method,seed,client,metric,value,t_max,status\n";
  for (const auto& r : table.rows) {
    out += r.method + "," + std::to_string(r.seed) + "," + r.client + "," + table.metric + "," +
           opt_number(r.value, "") + "," + std::to_string(r.t_max) + "," + r.status + "\n";
  }
  return out;
}

std::string results_json(const ResultsTable& table) {
  std::string out = "{\"metric\":" + json_string(table.metric) + ",\"rows\":[";
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    if (i) out += ",";
    out += "\n{\"client\":" + json_string(r.client) + ",\"method\":" + json_string(r.method) +
           ",\"seed\":" + std::to_string(r.seed) + ",\"status\":" + json_string(r.status) +
           ",\"t_max\":" + std::to_string(r.t_max) + ",\"value\":" + opt_number(r.value, "null") + "}";
  }
  out += "\n]}\n";
  return out;
}

std::string grid_csv(const GridResult& grid) {
  std::string out = "strategy,lr,server_lr,mu,value,status\n";
  for (const auto& p : grid.table) {
    out += std::string(to_string(p.kind)) + "," + format_double(p.lr) + "," + format_double(p.server_lr) + "," +
           format_double(p.mu) + "," + opt_number(p.value, "") + "," + p.status + "\n";
  }
  return out;
}

std::string timings_csv(std::vector<CellTiming> timings) {
  std::sort(timings.begin(), timings.end(),
            [](const CellTiming& a, const CellTiming& b) { return std::tie(a.method, a.seed) < std::tie(b.method, b.seed); });
  std::string out = "method,seed,wall_seconds\n";
  for (const auto& t : timings) out += t.method + "," + std::to_string(t.seed) + "," + format_double(t.seconds) + "\n";
  return out;
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void emit_results(const ResultsTable& table, const std::filesystem::path& path, OutputFormat format) {
  write_text(path, format == OutputFormat::Csv ? results_csv(table) : results_json(table));
}

std::vector<DpSweepRow> dp_sweep(const BenchConfig& config, std::span<const double> sigmas,
                                 const RunOptions& options) {
  config.validate();
  if (sigmas.empty()) throw ConfigError("dp-sweep: no sigma values");
  for (double s : sigmas)
    if (!(s > 0.0)) throw ConfigError("dp-sweep: sigma values must be positive");
  const auto fed = build_dataset(config);
  const auto objective = make_objective(model_spec_for(config, fed), config.loss);
  const auto n_seeds = config.seeds.size();

  std::vector<double> metric(sigmas.size() * n_seeds);
  std::vector<double> eps(metric.size());
  parallel_for(metric.size(), options.jobs, [&](std::size_t cell) {
    StrategyConfig sc;
    sc.kind = StrategyKind::FedAvg;
    sc.lr = config.dp.lr;
    sc.local_updates = config.dp.local_updates;
    sc.rounds = config.dp.rounds;
    sc.seed = config.seeds[cell % n_seeds];
    const PrivacyParams priv{config.dp.clip, sigmas[cell / n_seeds], config.dp.q, config.dp.delta};
    const auto r = dp_fedavg_train(fed, *objective, sc, priv);
    metric[cell] = evaluate_federated(r.trained.global, fed, config.metric).mean;
    eps[cell] = r.epsilon;
  });

  std::vector<DpSweepRow> rows;
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    DpSweepRow row;
    row.sigma = sigmas[i];
    row.clip = config.dp.clip;
    row.steps = config.dp.rounds * config.dp.local_updates;
    row.epsilon = eps[i * n_seeds];
    row.delta = config.dp.delta;
    row.per_seed.assign(metric.begin() + static_cast<std::ptrdiff_t>(i * n_seeds),
                        metric.begin() + static_cast<std::ptrdiff_t>((i + 1) * n_seeds));
    const double n = static_cast<double>(n_seeds);
    row.metric_mean = std::accumulate(row.per_seed.begin(), row.per_seed.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : row.per_seed) ss += (v - row.metric_mean) * (v - row.metric_mean);
    row.metric_std = n_seeds > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string dp_sweep_csv(std::span<const DpSweepRow> rows) {
  std::string out = "sigma,clip,steps,epsilon,delta,metric_mean,metric_std\n";
  for (const auto& r : rows) {
    out += format_double(r.sigma) + "," + format_double(r.clip) + "," + std::to_string(r.steps) + "," +
           format_double(r.epsilon) + "," + format_double(r.delta) + "," + format_double(r.metric_mean) + "," +
           format_double(r.metric_std) + "\n";
  }
  return out;
}

namespace {

// Natural and i.i.d. matrices of one representation, rescaled when K >= 3.
std::string distance_block(const FederatedDataset& fed, DistanceOn on, const char* prefix, std::uint64_t seed,
                             const DistanceOptions& options, const std::vector<std::string>& ids,
                             HeteroReport& report) {
  const auto natural = pairwise_distance_matrix(fed, on, derive_seed(seed, {1}), options);
  const auto iid = iid_baseline_matrix(fed, on, derive_seed(seed, {2}), options);
  report.files.emplace_back(std::string(prefix) + "_natural.csv", distance_matrix_csv(natural, ids));
  report.files.emplace_back(std::string(prefix) + "_iid.csv", distance_matrix_csv(iid, ids));

  auto stats = [](const DistanceMatrix& m) {
    const auto v = m.off_diagonal();
    if (v.empty()) return std::pair{0.0, 0.0};
    return std::pair{std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()),
                     *std::max_element(v.begin(), v.end())};
  };
  std::string j = "{\"metric\":\"" + natural.metric + "\"";
  const auto [raw_mean, raw_max] = stats(natural);
  j += ",\"natural_mean\":" + format_double(raw_mean) + ",\"natural_max\":" + format_double(raw_max);
  try {
    const auto pair = rescale_against_iid(natural, iid);
    report.files.emplace_back(std::string(prefix) + "_natural_rescaled.csv", distance_matrix_csv(pair.natural, ids));
    const auto [m, mx] = stats(pair.natural);
    j += ",\"iid_mean\":" + format_double(pair.iid_mean) + ",\"iid_std\":" + format_double(pair.iid_std) +
         ",\"rescaled_mean\":" + format_double(m) + ",\"rescaled_max\":" + format_double(mx);
  } catch (const DegenerateBaselineError& e) {
    report.warnings.push_back(std::string(prefix) + ": not rescaled: " + e.what());
  }
  j += "}";
  return j;
}

}  // namespace

HeteroReport heterogeneity_report(const FederatedDataset& fed, std::uint64_t seed, const DistanceOptions& options) {
  HeteroReport report;
  std::vector<std::string> ids;
  std::vector<std::size_t> sizes;
  for (const auto& c : fed.clients()) {
    ids.push_back(c.client_id);
    sizes.push_back(c.train.size() + c.test.size());
  }
  report.entropy = client_entropy(sizes);

  const auto features = distance_block(fed, DistanceOn::Features, "features", seed, options, ids, report);
  const auto labels = distance_block(fed, DistanceOn::Labels, "labels", seed, options, ids, report);

  if (fed.task().kind == TaskKind::Survival) {
    const auto samples = client_samples(fed);
    std::vector<SurvivalGroup> groups;
    for (const auto& s : samples) {
      SurvivalGroup g;
      for (const auto& x : s) {
        g.times.push_back(survival_of(x).time);
        g.events.push_back(survival_of(x).event ? 1 : 0);
      }
      groups.push_back(std::move(g));
    }
    std::string km = "client,time,survival\n";
    for (std::size_t k = 0; k < groups.size(); ++k) {
      const auto curve = kaplan_meier(groups[k].times, groups[k].events);
      for (std::size_t i = 0; i < curve.times.size(); ++i)
        km += ids[k] + "," + format_double(curve.times[i]) + "," + format_double(curve.survival[i]) + "\n";
    }
    report.files.emplace_back("kaplan_meier.csv", km);
    std::string lr = "client_a,client_b,statistic,p_value\n";
    for (std::size_t a = 0; a < groups.size(); ++a)
      for (std::size_t b = a + 1; b < groups.size(); ++b) {
        try {
          const auto t = logrank_test(groups[a], groups[b]);
          lr += ids[a] + "," + ids[b] + "," + format_double(t.statistic) + "," + format_double(t.p_value) + "\n";
        } catch (const Error& e) {
          lr += ids[a] + "," + ids[b] + ",,\n";
          report.warnings.push_back("logrank " + ids[a] + " vs " + ids[b] + ": " + e.what());
        }
      }
    report.files.emplace_back("logrank.csv", lr);
  }

  std::string sizes_json;
  for (std::size_t k = 0; k < sizes.size(); ++k) sizes_json += (k ? "," : "") + std::to_string(sizes[k]);
  report.summary_json = "{\"entropy\":" + format_double(report.entropy) + ",\"features\":" + features +
                        ",\"labels\":" + labels + ",\"num_clients\":" + std::to_string(sizes.size()) +
                        ",\"sizes\":[" + sizes_json + "]}\n";
  return report;
}

}  // namespace silo
