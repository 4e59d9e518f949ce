#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <json.hpp>
#include <sstream>

#include "silo/bench.hpp"
#include "silo/error.hpp"

namespace silo {

namespace {

struct TableRow {
  double lr;
  double server_lr;
  double mu;
  double beta1;
  double beta2;
  double tau;
};

constexpr double kNa = 0.0;  // column not used by the strategy

// One entry per kTableDatasets key, in that order.
struct StrategyTable {
  StrategyKind kind;
  TableRow rows[7];
};

// Blank beta/tau cells in the FedOpt tables are filled with 0.9 / 0.999 / 1e-8.
const StrategyTable kTables[] = {
    {StrategyKind::FedAvg,
     {{0.3162, kNa, kNa, kNa, kNa, kNa},
      {0.001, kNa, kNa, kNa, kNa, kNa},
      {0.001, kNa, kNa, kNa, kNa, kNa},
      {0.1, kNa, kNa, kNa, kNa, kNa},
      {0.03, kNa, kNa, kNa, kNa, kNa},
      {0.01, kNa, kNa, kNa, kNa, kNa},
      {0.001, kNa, kNa, kNa, kNa, kNa}}},
    {StrategyKind::FedProx,
     {{0.01, kNa, 0.316228, kNa, kNa, kNa},
      {0.001, kNa, 0.01, kNa, kNa, kNa},
      {0.001, kNa, 0.1, kNa, kNa, kNa},
      {0.1, kNa, 0.1, kNa, kNa, kNa},
      {0.1, kNa, 0.001, kNa, kNa, kNa},
      {0.01, kNa, 0.001, kNa, kNa, kNa},
      {0.01, kNa, 0.001, kNa, kNa, kNa}}},
    {StrategyKind::FedAdagrad,
     {{0.01, 0.003162, kNa, 0.9, 0.999, 1e-8},
      {0.1, 0.1, kNa, 0.9, 0.999, 1e-8},
      {1e-4, 0.1, kNa, 0.9, 0.999, 1e-8},
      {0.01, 1.0, kNa, 0.9, 0.999, 1e-8},
      {0.1, 0.1, kNa, 0.9, 0.999, 1e-8},
      {0.01, 0.0316, kNa, 0.9, 0.999, 1e-8},
      {0.003162, 0.003162, kNa, 0.9, 0.999, 0.3162}}},
    {StrategyKind::FedAdam,
     {{0.001, 3.1622, kNa, 0.9, 0.999, 1e-8},
      {0.3162, 0.01, kNa, 0.9, 0.999, 1e-8},
      {1e-4, 0.1, kNa, 0.9, 0.999, 1e-8},
      {0.01, 0.1, kNa, 0.9, 0.999, 1e-8},
      {0.1, 0.01, kNa, 0.9, 0.999, 1e-8},
      {0.01, 0.0032, kNa, 0.9, 0.999, 1e-8},
      {0.01, 0.01, kNa, 0.9, 0.999, 1e-8}}},
    {StrategyKind::FedYogi,
     {{0.003162, 1.0, kNa, 0.9, 0.999, 1e-8},
      {0.1, 0.001, kNa, 0.9, 0.999, 1e-8},
      {1e-4, 0.1, kNa, 0.9, 0.999, 1e-8},
      {0.01, 0.1, kNa, 0.9, 0.999, 1e-8},
      {0.1, 0.01, kNa, 0.9, 0.999, 1e-8},
      {0.01, 0.0032, kNa, 0.9, 0.999, 1e-8},
      {0.0031622, 0.01, kNa, 0.9, 0.999, 1e-8}}},
    {StrategyKind::Cyclic,
     {{0.01, kNa, kNa, kNa, kNa, kNa},
      {0.0316, kNa, kNa, kNa, kNa, kNa},
      {1e-5, kNa, kNa, kNa, kNa, kNa},
      {0.01, kNa, kNa, kNa, kNa, kNa},
      {0.3, kNa, kNa, kNa, kNa, kNa},
      {0.0032, kNa, kNa, kNa, kNa, kNa},
      {0.01, kNa, kNa, kNa, kNa, kNa}}},
    {StrategyKind::Scaffold,
     {{0.1, 3.1622, kNa, kNa, kNa, kNa},
      {0.0316, 1.0, kNa, kNa, kNa, kNa},
      {0.001, 1.0, kNa, kNa, kNa, kNa},
      {0.01, 1.0, kNa, kNa, kNa, kNa},
      {0.1, 1.0, kNa, kNa, kNa, kNa},
      {0.01, 1.0, kNa, kNa, kNa, kNa},
      {0.001, 1.0, kNa, kNa, kNa, kNa}}},
};

}  // namespace

StrategyConfig table_hyperparameters(std::string_view dataset, StrategyKind kind) {
  const auto* ds = std::find(std::begin(kTableDatasets), std::end(kTableDatasets), dataset);
  if (ds == std::end(kTableDatasets))
    throw ConfigError("no hyperparameter table entry for dataset '" + std::string(dataset) + "'");
  const auto idx = static_cast<std::size_t>(ds - std::begin(kTableDatasets));
  for (const auto& t : kTables) {
    if (t.kind != kind) continue;
    const auto& r = t.rows[idx];
    StrategyConfig c;
    c.kind = kind;
    c.lr = r.lr;
    if (kind == StrategyKind::Scaffold || is_fedopt(kind)) c.server_lr = r.server_lr;
    if (kind == StrategyKind::FedProx) c.mu = r.mu;
    if (is_fedopt(kind)) {
      c.beta1 = r.beta1;
      c.beta2 = r.beta2;
      c.tau = r.tau;
    }
    return c;
  }
  throw ConfigError("no hyperparameter table for strategy");
}

void BenchConfig::validate() const {
  if (strategies.empty() && !run_pooled && !run_local) throw ConfigError("config: nothing to run");
  if (seeds.empty()) throw ConfigError("config: seeds must not be empty");
  if (n_epochs_pooled < 1) throw ConfigError("config: n_epochs_pooled must be >= 1");
  if (local_updates < 1 || batch_size < 1) throw ConfigError("config: local_updates and batch_size must be >= 1");
  if (!(pooled_lr > 0.0) || !(local_lr > 0.0)) throw ConfigError("config: baseline learning rates must be positive");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw ConfigError("config: validation_fraction must be in (0, 1)");
  if (dataset.csv.has_value() == dataset.synthetic.has_value())
    throw ConfigError("config: dataset needs exactly one of 'csv' or 'synthetic'");
  for (const auto& s : strategies) {
    auto c = s.config;
    c.validate();
    for (double v : s.grid.lr)
      if (!(v > 0.0)) throw ConfigError("config: grid lr values must be positive");
    for (double v : s.grid.server_lr)
      if (!(v > 0.0)) throw ConfigError("config: grid server_lr values must be positive");
    for (double v : s.grid.mu)
      if (!(v >= 0.0)) throw ConfigError("config: grid mu values must be >= 0");
  }
  PrivacyParams{dp.clip, 1.0, dp.q, dp.delta}.validate();
}

namespace {

using nlohmann::json;

void check_keys(const json& obj, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (const auto& [key, _] : obj.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
}

template <class T>
T get(const json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: bad value for '") + key + "'");
  }
}

std::size_t get_count(const json& obj, const char* key, std::size_t fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw ConfigError(std::string("config: '") + key + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

std::vector<double> get_list(const json& obj, const char* key) {
  if (!obj.contains(key)) return {};
  const auto& v = obj.at(key);
  if (!v.is_array()) throw ConfigError(std::string("config: '") + key + "' must be a list of numbers");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) throw ConfigError(std::string("config: '") + key + "' must be a list of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

TaskKind parse_task(const std::string& s) {
  for (auto k : {TaskKind::Binary, TaskKind::Multiclass, TaskKind::Survival, TaskKind::Mask})
    if (to_string(k) == s) return k;
  throw ConfigError("config: unknown task '" + s + "'");
}

SynthSpec parse_synthetic(const json& j) {
  check_keys(j, "synthetic", {"task", "dim", "num_classes", "train_fraction", "signal_strength", "clients",
                              "survival"});
  SynthSpec spec;
  spec.task = parse_task(get<std::string>(j, "task", "binary"));
  spec.dim = get_count(j, "dim", spec.dim);
  spec.num_classes = static_cast<int>(get_count(j, "num_classes", 2));
  spec.train_fraction = get<double>(j, "train_fraction", spec.train_fraction);
  spec.signal_strength = get<double>(j, "signal_strength", spec.signal_strength);
  if (!j.contains("clients") || !j.at("clients").is_array() || j.at("clients").empty())
    throw ConfigError("synthetic: 'clients' must be a non-empty list");
  for (const auto& c : j.at("clients")) {
    check_keys(c, "synthetic client", {"size", "train_size", "shift", "scale", "label_skew", "preferred_class"});
    SynthClientSpec cs;
    cs.size = get_count(c, "size", cs.size);
    if (c.contains("train_size")) cs.train_size = get_count(c, "train_size", 0);
    if (c.contains("shift")) {
      if (c.at("shift").is_number())
        cs.shift.assign(spec.dim, c.at("shift").get<double>());
      else
        cs.shift = get_list(c, "shift");
    }
    cs.scale = get<double>(c, "scale", cs.scale);
    cs.label_skew = get<double>(c, "label_skew", cs.label_skew);
    if (c.contains("preferred_class")) cs.preferred_class = static_cast<int>(get_count(c, "preferred_class", 0));
    spec.clients.push_back(std::move(cs));
  }
  if (j.contains("survival")) {
    const auto& s = j.at("survival");
    check_keys(s, "survival", {"coefficients", "baseline_hazard", "censoring_rate"});
    spec.survival.coefficients = get_list(s, "coefficients");
    spec.survival.baseline_hazard = get<double>(s, "baseline_hazard", spec.survival.baseline_hazard);
    spec.survival.censoring_rate = get<double>(s, "censoring_rate", spec.survival.censoring_rate);
  }
  return spec;
}

DatasetSource parse_dataset(const json& j, const std::filesystem::path& base_dir) {
  check_keys(j, "dataset", {"csv", "task", "num_classes", "synthetic", "seed", "resplit"});
  DatasetSource src;
  if (j.contains("csv")) {
    std::filesystem::path p = get<std::string>(j, "csv", "");
    src.csv = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    if (j.contains("task")) {
      TaskInfo t;
      t.kind = parse_task(get<std::string>(j, "task", ""));
      t.num_classes = static_cast<int>(get_count(j, "num_classes", 2));
      src.csv_task = t;
    }
  }
  if (j.contains("synthetic")) src.synthetic = parse_synthetic(j.at("synthetic"));
  src.data_seed = get<std::uint64_t>(j, "seed", 0);
  if (j.contains("resplit")) {
    const auto& r = j.at("resplit");
    check_keys(r, "resplit", {"k_prime", "alpha", "seed"});
    DirichletSplitConfig d;
    d.k_prime = get_count(r, "k_prime", d.k_prime);
    d.alpha = get<double>(r, "alpha", d.alpha);
    d.seed = get<std::uint64_t>(r, "seed", d.seed);
    src.resplit = d;
  }
  return src;
}

ModelFamily parse_model(const std::string& s) {
  if (s == "logistic") return ModelFamily::Logistic;
  if (s == "softmax") return ModelFamily::Softmax;
  if (s == "cox") return ModelFamily::CoxPH;
  throw ConfigError("config: unknown model '" + s + "'");
}

LossKind parse_loss(const std::string& s) {
  if (s == "bce") return LossKind::BinaryCrossEntropy;
  if (s == "cross_entropy") return LossKind::CrossEntropy;
  if (s == "focal") return LossKind::Focal;
  if (s == "cox") return LossKind::CoxPartialLikelihood;
  throw ConfigError("config: unknown loss '" + s + "'");
}

LossKind default_loss(ModelFamily m) {
  switch (m) {
    case ModelFamily::Logistic: return LossKind::BinaryCrossEntropy;
    case ModelFamily::Softmax: return LossKind::CrossEntropy;
    case ModelFamily::CoxPH: return LossKind::CoxPartialLikelihood;
  }
  return LossKind::BinaryCrossEntropy;
}

StrategyEntry parse_strategy(const json& j, const std::optional<std::string>& table, const BenchConfig& cfg) {
  StrategyEntry e;
  const std::string name = j.is_string() ? j.get<std::string>() : get<std::string>(j, "kind", "");
  const auto kind = parse_strategy_kind(name);
  e.config = table ? table_hyperparameters(*table, kind) : StrategyConfig{};
  e.config.kind = kind;
  e.config.batch_size = cfg.batch_size;
  e.config.local_updates = cfg.local_updates;
  if (j.is_string()) return e;

  check_keys(j, "strategy", {"kind", "lr", "server_lr", "mu", "beta1", "beta2", "tau", "shuffle", "grid"});
  e.config.lr = get<double>(j, "lr", e.config.lr);
  e.config.server_lr = get<double>(j, "server_lr", e.config.server_lr);
  e.config.mu = get<double>(j, "mu", e.config.mu);
  e.config.beta1 = get<double>(j, "beta1", e.config.beta1);
  e.config.beta2 = get<double>(j, "beta2", e.config.beta2);
  e.config.tau = get<double>(j, "tau", e.config.tau);
  e.config.shuffle = get<bool>(j, "shuffle", e.config.shuffle);
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    check_keys(g, "grid", {"lr", "server_lr", "mu"});
    e.grid.lr = get_list(g, "lr");
    e.grid.server_lr = get_list(g, "server_lr");
    e.grid.mu = get_list(g, "mu");
    if (!e.grid.server_lr.empty() && !(kind == StrategyKind::Scaffold || is_fedopt(kind)))
      throw ConfigError("grid: server_lr only applies to Scaffold and FedOpt strategies");
    if (!e.grid.mu.empty() && kind != StrategyKind::FedProx) throw ConfigError("grid: mu only applies to FedProx");
  }
  return e;
}

}  // namespace

BenchConfig parse_bench_config(std::string_view json_text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(j, "config",
             {"name", "dataset", "hyperparameters", "model", "loss", "focal", "metric", "strategies", "seeds",
              "n_epochs_pooled", "local_updates", "batch_size", "pooled_lr", "local_lr", "run_pooled", "run_local",
              "rounds", "personalize_updates", "dp", "select_on", "validation_fraction"});
  BenchConfig cfg;
  cfg.name = get<std::string>(j, "name", cfg.name);
  if (!j.contains("dataset")) throw ConfigError("config: missing 'dataset'");
  cfg.dataset = parse_dataset(j.at("dataset"), base_dir);
  cfg.model = parse_model(get<std::string>(j, "model", "logistic"));
  cfg.loss.kind = j.contains("loss") ? parse_loss(get<std::string>(j, "loss", "")) : default_loss(cfg.model);
  if (j.contains("focal")) {
    const auto& f = j.at("focal");
    check_keys(f, "focal", {"gamma", "class_weights"});
    cfg.loss.focal.gamma = get<double>(f, "gamma", cfg.loss.focal.gamma);
    cfg.loss.focal.class_weights = get_list(f, "class_weights");
  }
  cfg.metric = parse_metric_kind(get<std::string>(j, "metric", "accuracy"));
  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    if (s.is_number_integer()) {
      cfg.seeds.clear();
      for (std::size_t i = 0; i < get_count(j, "seeds", 0); ++i) cfg.seeds.push_back(i);
    } else if (s.is_array()) {
      cfg.seeds.clear();
      for (const auto& x : s) {
        if (!x.is_number_integer() || x.get<long long>() < 0) throw ConfigError("config: seeds must be integers >= 0");
        cfg.seeds.push_back(x.get<std::uint64_t>());
      }
    } else {
      throw ConfigError("config: 'seeds' must be a count or a list");
    }
  }
  cfg.n_epochs_pooled = get_count(j, "n_epochs_pooled", cfg.n_epochs_pooled);
  cfg.local_updates = get_count(j, "local_updates", cfg.local_updates);
  cfg.batch_size = get_count(j, "batch_size", cfg.batch_size);
  cfg.pooled_lr = get<double>(j, "pooled_lr", cfg.pooled_lr);
  cfg.local_lr = get<double>(j, "local_lr", cfg.pooled_lr);
  cfg.run_pooled = get<bool>(j, "run_pooled", cfg.run_pooled);
  cfg.run_local = get<bool>(j, "run_local", cfg.run_local);
  if (j.contains("rounds")) cfg.rounds_override = get_count(j, "rounds", 0);
  cfg.personalize_updates = get_count(j, "personalize_updates", 0);
  cfg.validation_fraction = get<double>(j, "validation_fraction", cfg.validation_fraction);
  const auto select = get<std::string>(j, "select_on", "validation");
  if (select == "validation")
    cfg.select_on = SelectOn::Validation;
  else if (select == "test")
    cfg.select_on = SelectOn::Test;
  else
    throw ConfigError("config: select_on must be 'validation' or 'test'");

  std::optional<std::string> table;
  if (j.contains("hyperparameters")) table = get<std::string>(j, "hyperparameters", "");
  if (j.contains("strategies")) {
    if (!j.at("strategies").is_array()) throw ConfigError("config: 'strategies' must be a list");
    for (const auto& s : j.at("strategies")) cfg.strategies.push_back(parse_strategy(s, table, cfg));
  }
  if (j.contains("dp")) {
    const auto& d = j.at("dp");
    check_keys(d, "dp", {"clip", "q", "delta", "lr", "rounds", "local_updates"});
    cfg.dp.clip = get<double>(d, "clip", cfg.dp.clip);
    cfg.dp.q = get<double>(d, "q", cfg.dp.q);
    cfg.dp.delta = get<double>(d, "delta", cfg.dp.delta);
    cfg.dp.lr = get<double>(d, "lr", cfg.dp.lr);
    cfg.dp.rounds = get_count(d, "rounds", cfg.dp.rounds);
    cfg.dp.local_updates = get_count(d, "local_updates", cfg.dp.local_updates);
  }
  cfg.validate();
  return cfg;
}

BenchConfig load_bench_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_bench_config(ss.str(), path.parent_path());
}

FederatedDataset build_dataset(const BenchConfig& config, std::vector<std::string>* warnings) {
  const auto& src = config.dataset;
  FederatedDataset fed = src.csv ? load_csv(*src.csv, src.csv_task) : gen_synthetic(*src.synthetic, src.data_seed);
  if (src.resplit) {
    auto r = dirichlet_resplit(fed, *src.resplit);
    if (warnings) warnings->insert(warnings->end(), r.warnings.begin(), r.warnings.end());
    fed = std::move(r.dataset);
  }
  return fed;
}

ModelSpec model_spec_for(const BenchConfig& config, const FederatedDataset& fed) {
  ModelSpec m;
  switch (config.model) {
    case ModelFamily::Logistic: m = ModelSpec::logistic(fed.dim()); break;
    case ModelFamily::Softmax: m = ModelSpec::softmax(fed.dim(), static_cast<std::size_t>(fed.task().num_classes)); break;
    case ModelFamily::CoxPH: m = ModelSpec::cox(fed.dim()); break;
  }
  check_compatible(fed.task(), m, config.metric);
  return m;
}

}  // namespace silo
