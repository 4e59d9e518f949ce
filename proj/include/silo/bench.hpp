#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "silo/data.hpp"
#include "silo/heterogeneity.hpp"
#include "silo/metrics.hpp"
#include "silo/models.hpp"
#include "silo/privacy.hpp"
#include "silo/strategies.hpp"

namespace silo {

// ---------------------------------------------------------------------------
// Published per-dataset strategy hyperparameters

/// Dataset keys of the hyperparameter table.
inline constexpr std::string_view kTableDatasets[] = {"camelyon16", "lidc_idri", "ixi",         "tcga_brca",
                                                      "kits19",     "isic2019",  "heart_disease"};

/// lr, server_lr, mu, beta1, beta2, tau of (dataset, strategy). Fields the
/// strategy does not use keep the StrategyConfig defaults; blank FedOpt
/// beta/tau cells read 0.9 / 0.999 / 1e-8.
StrategyConfig table_hyperparameters(std::string_view dataset, StrategyKind kind);

// ---------------------------------------------------------------------------
// Configuration

struct DatasetSource {
  std::optional<std::filesystem::path> csv;
  std::optional<TaskInfo> csv_task;  // overrides CSV task inference
  std::optional<SynthSpec> synthetic;
  std::uint64_t data_seed = 0;  // synthetic data is fixed across run seeds
  std::optional<DirichletSplitConfig> resplit;
};

/// Values each listed hyperparameter takes; empty lists are not gridded.
struct StrategyGrid {
  std::vector<double> lr;
  std::vector<double> server_lr;
  std::vector<double> mu;

  bool empty() const noexcept { return lr.empty() && server_lr.empty() && mu.empty(); }
};

struct StrategyEntry {
  StrategyConfig config;
  StrategyGrid grid;
};

struct DpSettings {
  double clip = 1.0;
  double q = 0.1;
  double delta = 1e-5;
  double lr = 0.01;
  std::size_t rounds = 10;
  std::size_t local_updates = 10;
};

enum class SelectOn { Validation, Test };

struct BenchConfig {
  std::string name = "bench";
  DatasetSource dataset;
  ModelFamily model = ModelFamily::Logistic;
  LossSpec loss;
  MetricKind metric = MetricKind::Accuracy;
  std::vector<StrategyEntry> strategies;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t n_epochs_pooled = 1;
  std::size_t local_updates = 100;
  std::size_t batch_size = 4;
  double pooled_lr = 0.01;
  double local_lr = 0.01;
  bool run_pooled = true;
  bool run_local = true;
  std::optional<std::size_t> rounds_override;
  std::size_t personalize_updates = 0;  // > 0 adds a fine-tuned FedAvg row set
  DpSettings dp;
  SelectOn select_on = SelectOn::Validation;
  double validation_fraction = 0.2;

  void validate() const;
};

/// Parses the JSON schema documented in the README. Relative CSV paths are
/// resolved against `base_dir`.
BenchConfig parse_bench_config(std::string_view json_text, const std::filesystem::path& base_dir = {});
BenchConfig load_bench_config(const std::filesystem::path& path);

FederatedDataset build_dataset(const BenchConfig& config, std::vector<std::string>* warnings = nullptr);
ModelSpec model_spec_for(const BenchConfig& config, const FederatedDataset& fed);

// ---------------------------------------------------------------------------
// Results

struct ResultRow {
  std::string method;  // strategy name, "Pooled", "Local <k>", "FedAvg+FT"
  std::uint64_t seed = 0;
  std::string client;  // client id or "mean"
  std::size_t client_index = 0;  // K for the "mean" row; orders rows
  std::optional<double> value;
  std::size_t t_max = 0;
  std::string status = "ok";

  bool operator==(const ResultRow&) const = default;
};

struct ResultsTable {
  std::string metric;
  std::vector<ResultRow> rows;
  std::vector<std::string> warnings;

  /// Sorts rows by (method, seed, client index).
  void canonicalize();
  /// Mean over seeds of the "mean" rows of `method` that succeeded.
  std::optional<double> seed_mean(std::string_view method) const;
};

struct CellTiming {
  std::string method;
  std::uint64_t seed = 0;
  double seconds = 0.0;
};

struct RunOptions {
  std::size_t jobs = 1;
  std::vector<CellTiming>* timings = nullptr;
};

/// Pooled and local baselines plus every strategy, for every seed.
/// Failed cells are recorded with status "failed: <reason>".
ResultsTable run_benchmark(const BenchConfig& config, const RunOptions& options = {});

/// Each failed cell's rows count once; true when every cell failed.
bool all_cells_failed(const ResultsTable& table);

struct GridPoint {
  StrategyKind kind = StrategyKind::FedAvg;
  double lr = 0.0;
  double server_lr = 0.0;
  double mu = 0.0;
  std::optional<double> value;  // seed-mean selection metric
  std::string status = "ok";
};

struct GridResult {
  std::vector<StrategyConfig> best;  // one per gridded strategy, config order
  std::vector<GridPoint> table;
  std::vector<std::string> warnings;
};

/// Evaluates every grid point; selection on a per-client validation split
/// carved from train (or on test with SelectOn::Test). Ties go to the
/// smallest lr, then to the first point in grid order.
GridResult grid_search(const BenchConfig& config, const RunOptions& options = {});

/// Splits the last `fraction` of a seeded shuffle of each client's train set
/// off as that client's test set.
FederatedDataset carve_validation(const FederatedDataset& fed, double fraction, std::uint64_t seed);

std::string results_csv(const ResultsTable& table);
std::string results_json(const ResultsTable& table);
std::string grid_csv(const GridResult& grid);
std::string timings_csv(std::vector<CellTiming> timings);

enum class OutputFormat { Csv, Json };
void emit_results(const ResultsTable& table, const std::filesystem::path& path, OutputFormat format);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// DP sweep

struct DpSweepRow {
  double sigma = 0.0;
  double clip = 0.0;
  std::size_t steps = 0;  // local steps per client
  double epsilon = 0.0;
  double delta = 0.0;
  double metric_mean = 0.0;
  double metric_std = 0.0;  // sample std over seeds, 0 for one seed
  std::vector<double> per_seed;
};

std::vector<DpSweepRow> dp_sweep(const BenchConfig& config, std::span<const double> sigmas,
                                 const RunOptions& options = {});
std::string dp_sweep_csv(std::span<const DpSweepRow> rows);

// ---------------------------------------------------------------------------
// Heterogeneity report

struct HeteroReport {
  double entropy = 0.0;
  std::vector<std::pair<std::string, std::string>> files;  // (file name, contents)
  std::string summary_json;
  std::vector<std::string> warnings;
};

HeteroReport heterogeneity_report(const FederatedDataset& fed, std::uint64_t seed,
                                  const DistanceOptions& options = {});

}  // namespace silo
