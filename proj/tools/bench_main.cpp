// Command-line front end of the benchmark harness.
//
// Exit codes: 0 success, 1 runtime failure, 2 bad config or input,
// 3 every benchmark cell failed.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <json.hpp>

#include "silo/bench.hpp"
#include "silo/error.hpp"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitAllFailed = 3;

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

silo::BenchConfig load_with_overrides(const std::string& path, std::size_t seeds) {
  auto cfg = silo::load_bench_config(path);
  if (seeds > 0) {
    cfg.seeds.clear();
    for (std::size_t s = 0; s < seeds; ++s) cfg.seeds.push_back(s);
  }
  return cfg;
}

std::string config_json(const silo::StrategyConfig& c) {
  nlohmann::ordered_json j;
  j["kind"] = std::string(silo::to_string(c.kind));
  j["lr"] = c.lr;
  j["server_lr"] = c.server_lr;
  j["mu"] = c.mu;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["tau"] = c.tau;
  return j.dump();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-silo federated learning benchmark"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", data_path, select_on;
  std::size_t seeds = 0, jobs = 1;
  std::uint64_t hetero_seed = 0;
  std::vector<double> sigmas{0.5, 1.0, 2.0, 4.0};

  auto* run = app.add_subcommand("run", "pooled, local and federated runs over seeds");
  run->add_option("--config", config_path, "benchmark JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--seeds", seeds, "use seeds 0..N-1 instead of the config's list");
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);

  auto* grid = app.add_subcommand("grid", "grid search over strategy hyperparameters");
  grid->add_option("--config", config_path, "benchmark JSON")->required()->check(CLI::ExistingFile);
  grid->add_option("--seeds", seeds, "use seeds 0..N-1 instead of the config's list");
  grid->add_option("--out", out_dir, "output directory");
  grid->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  grid->add_option("--select-on", select_on, "validation (default) or test")
      ->check(CLI::IsMember({"validation", "test"}));

  auto* hetero = app.add_subcommand("hetero", "client heterogeneity report for a CSV dataset");
  hetero->add_option("--data", data_path, "federated dataset CSV")->required()->check(CLI::ExistingFile);
  hetero->add_option("--out", out_dir, "output directory");
  hetero->add_option("--seed", hetero_seed, "seed of the minibatch draws and the i.i.d. split");

  auto* dp = app.add_subcommand("dp-sweep", "DP-FedAvg accuracy and epsilon over noise levels");
  dp->add_option("--config", config_path, "benchmark JSON")->required()->check(CLI::ExistingFile);
  dp->add_option("--sigmas", sigmas, "noise multipliers")->delimiter(',');
  dp->add_option("--seeds", seeds, "use seeds 0..N-1 instead of the config's list");
  dp->add_option("--out", out_dir, "output directory");
  dp->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);

  auto* synth = app.add_subcommand("synth", "write the config's dataset as CSV");
  synth->add_option("--config", config_path, "benchmark JSON")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", out_dir, "output CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  const std::filesystem::path out(out_dir);
  try {
    if (*run) {
      const auto cfg = load_with_overrides(config_path, seeds);
      std::vector<silo::CellTiming> timings;
      const auto table = silo::run_benchmark(cfg, {jobs, &timings});
      silo::emit_results(table, out / "results.csv", silo::OutputFormat::Csv);
      silo::emit_results(table, out / "results.json", silo::OutputFormat::Json);
      silo::write_text(out / "warnings.log", join_lines(table.warnings));
      silo::write_text(out / "timings.csv", silo::timings_csv(timings));
      std::cout << "wrote " << table.rows.size() << " rows to " << (out / "results.csv").string() << "\n";
      if (silo::all_cells_failed(table)) {
        std::cerr << "every cell failed; see warnings.log\n";
        return kExitAllFailed;
      }
    } else if (*grid) {
      auto cfg = load_with_overrides(config_path, seeds);
      if (select_on == "test") cfg.select_on = silo::SelectOn::Test;
      if (select_on == "validation") cfg.select_on = silo::SelectOn::Validation;
      const auto result = silo::grid_search(cfg, {jobs, nullptr});
      std::string best = "[";
      for (std::size_t i = 0; i < result.best.size(); ++i) best += (i ? ",\n" : "\n") + config_json(result.best[i]);
      best += "\n]\n";
      silo::write_text(out / "grid.csv", silo::grid_csv(result));
      silo::write_text(out / "best.json", best);
      silo::write_text(out / "warnings.log", join_lines(result.warnings));
      std::cout << "evaluated " << result.table.size() << " grid points\n";
    } else if (*hetero) {
      const auto fed = silo::load_csv(data_path);
      const auto report = silo::heterogeneity_report(fed, hetero_seed);
      for (const auto& [name, text] : report.files) silo::write_text(out / name, text);
      silo::write_text(out / "summary.json", report.summary_json);
      silo::write_text(out / "warnings.log", join_lines(report.warnings));
      std::cout << "entropy " << silo::format_double(report.entropy) << " bits\n";
    } else if (*dp) {
      const auto cfg = load_with_overrides(config_path, seeds);
      const auto rows = silo::dp_sweep(cfg, sigmas, {jobs, nullptr});
      silo::write_text(out / "dp_sweep.csv", silo::dp_sweep_csv(rows));
      silo::write_text(out / "warnings.log", "");
      std::cout << "wrote " << rows.size() << " sweep rows\n";
    } else if (*synth) {
      const auto cfg = silo::load_bench_config(config_path);
      std::vector<std::string> warnings;
      silo::save_csv(silo::build_dataset(cfg, &warnings), out);
      for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    }
  } catch (const silo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const silo::ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
