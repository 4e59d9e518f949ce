#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace silo {

enum class TaskKind { Binary, Multiclass, Survival, Mask };

std::string_view to_string(TaskKind kind);

struct BinaryLabel {
  int value = 0;
  bool operator==(const BinaryLabel&) const = default;
};

struct ClassLabel {
  int index = 0;
  bool operator==(const ClassLabel&) const = default;
};

struct SurvivalLabel {
  double time = 1.0;
  bool event = false;
  bool operator==(const SurvivalLabel&) const = default;
};

struct MaskLabel {
  std::vector<std::uint8_t> bits;
  bool operator==(const MaskLabel&) const = default;
};

using Label = std::variant<BinaryLabel, ClassLabel, SurvivalLabel, MaskLabel>;

struct Sample {
  std::vector<double> features;
  Label label;
  bool operator==(const Sample&) const = default;
};

/// Class index of a Binary or Multiclass sample.
int class_of(const Sample& s);
const SurvivalLabel& survival_of(const Sample& s);

struct TaskInfo {
  TaskKind kind = TaskKind::Binary;
  int num_classes = 2;  // Binary: 2; Multiclass: C
  int mask_length = 0;  // Mask only
  bool operator==(const TaskInfo&) const = default;
};

struct ClientDataset {
  std::string client_id;
  std::vector<Sample> train;
  std::vector<Sample> test;
  bool operator==(const ClientDataset&) const = default;
};

/// Ordered list of clients sharing one task and one feature dimension.
/// Validated on construction; immutable afterwards.
class FederatedDataset {
 public:
  FederatedDataset(TaskInfo task, std::size_t dim, std::vector<ClientDataset> clients);

  const TaskInfo& task() const noexcept { return task_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t num_clients() const noexcept { return clients_.size(); }
  const std::vector<ClientDataset>& clients() const noexcept { return clients_; }
  const ClientDataset& client(std::size_t k) const { return clients_.at(k); }

  /// n_T, the total number of training samples.
  std::size_t total_train() const noexcept;
  std::size_t total_test() const noexcept;
  std::vector<std::size_t> train_sizes() const;

  bool operator==(const FederatedDataset&) const = default;

 private:
  TaskInfo task_;
  std::size_t dim_;
  std::vector<ClientDataset> clients_;
};

/// Throws ConfigError when the sample does not match task/dim.
void check_sample(const Sample& s, const TaskInfo& task, std::size_t dim);

/// All clients' train concatenated into one train split, tests likewise.
ClientDataset pooled_view(const FederatedDataset& fed);

// ---------------------------------------------------------------------------
// Dirichlet resplitting

struct DirichletSplitConfig {
  std::size_t k_prime = 2;
  double alpha = 1.0;
  std::uint64_t seed = 0;
};

inline constexpr double kRecommendedMinAlpha = 0.5;

struct ResplitResult {
  FederatedDataset dataset;
  /// proportions[k][k'] = probability that a sample of original client k moves to k'.
  std::vector<std::vector<double>> proportions;
  std::vector<std::string> warnings;
};

/// Reassigns every sample of original client k to a new client k' with
/// probability p_kk', where p_k ~ Dir(alpha). Train and test are reassigned
/// independently with the same p_k. Empty resulting clients are kept and
/// reported in `warnings`.
ResplitResult dirichlet_resplit(const FederatedDataset& fed, const DirichletSplitConfig& cfg);

// ---------------------------------------------------------------------------
// Synthetic generators

struct SynthClientSpec {
  std::size_t size = 100;
  std::optional<std::size_t> train_size;  // defaults to round(size * train_fraction)
  std::vector<double> shift;              // empty = zero shift
  double scale = 1.0;
  /// In [0, 1). A drawn sample whose label differs from `preferred_class` is
  /// rejected with this probability.
  double label_skew = 0.0;
  std::optional<int> preferred_class;  // defaults to k mod C
};

struct SurvivalSynthSpec {
  std::vector<double> coefficients;  // true beta; empty = zeros
  double baseline_hazard = 1.0;
  double censoring_rate = 0.0;  // target fraction of censored samples, in [0, 1)
};

struct SynthSpec {
  TaskKind task = TaskKind::Binary;
  std::size_t dim = 2;
  int num_classes = 2;
  std::vector<SynthClientSpec> clients;
  double train_fraction = 0.8;
  /// Norm of the ground-truth logit weights (per class for Multiclass).
  double signal_strength = 3.0;
  SurvivalSynthSpec survival;
};

FederatedDataset gen_synthetic_classification(const SynthSpec& spec, std::uint64_t seed);
FederatedDataset gen_synthetic_survival(const SynthSpec& spec, std::uint64_t seed);
/// Dispatches on spec.task.
FederatedDataset gen_synthetic(const SynthSpec& spec, std::uint64_t seed);

/// Exponential censoring rate c such that mean_i c / (c + hazard_i) equals
/// `target` (20 bisection steps in log space).
double solve_censoring_rate(const std::vector<double>& hazards, double target);

// ---------------------------------------------------------------------------
// CSV interchange

/// Header: client_id,split,<label cols>,f0..f{d-1}. Label columns are `label`,
/// `time,event`, or `m0..m{m-1}`. A `label` column holding only 0/1 is read as
/// Binary unless `hint` says otherwise; other values give Multiclass with
/// C = max + 1.
FederatedDataset load_csv(const std::filesystem::path& path, std::optional<TaskInfo> hint = {});
FederatedDataset parse_csv(std::string_view text, std::optional<TaskInfo> hint = {});
void save_csv(const FederatedDataset& fed, const std::filesystem::path& path);
std::string to_csv(const FederatedDataset& fed);

/// Shortest round-trippable decimal text ("%.17g").
std::string format_double(double v);

}  // namespace silo
