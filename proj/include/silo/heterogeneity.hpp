#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "silo/data.hpp"

namespace silo {

/// Entropy (bits) of the distribution of samples across clients.
double client_entropy(std::span<const std::size_t> sizes);

// ---------------------------------------------------------------------------
// PCA

inline constexpr std::size_t kPcaTargetDim = 16;

struct PcaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;         // one orthonormal direction per row
  Eigen::VectorXd explained_variance;  // sample covariance eigenvalues, descending
};

/// Top principal directions of the rows of `data` (n x d, n >= 2). Keeps
/// min(rank, target_dim) components; each component's first non-negligible
/// coordinate is positive.
PcaModel pca_fit(const Eigen::MatrixXd& data, std::size_t target_dim = kPcaTargetDim);
Eigen::MatrixXd pca_transform(const PcaModel& model, const Eigen::MatrixXd& data);

// ---------------------------------------------------------------------------
// Optimal transport

/// Squared W2 between two uniform point clouds of equal size m (rows):
/// (1/m) min_pi sum_i ||a_i - b_pi(i)||^2, solved exactly.
double exact_assignment_w2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

struct MinibatchW2Options {
  std::size_t batch = 64;
  std::size_t repetitions = 50;
  std::uint64_t seed = 0;
  /// Draw the same index pattern for both sides (for identical inputs the
  /// estimate is then exactly 0). Default: independent draws.
  bool shared_draws = false;
};

/// Mean over repetitions of exact_assignment_w2 on size-m subsets drawn
/// uniformly without replacement from each side.
double minibatch_w2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const MinibatchW2Options& options);

/// 1/2 sum_i |alpha_i - beta_i|.
double total_variation(std::span<const double> alpha, std::span<const double> beta);

// ---------------------------------------------------------------------------
// Pairwise client distances

enum class DistanceOn { Features, Labels };
enum class SplitKind { Natural, IidBaseline };

struct DistanceMatrix {
  Eigen::MatrixXd values;
  std::vector<std::size_t> sizes;
  SplitKind kind = SplitKind::Natural;
  bool rescaled = false;
  std::string metric = "w2sq";  // "w2sq" (squared W2) or "tv"

  /// Off-diagonal upper-triangle entries, row-major.
  std::vector<double> off_diagonal() const;
};

struct DistanceOptions {
  std::size_t batch = 64;  // capped at the smallest client size
  std::size_t repetitions = 50;
};

/// Clients' samples (train and test together) per client.
std::vector<std::vector<Sample>> client_samples(const FederatedDataset& fed);

/// Features: minibatch W2 after PCA to 16 dims when d > 16 (PCA fit on all
/// samples). Labels: TV between label histograms for Binary/Multiclass;
/// minibatch W2 on standardized (time, event) pairs for Survival; minibatch W2
/// on the mask vectors (same PCA rule) for Mask.
DistanceMatrix pairwise_distance_matrix(const FederatedDataset& fed, DistanceOn on, std::uint64_t seed,
                                        const DistanceOptions& options = {});

/// Pools all samples, shuffles them with `seed`, redistributes them into the
/// original client sizes, then computes the pairwise matrix.
DistanceMatrix iid_baseline_matrix(const FederatedDataset& fed, DistanceOn on, std::uint64_t seed,
                                   const DistanceOptions& options = {});

/// The same dataset with every client's samples replaced by an i.i.d.
/// redistribution of the pooled samples (sizes preserved).
FederatedDataset iid_redistribute(const FederatedDataset& fed, std::uint64_t seed);

struct RescaledPair {
  DistanceMatrix natural;
  DistanceMatrix iid;
  double iid_mean = 0.0;
  double iid_std = 0.0;
};

/// (D - mu_iid) / sigma_iid on both matrices, with mu/sigma^2 the mean and
/// (population) variance of the i.i.d. off-diagonal set. Needs K >= 3.
RescaledPair rescale_against_iid(const DistanceMatrix& natural, const DistanceMatrix& iid);

/// CSV with a `# kind=... rescaled=... metric=...` first line.
std::string distance_matrix_csv(const DistanceMatrix& m, std::span<const std::string> client_ids);

}  // namespace silo
