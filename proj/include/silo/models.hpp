#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "silo/data.hpp"
#include "silo/rng.hpp"

namespace silo {

enum class ModelFamily { Logistic, Softmax, CoxPH };

/// Linear model shape. Logistic and Softmax carry an intercept; CoxPH does
/// not (absorbed by the baseline hazard).
///
/// Parameter layout:
///   Logistic  [w_0 .. w_{d-1}, b]
///   Softmax   C blocks of [w_c0 .. w_c(d-1), b_c], class-major
///   CoxPH     [beta_0 .. beta_{d-1}]
struct ModelSpec {
  ModelFamily family = ModelFamily::Logistic;
  std::size_t dim = 1;
  std::size_t classes = 2;

  static ModelSpec logistic(std::size_t d) { return {ModelFamily::Logistic, d, 2}; }
  static ModelSpec softmax(std::size_t d, std::size_t c) { return {ModelFamily::Softmax, d, c}; }
  static ModelSpec cox(std::size_t d) { return {ModelFamily::CoxPH, d, 2}; }

  std::size_t param_count() const noexcept;
  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

struct ParamVector {
  ModelSpec layout;
  Eigen::VectorXd values;

  static ParamVector zeros(const ModelSpec& layout);
  /// Throws when the length does not match the layout or an entry is non-finite.
  void validate() const;
  bool operator==(const ParamVector& o) const { return layout == o.layout && values == o.values; }
};

inline constexpr double kProbClamp = 1e-12;

double clamp_probability(double p) noexcept;
double sigmoid(double z) noexcept;

/// sigma(w^T x + b), clamped to [1e-12, 1 - 1e-12].
double logistic_forward(const ParamVector& params, std::span<const double> features);
/// Softmax over the per-class logits.
Eigen::VectorXd softmax_forward(const ParamVector& params, std::span<const double> features);
/// beta^T x (CoxPH) or the raw logit (Logistic).
double linear_score(const ParamVector& params, std::span<const double> features);

// ---------------------------------------------------------------------------
// Losses

/// Mean binary cross-entropy. `probs` are clamped before the log.
double bce_loss(std::span<const int> labels, std::span<const double> probs);

struct FocalConfig {
  double gamma = 2.0;
  std::vector<double> class_weights;  // alpha_t per class; empty = all ones
};

/// -alpha_t (1 - p_t)^gamma log p_t at the true class.
double focal_loss(std::span<const double> probs, int true_class, const FocalConfig& cfg);

/// Negative Cox partial log-likelihood (sum form, Breslow risk sets).
double cox_nll(const ParamVector& params, std::span<const Sample> data);
Eigen::VectorXd cox_gradient(const ParamVector& params, std::span<const Sample> data);

inline constexpr double kDiceEpsilon = 1e-9;
inline constexpr double kKitsDiceEpsilon = 1e-5;

/// 1 - 2TP / (2TP + FP + FN + eps) with soft counts.
double dice_loss(std::span<const double> pred, std::span<const std::uint8_t> mask, double eps = kDiceEpsilon);
/// (1 - DICE) + 0.1 * balanced BCE, alpha = 1 / max(mean(y), 1e-7) - 1.
double lidc_composite_loss(std::span<const double> pred, std::span<const std::uint8_t> mask);

/// Per-voxel distribution / one-hot over {background, label 1, label 2}.
using VoxelProbs = std::array<double, 3>;
using VoxelOneHot = std::array<std::uint8_t, 3>;
/// CE over the two foreground labels minus the joint two-label soft DICE (eps = 1e-5).
double kits_composite_loss(std::span<const VoxelProbs> pred, std::span<const VoxelOneHot> mask);

// ---------------------------------------------------------------------------
// Objectives

enum class LossKind { BinaryCrossEntropy, CrossEntropy, Focal, CoxPartialLikelihood };

struct LossSpec {
  LossKind kind = LossKind::BinaryCrossEntropy;
  FocalConfig focal;
};

/// Training objective of one model/loss pairing over a minibatch of samples.
class Objective {
 public:
  virtual ~Objective() = default;

  virtual const ModelSpec& model() const noexcept = 0;

  /// Mean loss over `batch` (indices into `data`, repeats allowed). When
  /// `grad` is non-null it receives the gradient of that mean loss.
  virtual double evaluate(const Eigen::VectorXd& params, std::span<const Sample> data,
                          std::span<const std::size_t> batch, Eigen::VectorXd* grad) const = 0;

  /// Whether the loss decomposes into per-sample terms (required by DP-SGD).
  virtual bool separable() const noexcept { return true; }

  /// Mean loss over the whole of `data`.
  double evaluate_all(const Eigen::VectorXd& params, std::span<const Sample> data, Eigen::VectorXd* grad) const;
};

/// Throws ConfigError on incompatible pairings (e.g. Cox model with BCE).
std::unique_ptr<Objective> make_objective(const ModelSpec& model, const LossSpec& loss);

// ---------------------------------------------------------------------------
// Local training

struct Proximal {
  double mu = 0.0;
  Eigen::VectorXd anchor;
};

struct LocalUpdateConfig {
  double lr = 0.01;
  std::size_t batch_size = 1;
  std::size_t num_updates = 1;
  std::optional<Proximal> prox;
  std::uint64_t seed = 0;
};

struct LocalUpdateResult {
  ParamVector params;
  double mean_loss = 0.0;  // mean of the minibatch losses seen, NaN when no step ran
};

/// Exactly `num_updates` SGD steps on minibatches drawn uniformly with
/// replacement. The proximal term adds mu (w - anchor) to every gradient;
/// `correction`, when given, is added as well (Scaffold's c - c_i).
LocalUpdateResult sgd_local_update(const Objective& objective, const ParamVector& start,
                                   std::span<const Sample> data, const LocalUpdateConfig& cfg, Rng& rng,
                                   const Eigen::VectorXd* correction = nullptr);

/// As above with a fresh stream seeded from cfg.seed.
LocalUpdateResult sgd_local_update(const Objective& objective, const ParamVector& start,
                                   std::span<const Sample> data, const LocalUpdateConfig& cfg);

/// Plain full-batch gradient descent (every sample, in order, every step).
ParamVector full_batch_descent(const Objective& objective, const ParamVector& start, std::span<const Sample> data,
                               double lr, std::size_t steps);

}  // namespace silo
