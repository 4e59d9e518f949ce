#include <algorithm>
#include <cmath>
#include <numeric>

#include "cox_internal.hpp"
#include "silo/error.hpp"
#include "silo/models.hpp"

namespace silo {

double bce_loss(std::span<const int> labels, std::span<const double> probs) {
  if (labels.size() != probs.size()) throw ConfigError("bce_loss: length mismatch");
  if (labels.empty()) throw ConfigError("bce_loss: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = clamp_probability(probs[i]);
    sum += labels[i] ? std::log(p) : std::log1p(-p);
  }
  return -sum / static_cast<double>(labels.size());
}

double focal_loss(std::span<const double> probs, int true_class, const FocalConfig& cfg) {
  if (probs.empty()) throw ConfigError("focal_loss: empty distribution");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw ConfigError("focal_loss: negative probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("focal_loss: probabilities do not sum to 1");
  if (true_class < 0 || static_cast<std::size_t>(true_class) >= probs.size())
    throw ConfigError("focal_loss: class index out of range");
  if (!cfg.class_weights.empty() && cfg.class_weights.size() != probs.size())
    throw ConfigError("focal_loss: class weight count does not match the class count");
  const double alpha = cfg.class_weights.empty() ? 1.0 : cfg.class_weights[static_cast<std::size_t>(true_class)];
  const double pt = clamp_probability(probs[static_cast<std::size_t>(true_class)]);
  return -alpha * std::pow(1.0 - pt, cfg.gamma) * std::log(pt);
}

namespace detail {

double cox_nll_sum(const Eigen::VectorXd& beta, std::span<const Sample* const> batch, Eigen::VectorXd* grad) {
  const std::size_t n = batch.size();
  const auto d = beta.size();
  std::vector<double> eta(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& f = batch[i]->features;
    eta[i] = Eigen::Map<const Eigen::VectorXd>(f.data(), d).dot(beta);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return survival_of(*batch[a]).time > survival_of(*batch[b]).time; });

  // Running log-sum-exp over the risk set, kept as max + scaled sum.
  double run_max = -INFINITY;
  double run_sum = 0.0;
  Eigen::VectorXd run_x = Eigen::VectorXd::Zero(d);
  double nll = 0.0;

  std::size_t g = 0;
  while (g < n) {
    const double t = survival_of(*batch[order[g]]).time;
    std::size_t end = g;
    while (end < n && survival_of(*batch[order[end]]).time == t) ++end;
    for (std::size_t r = g; r < end; ++r) {
      const std::size_t i = order[r];
      const auto x = Eigen::Map<const Eigen::VectorXd>(batch[i]->features.data(), d);
      if (eta[i] > run_max) {
        const double scale = std::exp(run_max - eta[i]);
        run_sum *= scale;
        if (grad) run_x *= scale;
        run_max = eta[i];
      }
      const double w = std::exp(eta[i] - run_max);
      run_sum += w;
      if (grad) run_x += w * x;
    }
    const double log_risk = run_max + std::log(run_sum);
    for (std::size_t r = g; r < end; ++r) {
      const std::size_t i = order[r];
      if (!survival_of(*batch[i]).event) continue;
      nll -= eta[i] - log_risk;
      if (grad) {
        const auto x = Eigen::Map<const Eigen::VectorXd>(batch[i]->features.data(), d);
        *grad -= x - run_x / run_sum;
      }
    }
    g = end;
  }
  return nll;
}

}  // namespace detail

namespace {

std::vector<const Sample*> pointers(std::span<const Sample> data) {
  std::vector<const Sample*> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(&s);
  return out;
}

void check_cox(const ParamVector& params, std::span<const Sample> data) {
  if (params.layout.family != ModelFamily::CoxPH) throw ConfigError("cox loss needs a CoxPH model");
  if (data.empty()) throw ConfigError("cox loss: empty dataset");
  for (const auto& s : data) {
    if (s.features.size() != params.layout.dim) throw ConfigError("cox loss: dimension mismatch");
    if (!(survival_of(s).time > 0.0)) throw ConfigError("cox loss: survival times must be positive");
  }
}

}  // namespace

double cox_nll(const ParamVector& params, std::span<const Sample> data) {
  check_cox(params, data);
  const auto ptrs = pointers(data);
  return detail::cox_nll_sum(params.values, ptrs, nullptr);
}

Eigen::VectorXd cox_gradient(const ParamVector& params, std::span<const Sample> data) {
  check_cox(params, data);
  const auto ptrs = pointers(data);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.values.size());
  detail::cox_nll_sum(params.values, ptrs, &grad);
  return grad;
}

double dice_loss(std::span<const double> pred, std::span<const std::uint8_t> mask, double eps) {
  if (pred.size() != mask.size()) throw ConfigError("dice_loss: length mismatch");
  if (pred.empty()) throw ConfigError("dice_loss: empty input");
  double tp = 0.0, fp = 0.0, fn = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double y = mask[i];
    tp += y * pred[i];
    fp += (1.0 - y) * pred[i];
    fn += y * (1.0 - pred[i]);
  }
  return 1.0 - 2.0 * tp / (2.0 * tp + fp + fn + eps);
}

double lidc_composite_loss(std::span<const double> pred, std::span<const std::uint8_t> mask) {
  if (pred.size() != mask.size()) throw ConfigError("lidc_composite_loss: length mismatch");
  if (pred.empty()) throw ConfigError("lidc_composite_loss: empty input");
  const double n = static_cast<double>(pred.size());
  double overlap = 0.0, sum_y = 0.0, sum_pred = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    overlap += mask[i] * pred[i];
    sum_y += mask[i];
    sum_pred += pred[i];
  }
  const double dice = 2.0 * overlap / (sum_y + sum_pred);
  const double alpha = 1.0 / std::max(sum_y / n, 1e-7) - 1.0;
  double bce = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = clamp_probability(pred[i]);
    bce -= mask[i] ? alpha * std::log(p) : std::log1p(-p);
  }
  return (1.0 - dice) + 0.1 * bce;
}

double kits_composite_loss(std::span<const VoxelProbs> pred, std::span<const VoxelOneHot> mask) {
  if (pred.size() != mask.size()) throw ConfigError("kits_composite_loss: shape mismatch");
  if (pred.empty()) throw ConfigError("kits_composite_loss: empty input");
  double ce = 0.0, overlap = 0.0, mass = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double total = pred[i][0] + pred[i][1] + pred[i][2];
    if (std::abs(total - 1.0) > 1e-9 || pred[i][0] < 0 || pred[i][1] < 0 || pred[i][2] < 0)
      throw ConfigError("kits_composite_loss: voxel " + std::to_string(i) + " is not a distribution");
    if (mask[i][0] + mask[i][1] + mask[i][2] != 1)
      throw ConfigError("kits_composite_loss: voxel " + std::to_string(i) + " mask is not one-hot");
    for (std::size_t l = 1; l <= 2; ++l) {
      const double y = mask[i][l];
      if (y > 0) ce -= std::log(clamp_probability(pred[i][l]));
      overlap += y * pred[i][l];
      mass += y + pred[i][l];
    }
  }
  const double dice = (2.0 * overlap + kKitsDiceEpsilon) / (mass + kKitsDiceEpsilon);
  return ce - dice;
}

}  // namespace silo
