#include <cmath>
#include <numeric>

#include "cox_internal.hpp"
#include "silo/error.hpp"
#include "silo/models.hpp"

namespace silo {

double Objective::evaluate_all(const Eigen::VectorXd& params, std::span<const Sample> data,
                               Eigen::VectorXd* grad) const {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  return evaluate(params, data, all, grad);
}

namespace {

using Eigen::Index;

Eigen::Map<const Eigen::VectorXd> features_of(const Sample& s) {
  return {s.features.data(), static_cast<Index>(s.features.size())};
}

void check_batch(std::span<const Sample> data, std::span<const std::size_t> batch, std::size_t dim) {
  if (batch.empty()) throw ConfigError("objective: empty batch");
  for (auto i : batch) {
    if (i >= data.size()) throw ConfigError("objective: batch index out of range");
    if (data[i].features.size() != dim) throw ConfigError("objective: feature dimension mismatch");
  }
}

class LogisticBce final : public Objective {
 public:
  explicit LogisticBce(ModelSpec spec) : spec_(spec) {}
  const ModelSpec& model() const noexcept override { return spec_; }

  double evaluate(const Eigen::VectorXd& params, std::span<const Sample> data, std::span<const std::size_t> batch,
                  Eigen::VectorXd* grad) const override {
    check_batch(data, batch, spec_.dim);
    const auto d = static_cast<Index>(spec_.dim);
    if (grad) grad->setZero(params.size());
    double loss = 0.0;
    for (auto i : batch) {
      const auto x = features_of(data[i]);
      const int y = class_of(data[i]);
      const double p = sigmoid(params.head(d).dot(x) + params[d]);
      const double pc = clamp_probability(p);
      loss -= y ? std::log(pc) : std::log1p(-pc);
      if (grad) {
        const double r = p - y;
        grad->head(d) += r * x;
        (*grad)[d] += r;
      }
    }
    const double n = static_cast<double>(batch.size());
    if (grad) *grad /= n;
    return loss / n;
  }

 private:
  ModelSpec spec_;
};

// Shared softmax machinery; `Focal` selects the weighted focal loss.
class SoftmaxObjective final : public Objective {
 public:
  SoftmaxObjective(ModelSpec spec, std::optional<FocalConfig> focal) : spec_(spec), focal_(std::move(focal)) {}
  const ModelSpec& model() const noexcept override { return spec_; }

  double evaluate(const Eigen::VectorXd& params, std::span<const Sample> data, std::span<const std::size_t> batch,
                  Eigen::VectorXd* grad) const override {
    check_batch(data, batch, spec_.dim);
    const auto d = static_cast<Index>(spec_.dim);
    const auto c = static_cast<Index>(spec_.classes);
    if (grad) grad->setZero(params.size());
    Eigen::VectorXd z(c);
    double loss = 0.0;
    for (auto i : batch) {
      const auto x = features_of(data[i]);
      const int t = class_of(data[i]);
      if (t < 0 || t >= c) throw ConfigError("objective: class index out of range");
      for (Index k = 0; k < c; ++k) z[k] = params.segment(k * (d + 1), d).dot(x) + params[k * (d + 1) + d];
      z.array() -= z.maxCoeff();
      Eigen::VectorXd p = z.array().exp();
      p /= p.sum();
      const double pt = p[t];
      const double log_pt = std::log(clamp_probability(pt));
      // coeff * (1[k == t] - p_k) is the derivative of the loss w.r.t. logit k.
      double coeff;
      if (focal_) {
        const double alpha = focal_->class_weights.empty() ? 1.0 : focal_->class_weights[static_cast<std::size_t>(t)];
        const double gamma = focal_->gamma;
        const double q = std::max(1.0 - pt, kProbClamp);
        loss -= alpha * std::pow(q, gamma) * log_pt;
        const double dq = gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0) * pt * log_pt;
        coeff = -alpha * (std::pow(q, gamma) - dq);
      } else {
        loss -= log_pt;
        coeff = -1.0;
      }
      if (grad) {
        for (Index k = 0; k < c; ++k) {
          const double r = coeff * ((k == t ? 1.0 : 0.0) - p[k]);
          grad->segment(k * (d + 1), d) += r * x;
          (*grad)[k * (d + 1) + d] += r;
        }
      }
    }
    const double n = static_cast<double>(batch.size());
    if (grad) *grad /= n;
    return loss / n;
  }

 private:
  ModelSpec spec_;
  std::optional<FocalConfig> focal_;
};

class CoxObjective final : public Objective {
 public:
  explicit CoxObjective(ModelSpec spec) : spec_(spec) {}
  const ModelSpec& model() const noexcept override { return spec_; }
  bool separable() const noexcept override { return false; }

  double evaluate(const Eigen::VectorXd& params, std::span<const Sample> data, std::span<const std::size_t> batch,
                  Eigen::VectorXd* grad) const override {
    check_batch(data, batch, spec_.dim);
    std::vector<const Sample*> ptrs;
    ptrs.reserve(batch.size());
    for (auto i : batch) ptrs.push_back(&data[i]);
    if (grad) grad->setZero(params.size());
    const double n = static_cast<double>(batch.size());
    const double loss = detail::cox_nll_sum(params, ptrs, grad) / n;
    if (grad) *grad /= n;
    return loss;
  }

 private:
  ModelSpec spec_;
};

}  // namespace

std::unique_ptr<Objective> make_objective(const ModelSpec& model, const LossSpec& loss) {
  model.validate();
  switch (model.family) {
    case ModelFamily::Logistic:
      if (loss.kind != LossKind::BinaryCrossEntropy) throw ConfigError("logistic model pairs with the bce loss");
      return std::make_unique<LogisticBce>(model);
    case ModelFamily::Softmax:
      if (loss.kind == LossKind::CrossEntropy) return std::make_unique<SoftmaxObjective>(model, std::nullopt);
      if (loss.kind == LossKind::Focal) {
        if (!loss.focal.class_weights.empty() && loss.focal.class_weights.size() != model.classes)
          throw ConfigError("focal class weights must have one entry per class");
        for (double w : loss.focal.class_weights)
          if (!(w > 0.0)) throw ConfigError("focal class weights must be positive");
        if (!(loss.focal.gamma >= 0.0)) throw ConfigError("focal gamma must be non-negative");
        return std::make_unique<SoftmaxObjective>(model, loss.focal);
      }
      throw ConfigError("softmax model pairs with the cross-entropy or focal loss");
    case ModelFamily::CoxPH:
      if (loss.kind != LossKind::CoxPartialLikelihood) throw ConfigError("cox model pairs with the cox loss");
      return std::make_unique<CoxObjective>(model);
  }
  throw ConfigError("unknown model family");
}

LocalUpdateResult sgd_local_update(const Objective& objective, const ParamVector& start,
                                   std::span<const Sample> data, const LocalUpdateConfig& cfg, Rng& rng,
                                   const Eigen::VectorXd* correction) {
  if (data.empty()) throw ConfigError("local update: client has no training data");
  if (cfg.batch_size < 1) throw ConfigError("local update: batch size must be at least 1");
  if (!(cfg.lr >= 0.0)) throw ConfigError("local update: learning rate must be non-negative");
  if (cfg.prox && !(cfg.prox->mu >= 0.0)) throw ConfigError("local update: mu must be non-negative");

  ParamVector params = start;
  Eigen::VectorXd grad(params.values.size());
  std::vector<std::size_t> batch(cfg.batch_size);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  double loss_sum = 0.0;
  for (std::size_t step = 0; step < cfg.num_updates; ++step) {
    for (auto& b : batch) b = pick(rng);
    const double loss = objective.evaluate(params.values, data, batch, &grad);
    if (!std::isfinite(loss)) throw DivergedError(step);
    loss_sum += loss;
    if (cfg.prox) grad += cfg.prox->mu * (params.values - cfg.prox->anchor);
    if (correction) grad += *correction;
    params.values -= cfg.lr * grad;
    if (!params.values.allFinite()) throw DivergedError(step);
  }
  const double mean_loss =
      cfg.num_updates ? loss_sum / static_cast<double>(cfg.num_updates) : std::numeric_limits<double>::quiet_NaN();
  return {std::move(params), mean_loss};
}

LocalUpdateResult sgd_local_update(const Objective& objective, const ParamVector& start,
                                   std::span<const Sample> data, const LocalUpdateConfig& cfg) {
  Rng rng(cfg.seed);
  return sgd_local_update(objective, start, data, cfg, rng);
}

ParamVector full_batch_descent(const Objective& objective, const ParamVector& start, std::span<const Sample> data,
                               double lr, std::size_t steps) {
  if (data.empty()) throw ConfigError("full-batch descent: no data");
  ParamVector params = start;
  Eigen::VectorXd grad;
  for (std::size_t step = 0; step < steps; ++step) {
    const double loss = objective.evaluate_all(params.values, data, &grad);
    if (!std::isfinite(loss)) throw DivergedError(step);
    params.values -= lr * grad;
  }
  return params;
}

}  // namespace silo
