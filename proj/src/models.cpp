#include <cmath>

#include "silo/error.hpp"
#include "silo/models.hpp"

namespace silo {

std::size_t ModelSpec::param_count() const noexcept {
  switch (family) {
    case ModelFamily::Logistic: return dim + 1;
    case ModelFamily::Softmax: return classes * (dim + 1);
    case ModelFamily::CoxPH: return dim;
  }
  return 0;
}

void ModelSpec::validate() const {
  if (dim < 1) throw ConfigError("model dimension must be at least 1");
  if (family == ModelFamily::Softmax && classes < 2) throw ConfigError("softmax needs at least 2 classes");
}

ParamVector ParamVector::zeros(const ModelSpec& layout) {
  layout.validate();
  return {layout, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout.param_count()))};
}

void ParamVector::validate() const {
  layout.validate();
  if (static_cast<std::size_t>(values.size()) != layout.param_count())
    throw ConfigError("parameter vector length does not match the model layout");
  if (!values.allFinite()) throw Error("parameter vector has non-finite entries");
}

double clamp_probability(double p) noexcept { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

double sigmoid(double z) noexcept {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

void check_dims(const ParamVector& params, std::span<const double> features) {
  if (static_cast<std::size_t>(params.values.size()) != params.layout.param_count())
    throw ConfigError("parameter vector length does not match the model layout");
  if (features.size() != params.layout.dim)
    throw ConfigError("feature dimension " + std::to_string(features.size()) + " does not match model dimension " +
                      std::to_string(params.layout.dim));
}

}  // namespace

double linear_score(const ParamVector& params, std::span<const double> features) {
  check_dims(params, features);
  if (params.layout.family == ModelFamily::Softmax) throw ConfigError("linear_score needs a single-output model");
  const auto d = static_cast<Eigen::Index>(params.layout.dim);
  const Eigen::Map<const Eigen::VectorXd> x(features.data(), d);
  double z = params.values.head(d).dot(x);
  if (params.layout.family == ModelFamily::Logistic) z += params.values[d];
  return z;
}

double logistic_forward(const ParamVector& params, std::span<const double> features) {
  if (params.layout.family != ModelFamily::Logistic) throw ConfigError("logistic_forward needs a logistic model");
  return clamp_probability(sigmoid(linear_score(params, features)));
}

Eigen::VectorXd softmax_forward(const ParamVector& params, std::span<const double> features) {
  if (params.layout.family != ModelFamily::Softmax) throw ConfigError("softmax_forward needs a softmax model");
  check_dims(params, features);
  const auto d = static_cast<Eigen::Index>(params.layout.dim);
  const auto c = static_cast<Eigen::Index>(params.layout.classes);
  const Eigen::Map<const Eigen::VectorXd> x(features.data(), d);
  Eigen::VectorXd z(c);
  for (Eigen::Index k = 0; k < c; ++k) z[k] = params.values.segment(k * (d + 1), d).dot(x) + params.values[k * (d + 1) + d];
  z.array() -= z.maxCoeff();
  z = z.array().exp();
  return z / z.sum();
}

}  // namespace silo
