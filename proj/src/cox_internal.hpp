#pragma once

#include <Eigen/Dense>
#include <span>

#include "silo/data.hpp"

namespace silo::detail {

/// Negative Cox partial log-likelihood (sum over events) of the samples in
/// `batch` under coefficients `beta`, Breslow risk sets. Adds the gradient
/// (sum form) into `grad` when non-null.
double cox_nll_sum(const Eigen::VectorXd& beta, std::span<const Sample* const> batch, Eigen::VectorXd* grad);

}  // namespace silo::detail
