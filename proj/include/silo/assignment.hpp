#pragma once

#include <Eigen/Dense>
#include <vector>

namespace silo {

struct Assignment {
  std::vector<int> row_to_col;
  double cost = 0.0;
};

/// Minimum-cost perfect matching of a square cost matrix (shortest
/// augmenting paths with dual potentials, O(n^3)).
Assignment solve_assignment(const Eigen::MatrixXd& cost);

}  // namespace silo
