#include "silo/assignment.hpp"

#include <limits>

#include "silo/error.hpp"

namespace silo {

Assignment solve_assignment(const Eigen::MatrixXd& cost) {
  if (cost.rows() != cost.cols()) throw ConfigError("assignment: cost matrix must be square");
  const int n = static_cast<int>(cost.rows());
  if (n == 0) return {};
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // 1-based internals; column 0 is the virtual source of each augmentation.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), dist(n + 1);
  std::vector<int> match(n + 1, 0), prev(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int row = 1; row <= n; ++row) {
    match[0] = row;
    int col0 = 0;
    std::fill(dist.begin(), dist.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[col0] = 1;
      const int r = match[col0];
      double delta = kInf;
      int next = 0;
      for (int c = 1; c <= n; ++c) {
        if (used[c]) continue;
        const double reduced = cost(r - 1, c - 1) - u[r] - v[c];
        if (reduced < dist[c]) {
          dist[c] = reduced;
          prev[c] = col0;
        }
        if (dist[c] < delta) {
          delta = dist[c];
          next = c;
        }
      }
      for (int c = 0; c <= n; ++c) {
        if (used[c]) {
          u[match[c]] += delta;
          v[c] -= delta;
        } else {
          dist[c] -= delta;
        }
      }
      col0 = next;
    } while (match[col0] != 0);
    do {
      const int c = prev[col0];
      match[col0] = match[c];
      col0 = c;
    } while (col0 != 0);
  }

  Assignment out;
  out.row_to_col.assign(n, -1);
  for (int c = 1; c <= n; ++c) out.row_to_col[match[c] - 1] = c - 1;
  for (int r = 0; r < n; ++r) out.cost += cost(r, out.row_to_col[r]);
  return out;
}

}  // namespace silo
