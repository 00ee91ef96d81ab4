#include "rrt/assignment.hpp"

#include <limits>

#include "rrt/errors.hpp"

namespace rrt {

namespace {

// Minimum-cost assignment of every row to a distinct column, n <= m.
// cost is n x m row-major; returns the column of each row.
std::vector<int> hungarian_min(const std::vector<double>& cost, std::size_t n, std::size_t m) {
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is the virtual start.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> match(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (std::size_t j = 1; j <= m; ++j) {
    if (match[j] != 0) row_to_col[match[j] - 1] = static_cast<int>(j - 1);
  }
  return row_to_col;
}

}  // namespace

std::vector<int> max_weight_assignment(const std::vector<double>& weights, std::size_t rows, std::size_t cols) {
  if (weights.size() != rows * cols) throw DimensionError("max_weight_assignment: weight matrix size mismatch");
  if (rows == 0 || cols == 0) return std::vector<int>(rows, -1);
  if (rows <= cols) {
    std::vector<double> cost(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) cost[i] = -weights[i];
    return hungarian_min(cost, rows, cols);
  }
  // Transpose so the smaller side is assigned.
  std::vector<double> cost(weights.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) cost[c * rows + r] = -weights[r * cols + c];
  const auto col_to_row = hungarian_min(cost, cols, rows);
  std::vector<int> row_to_col(rows, -1);
  for (std::size_t c = 0; c < cols; ++c) row_to_col[static_cast<std::size_t>(col_to_row[c])] = static_cast<int>(c);
  return row_to_col;
}

}  // namespace rrt
