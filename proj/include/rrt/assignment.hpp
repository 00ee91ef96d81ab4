#pragma once

#include <cstddef>
#include <vector>

namespace rrt {

// Maximum-weight one-to-one assignment on a rows x cols weight matrix
// (row-major). Returns, for every row, the matched column or -1 when
// rows > cols leaves it unmatched. Exact (Hungarian method with potentials),
// O(n^2 m) for n = min(rows, cols), m = max(rows, cols).
std::vector<int> max_weight_assignment(const std::vector<double>& weights, std::size_t rows, std::size_t cols);

}  // namespace rrt
