#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "rrt/assignment.hpp"

using namespace rrt;

namespace {

// Best total over all injective maps of the smaller side, by enumeration.
double brute_force_best(const std::vector<double>& w, std::size_t rows, std::size_t cols) {
  const bool transpose = rows > cols;
  const std::size_t n = transpose ? cols : rows, m = transpose ? rows : cols;
  const auto at = [&](std::size_t i, std::size_t j) { return transpose ? w[j * cols + i] : w[i * cols + j]; };
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  double best = -1e300;
  do {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += at(i, perm[i]);
    best = std::max(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST_CASE("assignment matches exhaustive search") {
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<std::size_t> size(1, 6);
  std::uniform_real_distribution<double> val(-2.0, 5.0);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t rows = size(rng), cols = size(rng);
    std::vector<double> w(rows * cols);
    for (auto& x : w) x = trial % 3 == 0 ? std::floor(val(rng)) : val(rng);
    const auto a = max_weight_assignment(w, rows, cols);
    REQUIRE(a.size() == rows);
    std::set<int> used;
    double total = 0;
    std::size_t matched = 0;
    for (std::size_t i = 0; i < rows; ++i) {
      if (a[i] < 0) continue;
      CHECK(a[i] < static_cast<int>(cols));
      CHECK(used.insert(a[i]).second);
      total += w[i * cols + static_cast<std::size_t>(a[i])];
      ++matched;
    }
    CHECK(matched == std::min(rows, cols));
    CHECK(total == doctest::Approx(brute_force_best(w, rows, cols)).epsilon(1e-12));
  }
}

TEST_CASE("assignment edge cases") {
  CHECK(max_weight_assignment({}, 0, 3).empty());
  CHECK(max_weight_assignment({}, 2, 0) == std::vector<int>{-1, -1});
  CHECK(max_weight_assignment({1, 5, 4, 1}, 2, 2) == std::vector<int>{1, 0});
}
