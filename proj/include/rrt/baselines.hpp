#pragma once

// Comparison rerankers: alpha-weighted query expansion and geometric
// verification (mutual nearest-neighbor matching + RANSAC homography).

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rrt/descriptors.hpp"
#include "rrt/retrieval.hpp"

namespace rrt {

struct AqeConfig {
  std::size_t nqe = 2;
  double alpha = 0.3;
};

struct QeNeighbor {
  std::span<const float> vec;
  double sim = 0.0;
};

// Weight of each of the first nqe neighbors: max(sim, 0)^alpha.
std::vector<double> alpha_qe_weights(std::span<const double> sims, std::size_t nqe, double alpha);

// normalize(q + sum_{i<nqe} max(sim_i, 0)^alpha d_i). Neighbors are expected
// in descending similarity order.
std::vector<float> alpha_qe_expand(std::span<const float> query, std::span<const QeNeighbor> neighbors,
                                   std::size_t nqe, double alpha);

// Full-gallery retrieval with the expanded query (provenance "aqe").
NeighborList aqe_search(const GlobalIndex& index, std::span<const float> query, const AqeConfig& cfg,
                        std::optional<std::uint32_t> exclude_id = std::nullopt);

struct Match {
  std::uint32_t index_a = 0;
  std::uint32_t index_b = 0;
  double distance = 0.0;
  bool operator==(const Match&) const = default;
};

// Pairs (i, j) that are each other's Euclidean nearest neighbor; with a ratio
// r, also d1 / d2 <= r against the second-nearest candidate of i.
std::vector<Match> mutual_nn_matches(std::span<const LocalDescriptor> a, std::span<const LocalDescriptor> b,
                                     std::optional<double> ratio = std::nullopt);

struct PointPair {
  double x = 0, y = 0;    // in image A
  double x2 = 0, y2 = 0;  // in image B
};

// Row-major 3x3 matrix scaled so that the bottom-right entry is 1 when it is
// not (numerically) zero.
struct Homography {
  std::array<double, 9> m{};
  static Homography identity() { return {{1, 0, 0, 0, 1, 0, 0, 0, 1}}; }
  std::array<double, 2> apply(double x, double y) const;
  std::optional<Homography> inverse() const;
};

// Normalized direct linear transform; needs >= 4 non-degenerate pairs. The
// solution is the least-squares one when more pairs are given.
std::optional<Homography> fit_homography(std::span<const PointPair> pairs);

// sqrt(|x' - Hx|^2 + |x - H^-1 x'|^2)
double symmetric_transfer_error(const Homography& h, const Homography& h_inv, const PointPair& p);

struct RansacConfig {
  std::size_t iterations = 2000;
  double threshold_px = 3.0;
  std::uint64_t seed = 0;
};

struct RansacResult {
  std::optional<Homography> model;
  std::size_t inliers = 0;
  std::vector<std::uint8_t> inlier_mask;
};

RansacResult ransac_homography(std::span<const PointPair> pairs, const RansacConfig& cfg);

// Same procedure over an explicit list of 4-index samples instead of seeded
// draws.
RansacResult ransac_homography_scheduled(std::span<const PointPair> pairs,
                                         std::span<const std::array<std::size_t, 4>> schedule, double threshold_px);

// The 4-index samples ransac_homography draws for n pairs.
std::vector<std::array<std::size_t, 4>> ransac_schedule(std::size_t n, const RansacConfig& cfg);

struct GvConfig {
  std::size_t iterations = 2000;
  double threshold_px = 3.0;
  std::optional<double> ratio;
  std::uint64_t seed = 0;
};

// Inlier count of the best homography between the two records' mutual-NN
// matches; 0 when no model is found.
std::size_t gv_score(const ImageRecord& query, const ImageRecord& candidate, const GvConfig& cfg);

BatchScorer make_gv_scorer(const ImageRecord& query, const RecordMap& gallery, const GvConfig& cfg,
                           unsigned threads = 1);

}  // namespace rrt
