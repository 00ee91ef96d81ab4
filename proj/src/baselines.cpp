#include "rrt/baselines.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "rrt/errors.hpp"

namespace rrt {

// -- alpha-QE --------------------------------------------------------------------

std::vector<double> alpha_qe_weights(std::span<const double> sims, std::size_t nqe, double alpha) {
  const std::size_t n = std::min(nqe, sims.size());
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = std::pow(std::max(sims[i], 0.0), alpha);
  return w;
}

std::vector<float> alpha_qe_expand(std::span<const float> query, std::span<const QeNeighbor> neighbors,
                                   std::size_t nqe, double alpha) {
  std::vector<double> sims;
  for (const auto& n : neighbors) sims.push_back(n.sim);
  const auto weights = alpha_qe_weights(sims, nqe, alpha);
  std::vector<double> acc(query.begin(), query.end());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const auto vec = neighbors[i].vec;
    if (vec.size() != acc.size()) throw DimensionError("alpha_qe_expand: neighbor dimension mismatch");
    for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += weights[i] * vec[c];
  }
  std::vector<float> out(acc.begin(), acc.end());
  l2_normalize_inplace(out);
  return out;
}

NeighborList aqe_search(const GlobalIndex& index, std::span<const float> query, const AqeConfig& cfg,
                        std::optional<std::uint32_t> exclude_id) {
  const bool excluded = exclude_id && index.position(*exclude_id).has_value();
  const std::size_t candidates = index.size() - (excluded ? 1 : 0);
  NeighborList out;
  out.method = "aqe";
  if (exclude_id) out.query_id = *exclude_id;
  if (candidates == 0) return out;

  const auto first = index.search(query, candidates, exclude_id);
  std::vector<QeNeighbor> neighbors;
  for (std::size_t i = 0; i < std::min(cfg.nqe, first.entries.size()); ++i) {
    const auto pos = *index.position(first.entries[i].id);
    neighbors.push_back({index.row(pos), first.entries[i].score});
  }
  const auto expanded = alpha_qe_expand(query, neighbors, cfg.nqe, cfg.alpha);
  out = index.search(expanded, candidates, exclude_id);
  out.method = "aqe";
  return out;
}

// -- matching --------------------------------------------------------------------

std::vector<Match> mutual_nn_matches(std::span<const LocalDescriptor> a, std::span<const LocalDescriptor> b,
                                     std::optional<double> ratio) {
  if (a.empty() || b.empty()) return {};
  const std::size_t na = a.size(), nb = b.size();
  std::vector<double> d2(na * nb);
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nb; ++j) {
      if (a[i].vec.size() != b[j].vec.size()) throw DimensionError("mutual_nn_matches: descriptor dimension mismatch");
      double s = 0.0;
      for (std::size_t c = 0; c < a[i].vec.size(); ++c) {
        const double diff = static_cast<double>(a[i].vec[c]) - b[j].vec[c];
        s += diff * diff;
      }
      d2[i * nb + j] = s;
    }
  }
  std::vector<std::size_t> best_b(na), best_a(nb);
  std::vector<double> second_b(na, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < na; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < nb; ++j)
      if (d2[i * nb + j] < d2[i * nb + best]) best = j;
    best_b[i] = best;
    for (std::size_t j = 0; j < nb; ++j)
      if (j != best) second_b[i] = std::min(second_b[i], d2[i * nb + j]);
  }
  for (std::size_t j = 0; j < nb; ++j) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < na; ++i)
      if (d2[i * nb + j] < d2[best * nb + j]) best = i;
    best_a[j] = best;
  }
  std::vector<Match> out;
  for (std::size_t i = 0; i < na; ++i) {
    const std::size_t j = best_b[i];
    if (best_a[j] != i) continue;
    const double d1 = std::sqrt(d2[i * nb + j]);
    if (ratio && std::isfinite(second_b[i])) {
      const double dsecond = std::sqrt(second_b[i]);
      if (dsecond == 0.0 || d1 / dsecond > *ratio) continue;
    }
    out.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), d1});
  }
  return out;
}

// -- homography --------------------------------------------------------------------

namespace {

using Mat3 = Eigen::Matrix3d;

Mat3 to_eigen(const Homography& h) {
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = h.m[static_cast<std::size_t>(r * 3 + c)];
  return m;
}

std::optional<Homography> from_eigen(const Mat3& m) {
  if (!m.allFinite()) return std::nullopt;
  Mat3 n = m;
  if (std::abs(n(2, 2)) > 1e-12) n /= n(2, 2);
  Homography h;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) h.m[static_cast<std::size_t>(r * 3 + c)] = n(r, c);
  return h;
}

// Similarity transform moving the centroid to the origin with mean distance sqrt(2).
Mat3 normalizer(std::span<const PointPair> pairs, bool second) {
  double cx = 0, cy = 0;
  for (const auto& p : pairs) {
    cx += second ? p.x2 : p.x;
    cy += second ? p.y2 : p.y;
  }
  cx /= static_cast<double>(pairs.size());
  cy /= static_cast<double>(pairs.size());
  double mean_dist = 0;
  for (const auto& p : pairs) mean_dist += std::hypot((second ? p.x2 : p.x) - cx, (second ? p.y2 : p.y) - cy);
  mean_dist /= static_cast<double>(pairs.size());
  const double s = mean_dist > 0 ? std::sqrt(2.0) / mean_dist : 1.0;
  Mat3 t;
  t << s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1;
  return t;
}

bool collinear(double ax, double ay, double bx, double by, double cx, double cy) {
  return std::abs((bx - ax) * (cy - ay) - (by - ay) * (cx - ax)) < 1e-2;
}

bool degenerate_sample(std::span<const PointPair> pairs, const std::array<std::size_t, 4>& idx) {
  for (int second = 0; second < 2; ++second) {
    for (int skip = 0; skip < 4; ++skip) {
      double pts[3][2];
      int k = 0;
      for (int i = 0; i < 4; ++i) {
        if (i == skip) continue;
        const auto& p = pairs[idx[static_cast<std::size_t>(i)]];
        pts[k][0] = second ? p.x2 : p.x;
        pts[k][1] = second ? p.y2 : p.y;
        ++k;
      }
      if (collinear(pts[0][0], pts[0][1], pts[1][0], pts[1][1], pts[2][0], pts[2][1])) return true;
    }
  }
  return false;
}

// Exact homography through 4 normalized correspondences with h33 fixed to 1.
std::optional<Homography> fit_minimal(std::span<const PointPair> pairs) {
  const Mat3 t1 = normalizer(pairs, false);
  const Mat3 t2 = normalizer(pairs, true);
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> rhs;
  for (int i = 0; i < 4; ++i) {
    const auto& p = pairs[static_cast<std::size_t>(i)];
    const Eigen::Vector3d s = t1 * Eigen::Vector3d(p.x, p.y, 1.0);
    const Eigen::Vector3d d = t2 * Eigen::Vector3d(p.x2, p.y2, 1.0);
    a.row(2 * i) << s.x(), s.y(), 1, 0, 0, 0, -d.x() * s.x(), -d.x() * s.y();
    a.row(2 * i + 1) << 0, 0, 0, s.x(), s.y(), 1, -d.y() * s.x(), -d.y() * s.y();
    rhs(2 * i) = d.x();
    rhs(2 * i + 1) = d.y();
  }
  const auto lu = a.fullPivLu();
  if (lu.rank() < 8) return std::nullopt;
  const Eigen::Matrix<double, 8, 1> h = lu.solve(rhs);
  Mat3 hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
  return from_eigen(t2.inverse() * hn * t1);
}

std::size_t count_inliers(std::span<const PointPair> pairs, const Homography& h, double threshold,
                          std::vector<std::uint8_t>* mask) {
  const auto inv = h.inverse();
  if (!inv) return 0;
  if (mask) mask->assign(pairs.size(), 0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (symmetric_transfer_error(h, *inv, pairs[i]) < threshold) {
      ++count;
      if (mask) (*mask)[i] = 1;
    }
  }
  return count;
}

}  // namespace

std::array<double, 2> Homography::apply(double x, double y) const {
  const double w = m[6] * x + m[7] * y + m[8];
  return {(m[0] * x + m[1] * y + m[2]) / w, (m[3] * x + m[4] * y + m[5]) / w};
}

std::optional<Homography> Homography::inverse() const {
  const Mat3 e = to_eigen(*this);
  const double det = e.determinant();
  if (!std::isfinite(det) || std::abs(det) < 1e-12) return std::nullopt;
  return from_eigen(e.inverse());
}

std::optional<Homography> fit_homography(std::span<const PointPair> pairs) {
  if (pairs.size() < 4) return std::nullopt;
  if (pairs.size() == 4) return fit_minimal(pairs);
  const Mat3 t1 = normalizer(pairs, false);
  const Mat3 t2 = normalizer(pairs, true);
  Eigen::MatrixXd a(2 * pairs.size(), 9);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    const Eigen::Vector3d s = t1 * Eigen::Vector3d(p.x, p.y, 1.0);
    const Eigen::Vector3d d = t2 * Eigen::Vector3d(p.x2, p.y2, 1.0);
    const auto r = static_cast<Eigen::Index>(2 * i);
    a.row(r) << -s.x(), -s.y(), -1, 0, 0, 0, d.x() * s.x(), d.x() * s.y(), d.x();
    a.row(r + 1) << 0, 0, 0, -s.x(), -s.y(), -1, d.y() * s.x(), d.y() * s.y(), d.y();
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  // A second (near-)null direction means the points do not pin down H.
  const auto& sv = svd.singularValues();
  if (sv(7) <= 1e-9 * sv(0)) return std::nullopt;
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Mat3 hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  const Mat3 full = t2.inverse() * hn * t1;
  if (std::abs(full.determinant()) < 1e-12) return std::nullopt;
  return from_eigen(full);
}

double symmetric_transfer_error(const Homography& h, const Homography& h_inv, const PointPair& p) {
  const auto fwd = h.apply(p.x, p.y);
  const auto bwd = h_inv.apply(p.x2, p.y2);
  const double e = (fwd[0] - p.x2) * (fwd[0] - p.x2) + (fwd[1] - p.y2) * (fwd[1] - p.y2) +
                   (bwd[0] - p.x) * (bwd[0] - p.x) + (bwd[1] - p.y) * (bwd[1] - p.y);
  return std::isfinite(e) ? std::sqrt(e) : std::numeric_limits<double>::infinity();
}

std::vector<std::array<std::size_t, 4>> ransac_schedule(std::size_t n, const RansacConfig& cfg) {
  std::vector<std::array<std::size_t, 4>> schedule;
  if (n < 4) return schedule;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  schedule.reserve(cfg.iterations);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::array<std::size_t, 4> s{};
    for (std::size_t k = 0; k < 4; ++k) {
      bool fresh = false;
      while (!fresh) {
        s[k] = pick(rng);
        fresh = std::find(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(k), s[k]) == s.begin() + static_cast<std::ptrdiff_t>(k);
      }
    }
    schedule.push_back(s);
  }
  return schedule;
}

RansacResult ransac_homography_scheduled(std::span<const PointPair> pairs,
                                         std::span<const std::array<std::size_t, 4>> schedule, double threshold_px) {
  if (!(threshold_px > 0)) throw ConfigError("ransac: inlier threshold must be positive");
  RansacResult result;
  if (pairs.size() < 4) return result;

  std::optional<Homography> best;
  std::size_t best_count = 0;
  for (const auto& idx : schedule) {
    if (degenerate_sample(pairs, idx)) continue;
    const PointPair sample[4] = {pairs[idx[0]], pairs[idx[1]], pairs[idx[2]], pairs[idx[3]]};
    const auto h = fit_minimal(sample);
    if (!h) continue;
    const auto count = count_inliers(pairs, *h, threshold_px, nullptr);
    if (count > best_count) {
      best_count = count;
      best = h;
    }
  }
  if (!best) return result;

  std::vector<std::uint8_t> mask;
  count_inliers(pairs, *best, threshold_px, &mask);
  std::vector<PointPair> consensus;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    if (mask[i]) consensus.push_back(pairs[i]);
  if (const auto refit = fit_homography(consensus)) {
    std::vector<std::uint8_t> refit_mask;
    const auto refit_count = count_inliers(pairs, *refit, threshold_px, &refit_mask);
    if (refit_count >= best_count) {
      best = refit;
      best_count = refit_count;
      mask = std::move(refit_mask);
    }
  }
  result.model = best;
  result.inliers = best_count;
  result.inlier_mask = std::move(mask);
  return result;
}

RansacResult ransac_homography(std::span<const PointPair> pairs, const RansacConfig& cfg) {
  if (!(cfg.threshold_px > 0)) throw ConfigError("ransac: inlier threshold must be positive");
  const auto schedule = ransac_schedule(pairs.size(), cfg);
  return ransac_homography_scheduled(pairs, schedule, cfg.threshold_px);
}

std::size_t gv_score(const ImageRecord& query, const ImageRecord& candidate, const GvConfig& cfg) {
  const auto matches = mutual_nn_matches(query.locals, candidate.locals, cfg.ratio);
  if (matches.size() < 4) return 0;
  std::vector<PointPair> pairs;
  pairs.reserve(matches.size());
  for (const auto& m : matches) {
    const auto& a = query.locals[m.index_a];
    const auto& b = candidate.locals[m.index_b];
    pairs.push_back({a.u, a.v, b.u, b.v});
  }
  const auto result = ransac_homography(pairs, {cfg.iterations, cfg.threshold_px, cfg.seed});
  return result.model ? result.inliers : 0;
}

}  // namespace rrt
