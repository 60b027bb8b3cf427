#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "msadm/common.hpp"
#include "msadm/rng.hpp"

namespace msadm {

struct ClusterModel {
  std::vector<std::vector<double>> centers;  // k x dim
  std::vector<int> assignments;              // one per input point
  std::vector<std::size_t> sizes;            // members per cluster
  int normal_index = 0;                      // largest cluster, ties to smallest index
  std::uint64_t seed = 0;
  double wcss = 0.0;
  int iterations = 0;
  bool converged = false;
  bool k_reduced = false;  // fewer distinct points than requested k
};

namespace detail {

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline int nearest_center(const std::vector<double>& p,
                          const std::vector<std::vector<double>>& centers) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const double d = sq_dist(p, centers[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

/// k-means++ seeding: first center uniform, later centers sampled with
/// probability proportional to squared distance from the nearest chosen one.
inline std::vector<std::vector<double>> kmeanspp_init(
    const std::vector<std::vector<double>>& points, std::size_t k, Rng& rng) {
  std::vector<std::vector<double>> centers;
  centers.reserve(k);
  centers.push_back(points[rng.index(points.size())]);
  std::vector<double> d2(points.size());
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, sq_dist(points[i], c));
      d2[i] = best;
      total += best;
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double cum = 0.0;
      pick = points.size() - 1;
      for (std::size_t i = 0; i < points.size(); ++i) {
        cum += d2[i];
        if (r < cum) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.index(points.size());
    }
    centers.push_back(points[pick]);
  }
  return centers;
}

inline std::size_t count_distinct(const std::vector<std::vector<double>>& points) {
  std::vector<std::vector<double>> sorted = points;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  return sorted.size();
}

}  // namespace detail

/// Lloyd's algorithm over k-means++ seeds. Stops when the assignment is a
/// fixed point of assign-then-update or after max_iters sweeps. Empty
/// clusters are reseeded to the point farthest from its current center.
inline ClusterModel kmeans(const std::vector<std::vector<double>>& points,
                           std::size_t k, std::uint64_t seed, int max_iters = 300) {
  if (points.empty()) throw std::invalid_argument("kmeans: no points");
  if (k == 0) throw std::invalid_argument("kmeans: k must be >= 1");
  const std::size_t dim = points[0].size();
  if (dim == 0) throw std::invalid_argument("kmeans: zero-dimensional points");
  for (const auto& p : points) {
    if (p.size() != dim) throw std::invalid_argument("kmeans: ragged point dimensions");
    for (double v : p) require_finite(v, "kmeans point coordinate");
  }

  ClusterModel model;
  const std::size_t distinct = detail::count_distinct(points);
  if (k > distinct) {
    k = distinct;
    model.k_reduced = true;
  }
  if (k > points.size()) k = points.size();

  Rng rng(seed);
  model.centers = detail::kmeanspp_init(points, k, rng);
  model.assignments.assign(points.size(), -1);

  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const int c = detail::nearest_center(points[i], model.centers);
      if (c != model.assignments[i]) {
        model.assignments[i] = c;
        changed = true;
      }
    }
    model.iterations = iter + 1;
    if (!changed) {
      model.converged = true;
      break;
    }

    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      const int c = model.assignments[i];
      for (std::size_t d = 0; d < dim; ++d) sums[c][d] += points[i][d];
      ++counts[c];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Reseed to the point farthest from its own center.
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
          const double d = detail::sq_dist(points[i], model.centers[model.assignments[i]]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        model.centers[c] = points[far];
      } else {
        for (std::size_t d = 0; d < dim; ++d)
          model.centers[c][d] = sums[c][d] / static_cast<double>(counts[c]);
      }
    }
  }

  model.sizes.assign(k, 0);
  model.wcss = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const int c = model.assignments[i];
    ++model.sizes[c];
    model.wcss += detail::sq_dist(points[i], model.centers[c]);
  }
  model.seed = seed;
  model.normal_index = 0;
  for (std::size_t c = 1; c < k; ++c)
    if (model.sizes[c] > model.sizes[static_cast<std::size_t>(model.normal_index)])
      model.normal_index = static_cast<int>(c);
  return model;
}

/// Elbow pick over wcss[k-1] for k = 1..K. Non-increasing repair first,
/// then the k in 2..K-1 with the largest second difference; ties go to the
/// smallest k. Degenerate curves (K < 3 or flat) fall back to the ends.
inline std::size_t select_k(std::vector<double> wcss_by_k) {
  if (wcss_by_k.empty()) throw std::invalid_argument("select_k: empty curve");
  for (double v : wcss_by_k) require_finite(v, "wcss value");
  for (std::size_t i = 1; i < wcss_by_k.size(); ++i)
    wcss_by_k[i] = std::min(wcss_by_k[i], wcss_by_k[i - 1]);

  const std::size_t K = wcss_by_k.size();
  if (wcss_by_k[0] - wcss_by_k[K - 1] <= 0.0) return 1;
  if (K < 3) return K;

  std::size_t best_k = 2;
  double best_d2 = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 2; k <= K - 1; ++k) {
    const double d2 = wcss_by_k[k - 2] - 2.0 * wcss_by_k[k - 1] + wcss_by_k[k];
    if (d2 > best_d2) {
      best_d2 = d2;
      best_k = k;
    }
  }
  return best_k;
}

}  // namespace msadm
