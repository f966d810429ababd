#include "bbw/dbscan.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "bbw/error.hpp"

namespace bbw {

std::size_t DbscanResult::largest_cluster() const noexcept {
  std::size_t best = clusters.size();
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    if (best == clusters.size() || clusters[c].size() > clusters[best].size() ||
        (clusters[c].size() == clusters[best].size() &&
         clusters[c].front() < clusters[best].front())) {
      best = c;
    }
  }
  return best;
}

DistanceMatrix::DistanceMatrix(const FeatureMatrix& features)
    : n_(features.rows()), d2_(n_ * n_, 0.0) {
  for (std::size_t i = 0; i < n_; ++i) {
    const auto ri = features.row(i);
    for (std::size_t j = i + 1; j < n_; ++j) {
      const double d = squared_distance(ri, features.row(j));
      d2_[i * n_ + j] = d;
      d2_[j * n_ + i] = d;
    }
  }
}

double DistanceMatrix::max_distance() const noexcept {
  double best = 0.0;
  for (double d : d2_) best = std::max(best, d);
  return std::sqrt(best);
}

DbscanResult dbscan(const FeatureMatrix& features, double epsilon, std::size_t min_pts) {
  return dbscan(DistanceMatrix(features), epsilon, min_pts);
}

DbscanResult dbscan(const DistanceMatrix& distances, double epsilon, std::size_t min_pts) {
  if (!(epsilon > 0.0)) throw ConfigError("dbscan epsilon must be positive");
  if (min_pts == 0) throw ConfigError("dbscan min_pts must be positive");
  const std::size_t n = distances.size();
  const double eps2 = epsilon * epsilon;

  std::vector<std::vector<std::size_t>> neighbors(n);
  std::vector<char> core(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (distances.squared(i, j) <= eps2) neighbors[i].push_back(j);
    }
    core[i] = neighbors[i].size() >= min_pts ? 1 : 0;
  }

  DbscanResult result;
  result.labels.assign(n, DbscanResult::kNoise);
  std::deque<std::size_t> frontier;
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (!core[seed] || result.labels[seed] != DbscanResult::kNoise) continue;
    const int id = static_cast<int>(result.clusters.size());
    result.clusters.emplace_back();
    result.labels[seed] = id;
    frontier.push_back(seed);
    while (!frontier.empty()) {
      const std::size_t p = frontier.front();
      frontier.pop_front();
      for (std::size_t q : neighbors[p]) {
        if (core[q] && result.labels[q] == DbscanResult::kNoise) {
          result.labels[q] = id;
          frontier.push_back(q);
        }
      }
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) continue;
    int best = DbscanResult::kNoise;
    for (std::size_t q : neighbors[i]) {
      if (core[q] && (best == DbscanResult::kNoise || result.labels[q] < best)) {
        best = result.labels[q];
      }
    }
    result.labels[i] = best;
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (result.labels[i] == DbscanResult::kNoise) {
      result.noise.push_back(i);
    } else {
      result.clusters[static_cast<std::size_t>(result.labels[i])].push_back(i);
    }
  }
  return result;
}

}  // namespace bbw
