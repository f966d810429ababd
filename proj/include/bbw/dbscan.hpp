#pragma once

#include <cstddef>
#include <vector>

#include "bbw/features.hpp"

namespace bbw {

struct DbscanResult {
  static constexpr int kNoise = -1;

  // Per-row cluster id, or kNoise.
  std::vector<int> labels;
  // Member row indices per cluster, ascending. Cluster ids are ordered by the
  // row index of each cluster's first core point.
  std::vector<std::vector<std::size_t>> clusters;
  std::vector<std::size_t> noise;

  // Index of the cluster with the most members; ties go to the cluster whose
  // smallest member row index is lowest. Returns clusters.size() when there
  // are no clusters.
  std::size_t largest_cluster() const noexcept;
};

// Full matrix of squared Euclidean distances, reusable across many DBSCAN
// runs on the same rows (the trigger search sweeps epsilon).
class DistanceMatrix {
 public:
  explicit DistanceMatrix(const FeatureMatrix& features);

  std::size_t size() const noexcept { return n_; }
  double squared(std::size_t i, std::size_t j) const noexcept { return d2_[i * n_ + j]; }
  double max_distance() const noexcept;

 private:
  std::size_t n_ = 0;
  std::vector<double> d2_;
};

// Density-based clustering. A point is core when at least `min_pts` rows
// (itself included) lie within `epsilon` (inclusive). Clusters are the
// density-connected components of core points; a border point joins the
// lowest-id cluster among its core neighbours; the rest is noise.
DbscanResult dbscan(const FeatureMatrix& features, double epsilon, std::size_t min_pts);
DbscanResult dbscan(const DistanceMatrix& distances, double epsilon, std::size_t min_pts);

}  // namespace bbw
