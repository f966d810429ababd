#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bbw/features.hpp"

namespace bbw {

enum class DistanceMetric { Euclidean };
enum class TriggerProvenance { CompactSearch, RandomBaseline };

// Ball-union trigger region: an object is a trigger when its feature vector
// lies strictly within epsilon_bar of some row of trigger_features.
struct TriggerModel {
  double epsilon_bar = 1.0;
  FeatureMatrix trigger_features;
  DistanceMetric metric = DistanceMetric::Euclidean;
  TriggerProvenance provenance = TriggerProvenance::CompactSearch;
  bool converged = true;
  std::size_t iterations = 0;

  std::size_t dim() const noexcept { return trigger_features.dim(); }
  void validate() const;
};

struct ClusterSearchParams {
  double poisoning_ratio = 0.02;
  std::size_t tolerance = 5;
  double step = 0.01;
  std::size_t min_pts = 5;
  std::size_t max_iterations = 10000;

  // Checks ranges and that tolerance < n * poisoning_ratio for `rows` rows.
  void validate(std::size_t rows) const;
};

// Sweeps epsilon = step, 2*step, ... running DBSCAN and stops as soon as the
// largest cluster C satisfies |size(C) - n*p| < tolerance. When the budget
// is exhausted (or every row has merged into one cluster) the iteration
// whose largest cluster came closest to n*p is returned with
// converged = false.
TriggerModel trigger_cluster_search(const FeatureMatrix& features,
                                    const ClusterSearchParams& params);

// Ablation baseline: ceil(n*p) uniformly sampled training rows, with
// epsilon_bar bisected over (0, D] so the ball union covers the number of
// substitute rows closest to n_sub * p.
TriggerModel random_trigger_select(const FeatureMatrix& train, const FeatureMatrix& substitute,
                                   double poisoning_ratio, std::uint64_t seed);

bool trigger_indicator(const TriggerModel& model, std::span<const double> feature);
std::vector<bool> trigger_flags(const TriggerModel& model, const FeatureMatrix& features);

// Number of substitute rows whose nearest center is strictly closer than
// epsilon.
std::size_t ball_coverage(const FeatureMatrix& centers, const FeatureMatrix& points,
                          double epsilon);

double mean_pairwise_distance(const FeatureMatrix& features);

nlohmann::json to_json(const TriggerModel& model);
TriggerModel trigger_model_from_json(const nlohmann::json& doc);
void save_trigger_model(const std::filesystem::path& path, const TriggerModel& model);
TriggerModel load_trigger_model(const std::filesystem::path& path);

std::string to_string(TriggerProvenance provenance);

}  // namespace bbw
