#include "bbw/trigger.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "bbw/dbscan.hpp"
#include "bbw/error.hpp"

namespace bbw {

namespace {

constexpr const char* kModelFormat = "bbw-trigger-model";
constexpr int kModelVersion = 1;
constexpr int kBisectionRounds = 100;

// Distance from every point to its nearest center.
std::vector<double> nearest_center_distances(const FeatureMatrix& centers,
                                             const FeatureMatrix& points) {
  std::vector<double> out(points.rows(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centers.rows(); ++c) {
      best = std::min(best, squared_distance(points.row(i), centers.row(c)));
    }
    out[i] = std::sqrt(best);
  }
  return out;
}

std::size_t count_below(const std::vector<double>& distances, double epsilon) {
  return static_cast<std::size_t>(
      std::count_if(distances.begin(), distances.end(), [&](double d) { return d < epsilon; }));
}

}  // namespace

void TriggerModel::validate() const {
  if (!(epsilon_bar > 0.0) || !std::isfinite(epsilon_bar)) {
    throw ConfigError("trigger model epsilon_bar must be positive and finite");
  }
  if (trigger_features.dim() == 0) throw ConfigError("trigger model has no feature dimension");
}

void ClusterSearchParams::validate(std::size_t rows) const {
  if (!(poisoning_ratio > 0.0 && poisoning_ratio <= 1.0)) {
    throw ConfigError("poisoning ratio must lie in (0, 1]");
  }
  if (tolerance == 0) throw ConfigError("search tolerance must be a positive integer");
  if (!(step > 0.0) || !std::isfinite(step)) throw ConfigError("search step must be positive");
  if (min_pts == 0) throw ConfigError("min_pts must be positive");
  if (max_iterations == 0) throw ConfigError("max_iterations must be positive");
  const double target = static_cast<double>(rows) * poisoning_ratio;
  if (target < 1.0) throw ConfigError("n * p must be at least 1");
  if (static_cast<double>(tolerance) >= target) {
    throw ConfigError("search tolerance " + std::to_string(tolerance) +
                      " must be smaller than n * p = " + std::to_string(target));
  }
}

TriggerModel trigger_cluster_search(const FeatureMatrix& features,
                                    const ClusterSearchParams& params) {
  if (features.empty()) throw EmptyInputError("trigger cluster search needs a non-empty feature matrix");
  params.validate(features.rows());
  const double target = static_cast<double>(features.rows()) * params.poisoning_ratio;
  const DistanceMatrix distances(features);

  double best_gap = std::numeric_limits<double>::infinity();
  double best_eps = params.step;
  std::vector<std::size_t> best_members;
  std::size_t iterations = 0;
  for (std::size_t iter = 1; iter <= params.max_iterations; ++iter) {
    iterations = iter;
    const double eps = static_cast<double>(iter) * params.step;
    const auto result = dbscan(distances, eps, params.min_pts);
    const std::size_t largest = result.largest_cluster();
    const std::size_t size = largest < result.clusters.size() ? result.clusters[largest].size() : 0;
    const double gap = std::abs(static_cast<double>(size) - target);
    if (gap < best_gap) {
      best_gap = gap;
      best_eps = eps;
      best_members = largest < result.clusters.size() ? result.clusters[largest]
                                                      : std::vector<std::size_t>{};
    }
    if (gap < static_cast<double>(params.tolerance)) {
      return TriggerModel{eps, features.select(result.clusters[largest]), DistanceMetric::Euclidean,
                          TriggerProvenance::CompactSearch, true, iter};
    }
    // Larger epsilon cannot split a cluster that already holds every row.
    if (size == features.rows()) break;
  }
  FeatureMatrix selected = features.select(best_members);
  if (selected.empty()) selected = FeatureMatrix(features.dim());
  return TriggerModel{best_eps, std::move(selected), DistanceMetric::Euclidean,
                      TriggerProvenance::CompactSearch, false, iterations};
}

TriggerModel random_trigger_select(const FeatureMatrix& train, const FeatureMatrix& substitute,
                                   double poisoning_ratio, std::uint64_t seed) {
  if (substitute.empty()) throw EmptyInputError("random trigger selection needs substitute rows");
  if (train.empty()) throw EmptyInputError("random trigger selection needs training rows");
  if (train.dim() != substitute.dim()) {
    throw FeatureDimensionError("training (" + std::to_string(train.dim()) +
                                ") and substitute (" + std::to_string(substitute.dim()) +
                                ") feature dimensions differ");
  }
  if (!(poisoning_ratio > 0.0 && poisoning_ratio <= 1.0)) {
    throw ConfigError("poisoning ratio must lie in (0, 1]");
  }

  const auto k = std::min<std::size_t>(
      train.rows(),
      static_cast<std::size_t>(std::ceil(static_cast<double>(train.rows()) * poisoning_ratio)));
  std::vector<std::size_t> order(train.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  order.resize(k);
  std::sort(order.begin(), order.end());
  FeatureMatrix centers = train.select(order);

  const auto distances = nearest_center_distances(centers, substitute);
  const double target = static_cast<double>(substitute.rows()) * poisoning_ratio;
  double upper = 0.0;
  for (std::size_t i = 0; i < substitute.rows(); ++i) {
    for (std::size_t c = 0; c < centers.rows(); ++c) {
      upper = std::max(upper, squared_distance(substitute.row(i), centers.row(c)));
    }
  }
  upper = std::sqrt(upper);

  // Smallest probed epsilon whose coverage reaches the target, bracketed by
  // the largest probed epsilon that stays below it.
  double lo = 0.0;
  double hi = upper > 0.0 ? upper : 1.0;
  std::size_t iterations = 0;
  for (int round = 0; round < kBisectionRounds; ++round) {
    ++iterations;
    const double mid = lo + (hi - lo) / 2.0;
    if (!(mid > lo && mid < hi)) break;
    if (static_cast<double>(count_below(distances, mid)) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  double eps = hi;
  if (lo > 0.0) {
    const double gap_hi = std::abs(static_cast<double>(count_below(distances, hi)) - target);
    const double gap_lo = std::abs(static_cast<double>(count_below(distances, lo)) - target);
    if (gap_lo < gap_hi) eps = lo;
  }
  return TriggerModel{eps, std::move(centers), DistanceMetric::Euclidean,
                      TriggerProvenance::RandomBaseline, true, iterations};
}

bool trigger_indicator(const TriggerModel& model, std::span<const double> feature) {
  if (feature.size() != model.dim()) {
    throw FeatureDimensionError("feature has dimension " + std::to_string(feature.size()) +
                                ", trigger model expects " + std::to_string(model.dim()));
  }
  const double eps2 = model.epsilon_bar * model.epsilon_bar;
  for (std::size_t i = 0; i < model.trigger_features.rows(); ++i) {
    if (squared_distance(feature, model.trigger_features.row(i)) < eps2) return true;
  }
  return false;
}

std::vector<bool> trigger_flags(const TriggerModel& model, const FeatureMatrix& features) {
  std::vector<bool> flags(features.rows(), false);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    flags[i] = trigger_indicator(model, features.row(i));
  }
  return flags;
}

std::size_t ball_coverage(const FeatureMatrix& centers, const FeatureMatrix& points,
                          double epsilon) {
  return count_below(nearest_center_distances(centers, points), epsilon);
}

double mean_pairwise_distance(const FeatureMatrix& features) {
  const std::size_t n = features.rows();
  if (n < 2) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      total += euclidean_distance(features.row(i), features.row(j));
    }
  }
  return total / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

std::string to_string(TriggerProvenance provenance) {
  return provenance == TriggerProvenance::CompactSearch ? "compact_search" : "random_baseline";
}

nlohmann::json to_json(const TriggerModel& model) {
  nlohmann::json rows = nlohmann::json::array();
  nlohmann::json keys = nlohmann::json::array();
  for (std::size_t i = 0; i < model.trigger_features.rows(); ++i) {
    const auto r = model.trigger_features.row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
    keys.push_back({model.trigger_features.key(i).image_id,
                    model.trigger_features.key(i).object_index});
  }
  return {
      {"format", kModelFormat},
      {"version", kModelVersion},
      {"epsilon_bar", model.epsilon_bar},
      {"metric", "euclidean"},
      {"provenance", to_string(model.provenance)},
      {"converged", model.converged},
      {"iterations", model.iterations},
      {"m", model.dim()},
      {"rows", std::move(rows)},
      {"keys", std::move(keys)},
  };
}

TriggerModel trigger_model_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format") != kModelFormat) throw FormatError("not a trigger model document");
    if (doc.at("version") != kModelVersion) throw FormatError("unsupported trigger model version");
    if (doc.at("metric") != "euclidean") throw FormatError("unsupported trigger model metric");
    TriggerModel model;
    model.epsilon_bar = doc.at("epsilon_bar").get<double>();
    const auto prov = doc.at("provenance").get<std::string>();
    if (prov == "compact_search") {
      model.provenance = TriggerProvenance::CompactSearch;
    } else if (prov == "random_baseline") {
      model.provenance = TriggerProvenance::RandomBaseline;
    } else {
      throw FormatError("unknown trigger provenance '" + prov + "'");
    }
    model.converged = doc.value("converged", true);
    model.iterations = doc.value("iterations", std::size_t{0});
    const auto m = doc.at("m").get<std::size_t>();
    model.trigger_features = FeatureMatrix(m);
    const auto& rows = doc.at("rows");
    const auto keys = doc.value("keys", nlohmann::json::array());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto row = rows[i].get<std::vector<double>>();
      ObjectKey key{"", i};
      if (i < keys.size()) key = {keys[i].at(0).get<std::string>(), keys[i].at(1).get<std::uint64_t>()};
      model.trigger_features.append(row, std::move(key));
    }
    model.validate();
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed trigger model: ") + e.what());
  }
}

void save_trigger_model(const std::filesystem::path& path, const TriggerModel& model) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write trigger model '" + path.string() + "'");
  out << to_json(model).dump(2) << '\n';
}

TriggerModel load_trigger_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trigger model '" + path.string() + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return trigger_model_from_json(doc);
}

}  // namespace bbw
