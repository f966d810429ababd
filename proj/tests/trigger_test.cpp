#include "bbw/trigger.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "bbw/error.hpp"
#include "oracles/dbscan_brute.hpp"
#include "oracles/eps_scan.hpp"

namespace bbw {
namespace {

std::vector<std::vector<double>> blob(std::mt19937_64& rng, std::size_t n, double cx, double cy,
                                      double sd) {
  std::normal_distribution<double> noise(0.0, sd);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < n; ++i) rows.push_back({cx + noise(rng), cy + noise(rng)});
  return rows;
}

std::vector<std::vector<double>> to_rows(const FeatureMatrix& m) {
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < m.rows(); ++i) rows.emplace_back(m.row(i).begin(), m.row(i).end());
  return rows;
}

// Replays the epsilon sweep with the brute-force clustering.
struct SweepOutcome {
  double eps = 0.0;
  std::vector<std::size_t> members;
  bool converged = false;
};

SweepOutcome oracle_sweep(const std::vector<std::vector<double>>& rows,
                          const ClusterSearchParams& params) {
  const double target = static_cast<double>(rows.size()) * params.poisoning_ratio;
  for (std::size_t k = 1; k <= params.max_iterations; ++k) {
    const double eps = static_cast<double>(k) * params.step;
    const auto part = oracle::brute_dbscan(rows, eps, params.min_pts);
    int ids = 0;
    for (int l : part.labels) ids = std::max(ids, l + 1);
    std::vector<std::vector<std::size_t>> clusters(ids);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (part.labels[i] >= 0) clusters[part.labels[i]].push_back(i);
    }
    std::size_t best = clusters.size();
    for (std::size_t c = 0; c < clusters.size(); ++c) {
      if (best == clusters.size() || clusters[c].size() > clusters[best].size() ||
          (clusters[c].size() == clusters[best].size() && clusters[c][0] < clusters[best][0])) {
        best = c;
      }
    }
    const std::size_t size = best < clusters.size() ? clusters[best].size() : 0;
    if (std::abs(static_cast<double>(size) - target) < static_cast<double>(params.tolerance)) {
      return {eps, clusters[best], true};
    }
  }
  return {};
}

TEST(ClusterSearchTest, FindsTightBlob) {
  std::mt19937_64 rng(1);
  auto rows = blob(rng, 90, 0, 0, 1.0);
  const auto tight = blob(rng, 10, 8, 8, 0.01);
  rows.insert(rows.begin() + 40, tight.begin(), tight.end());
  ClusterSearchParams params;
  params.poisoning_ratio = 0.1;
  params.tolerance = 2;
  params.step = 0.005;
  const auto model = trigger_cluster_search(FeatureMatrix::from_rows(rows), params);
  ASSERT_TRUE(model.converged);
  ASSERT_EQ(model.trigger_features.rows(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(model.trigger_features.key(i).object_index, 40 + i);
  }
  const auto expected = oracle_sweep(rows, params);
  EXPECT_TRUE(expected.converged);
  EXPECT_DOUBLE_EQ(model.epsilon_bar, expected.eps);
  EXPECT_EQ(model.iterations, static_cast<std::size_t>(std::llround(expected.eps / params.step)));
}

TEST(ClusterSearchTest, AgreesWithOracleSweep) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 8; ++trial) {
    auto rows = blob(rng, 40, 0, 0, 1.0);
    const auto extra = blob(rng, 12, 3, -2, 0.2 + 0.05 * trial);
    rows.insert(rows.end(), extra.begin(), extra.end());
    ClusterSearchParams params;
    params.poisoning_ratio = 0.2;
    params.tolerance = 2;
    params.step = 0.02;
    params.min_pts = 3;
    params.max_iterations = 400;
    const auto model = trigger_cluster_search(FeatureMatrix::from_rows(rows), params);
    const auto expected = oracle_sweep(rows, params);
    ASSERT_EQ(model.converged, expected.converged) << "trial " << trial;
    if (!expected.converged) continue;
    EXPECT_DOUBLE_EQ(model.epsilon_bar, expected.eps);
    ASSERT_EQ(model.trigger_features.rows(), expected.members.size());
    for (std::size_t i = 0; i < expected.members.size(); ++i) {
      EXPECT_EQ(model.trigger_features.key(i).object_index, expected.members[i]);
    }
  }
}

TEST(ClusterSearchTest, FullCoverageTarget) {
  std::mt19937_64 rng(3);
  const auto rows = blob(rng, 30, 0, 0, 1.0);
  ClusterSearchParams params;
  params.poisoning_ratio = 1.0;
  params.tolerance = 1;
  params.step = 0.05;
  params.min_pts = 2;
  const auto model = trigger_cluster_search(FeatureMatrix::from_rows(rows), params);
  EXPECT_TRUE(model.converged);
  EXPECT_EQ(model.trigger_features.rows(), rows.size());
}

TEST(ClusterSearchTest, ExhaustedBudgetIsBestEffort) {
  std::mt19937_64 rng(4);
  const auto rows = blob(rng, 50, 0, 0, 1.0);
  ClusterSearchParams params;
  params.poisoning_ratio = 0.2;
  params.tolerance = 1;
  params.step = 1e-6;
  params.max_iterations = 1;
  const auto model = trigger_cluster_search(FeatureMatrix::from_rows(rows), params);
  EXPECT_FALSE(model.converged);
  EXPECT_EQ(model.iterations, 1u);
  EXPECT_DOUBLE_EQ(model.epsilon_bar, 1e-6);
}

TEST(ClusterSearchTest, InvalidParams) {
  const auto m = FeatureMatrix::from_rows({{0.0}, {1.0}, {2.0}, {3.0}});
  ClusterSearchParams params;
  params.poisoning_ratio = 0.5;
  params.tolerance = 2;  // == n*p
  EXPECT_THROW(trigger_cluster_search(m, params), ConfigError);
  params.tolerance = 1;
  params.poisoning_ratio = 0.1;  // n*p < 1
  EXPECT_THROW(trigger_cluster_search(m, params), ConfigError);
  params.poisoning_ratio = 0.5;
  params.step = 0.0;
  EXPECT_THROW(trigger_cluster_search(m, params), ConfigError);
  EXPECT_THROW(trigger_cluster_search(FeatureMatrix(1), ClusterSearchParams{}), EmptyInputError);
}

TEST(RandomTriggerTest, CoverageIsOptimalOverExhaustiveScan) {
  std::mt19937_64 rng(8);
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto train = FeatureMatrix::from_rows(blob(rng, 40, 0, 0, 1.0));
    const auto sub = FeatureMatrix::from_rows(blob(rng, 20, 0.3, 0, 1.2));
    const double p = 0.2;  // target 4 of 20
    const auto model = random_trigger_select(train, sub, p, seed);
    EXPECT_EQ(model.provenance, TriggerProvenance::RandomBaseline);
    EXPECT_EQ(model.trigger_features.rows(), 8u);
    const auto nearest =
        oracle::nearest_center_distances(to_rows(model.trigger_features), to_rows(sub));
    double max_radius = 0.0;
    for (const auto& c : to_rows(model.trigger_features)) {
      for (const auto& s : to_rows(sub)) {
        double d2 = 0.0;
        for (std::size_t k = 0; k < 2; ++k) d2 += (c[k] - s[k]) * (c[k] - s[k]);
        max_radius = std::max(max_radius, std::sqrt(d2));
      }
    }
    const auto counts = oracle::achievable_counts(nearest, max_radius);
    const std::size_t got = ball_coverage(model.trigger_features, sub, model.epsilon_bar);
    EXPECT_EQ(std::llround(std::abs(static_cast<double>(got) - 4.0) * 2.0),
              static_cast<long long>(oracle::best_gap(counts, 4.0)))
        << "seed " << seed << " coverage " << got;
    EXPECT_GE(got, 3u);
    EXPECT_LE(got, 5u);
  }
}

TEST(RandomTriggerTest, DisjointSupportsGiveZeroCoverage) {
  std::mt19937_64 rng(9);
  const auto train = FeatureMatrix::from_rows(blob(rng, 10, 0, 0, 0.1));
  const auto sub = FeatureMatrix::from_rows(blob(rng, 20, 100, 100, 0.1));
  const auto model = random_trigger_select(train, sub, 0.01, 1);  // target 0.2
  EXPECT_GT(model.epsilon_bar, 0.0);
  EXPECT_EQ(ball_coverage(model.trigger_features, sub, model.epsilon_bar), 0u);
}

TEST(RandomTriggerTest, SeedDeterminism) {
  std::mt19937_64 rng(10);
  const auto train = FeatureMatrix::from_rows(blob(rng, 100, 0, 0, 1.0));
  const auto sub = FeatureMatrix::from_rows(blob(rng, 100, 0, 0, 1.0));
  const auto a = random_trigger_select(train, sub, 0.05, 42);
  const auto b = random_trigger_select(train, sub, 0.05, 42);
  const auto c = random_trigger_select(train, sub, 0.05, 43);
  EXPECT_EQ(a.trigger_features, b.trigger_features);
  EXPECT_EQ(a.epsilon_bar, b.epsilon_bar);
  EXPECT_NE(a.trigger_features, c.trigger_features);
}

TEST(RandomTriggerTest, Errors) {
  const auto m = FeatureMatrix::from_rows({{0.0, 1.0}});
  EXPECT_THROW(random_trigger_select(m, FeatureMatrix(2), 0.1, 0), EmptyInputError);
  EXPECT_THROW(random_trigger_select(m, FeatureMatrix::from_rows({{1.0}}), 0.1, 0),
               FeatureDimensionError);
}

TEST(TriggerIndicatorTest, StrictBallMembership) {
  TriggerModel model;
  model.epsilon_bar = 1.0;
  model.trigger_features = FeatureMatrix::from_rows({{0.0, 0.0}, {5.0, 0.0}});
  const std::vector<double> inside{0.5, 0.5}, edge{1.0, 0.0}, near_second{5.9, 0.0},
      outside{2.5, 0.0};
  EXPECT_TRUE(trigger_indicator(model, inside));
  EXPECT_FALSE(trigger_indicator(model, edge));
  EXPECT_TRUE(trigger_indicator(model, near_second));
  EXPECT_FALSE(trigger_indicator(model, outside));
  const std::vector<double> wrong{1.0};
  EXPECT_THROW(trigger_indicator(model, wrong), FeatureDimensionError);
}

TEST(TriggerIndicatorTest, FlagsMatchIndicator) {
  std::mt19937_64 rng(12);
  TriggerModel model;
  model.epsilon_bar = 0.5;
  model.trigger_features = FeatureMatrix::from_rows(blob(rng, 5, 0, 0, 1.0));
  const auto pts = FeatureMatrix::from_rows(blob(rng, 200, 0, 0, 1.5));
  const auto flags = trigger_flags(model, pts);
  std::size_t count = 0;
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    EXPECT_EQ(flags[i], trigger_indicator(model, pts.row(i)));
    count += flags[i];
  }
  EXPECT_EQ(count, ball_coverage(model.trigger_features, pts, model.epsilon_bar));
}

TEST(TriggerModelFileTest, RoundTrip) {
  std::mt19937_64 rng(13);
  auto rows = blob(rng, 4, 1, 2, 0.3);
  TriggerModel model{0.123456789012345, FeatureMatrix::from_rows(rows, {{"a", 0}, {"a", 1}, {"b,c", 0}, {"d", 7}}),
                     DistanceMetric::Euclidean, TriggerProvenance::RandomBaseline, false, 77};
  const auto path = std::filesystem::path(::testing::TempDir()) / "bbw_trigger_roundtrip.model";
  save_trigger_model(path, model);
  const auto back = load_trigger_model(path);
  EXPECT_EQ(back.epsilon_bar, model.epsilon_bar);
  EXPECT_EQ(back.trigger_features, model.trigger_features);
  EXPECT_EQ(back.provenance, model.provenance);
  EXPECT_EQ(back.converged, model.converged);
  EXPECT_EQ(back.iterations, model.iterations);
}

TEST(TriggerModelFileTest, RejectsGarbage) {
  const auto path = std::filesystem::path(::testing::TempDir()) / "bbw_trigger_garbage.model";
  std::ofstream(path) << "{\"format\":\"something-else\"}";
  EXPECT_THROW(load_trigger_model(path), Error);
  EXPECT_THROW(load_trigger_model("/nonexistent/x.model"), IoError);
}

}  // namespace
}  // namespace bbw
