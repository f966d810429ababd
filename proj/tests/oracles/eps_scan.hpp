#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

// Exhaustive scan over every distinct ball-union coverage count a radius can
// produce: the coverage only changes just above each point's nearest-center
// distance.
namespace oracle {

inline std::vector<double> nearest_center_distances(
    const std::vector<std::vector<double>>& centers, const std::vector<std::vector<double>>& points) {
  std::vector<double> out;
  for (const auto& p : points) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : centers) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < p.size(); ++k) d2 += (p[k] - c[k]) * (p[k] - c[k]);
      best = std::min(best, std::sqrt(d2));
    }
    out.push_back(best);
  }
  return out;
}

// Every count achievable by some radius in (0, max_radius] under a strict
// "distance < radius" rule.
inline std::vector<std::size_t> achievable_counts(std::vector<double> nearest, double max_radius) {
  std::sort(nearest.begin(), nearest.end());
  const auto zeros = static_cast<std::size_t>(
      std::count(nearest.begin(), nearest.end(), 0.0));
  std::vector<std::size_t> counts{zeros};
  for (std::size_t i = zeros; i < nearest.size(); ++i) {
    if (nearest[i] >= max_radius) break;
    if (i + 1 < nearest.size() && nearest[i + 1] == nearest[i]) continue;
    counts.push_back(i + 1);
  }
  return counts;
}

inline std::size_t best_gap(const std::vector<std::size_t>& counts, double target) {
  double gap = std::numeric_limits<double>::infinity();
  for (auto c : counts) gap = std::min(gap, std::abs(static_cast<double>(c) - target));
  return static_cast<std::size_t>(std::llround(gap * 2.0));  // half-units
}

}  // namespace oracle
