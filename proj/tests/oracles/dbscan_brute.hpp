#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

// Density-connectivity reference: core points from direct neighbour counts,
// clusters from the transitive closure of the core-core reachability
// relation, border points attached to the adjacent cluster with the lowest
// core row.
namespace oracle {

struct Partition {
  std::vector<int> labels;  // -1 = noise; ids ordered by lowest core row
};

inline Partition brute_dbscan(const std::vector<std::vector<double>>& rows, double eps,
                              std::size_t min_pts) {
  const std::size_t n = rows.size();
  std::vector<std::vector<char>> near(n, std::vector<char>(n, 0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < rows[i].size(); ++k) {
        const double d = rows[i][k] - rows[j][k];
        d2 += d * d;
      }
      near[i][j] = d2 <= eps * eps ? 1 : 0;
    }
  }
  std::vector<char> core(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (std::size_t j = 0; j < n; ++j) c += near[i][j];
    core[i] = c >= min_pts ? 1 : 0;
  }
  // Warshall closure over core points.
  std::vector<std::vector<char>> reach(n, std::vector<char>(n, 0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) reach[i][j] = core[i] && core[j] && near[i][j];
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (!core[k]) continue;
    for (std::size_t i = 0; i < n; ++i) {
      if (!reach[i][k]) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (reach[k][j]) reach[i][j] = 1;
      }
    }
  }
  // Representative of a core point = lowest reachable core row.
  std::vector<std::size_t> rep(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!core[i]) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (reach[i][j]) {
        rep[i] = j;
        break;
      }
    }
  }
  std::vector<std::size_t> reps;
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i] && rep[i] == i) reps.push_back(i);
  }
  auto id_of = [&](std::size_t r) {
    return static_cast<int>(std::find(reps.begin(), reps.end(), r) - reps.begin());
  };
  Partition out;
  out.labels.assign(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) {
      out.labels[i] = id_of(rep[i]);
      continue;
    }
    std::size_t best = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (core[j] && near[i][j]) best = std::min(best, rep[j]);
    }
    if (best < n) out.labels[i] = id_of(best);
  }
  return out;
}

}  // namespace oracle
