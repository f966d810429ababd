#pragma once

#include <algorithm>
#include <cstddef>
#include <tuple>
#include <utility>
#include <vector>

// Enumerates every one-to-one matching over the admissible edges of one
// image and returns the one whose edges, sorted by (iou desc, f, g), form the
// lexicographically best sequence; a matching extending another wins.
namespace oracle {

struct Edge {
  double iou;
  std::size_t f;
  std::size_t g;
};

inline bool edge_before(const Edge& x, const Edge& y) {
  return std::make_tuple(-x.iou, x.f, x.g) < std::make_tuple(-y.iou, y.f, y.g);
}

inline bool better(std::vector<Edge> x, std::vector<Edge> y) {
  std::sort(x.begin(), x.end(), edge_before);
  std::sort(y.begin(), y.end(), edge_before);
  for (std::size_t i = 0; i < std::min(x.size(), y.size()); ++i) {
    if (edge_before(x[i], y[i])) return true;
    if (edge_before(y[i], x[i])) return false;
  }
  return x.size() > y.size();
}

inline void enumerate(const std::vector<Edge>& edges, std::size_t next, std::vector<char>& used_f,
                      std::vector<char>& used_g, std::vector<Edge>& current,
                      std::vector<Edge>& best) {
  if (next == edges.size()) {
    if (better(current, best)) best = current;
    return;
  }
  enumerate(edges, next + 1, used_f, used_g, current, best);
  const auto& e = edges[next];
  if (used_f[e.f] || used_g[e.g]) return;
  used_f[e.f] = used_g[e.g] = 1;
  current.push_back(e);
  enumerate(edges, next + 1, used_f, used_g, current, best);
  current.pop_back();
  used_f[e.f] = used_g[e.g] = 0;
}

inline std::vector<std::pair<std::size_t, std::size_t>> best_matching(
    const std::vector<Edge>& edges, std::size_t nf, std::size_t ng) {
  std::vector<char> used_f(nf, 0);
  std::vector<char> used_g(ng, 0);
  std::vector<Edge> current;
  std::vector<Edge> best;
  enumerate(edges, 0, used_f, used_g, current, best);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& e : best) out.emplace_back(e.f, e.g);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace oracle
