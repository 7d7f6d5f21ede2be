#include "sagvit/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sagvit {

EdgeList moore_edges(const PatchGrid& grid) {
  EdgeList edges;
  const auto rows = static_cast<long>(grid.rows), cols = static_cast<long>(grid.cols);
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) {
      const auto node = static_cast<std::size_t>(r * cols + c);
      for (long dr = -1; dr <= 1; ++dr) {
        for (long dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          const long rho = r + dr, kappa = c + dc;
          if (rho >= 0 && rho < rows && kappa >= 0 && kappa < cols) {
            edges.push_back({node, static_cast<std::size_t>(rho * cols + kappa)});
          }
        }
      }
    }
  }
  return edges;
}

EdgeList knn_edges(const PatchGrid& grid, std::size_t k) {
  const std::size_t n = grid.num_patches();
  if (k < 1 || k >= n) {
    throw ConfigError("knn_edges: k=" + std::to_string(k) + " must satisfy 1 <= k < |V|=" + std::to_string(n));
  }
  EdgeList edges;
  edges.reserve(n * k);
  std::vector<std::pair<std::size_t, std::size_t>> candidates;  // (squared distance, node)
  for (std::size_t u = 0; u < n; ++u) {
    const auto ur = static_cast<long>(u / grid.cols), uc = static_cast<long>(u % grid.cols);
    candidates.clear();
    for (std::size_t v = 0; v < n; ++v) {
      if (v == u) continue;
      const long dr = static_cast<long>(v / grid.cols) - ur, dc = static_cast<long>(v % grid.cols) - uc;
      candidates.emplace_back(static_cast<std::size_t>(dr * dr + dc * dc), v);
    }
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<long>(k), candidates.end());
    for (std::size_t i = 0; i < k; ++i) edges.push_back({u, candidates[i].second});
  }
  return edges;
}

namespace {

double squared_distance(const Tensor& features, std::size_t u, std::size_t v) {
  const auto X = features.as_matrix();
  return (X.row(static_cast<Eigen::Index>(u)) - X.row(static_cast<Eigen::Index>(v))).squaredNorm();
}

}  // namespace

double median_sigma_sq(const EdgeList& edges, const Tensor& features) {
  if (edges.empty()) return 1.0;
  std::vector<double> d2;
  d2.reserve(edges.size());
  for (const auto& e : edges) d2.push_back(squared_distance(features, e.src, e.dst));
  std::sort(d2.begin(), d2.end());
  const std::size_t m = d2.size();
  const double median = m % 2 == 1 ? d2[m / 2] : 0.5 * (d2[m / 2 - 1] + d2[m / 2]);
  return median > 0.0 ? median : 1.0;
}

PatchGraph weight_edges(const EdgeList& edges, const Tensor& features, std::optional<double> sigma_sq) {
  if (sigma_sq && !(*sigma_sq > 0.0)) {
    throw ConfigError("weight_edges: sigma^2 must be positive, got " + std::to_string(*sigma_sq));
  }
  PatchGraph g;
  g.num_nodes = features.rows();
  g.node_features = features;
  g.sigma_sq = sigma_sq ? *sigma_sq : median_sigma_sq(edges, features);
  g.edges.reserve(edges.size());
  for (const auto& e : edges) {
    if (e.src >= g.num_nodes || e.dst >= g.num_nodes) throw ContractError("weight_edges: edge endpoint out of range");
    if (e.src == e.dst) throw ContractError("weight_edges: self-loop " + std::to_string(e.src));
    // Clamped so that far-apart pairs keep a strictly positive weight.
    const double w = std::max(std::exp(-squared_distance(features, e.src, e.dst) / g.sigma_sq),
                              std::numeric_limits<double>::min());
    g.edges.push_back({e.src, e.dst, w});
  }
  std::stable_sort(g.edges.begin(), g.edges.end(), [](const auto& a, const auto& b) { return a.src < b.src; });
  return g;
}

PatchGraph build_graph(const PatchMatrix& patches, const NeighborhoodSpec& spec, std::optional<double> sigma_sq) {
  const EdgeList edges =
      spec.mode == Connectivity::moore ? moore_edges(patches.grid) : knn_edges(patches.grid, spec.k);
  return weight_edges(edges, patches, sigma_sq);
}

Tensor adjacency_dense(const PatchGraph& graph) {
  Tensor a(Shape{graph.num_nodes, graph.num_nodes});
  auto A = a.as_matrix();
  for (const auto& e : graph.edges) A(static_cast<Eigen::Index>(e.src), static_cast<Eigen::Index>(e.dst)) = e.weight;
  return a;
}

PatchGraph permute_graph(const PatchGraph& graph, const std::vector<std::size_t>& perm) {
  if (perm.size() != graph.num_nodes) throw ContractError("permute_graph: permutation size mismatch");
  PatchGraph out;
  out.num_nodes = graph.num_nodes;
  out.sigma_sq = graph.sigma_sq;
  const std::size_t f = graph.node_features.cols();
  Tensor x(Shape{graph.num_nodes, f});
  for (std::size_t i = 0; i < graph.num_nodes; ++i) {
    x.as_matrix().row(static_cast<Eigen::Index>(perm[i])) = graph.node_features.as_matrix().row(static_cast<Eigen::Index>(i));
  }
  out.node_features = x;
  for (const auto& e : graph.edges) out.edges.push_back({perm[e.src], perm[e.dst], e.weight});
  std::stable_sort(out.edges.begin(), out.edges.end(), [](const auto& a, const auto& b) { return a.src < b.src; });
  return out;
}

}  // namespace sagvit
