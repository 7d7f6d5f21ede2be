#pragma once

#include <optional>
#include <vector>

#include "sagvit/patching.hpp"

namespace sagvit {

enum class Connectivity { moore, knn };

struct NeighborhoodSpec {
  Connectivity mode = Connectivity::moore;
  std::size_t k = 8;  // knn only
};

// `dst` is a neighbor of `src`: src attends to / aggregates from dst.
struct DirectedEdge {
  std::size_t src = 0;
  std::size_t dst = 0;
  friend bool operator==(const DirectedEdge&, const DirectedEdge&) = default;
  friend auto operator<=>(const DirectedEdge&, const DirectedEdge&) = default;
};
using EdgeList = std::vector<DirectedEdge>;

struct WeightedEdge {
  std::size_t src = 0;
  std::size_t dst = 0;
  double weight = 1.0;  // in (0, 1]
};

struct PatchGraph {
  std::size_t num_nodes = 0;
  std::vector<WeightedEdge> edges;  // grouped by src, ascending
  Tensor node_features;             // [num_nodes x F]
  double sigma_sq = 1.0;
  std::optional<PatchGrid> grid;
};

// 8-connectivity over the patch grid; edges emitted per node in (dr, dc) raster order.
EdgeList moore_edges(const PatchGrid& grid);
// k spatially nearest nodes per node, ties broken by ascending node index.
EdgeList knn_edges(const PatchGrid& grid, std::size_t k);

// Median of squared feature distances over the edges, or 1.0 when that is zero/empty.
double median_sigma_sq(const EdgeList& edges, const Tensor& features);

// Gaussian similarity weights exp(-|x_u - x_v|^2 / sigma^2). `sigma_sq` unset selects the median heuristic.
PatchGraph weight_edges(const EdgeList& edges, const Tensor& features, std::optional<double> sigma_sq);
inline PatchGraph weight_edges(const EdgeList& edges, const PatchMatrix& patches, std::optional<double> sigma_sq) {
  PatchGraph g = weight_edges(edges, patches.features, sigma_sq);
  g.grid = patches.grid;
  return g;
}

PatchGraph build_graph(const PatchMatrix& patches, const NeighborhoodSpec& spec, std::optional<double> sigma_sq);

Tensor adjacency_dense(const PatchGraph& graph);

// Relabels nodes: node i becomes perm[i]. Features rows and edge endpoints move together.
PatchGraph permute_graph(const PatchGraph& graph, const std::vector<std::size_t>& perm);

}  // namespace sagvit
