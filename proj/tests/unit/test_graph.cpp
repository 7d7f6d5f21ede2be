#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "helpers.hpp"
#include "oracles.hpp"
#include "sagvit/errors.hpp"
#include "sagvit/graph.hpp"

using namespace sagvit;
using namespace sagvit::testing;

namespace {

PatchGrid grid_of(std::size_t rows, std::size_t cols) { return {rows, cols, 1, 1}; }

std::set<std::size_t> neighbors_of(const EdgeList& edges, std::size_t u) {
  std::set<std::size_t> out;
  for (const auto& e : edges) {
    if (e.src == u) out.insert(e.dst);
  }
  return out;
}

EdgeList sorted(EdgeList e) {
  std::sort(e.begin(), e.end());
  return e;
}


}  // namespace

TEST(MooreEdges, TwoByTwoCorner) {
  EXPECT_EQ(neighbors_of(moore_edges(grid_of(2, 2)), 0), (std::set<std::size_t>{1, 2, 3}));
}

TEST(MooreEdges, ThreeByThreeDegrees) {
  const EdgeList e = moore_edges(grid_of(3, 3));
  EXPECT_EQ(neighbors_of(e, 4).size(), 8u);
  for (std::size_t corner : {0u, 2u, 6u, 8u}) EXPECT_EQ(neighbors_of(e, corner).size(), 3u);
  for (std::size_t side : {1u, 3u, 5u, 7u}) EXPECT_EQ(neighbors_of(e, side).size(), 5u);
}

TEST(MooreEdges, SingleNodeHasNoEdges) { EXPECT_TRUE(moore_edges(grid_of(1, 1)).empty()); }

TEST(MooreEdges, MatchesBruteForceUpToSixBySix) {
  for (std::size_t r = 1; r <= 6; ++r)
    for (std::size_t c = 1; c <= 6; ++c) {
      const EdgeList e = moore_edges(grid_of(r, c));
      EXPECT_EQ(sorted(e), sorted(brute_moore(r, c))) << r << "x" << c;
      const std::size_t expected = 2 * (r * (c - 1) + (r - 1) * c + 2 * (r - 1) * (c - 1));
      EXPECT_EQ(e.size(), expected) << r << "x" << c;
    }
}

TEST(KnnEdges, EightNearestOfCentreIsMoore) {
  const EdgeList knn = knn_edges(grid_of(3, 3), 8);
  EXPECT_EQ(neighbors_of(knn, 4), neighbors_of(moore_edges(grid_of(3, 3)), 4));
}

TEST(KnnEdges, TieBreaksByLowerIndex) {
  const EdgeList e = knn_edges(grid_of(1, 3), 1);
  EXPECT_EQ(e, (EdgeList{{0, 1}, {1, 0}, {2, 1}}));
}

TEST(KnnEdges, MaximalKIsCompleteWithoutSelfLoops) {
  const EdgeList e = knn_edges(grid_of(2, 3), 5);
  EXPECT_EQ(e.size(), 30u);
  for (std::size_t u = 0; u < 6; ++u) {
    auto nb = neighbors_of(e, u);
    EXPECT_EQ(nb.size(), 5u);
    EXPECT_FALSE(nb.count(u));
  }
}

TEST(KnnEdges, MatchesBruteForceUpToSixBySix) {
  for (std::size_t r = 1; r <= 6; ++r)
    for (std::size_t c = 1; c <= 6; ++c)
      for (std::size_t k = 1; k < r * c; ++k) {
        ASSERT_EQ(knn_edges(grid_of(r, c), k), brute_knn(r, c, k)) << r << "x" << c << " k=" << k;
      }
}

TEST(KnnEdges, OutOfRangeKIsConfigError) {
  EXPECT_THROW(knn_edges(grid_of(2, 2), 0), ConfigError);
  EXPECT_THROW(knn_edges(grid_of(2, 2), 4), ConfigError);
  EXPECT_THROW(knn_edges(grid_of(1, 1), 1), ConfigError);
}

TEST(WeightEdges, IdenticalFeaturesGiveWeightOne) {
  PatchGraph g = weight_edges(EdgeList{{0, 1}}, Tensor({2, 3}, {1, 2, 3, 1, 2, 3}), 0.7);
  EXPECT_EQ(g.edges.at(0).weight, 1.0);
}

TEST(WeightEdges, DistanceEqualSigmaGivesInverseE) {
  // |x0 - x1|^2 = 3^2 + 4^2 = 25.
  PatchGraph g = weight_edges(EdgeList{{0, 1}, {1, 0}}, Tensor({2, 2}, {0, 0, 3, 4}), 25.0);
  EXPECT_NEAR(g.edges[0].weight, 0.367879, 1e-6);
  EXPECT_EQ(g.edges[0].weight, std::exp(-1.0));
}

TEST(WeightEdges, NonAdjacentPairsAreAbsent) {
  std::mt19937_64 rng(1);
  PatchGraph g = weight_edges(EdgeList{{0, 1}, {1, 0}}, random_tensor({3, 2}, rng), std::nullopt);
  Tensor a = adjacency_dense(g);
  EXPECT_EQ(a.at(0, 2), 0.0);
  EXPECT_EQ(a.at(2, 1), 0.0);
  EXPECT_GT(a.at(0, 1), 0.0);
}

TEST(WeightEdges, MatchDirectFormula) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = 1 + rng() % 5, cols = 1 + rng() % 5;
    if (rows * cols < 2) continue;
    Tensor x = random_tensor({rows * cols, 6}, rng);
    const double sigma = 0.1 + (rng() % 100) / 10.0;
    PatchGraph g = weight_edges(moore_edges(grid_of(rows, cols)), x, sigma);
    for (const auto& e : g.edges) {
      EXPECT_NEAR(e.weight, direct_weight(x, e.src, e.dst, sigma), 1e-12);
      EXPECT_GT(e.weight, 0.0);
      EXPECT_LE(e.weight, 1.0);
    }
  }
}

TEST(WeightEdges, AutoSigmaIsMedianSquaredDistance) {
  std::mt19937_64 rng(3);
  for (std::size_t n : {2u, 3u, 4u, 5u}) {
    const PatchGrid grid = grid_of(1, n);
    const EdgeList edges = moore_edges(grid);
    Tensor x = random_tensor({n, 4}, rng);
    std::vector<double> d2;
    for (const auto& e : edges) d2.push_back(-std::log(direct_weight(x, e.src, e.dst, 1.0)));
    std::vector<double> copy = d2;
    const std::size_t m = copy.size();
    std::nth_element(copy.begin(), copy.begin() + m / 2, copy.end());
    double median = copy[m / 2];
    if (m % 2 == 0) {
      std::nth_element(copy.begin(), copy.begin() + m / 2 - 1, copy.end());
      median = 0.5 * (median + copy[m / 2 - 1]);
    }
    PatchGraph g = weight_edges(edges, x, std::nullopt);
    EXPECT_NEAR(g.sigma_sq, median, 1e-12 * median);
  }
}

TEST(WeightEdges, AutoSigmaFallsBackToOne) {
  PatchGraph g = weight_edges(moore_edges(grid_of(2, 2)), Tensor::full({4, 3}, 0.25), std::nullopt);
  EXPECT_EQ(g.sigma_sq, 1.0);
  EXPECT_EQ(weight_edges({}, Tensor::full({1, 3}, 0.25), std::nullopt).sigma_sq, 1.0);
}

TEST(WeightEdges, NonPositiveSigmaIsConfigError) {
  EXPECT_THROW(weight_edges({}, Tensor({2, 2}), 0.0), ConfigError);
  EXPECT_THROW(weight_edges({}, Tensor({2, 2}), -1.0), ConfigError);
}

TEST(WeightEdges, InvariantUnderFeatureComponentPermutation) {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({9, 5}, rng);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  Tensor y({9, 5});
  for (std::size_t r = 0; r < 9; ++r)
    for (std::size_t c = 0; c < 5; ++c) y.values()[static_cast<Eigen::Index>(r * 5 + c)] = x.at(r, perm[c]);
  const EdgeList edges = moore_edges(grid_of(3, 3));
  PatchGraph a = weight_edges(edges, x, std::nullopt), b = weight_edges(edges, y, std::nullopt);
  for (std::size_t i = 0; i < a.edges.size(); ++i) EXPECT_NEAR(a.edges[i].weight, b.edges[i].weight, 1e-14);
}

TEST(WeightEdges, AutoSigmaWeightsInvariantUnderUniformScaling) {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({12, 4}, rng);
  Tensor scaled(x.shape(), Eigen::VectorXd(x.values() * 7.5));
  const EdgeList edges = moore_edges(grid_of(3, 4));
  PatchGraph a = weight_edges(edges, x, std::nullopt), b = weight_edges(edges, scaled, std::nullopt);
  EXPECT_NEAR(b.sigma_sq, a.sigma_sq * 7.5 * 7.5, 1e-12 * b.sigma_sq);
  for (std::size_t i = 0; i < a.edges.size(); ++i) EXPECT_NEAR(a.edges[i].weight, b.edges[i].weight, 1e-12);
}

TEST(BuildGraph, EightByEightMapWithPatchFour) {
  std::mt19937_64 rng(6);
  PatchMatrix pm{random_tensor({4, 4 * 4 * 3}, rng), {2, 2, 4, 3}};
  PatchGraph g = build_graph(pm, {Connectivity::moore, 8}, std::nullopt);
  EXPECT_EQ(g.num_nodes, 4u);
  EXPECT_EQ(g.edges.size(), 12u);
  ASSERT_TRUE(g.grid.has_value());
  EXPECT_EQ(g.grid->num_patches(), 4u);
}

TEST(BuildGraph, SinglePatch) {
  PatchMatrix pm{Tensor({1, 8}), {1, 1, 2, 2}};
  PatchGraph g = build_graph(pm, {}, std::nullopt);
  EXPECT_EQ(g.num_nodes, 1u);
  EXPECT_TRUE(g.edges.empty());
}

TEST(BuildGraph, Deterministic) {
  std::mt19937_64 rng(7);
  PatchMatrix pm{random_tensor({9, 5}, rng), {3, 3, 1, 5}};
  for (auto mode : {Connectivity::moore, Connectivity::knn}) {
    PatchGraph a = build_graph(pm, {mode, 4}, std::nullopt), b = build_graph(pm, {mode, 4}, std::nullopt);
    ASSERT_EQ(a.edges.size(), b.edges.size());
    for (std::size_t i = 0; i < a.edges.size(); ++i) {
      EXPECT_EQ(a.edges[i].src, b.edges[i].src);
      EXPECT_EQ(a.edges[i].dst, b.edges[i].dst);
      EXPECT_EQ(a.edges[i].weight, b.edges[i].weight);
    }
  }
}

TEST(Adjacency, ConstantFeaturesOnTwoByTwo) {
  PatchMatrix pm{Tensor::full({4, 3}, 0.5), {2, 2, 1, 3}};
  Tensor a = adjacency_dense(build_graph(pm, {}, std::nullopt));
  for (std::size_t u = 0; u < 4; ++u)
    for (std::size_t v = 0; v < 4; ++v) EXPECT_EQ(a.at(u, v), u == v ? 0.0 : 1.0);
}

TEST(Adjacency, MooreIsSymmetricAndRowSumsMatchEdges) {
  std::mt19937_64 rng(8);
  PatchMatrix pm{random_tensor({20, 6}, rng), {4, 5, 1, 6}};
  PatchGraph g = build_graph(pm, {}, std::nullopt);
  Tensor a = adjacency_dense(g);
  const RowMatrix A = a.as_matrix();
  EXPECT_EQ(A, A.transpose());
  for (std::size_t u = 0; u < 20; ++u) {
    double s = 0.0;
    for (const auto& e : g.edges) {
      if (e.src == u) s += e.weight;
    }
    EXPECT_NEAR(A.row(static_cast<Eigen::Index>(u)).sum(), s, 1e-14);
    EXPECT_EQ(A(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(u)), 0.0);
  }
}
