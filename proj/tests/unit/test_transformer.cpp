#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "sagvit/errors.hpp"
#include "sagvit/grad_check.hpp"
#include "sagvit/ops.hpp"
#include "sagvit/transformer.hpp"

using namespace sagvit;
using sagvit::testing::bitwise_equal;
using sagvit::testing::max_abs_diff;
using sagvit::testing::random_param;
using sagvit::testing::random_tensor;

namespace {

void randomize(ParameterStore& store, std::mt19937_64& rng, double lo = -0.5, double hi = 0.5) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& p : store.parameters())
    for (Eigen::Index i = 0; i < p.tensor.values().size(); ++i) p.tensor.values()[i] = dist(rng);
}

RowMatrix dense(const Tensor& t) { return t.as_matrix(); }

// Loop-level multi-head attention for checking self_attention.
RowMatrix attention_reference(const RowMatrix& x, const AttentionParams& p) {
  const auto proj = [&](const Tensor& w, const Tensor& b) {
    RowMatrix out(x.rows(), w.dim(0));
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (std::size_t o = 0; o < w.dim(0); ++o) {
        double acc = b[o];
        for (std::size_t c = 0; c < w.dim(1); ++c) acc += x(i, static_cast<Eigen::Index>(c)) * w.at(o, c);
        out(i, static_cast<Eigen::Index>(o)) = acc;
      }
    return out;
  };
  const RowMatrix q = proj(p.wq, p.bq), k = proj(p.wk, p.bk), v = proj(p.wv, p.bv);
  const Eigen::Index n = x.rows(), d = q.cols(), dk = d / static_cast<Eigen::Index>(p.n_heads);
  RowMatrix merged = RowMatrix::Zero(n, d);
  for (Eigen::Index h = 0; h < static_cast<Eigen::Index>(p.n_heads); ++h) {
    for (Eigen::Index i = 0; i < n; ++i) {
      std::vector<double> s(static_cast<std::size_t>(n));
      double mx = -INFINITY;
      for (Eigen::Index j = 0; j < n; ++j) {
        double dot = 0.0;
        for (Eigen::Index c = 0; c < dk; ++c) dot += q(i, h * dk + c) * k(j, h * dk + c);
        s[static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<double>(dk));
        mx = std::max(mx, s[static_cast<std::size_t>(j)]);
      }
      double z = 0.0;
      for (double& e : s) z += (e = std::exp(e - mx));
      for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index c = 0; c < dk; ++c) merged(i, h * dk + c) += s[static_cast<std::size_t>(j)] / z * v(j, h * dk + c);
    }
  }
  Tensor m = Tensor::matrix(merged);
  Tensor wo(p.wo.shape(), p.wo.values()), bo(p.bo.shape(), p.bo.values());
  return linear(m, wo, bo).as_matrix();
}

}  // namespace

TEST(PositionalEncoding, PositionZeroAlternatesZeroOne) {
  Tensor p = sinusoidal_encoding(3, 8);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(p.at(0, c), c % 2 == 0 ? 0.0 : 1.0);
}

TEST(PositionalEncoding, PositionOneDimFour) {
  Tensor p = sinusoidal_encoding(2, 4);
  EXPECT_NEAR(p.at(1, 0), std::sin(1.0), 1e-15);
  EXPECT_NEAR(p.at(1, 1), std::cos(1.0), 1e-15);
  EXPECT_NEAR(p.at(1, 2), std::sin(0.01), 1e-15);
  EXPECT_NEAR(p.at(1, 3), std::cos(0.01), 1e-15);
}

TEST(PositionalEncoding, NoneIsZeroAndOddDimRejected) {
  Tensor p = positional_encoding(5, 6, PosEncoding::none);
  EXPECT_EQ(p.shape(), (Shape{5, 6}));
  EXPECT_EQ(p.values().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(sinusoidal_encoding(4, 5), ConfigError);
  TransformerConfig cfg{5, 1, 1, 8, PosEncoding::sinusoidal};
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(PositionalEncoding, LearnedTableHasSmallStd) {
  ParameterStore store(1);
  TransformerConfig cfg{64, 4, 1, 32, PosEncoding::learned};
  TransformerEncoder enc(cfg, 64, store);
  const auto& v = store.get("encoder.pos").tensor.values();
  const double mean = v.mean();
  const double sd = std::sqrt((v.array() - mean).square().mean());
  EXPECT_NEAR(sd, 0.02, 0.002);
  EXPECT_NEAR(mean, 0.0, 0.002);
}

TEST(SelfAttention, SingleTokenAttendsToItself) {
  std::mt19937_64 rng(2);
  ParameterStore store(2);
  AttentionParams p = make_attention(store, "a", 4, 2);
  randomize(store, rng);
  Tensor x = random_tensor({1, 4}, rng);
  std::vector<Tensor> w;
  Tensor out = self_attention(x, p, &w);
  ASSERT_EQ(w.size(), 2u);
  for (const auto& a : w) EXPECT_EQ(a.item(), 1.0);
  Tensor expect = linear(linear(x, p.wv, p.bv), p.wo, p.bo);
  EXPECT_LE(max_abs_diff(out.values(), expect.values()), 1e-14);
}

TEST(SelfAttention, IdenticalTokensGetUniformWeights) {
  std::mt19937_64 rng(3);
  ParameterStore store(3);
  AttentionParams p = make_attention(store, "a", 6, 3);
  randomize(store, rng);
  Tensor row = random_tensor({1, 6}, rng);
  RowMatrix xs = row.as_matrix().replicate(5, 1);
  std::vector<Tensor> w;
  self_attention(Tensor::matrix(xs), p, &w);
  for (const auto& a : w)
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], 0.2, 1e-15);
}

TEST(SelfAttention, MatchesLoopReference) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    ParameterStore store(trial);
    AttentionParams p = make_attention(store, "a", 4, 2);
    randomize(store, rng, -1, 1);
    Tensor x = random_tensor({3, 4}, rng);
    Tensor out = self_attention(x, p);
    EXPECT_LE((dense(out) - attention_reference(dense(x), p)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(SelfAttention, RowsSumToOne) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t heads = 1 + rng() % 4, dk = 1 + rng() % 4, n = 1 + rng() % 9;
    ParameterStore store(trial);
    AttentionParams p = make_attention(store, "a", heads * dk, heads);
    randomize(store, rng, -2, 2);
    std::vector<Tensor> w;
    self_attention(random_tensor({n, heads * dk}, rng, -3, 3), p, &w);
    ASSERT_EQ(w.size(), heads);
    for (const auto& a : w) {
      const Eigen::VectorXd sums = a.as_matrix().rowwise().sum();
      EXPECT_LE((sums.array() - 1.0).abs().maxCoeff(), 1e-9);
    }
  }
}

TEST(EncoderBlock, ZeroedOutputProjectionsGiveIdentity) {
  std::mt19937_64 rng(6);
  ParameterStore store(6);
  TransformerConfig cfg{8, 2, 1, 16, PosEncoding::none};
  EncoderBlockParams b = make_encoder_block(store, "blk", cfg);
  randomize(store, rng);
  for (Tensor* t : {&b.attention.wo, &b.attention.bo, &b.ff2_weight, &b.ff2_bias}) t->values().setZero();
  Tensor x = random_tensor({5, 8}, rng);
  EXPECT_TRUE(bitwise_equal(encoder_block(x, b).values(), x.values()));
}

TEST(EncoderBlock, PreservesShape) {
  std::mt19937_64 rng(7);
  ParameterStore store(7);
  TransformerConfig cfg{12, 3, 2, 20, PosEncoding::sinusoidal};
  TransformerEncoder enc(cfg, 9, store);
  std::vector<std::vector<Tensor>> attn;
  Tensor out = enc.forward(enc.add_positions(random_tensor({9, 12}, rng)), &attn);
  EXPECT_EQ(out.shape(), (Shape{9, 12}));
  ASSERT_EQ(attn.size(), 2u);
  EXPECT_EQ(attn[0].size(), 3u);
  EXPECT_EQ(attn[1][2].shape(), (Shape{9, 9}));
  EXPECT_THROW(enc.add_positions(random_tensor({8, 12}, rng)), DimensionError);
}

TEST(EncoderBlock, GradientThroughTwoBlocks) {
  std::mt19937_64 rng(8);
  ParameterStore store(8);
  TransformerConfig cfg{4, 2, 2, 6, PosEncoding::learned};
  TransformerEncoder enc(cfg, 3, store);
  randomize(store, rng);
  for (const auto& name : {"encoder.block0.ln1.gain", "encoder.block0.ln2.gain", "encoder.block1.ln1.gain",
                           "encoder.block1.ln2.gain"})
    store.get(name).tensor.values().array() += 1.0;
  store.add("x", random_tensor({3, 4}, rng));
  Tensor x = store.get("x").tensor;
  Tensor probe = random_tensor({3, 4}, rng);
  auto report = grad_check([&] { return sum(mul(enc.forward(enc.add_positions(x)), probe)); }, store.parameters());
  EXPECT_LE(report.max_rel_error(), 1e-4) << report.worst().name;
}

TEST(GlobalMeanPool, SingleTokenAndPair) {
  Tensor one({1, 3}, {1.5, -2.0, 4.0});
  EXPECT_TRUE(bitwise_equal(global_mean_pool(one).values(), Eigen::Vector3d(1.5, -2.0, 4.0)));
  Tensor two({2, 2}, {1, 3, 3, 1});
  EXPECT_EQ(global_mean_pool(two).values(), Eigen::Vector2d(2, 2));
  EXPECT_THROW(global_mean_pool(Tensor({0, 4})), ContractError);
}

TEST(GlobalMeanPool, ExactlyPermutationInvariant) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng() % 30;
    Tensor x = random_tensor({n, 7}, rng, -1e3, 1e3);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    RowMatrix px(n, 7);
    for (std::size_t i = 0; i < n; ++i) px.row(static_cast<Eigen::Index>(i)) = x.as_matrix().row(static_cast<Eigen::Index>(perm[i]));
    EXPECT_TRUE(bitwise_equal(global_mean_pool(x).values(), global_mean_pool(Tensor::matrix(px)).values()));
  }
}

TEST(Classify, ZeroHeadIsUniform) {
  ParameterStore store(10);
  HeadParams head = make_head(store, "head", 4, 5);
  head.weight.values().setZero();
  Tensor p = classify(Tensor({4}, {1, 2, 3, 4}), head);
  for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(p[c], 0.2, 1e-15);
}

TEST(Classify, LargeBiasSaturates) {
  ParameterStore store(11);
  HeadParams head = make_head(store, "head", 3, 2);
  head.weight.values().setZero();
  head.bias.values() << 10, -10;
  Tensor p = classify(Tensor({3}, {0.1, 0.2, 0.3}), head);
  EXPECT_NEAR(p[0], 1.0, 1e-8);
  EXPECT_NEAR(p[1], 0.0, 1e-8);
}

TEST(Classify, ShiftKeepsArgmaxAndSumsToOne) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    ParameterStore store(trial);
    HeadParams head = make_head(store, "head", 6, 4);
    randomize(store, rng, -2, 2);
    Tensor z = random_tensor({6}, rng);
    Tensor p = classify(z, head);
    EXPECT_NEAR(p.values().sum(), 1.0, 1e-12);
    Eigen::Index a = 0, b = 0;
    p.values().maxCoeff(&a);
    head.bias.values().array() += 37.5;
    Tensor shifted = classify(z, head);
    shifted.values().maxCoeff(&b);
    EXPECT_EQ(a, b);
    EXPECT_LE(max_abs_diff(p.values(), shifted.values()), 1e-12);
  }
}

TEST(Classify, DimensionAndClassCountErrors) {
  ParameterStore store(13);
  EXPECT_THROW(make_head(store, "h1", 4, 1), ConfigError);
  HeadParams head = make_head(store, "h2", 4, 3);
  EXPECT_THROW(classify(Tensor({5}), head), DimensionError);
  TransformerConfig cfg{10, 4, 1, 8, PosEncoding::none};
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(TokenCorrelation, DuplicateAndNegatedRows) {
  Tensor x({3, 4}, {1, 2, 3, 5, 1, 2, 3, 5, -1, -2, -3, -5});
  Tensor c = token_correlation(x);
  EXPECT_NEAR(c.at(0, 1), 1.0, 1e-15);
  EXPECT_NEAR(c.at(0, 2), -1.0, 1e-15);
  EXPECT_EQ(c.at(2, 2), 1.0);
}

TEST(TokenCorrelation, MatchesPearsonOracle) {
  std::mt19937_64 rng(14);
  Tensor x = random_tensor({5, 16}, rng);
  Tensor c = token_correlation(x);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double mi = 0, mj = 0;
      for (std::size_t k = 0; k < 16; ++k) mi += x.at(i, k) / 16, mj += x.at(j, k) / 16;
      double sij = 0, sii = 0, sjj = 0;
      for (std::size_t k = 0; k < 16; ++k) {
        const double a = x.at(i, k) - mi, b = x.at(j, k) - mj;
        sij += a * b, sii += a * a, sjj += b * b;
      }
      EXPECT_NEAR(c.at(i, j), sij / std::sqrt(sii * sjj), 1e-10);
      EXPECT_EQ(c.at(i, j), c.at(j, i));
    }
}

TEST(TokenCorrelation, ConstantRowIsUncorrelated) {
  Tensor x({2, 3}, {4, 4, 4, 1, 2, 3});
  Tensor c = token_correlation(x);
  EXPECT_EQ(c.at(0, 1), 0.0);
  EXPECT_EQ(c.at(0, 0), 1.0);
}
