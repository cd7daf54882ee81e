#include <gtest/gtest.h>

#include <random>

#include "fresco/fusion.hpp"
#include "oracles.hpp"

using namespace fresco;

namespace {

std::vector<TileContribution> contributions(const oracle::FusionInstance& in) {
  std::vector<TileContribution> out;
  for (const auto& t : in.tiles) {
    out.push_back({t.pred, t.rect, WeightMap(t.rect.height, t.rect.width, t.weights)});
  }
  return out;
}

}  // namespace

TEST(Accumulator, SingleUnitTileReproducesPrediction) {
  LatentTensor pred(Shape{2, 1, 3, 3});
  for (std::size_t k = 0; k < pred.size(); ++k) pred.data()[k] = float(k) - 4.0f;
  FusionAccumulator acc(pred.shape());
  acc.accumulate(pred, Rect{0, 0, 3, 3}, WeightMap::ones(3, 3));
  EXPECT_EQ(fuse_md(acc), pred);
}

TEST(Accumulator, WeightedMeanAtSharedCell) {
  FusionAccumulator acc(Shape{1, 1, 1, 3});
  acc.accumulate(LatentTensor(Shape{1, 1, 1, 2}, 2.0f), Rect{0, 0, 1, 2},
                 WeightMap(1, 2, {1.0f, 0.25f}));
  acc.accumulate(LatentTensor(Shape{1, 1, 1, 2}, 6.0f), Rect{0, 1, 1, 2},
                 WeightMap(1, 2, {0.75f, 1.0f}));
  const auto y = fuse_md(acc);
  EXPECT_FLOAT_EQ(y.data()[0], 2.0f);
  EXPECT_FLOAT_EQ(y.data()[1], (0.25f * 2 + 0.75f * 6) / 1.0f);
  EXPECT_FLOAT_EQ(y.data()[2], 6.0f);
}

TEST(Accumulator, ShapeChecks) {
  FusionAccumulator acc(Shape{1, 1, 4, 4});
  EXPECT_THROW(acc.accumulate(LatentTensor(Shape{1, 1, 2, 2}), Rect{3, 3, 2, 2}, WeightMap::ones(2, 2)),
               BoundsError);
  EXPECT_THROW(acc.accumulate(LatentTensor(Shape{1, 1, 2, 2}), Rect{0, 0, 2, 2}, WeightMap::ones(2, 3)),
               ShapeError);
  EXPECT_THROW(acc.accumulate(LatentTensor(Shape{2, 1, 2, 2}), Rect{0, 0, 2, 2}, WeightMap::ones(2, 2)),
               ShapeError);
}

TEST(Accumulator, UncoveredCellIsCoverageError) {
  FusionAccumulator acc(Shape{1, 1, 2, 2});
  acc.accumulate(LatentTensor(Shape{1, 1, 1, 2}), Rect{0, 0, 1, 2}, WeightMap::ones(1, 2));
  EXPECT_THROW(fuse_md(acc), CoverageError);
  const LatentTensor x(Shape{1, 1, 2, 2});
  EXPECT_THROW(fuse_fd_flow(acc, x, x, 0.0, 0.5), CoverageError);
  // A positive prior term alone keeps the system solvable.
  EXPECT_NO_THROW(fuse_fd_flow(acc, x, x, 1.0, 0.5));
}

TEST(Accumulator, MergeMatchesSequential) {
  std::mt19937_64 rng(21);
  const auto in = oracle::random_instance(rng, 0.5);
  FusionAccumulator all = oracle::accumulate(in);
  FusionAccumulator a(in.shape), b(in.shape);
  for (std::size_t k = 0; k < in.tiles.size(); ++k) {
    const auto& t = in.tiles[k];
    (k % 2 ? b : a).accumulate(t.pred, t.rect, WeightMap(t.rect.height, t.rect.width, t.weights));
  }
  a.merge(b);
  for (std::size_t k = 0; k < all.num().size(); ++k) EXPECT_NEAR(a.num()[k], all.num()[k], 1e-12);
  for (std::size_t k = 0; k < all.den().size(); ++k) EXPECT_NEAR(a.den()[k], all.den()[k], 1e-12);
}

TEST(FuseFlow, NoTilesGivesPriorCleanEstimate) {
  std::mt19937_64 rng(22);
  std::normal_distribution<float> g;
  const Shape s{2, 2, 3, 3};
  LatentTensor x(s), p(s);
  for (float& v : x.data()) v = g(rng);
  for (float& v : p.data()) v = g(rng);
  const FusionAccumulator empty(s);
  for (double sigma : {0.2, 0.5, 1.0}) {
    const auto y = fuse_fd_flow(empty, x, p, 1.5, sigma);
    for (std::size_t k = 0; k < y.size(); ++k) {
      EXPECT_NEAR(x.data()[k] - sigma * y.data()[k], p.data()[k], 1e-5);
    }
    const auto e = fuse_fd_eps(empty, x, p, 1.5, 1.0 - sigma * sigma * 0.5);
    const double alpha = 1.0 - sigma * sigma * 0.5;
    for (std::size_t k = 0; k < e.size(); ++k) {
      EXPECT_NEAR((x.data()[k] - std::sqrt(1 - alpha) * e.data()[k]) / std::sqrt(alpha), p.data()[k],
                  1e-5);
    }
  }
}

TEST(FuseFlow, DomainErrors) {
  const Shape s{1, 1, 2, 2};
  FusionAccumulator acc(s);
  acc.accumulate(LatentTensor(s, 1.0f), Rect{0, 0, 2, 2}, WeightMap::ones(2, 2));
  const LatentTensor x(s);
  EXPECT_THROW(fuse_fd_flow(acc, x, x, -1.0, 0.5), DomainError);
  EXPECT_THROW(fuse_fd_flow(acc, x, x, 1.0, 0.0), DomainError);
  EXPECT_NO_THROW(fuse_fd_flow(acc, x, x, 0.0, 0.0));
  EXPECT_THROW(fuse_fd_eps(acc, x, x, 1.0, 0.0), DomainError);
  EXPECT_THROW(fuse_fd_eps(acc, x, x, 1.0, 1.0), DomainError);
  EXPECT_THROW(fuse_fd_flow(acc, LatentTensor(Shape{1, 1, 2, 3}), x, 1.0, 0.5), ShapeError);
  EXPECT_THROW(fuse_fd_flow(acc, x, x, PriorStrength::spatial(3, 2, std::vector<float>(6)), 0.5),
               ShapeError);
}

TEST(FuseFlow, LambdaZeroIsBitIdenticalToMd) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const auto in = oracle::random_instance(rng, 0.5);
    const auto acc = oracle::accumulate(in);
    EXPECT_EQ(fuse_fd_flow(acc, in.x_t, in.x_prior, 0.0, 0.5), fuse_md(acc));
    EXPECT_EQ(fuse_fd_eps(acc, in.x_t, in.x_prior, 0.0, 0.7), fuse_md(acc));
  }
}

TEST(FuseFlow, MatchesQuadraticOracle) {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 300; ++trial) {
    for (double sigma : {0.2, 0.5, 1.0}) {
      const auto in = oracle::random_instance(rng, sigma);
      const auto got = fuse_fd_flow(oracle::accumulate(in), in.x_t, in.x_prior, oracle::strength(in), sigma);
      ASSERT_LE(oracle::max_rel_error(got, oracle::fd_flow(in)), 1e-5);
    }
  }
}

TEST(FuseEps, MatchesQuadraticOracle) {
  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 300; ++trial) {
    for (double alpha : {0.96, 0.75, 0.5, 0.1}) {
      const auto in = oracle::random_instance(rng, 1.0);
      const auto got = fuse_fd_eps(oracle::accumulate(in), in.x_t, in.x_prior, oracle::strength(in), alpha);
      ASSERT_LE(oracle::max_rel_error(got, oracle::fd_eps(in, alpha)), 1e-5);
    }
  }
}

TEST(FuseMd, MatchesDenseLoop) {
  std::mt19937_64 rng(26);
  for (int trial = 0; trial < 200; ++trial) {
    const auto in = oracle::random_instance(rng, 1.0);
    ASSERT_LE(oracle::max_abs_error(fuse_md(oracle::accumulate(in)), oracle::md(in)), 1e-6);
  }
}

TEST(Loss, ClosedFormIsOptimal) {
  std::mt19937_64 rng(27);
  std::normal_distribution<float> g(0.0f, 1.0f);
  for (int trial = 0; trial < 30; ++trial) {
    const double sigma = trial % 2 ? 0.5 : 0.2;
    const auto in = oracle::random_instance(rng, sigma);
    const auto tiles = contributions(in);
    const auto lam = oracle::strength(in);
    const auto y = fuse_fd_flow(oracle::accumulate(in), in.x_t, in.x_prior, lam, sigma);
    const double best = loss_fd(y, tiles, in.x_t, in.x_prior, lam, sigma);
    const auto ye = fuse_fd_eps(oracle::accumulate(in), in.x_t, in.x_prior, lam, 0.6);
    const double best_eps = loss_fd_eps(ye, tiles, in.x_t, in.x_prior, lam, 0.6);
    for (int k = 0; k < 100; ++k) {
      LatentTensor z = y;
      LatentTensor ze = ye;
      for (std::size_t e = 0; e < z.size(); ++e) {
        const float d = 1e-2f * g(rng);
        z.data()[e] += d;
        ze.data()[e] += d;
      }
      ASSERT_GE(loss_fd(z, tiles, in.x_t, in.x_prior, lam, sigma), best * (1 - 1e-9) - 1e-9);
      ASSERT_GE(loss_fd_eps(ze, tiles, in.x_t, in.x_prior, lam, 0.6), best_eps * (1 - 1e-9) - 1e-9);
    }
  }
}

TEST(Loss, Identities) {
  std::mt19937_64 rng(28);
  const auto in = oracle::random_instance(rng, 0.5);
  const auto tiles = contributions(in);
  const auto y = fuse_md(oracle::accumulate(in));
  EXPECT_DOUBLE_EQ(loss_fd(y, tiles, in.x_t, in.x_prior, 0.0, 0.5), loss_md(y, tiles));

  // One tile, y equal to its prediction: zero inside the window.
  const Shape s{1, 1, 3, 3};
  LatentTensor pred(s, 0.7f);
  std::vector<TileContribution> one{{pred, Rect{0, 0, 3, 3}, WeightMap::ones(3, 3)}};
  EXPECT_EQ(loss_md(pred, one), 0.0);

  // No tiles, y = (x - p) / sigma: prior term vanishes.
  LatentTensor x(s, 1.0f), p(s, 0.5f), yy(s, 1.0f);
  EXPECT_NEAR(loss_fd(yy, {}, x, p, 3.0, 0.5), 0.0, 1e-12);
}
