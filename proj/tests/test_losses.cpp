#include <gtest/gtest.h>

#include <cmath>

#include "msfa/losses.hpp"
#include "oracles/gradcheck.hpp"
#include "oracles/reference_ops.hpp"

namespace msfa {
namespace {

Tensor random_mask(Shape s, Rng& rng, Real fg = 0.4) {
  Tensor t(s);
  for (auto& v : t.storage()) v = rng.bernoulli(fg) ? 1.0 : 0.0;
  return t;
}

Tensor random_probs(Shape s, Rng& rng) {
  Tensor t(s);
  for (auto& v : t.storage()) v = rng.uniform(0.05, 0.95);
  return t;
}

Tensor square_mask(int size, int y0, int x0, int side) {
  Tensor t({1, 1, size, size}, 0.0);
  for (int y = y0; y < y0 + side; ++y)
    for (int x = x0; x < x0 + side; ++x) t.at(0, 0, y, x) = 1;
  return t;
}

TEST(Bce, PerfectPredictionIsNearZero) {
  Rng rng(1);
  Tensor g = random_mask({2, 1, 8, 8}, rng);
  EXPECT_LT(bce_loss(g, g), 1e-6);
}

TEST(Bce, HalfEverywhereIsLn2) {
  Rng rng(2);
  EXPECT_NEAR(bce_loss(Tensor({1, 1, 4, 4}, 0.5), random_mask({1, 1, 4, 4}, rng)), std::log(2.0), 1e-15);
}

TEST(Bce, TwoByTwoMatchesDirectSum) {
  Tensor p({1, 1, 2, 2}, std::vector<Real>{0.9, 0.1, 0.9, 0.1});
  Tensor g({1, 1, 2, 2}, std::vector<Real>{1, 0, 1, 0});
  const Real expect = (-std::log(0.9) - std::log(1 - 0.1) - std::log(0.9) - std::log(1 - 0.1)) / 4;
  EXPECT_NEAR(bce_loss(p, g), expect, 1e-15);
  EXPECT_NEAR(bce_loss(p, g), 0.105361, 1e-6);
}

TEST(Bce, RejectsNonBinaryMaskAndShapeMismatch) {
  Tensor p({1, 1, 2, 2}, 0.5);
  EXPECT_THROW(bce_loss(p, Tensor({1, 1, 2, 2}, 0.5)), ValidationError);
  EXPECT_THROW(bce_loss(p, Tensor({1, 1, 2, 3}, 0.0)), ShapeError);
}

TEST(Iou, Identities) {
  Rng rng(3);
  Tensor g = random_mask({1, 1, 6, 6}, rng);
  EXPECT_EQ(iou_loss(g, g), 0.0);
  Tensor empty({1, 1, 6, 6}, 0.0);
  EXPECT_EQ(iou_loss(empty, empty), 0.0);
  EXPECT_NEAR(iou_loss(empty, Tensor({1, 1, 6, 6}, 1.0)), 1.0, 1e-8);
  EXPECT_NEAR(iou_loss(Tensor({1, 1, 1, 1}, 0.5), Tensor({1, 1, 1, 1}, 1.0)), 0.5, 1e-7);
}

TEST(Boundary, ConstantMapsHaveNoBoundary) {
  for (Real c : {0.0, 1.0}) {
    const Tensor b = extract_boundary(Tensor({1, 1, 5, 5}, c));
    for (Real v : b.storage()) EXPECT_EQ(v, 0.0);
  }
  EXPECT_THROW(extract_boundary(Tensor({1, 1, 5, 5}), 2), ConfigError);
}

TEST(Boundary, SquareRing) {
  Tensor b = extract_boundary(square_mask(5, 1, 1, 3), 3);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) {
      const bool in_square = y >= 1 && y <= 3 && x >= 1 && x <= 3;
      const bool centre = y == 2 && x == 2;
      EXPECT_EQ(b.at(0, 0, y, x), in_square && !centre ? 1.0 : 0.0) << y << "," << x;
    }
}

TEST(Boundary, SoftPixelFollowsErosionFormula) {
  Tensor m({1, 1, 5, 5}, 0.0);
  m.at(0, 0, 2, 2) = 0.6;
  Tensor b = extract_boundary(m, 3);
  Tensor inv = m.map([](Real v) { return 1 - v; });
  Tensor ref = testing::reference_maxpool(inv, 3, true);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_DOUBLE_EQ(b[i], ref[i] - inv[i]);
  EXPECT_NEAR(b.at(0, 0, 2, 2), 0.6, 1e-15);
  EXPECT_EQ(b.at(0, 0, 1, 1), 0.0);
}

TEST(Boundary, LossIdentities) {
  Tensor g = square_mask(7, 2, 2, 3);
  EXPECT_EQ(boundary_loss(g, g), 0.0);
  Tensor empty({1, 1, 7, 7}, 0.0);
  EXPECT_EQ(boundary_loss(empty, empty), 0.0);
  Tensor far = square_mask(9, 0, 0, 2), other = square_mask(9, 6, 6, 3);
  EXPECT_NEAR(boundary_loss(far, other), 1.0, 1e-6);
}

TEST(Boundary, ShiftedSquareMatchesBruteForce) {
  Tensor g = square_mask(7, 2, 2, 3), p = square_mask(7, 2, 3, 3);
  auto ring = [](const Tensor& m) {
    Tensor inv = m.map([](Real v) { return 1 - v; });
    Tensor mx = testing::reference_maxpool(inv, 3, true);
    for (std::size_t i = 0; i < mx.size(); ++i) mx[i] -= inv[i];
    return mx;
  };
  Tensor gb = ring(g), pb = ring(p);
  Real s = 0, a = 0, bsum = 0;
  for (std::size_t i = 0; i < gb.size(); ++i) {
    s += gb[i] * pb[i];
    a += pb[i];
    bsum += gb[i];
  }
  const Real prec = (s + kLossEps) / (a + kLossEps), rec = (s + kLossEps) / (bsum + kLossEps);
  EXPECT_NEAR(boundary_loss(p, g), 1 - 2 * prec * rec / (prec + rec), 1e-15);
  // Rings of 8 pixels each, overlapping in 4 cells.
  EXPECT_EQ(s, 4.0);
  EXPECT_NEAR(boundary_loss(p, g), 0.5, 1e-7);
}

TEST(Boundary, IsSymmetricForBinaryMaps) {
  Rng rng(4);
  for (int i = 0; i < 10; ++i) {
    Tensor a = random_mask({1, 1, 8, 8}, rng), b = random_mask({1, 1, 8, 8}, rng);
    EXPECT_NEAR(boundary_loss(a, b), boundary_loss(b, a), 1e-15);
  }
}

TEST(LossGradients, MatchFiniteDifferences) {
  Rng rng(5);
  Tensor g = random_mask({2, 1, 6, 6}, rng);
  Var p(random_probs({2, 1, 6, 6}, rng), true);
  const std::function<Var()> fns[] = {[&] { return bce_loss(p, g); }, [&] { return iou_loss(p, g); },
                                      [&] { return boundary_loss(p, g); }};
  int seed = 30;
  for (const auto& fn : fns) {
    auto r = testing::check_gradient(fn, p, 40, static_cast<std::uint64_t>(seed++));
    EXPECT_EQ(r.checked, 40);
    EXPECT_LT(r.max_rel_error, 1e-5);
  }
}

TEST(TotalLoss, LevelWeights) {
  LossBreakdown b;
  for (auto& l : b.per_level) l.sum = 0.37;
  EXPECT_NEAR(b.weighted_total(), 1.875 * 0.37, 1e-15);
  const Real sums[4] = {0.8, 0.4, 0.4, 0.8};
  for (std::size_t i = 0; i < 4; ++i) b.per_level[i].sum = sums[i];
  EXPECT_NEAR(b.weighted_total(), 1.2, 1e-15);
}

TEST(TotalLoss, BreakdownConsistentAndTermsRespected) {
  Rng rng(6);
  Tensor g = random_mask({1, 1, 8, 8}, rng);
  SaliencyOutputs o{Var(random_probs({1, 1, 8, 8}, rng)), Var(random_probs({1, 1, 8, 8}, rng)),
                    Var(random_probs({1, 1, 8, 8}, rng)), Var(random_probs({1, 1, 8, 8}, rng))};
  LossBreakdown b;
  Var t = total_loss(o, g, LossTerms{}, &b);
  EXPECT_NEAR(t.item(), b.weighted_total(), 1e-12);
  for (const auto& l : b.per_level) {
    ASSERT_TRUE(l.bce && l.iou && l.bd);
    EXPECT_NEAR(l.sum, *l.bce + *l.iou + *l.bd, 1e-12);
  }
  LossBreakdown only;
  total_loss(o, g, LossTerms{true, false, false}, &only);
  for (const auto& l : only.per_level) {
    EXPECT_TRUE(l.bce.has_value());
    EXPECT_FALSE(l.iou.has_value());
    EXPECT_FALSE(l.bd.has_value());
  }
  EXPECT_THROW(total_loss(o, g, LossTerms{false, true, true}), ConfigError);
}

TEST(TotalLoss, PerfectMapsGiveNearZero) {
  Rng rng(7);
  Tensor g = square_mask(8, 2, 2, 4);
  SaliencyOutputs o{Var(g), Var(g), Var(g), Var(g)};
  EXPECT_LT(total_loss(o, g, LossTerms{}).item(), 1e-6);
}

}  // namespace
}  // namespace msfa
