#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "msfa/model.hpp"
#include "oracles/gradcheck.hpp"
#include "oracles/reference_ops.hpp"

namespace msfa {
namespace {

Tensor random_tensor(Shape s, Rng& rng, Real lo = -1, Real hi = 1) {
  Tensor t(s);
  for (auto& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

ModelConfig mini_config() {
  ModelConfig c;
  c.encoder_channels = {8, 8, 16, 16, 16};
  c.width = 8;
  c.seed = 3;
  return c;
}

TEST(Backbone, RejectsBadImages) {
  EXPECT_THROW(validate_image({1, 3, 48, 64}), ShapeError);
  EXPECT_THROW(validate_image({1, 1, 64, 64}), ShapeError);
  EXPECT_NO_THROW(validate_image({2, 3, 64, 96}));
}

TEST(Backbone, PyramidFollowsStrideContract) {
  Rng rng(1);
  ToyEncoder enc({8, 8, 16, 16, 16}, rng);
  FeaturePyramid p = enc.encode(Var(random_tensor({1, 3, 64, 96}, rng, 0, 1)), false);
  for (int i = 1; i <= kPyramidLevels; ++i) {
    const int s = pyramid_stride(i);
    EXPECT_EQ(p.level(i).shape().spatial(), (Size2{64 / s, 96 / s})) << "level " << i;
  }
  EXPECT_EQ(pyramid_stride(5), 32);
}

TEST(DiverseReception, DefaultWidthOutput) {
  Rng rng(2);
  DiverseReception dr(256, DRConfig{}, rng);
  Var y = dr.forward(Var(random_tensor({1, 256, 12, 12}, rng)), false);
  EXPECT_EQ(y.shape(), (Shape{1, 64, 12, 12}));
}

TEST(DiverseReception, ConstantInputGivesIdenticalGroups) {
  Rng rng(3);
  DiverseReception dr(4, DRConfig{{3, 7, 11}, 8}, rng);
  Var e = dr.enrich(Var(Tensor({1, 4, 6, 6}, 0.0)));
  ASSERT_EQ(e.shape().c, 16);
  for (int g = 1; g < 4; ++g)
    for (int c = 0; c < 4; ++c)
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) EXPECT_EQ(e.value().at(0, g * 4 + c, y, x), e.value().at(0, c, y, x));
}

TEST(DiverseReception, PositiveConstantSurvivesZeroPadding) {
  Rng rng(3);
  DiverseReception dr(2, DRConfig{{3, 7, 11}, 8}, rng);
  Var e = dr.enrich(Var(Tensor({1, 2, 5, 5}, 0.4)));
  for (Real v : e.value().storage()) EXPECT_EQ(v, 0.4);
}

TEST(DiverseReception, HotPixelSpreadsToKernelBlock) {
  Rng rng(4);
  DiverseReception dr(8, DRConfig{{3}, 8}, rng);
  Tensor x({1, 8, 5, 5}, 0.0);
  x.at(0, 2, 2, 2) = 5.0;
  Var e = dr.enrich(Var(x));
  const Tensor ref = testing::reference_maxpool(x, 3, false, 0.0);
  for (int y = 0; y < 5; ++y)
    for (int xx = 0; xx < 5; ++xx) {
      const bool inside = std::abs(y - 2) <= 1 && std::abs(xx - 2) <= 1;
      EXPECT_EQ(e.value().at(0, 2, y, xx), inside ? 5.0 : 0.0);
      EXPECT_EQ(e.value().at(0, 2, y, xx), ref.at(0, 2, y, xx));
    }
}

TEST(DiverseReception, RejectsEvenKernels) {
  Rng rng(5);
  EXPECT_THROW(DiverseReception(4, DRConfig{{3, 4}, 8}, rng), ConfigError);
}

TEST(FeatureEnhance, PreservesShape) {
  Rng rng(6);
  FeatureEnhance fe(64, rng);
  EXPECT_EQ(fe.forward(Var(random_tensor({1, 64, 12, 12}, rng)), false).shape(), (Shape{1, 64, 12, 12}));
  EXPECT_THROW(fe.forward(Var(random_tensor({1, 32, 12, 12}, rng)), false), ShapeError);
}

TEST(FeatureEnhance, IdentityGating) {
  Rng rng(7);
  FeatureEnhance fe(4, rng);
  fe.split().weight().mutable_value().fill(0);
  Tensor& b = fe.split().bias().mutable_value();
  for (int c = 0; c < 8; ++c) b[static_cast<std::size_t>(c)] = c < 4 ? 1.0 : 0.0;
  Var f(random_tensor({1, 4, 6, 6}, rng));
  Var refined = fe.refine().forward(f, false);
  EXPECT_EQ(fe.forward(f, false).value(), refined.value());
}

TEST(FeatureEnhance, NegativeBiasClipsToZero) {
  Rng rng(8);
  FeatureEnhance fe(4, rng);
  fe.split().weight().mutable_value().fill(0);
  fe.split().bias().mutable_value().fill(-1);
  Var y = fe.forward(Var(random_tensor({1, 4, 6, 6}, rng)), false);
  for (Real v : y.value().storage()) EXPECT_EQ(v, 0.0);
}

TEST(FeatureEnhance, GradientsMatchFiniteDifferences) {
  Rng rng(9);
  FeatureEnhance fe(3, rng);
  Var x(random_tensor({2, 3, 5, 5}, rng), true);
  Tensor probe = random_tensor({2, 3, 5, 5}, rng);
  auto loss = [&] { return sum_all(mul(fe.forward(x, true), Var(probe))); };
  auto r = testing::check_gradient(loss, x, 30, 21);
  EXPECT_EQ(r.checked, 30);
  EXPECT_LT(r.max_rel_error, 1e-4);
  auto rw = testing::check_gradient(loss, fe.split().weight(), 30, 22);
  EXPECT_LT(rw.max_rel_error, 1e-4);
}

TEST(Msi, UpsampleRefusesToShrink) {
  EXPECT_THROW(upsample(Var(Tensor({1, 1, 4, 4})), {2, 2}), ShapeError);
}

TEST(Msi, CfiShapesAtLevelsFourAndTwo) {
  Rng rng(10);
  CompositeFeatureIntegration cfi(8, std::make_shared<FeatureEnhance>(8, rng), rng);
  Var top(random_tensor({1, 8, 3, 3}, rng));
  EXPECT_EQ(cfi.forward(Var(random_tensor({1, 8, 3, 3}, rng)), Var(random_tensor({1, 8, 3, 3}, rng)), top, false).shape(),
            (Shape{1, 8, 3, 3}));
  EXPECT_EQ(cfi.forward(Var(random_tensor({1, 8, 12, 12}, rng)), Var(random_tensor({1, 8, 6, 6}, rng)), top, false).shape(),
            (Shape{1, 8, 12, 12}));
}

TEST(Msi, CfiRejectsWrongWidth) {
  Rng rng(11);
  CompositeFeatureIntegration cfi(8, nullptr, rng);
  EXPECT_THROW(cfi.forward(Var(Tensor({1, 4, 4, 4})), Var(Tensor({1, 8, 2, 2})), Var(Tensor({1, 8, 1, 1})), false),
               ShapeError);
}

TEST(Msi, ZeroNeighboursLeaveOnlyArcBranch) {
  Rng rng(12);
  CompositeFeatureIntegration cfi(4, nullptr, rng);
  cfi.set_bn_bypass(true);
  CfiTrace tr;
  cfi.forward(Var(random_tensor({1, 4, 6, 6}, rng)), Var(Tensor({1, 4, 3, 3}, 0.0)), Var(Tensor({1, 4, 3, 3}, 0.0)),
              false, &tr);
  const Tensor& in = tr.fused_input.value();
  ASSERT_EQ(in.shape(), (Shape{1, 16, 6, 6}));
  for (int c = 0; c < 16; ++c)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) {
        const Real expect = c < 4 ? tr.arc.value().at(0, c, y, x) : 0.0;
        EXPECT_EQ(in.at(0, c, y, x), expect);
      }
}

TEST(Msi, DecoderZeroTopBranchPassesLevelThree) {
  Rng rng(13);
  FeatureDecoder fd(4, rng);
  fd.set_bn_bypass(true);
  Var cfi3(random_tensor({1, 4, 6, 6}, rng));
  DecoderOutputs out = fd.forward(Var(Tensor({1, 4, 3, 3}, 0.0)), cfi3, Var(random_tensor({1, 4, 12, 12}, rng)), false);
  EXPECT_EQ(out.fd3.value(), cfi3.value());
  EXPECT_EQ(out.fd2.shape(), (Shape{1, 4, 12, 12}));
}

TEST(Msi, DecoderIsBatchIndependentInEval) {
  Rng rng(14);
  FeatureDecoder fd(4, rng);
  Tensor c4 = random_tensor({2, 4, 3, 3}, rng), c3 = random_tensor({2, 4, 6, 6}, rng), c2 = random_tensor({2, 4, 12, 12}, rng);
  DecoderOutputs both = fd.forward(Var(c4), Var(c3), Var(c2), false);
  for (int b = 0; b < 2; ++b) {
    DecoderOutputs one =
        fd.forward(Var(c4.slice_batch(b, 1)), Var(c3.slice_batch(b, 1)), Var(c2.slice_batch(b, 1)), false);
    EXPECT_EQ(one.fd2.value(), both.fd2.value().slice_batch(b, 1));
    EXPECT_EQ(one.fd3.value(), both.fd3.value().slice_batch(b, 1));
  }
}

TEST(Heads, ZeroWeightsGiveHalf) {
  Rng rng(15);
  SaliencyHeads heads(4, rng);
  for (int i = 2; i <= 5; ++i) {
    heads.head(i).weight().mutable_value().fill(0);
    heads.head(i).bias().mutable_value().fill(i == 5 ? 10.0 : 0.0);
  }
  Var f(random_tensor({1, 4, 4, 4}, rng));
  SaliencyOutputs o = heads.forward(f, f, f, f, {16, 16});
  for (Real v : o.m2.value().storage()) EXPECT_EQ(v, 0.5);
  const Real s10 = 1 / (1 + std::exp(-10.0));
  for (Real v : o.m5.value().storage()) EXPECT_NEAR(v, s10, 1e-15);
  EXPECT_NEAR(s10, 0.99995, 1e-5);
}

TEST(Heads, OutputSmallerThanFeatureIsError) {
  Rng rng(16);
  SaliencyHeads heads(2, rng);
  Var f(Tensor({1, 2, 8, 8}));
  EXPECT_THROW(heads.forward(f, f, f, f, {4, 4}), ShapeError);
}

TEST(Model, MiniatureShapesAndTrace) {
  MsfaModel model(mini_config());
  Rng rng(17);
  ModelTrace tr;
  SaliencyOutputs o = model.forward(Var(random_tensor({2, 3, 64, 64}, rng, 0, 1)), false, &tr);
  const Size2 expect_levels[4] = {{8, 8}, {4, 4}, {2, 2}, {2, 2}};
  for (int i = 0; i < 4; ++i) EXPECT_EQ(tr.level_features[static_cast<std::size_t>(i)].shape(), (Shape{2, 8, expect_levels[i].h, expect_levels[i].w}));
  EXPECT_EQ(tr.cfi[0].shape().spatial(), (Size2{8, 8}));
  EXPECT_EQ(tr.cfi[2].shape().spatial(), (Size2{2, 2}));
  EXPECT_EQ(tr.fd.fd3.shape().spatial(), (Size2{4, 4}));
  EXPECT_EQ(tr.fd.fd2.shape().spatial(), (Size2{8, 8}));
  for (const Var& m : o.all()) {
    EXPECT_EQ(m.shape(), (Shape{2, 1, 64, 64}));
    for (Real v : m.value().storage()) {
      EXPECT_GT(v, 0);
      EXPECT_LT(v, 1);
    }
  }
}

TEST(Model, AblationVariantsRun) {
  for (int mask = 0; mask < 8; ++mask) {
    ModelConfig c = mini_config();
    c.use_dr = mask & 1;
    c.use_msi = mask & 2;
    c.use_fe = mask & 4;
    MsfaModel model(c);
    Rng rng(18);
    SaliencyOutputs o = model.forward(Var(random_tensor({1, 3, 32, 32}, rng, 0, 1)), true);
    EXPECT_EQ(o.m2.shape(), (Shape{1, 1, 32, 32})) << mask;
  }
}

TEST(Model, ParameterNamesAreUnique) {
  for (bool share : {false, true}) {
    ModelConfig c = mini_config();
    c.fe_share_params = share;
    MsfaModel model(c);
    std::set<std::string> seen;
    int dupes = 0;
    ParamVisitor names{[&](const std::string& n, Var&, ParamKind) { dupes += !seen.insert(n).second; },
                       [&](const std::string& n, Tensor&) { dupes += !seen.insert(n).second; }};
    model.visit(names);
    EXPECT_EQ(dupes, 0);
    EXPECT_EQ(seen.count("fe.shared.split.weight"), share ? 1U : 0U);
  }
}

TEST(Model, SameSeedSameWeights) {
  MsfaModel a(mini_config()), b(mini_config());
  auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].value(), pb[i].value());
}

}  // namespace
}  // namespace msfa
