#include <gtest/gtest.h>

#include <cmath>

#include "score/errors.hpp"
#include "score/lrp.hpp"
#include "score/network.hpp"
#include "lrp_oracle.hpp"
#include "support.hpp"

namespace score {
namespace {

using testing::dense_layer;
using testing::random_tensor;

std::vector<float> messages(std::vector<float> contrib, float r, float eps) {
  return lrp_linear_messages<float>(contrib, r, eps);
}

TEST(LrpMessages, SymmetricHalves) {
  EXPECT_EQ(messages({0.5f, 0.5f}, 1.0f, 0.0f), (std::vector<float>{0.5f, 0.5f}));
}

TEST(LrpMessages, ProportionalSplit) {
  EXPECT_EQ(messages({3.0f, 1.0f}, 2.0f, 0.0f), (std::vector<float>{1.5f, 0.5f}));
}

TEST(LrpMessages, CancellingContributionsAreAbsorbed) {
  EXPECT_EQ(messages({1.0f, -1.0f}, 1.0f, 1e-6f), (std::vector<float>{0.0f, 0.0f}));
}

TEST(LrpMessages, EpsilonStabilizesAwayFromZero) {
  auto m = lrp_linear_messages<double>(std::vector<double>{-1.0, -3.0}, 1.0, 0.5);
  // denominator -4 - 0.5
  EXPECT_DOUBLE_EQ(m[0], -1.0 / -4.5);
  EXPECT_DOUBLE_EQ(m[1], -3.0 / -4.5);
}

TEST(LrpMessages, NegativeEpsilonRejected) {
  EXPECT_THROW(messages({1.0f}, 1.0f, -1.0f), ConfigError);
}

TEST(LrpMessages, LinearInRelevance) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto c = random_tensor<double>({7}, seed).values();
    const double c_scale = 1.0 + static_cast<double>(seed);
    auto base = lrp_linear_messages<double>(c, 1.0, 1e-6);
    auto scaled = lrp_linear_messages<double>(c, c_scale, 1e-6);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(scaled[i], c_scale * base[i], 1e-12 * (1 + std::abs(scaled[i])));
  }
}

TEST(LrpBackward, SingleDenseHandExample) {
  std::vector<Layer<float>> layers{dense_layer<float>(2, 1, {0.5f, 0.25f})};
  // A one-class head is only allowed through LayerStack directly.
  LayerStack<float> m({2}, std::move(layers), 0);
  auto trace = m.forward(Tensor({2}, {1, 2}));
  ASSERT_EQ(trace.logits()[0], 1.0f);
  auto maps = lrp_backward(m, trace, 0, 0.0f);
  EXPECT_EQ(maps[1].relevance, Tensor({1}, {1.0f}));
  EXPECT_EQ(maps[0].relevance, Tensor({2}, {0.5f, 0.5f}));
}

TEST(LrpBackward, StackedIdentityLayersPassRelevanceThrough) {
  std::vector<Layer<float>> layers{dense_layer<float>(2, 2, {1, 0, 0, 1}), dense_layer<float>(2, 2, {1, 0, 0, 1})};
  LayerStack<float> m({2}, std::move(layers), 1);
  auto trace = m.forward(Tensor({2}, {3, 0.5f}));
  auto maps = lrp_backward(m, trace, 0, 0.0f);
  EXPECT_EQ(maps[2].relevance, Tensor({2}, {3, 0}));
  EXPECT_EQ(maps[0].relevance, maps[2].relevance);
}

TEST(LrpBackward, OutputMapIsOneHotLogit) {
  auto m = build_patchnet<float>(3, 2, true, 12);
  auto trace = m.forward(random_tensor({3, 12, 12}, 3, 0, 1));
  auto maps = lrp_backward(m, trace, 1);
  const auto& top = relevance_at_layer(maps, m.num_layers());
  EXPECT_EQ(top.relevance[0], 0.0f);
  EXPECT_EQ(top.relevance[1], trace.logits()[1]);
  EXPECT_EQ(top.relevance[2], 0.0f);
  EXPECT_EQ(top.target_class, 1u);
}

TEST(LrpBackward, ErrorsOnBadArguments) {
  auto m = build_patchnet<float>(2, 2, true, 12);
  auto trace = m.forward(random_tensor({3, 12, 12}, 3, 0, 1));
  EXPECT_THROW(lrp_backward(m, trace, 2), IndexError);
  EXPECT_THROW(lrp_backward(m, trace, 0, -1.0f), ConfigError);
  auto other = testing::two_layer_dense<float>(4, 3, 2, 1);
  auto other_trace = other.forward(random_tensor({4}, 1));
  EXPECT_THROW(lrp_backward(m, other_trace, 0), DimensionError);
  auto maps = lrp_backward(m, trace, 0, 1e-6f, LrpPath::Reference, 4);
  EXPECT_THROW(relevance_at_layer(maps, 2), IndexError);
  EXPECT_THROW(relevance_at_layer(maps, 99), IndexError);
}

TEST(LrpBackward, StopAtLeavesLowerMapsEmpty) {
  auto m = build_patchnet<float>(2, 4, true, 12);
  auto trace = m.forward(random_tensor({3, 12, 12}, 5, 0, 1));
  auto maps = lrp_backward(m, trace, 0, 1e-6f, LrpPath::Reference, m.penultimate());
  EXPECT_FALSE(maps[0].computed());
  EXPECT_TRUE(maps[m.penultimate()].computed());
  EXPECT_EQ(maps[m.penultimate()].relevance.shape(), (Shape{16}));
}

// Bias-free, eps=0: relevance is conserved at every position.
TEST(LrpConservation, BiasFreePatchNetInFloat64) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto m = build_patchnet<double>(2, 100 + s, false, 16);
    auto trace = m.forward(random_tensor<double>({3, 16, 16}, 200 + s, 0, 1));
    const std::size_t cls = s % 2;
    const double logit = trace.logits()[cls];
    auto maps = lrp_backward(m, trace, cls, 0.0);
    for (std::size_t p = 0; p <= m.num_layers(); ++p) {
      EXPECT_NEAR(maps[p].relevance.sum(), logit, 1e-4 * std::abs(logit) + 1e-12) << "seed " << s << " position " << p;
    }
  }
}

TEST(LrpConservation, PenultimateSumsToLogit) {
  auto m = build_patchnet<double>(2, 7, false, 16);
  auto trace = m.forward(random_tensor<double>({3, 16, 16}, 8, 0, 1));
  auto maps = lrp_backward(m, trace, 0, 0.0);
  const auto& pen = relevance_at_layer(maps, m.penultimate());
  EXPECT_EQ(pen.relevance.size(), 16u);
  EXPECT_NEAR(pen.relevance.sum(), trace.logits()[0], 1e-10 * (1 + std::abs(trace.logits()[0])));
}

TEST(LrpAmplification, NeverExceedsInflowWithBiasesAndEpsilon) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto m = build_patchnet<float>(2, 300 + s, true, 16);
    for (auto& l : m.layers()) {
      std::uint64_t k = 0;
      for (auto& v : l.bias.data()) v = static_cast<float>(0.1 * std::sin(static_cast<double>(s * 31 + k++)));
    }
    auto trace = m.forward(random_tensor({3, 16, 16}, 400 + s, 0, 1));
    std::vector<LayerFlow> flows;
    lrp_backward(m, trace, s % 2, 1e-6f, LrpPath::Reference, 0, -1, &flows);
    for (std::size_t i = 0; i < flows.size(); ++i) {
      EXPECT_LE(flows[i].outflow_abs, flows[i].inflow_abs * (1 + 1e-6) + 1e-30) << "layer " << i;
    }
  }
}

TEST(LrpRelu, RelevanceVanishesWhereActivationWasZero) {
  auto m = build_patchnet<float>(2, 11, true, 16);
  auto trace = m.forward(random_tensor({3, 16, 16}, 12, 0, 1));
  auto maps = lrp_backward(m, trace, 0);
  for (std::size_t pos : {2u, 5u}) {
    const auto& act = trace.activation(pos);
    const auto& r = maps[pos].relevance;
    for (std::size_t i = 0; i < act.size(); ++i) {
      if (act[i] == 0.0f) {
        EXPECT_EQ(r[i], 0.0f);
      }
    }
    // Below the ReLU the map equals the one above it, gated by the same zeros.
    const auto& below = maps[pos - 1].relevance;
    for (std::size_t i = 0; i < act.size(); ++i) EXPECT_EQ(below[i], act[i] > 0 ? r[i] : 0.0f);
  }
}

TEST(LrpLinearity, ScalingTheHeadScalesEveryMap) {
  auto m = build_patchnet<double>(2, 13, true, 12);
  auto scaled = m;
  for (auto& v : scaled.layers().back().weight.data()) v *= 4.0;
  for (auto& v : scaled.layers().back().bias.data()) v *= 4.0;
  const auto x = random_tensor<double>({3, 12, 12}, 14, 0, 1);
  auto a = lrp_backward(m, m.forward(x), 1, 0.0);
  auto b = lrp_backward(scaled, scaled.forward(x), 1, 0.0);
  for (std::size_t p = 0; p < m.num_layers(); ++p) {
    for (std::size_t i = 0; i < a[p].relevance.size(); ++i) {
      EXPECT_NEAR(b[p].relevance[i], 4.0 * a[p].relevance[i], 1e-12 * (1 + std::abs(b[p].relevance[i])));
    }
  }
}

TEST(LrpOracle, TwoLayerDenseMatchesBruteForceExactly) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    const bool bias = s % 2 == 0;
    auto m = testing::two_layer_dense<float>(5 + s % 4, 6 + s % 3, 2 + s % 3, 1000 + s, bias);
    const auto x = random_tensor({m.input_shape()[0]}, 5000 + s);
    const std::size_t cls = s % m.num_classes();
    const float eps = s % 3 == 0 ? 0.0f : 1e-6f;
    auto expected = testing::brute_force_lrp(m, x, cls, eps);
    auto maps = lrp_backward(m, m.forward(x), cls, eps);
    for (std::size_t p = 0; p < expected.size(); ++p) {
      ASSERT_EQ(maps[p].relevance.values(), expected[p]) << "seed " << s << " position " << p;
    }
  }
}

TEST(LrpPaths, FastAgreesWithReferenceOnPatchNet) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto m = build_patchnet<double>(2, 600 + s);
    for (auto& l : m.layers()) {
      for (auto& v : l.bias.data()) v = 0.02;
    }
    auto trace = m.forward(random_tensor<double>({3, 32, 32}, 700 + s, 0, 1));
    auto ref = lrp_backward(m, trace, s % 2, 1e-6, LrpPath::Reference);
    auto fast = lrp_backward(m, trace, s % 2, 1e-6, LrpPath::Fast);
    for (std::size_t p = 0; p <= m.num_layers(); ++p) {
      for (std::size_t i = 0; i < ref[p].relevance.size(); ++i) {
        ASSERT_NEAR(fast[p].relevance[i], ref[p].relevance[i], 1e-6) << "position " << p;
      }
    }
  }
}

TEST(Heatmap, ChannelSumAndRange) {
  Tensor r({3, 2, 2});
  r.at(1, 0, 1) = 2.0f;
  auto hm = heatmap_from_relevance(r);
  EXPECT_EQ(hm.height, 2u);
  EXPECT_EQ(hm.width, 2u);
  EXPECT_EQ(hm.values, (std::vector<float>{0, 2, 0, 0}));
  EXPECT_EQ(hm.min, 0.0f);
  EXPECT_EQ(hm.max, 2.0f);
}

TEST(Heatmap, UniformRelevanceIsConstant) {
  auto hm = heatmap_from_relevance(Tensor::full({3, 4, 4}, 0.5f));
  for (float v : hm.values) EXPECT_EQ(v, 1.5f);
}

TEST(Heatmap, RequiresChannelsHeightWidth) {
  EXPECT_THROW(heatmap_from_relevance(Tensor({4})), DimensionError);
}

TEST(Heatmap, FromMapsUsesInputPosition) {
  auto m = build_patchnet<float>(2, 15, true, 12);
  const auto x = random_tensor({3, 12, 12}, 16, 0, 1);
  auto maps = lrp_backward(m, m.forward(x), 0);
  auto hm = input_heatmap(maps);
  EXPECT_EQ(hm.values.size(), 144u);
  EXPECT_EQ(hm.values, heatmap_from_relevance(maps[0].relevance).values);
}

}  // namespace
}  // namespace score
