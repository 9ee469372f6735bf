#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "score/errors.hpp"
#include "score/ops.hpp"
#include "support.hpp"

namespace score {
namespace {

using testing::random_tensor;

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  Tensor id({2, 2}, {1, 0, 0, 1});
  Tensor b({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(ops::matmul(id, b), b);
}

TEST(Matmul, ZeroCase) {
  Tensor a({1, 2}, {1, 2});
  Tensor z({2, 1}, {0, 0});
  EXPECT_EQ(ops::matmul(a, z), Tensor({1, 1}, {0}));
}

TEST(Matmul, HandArithmetic) {
  // 1*5 + 2*6 = 17, 3*5 + 4*6 = 39
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 1}, {5, 6});
  EXPECT_EQ(ops::matmul(a, b), Tensor({2, 1}, {17, 39}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tensor a({2, 3});
  Tensor b({2, 2});
  try {
    ops::matmul(a, b);
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[2x2]"), std::string::npos);
  }
}

TEST(Matmul, MatchesTripleLoop) {
  auto a = random_tensor<double>({4, 5}, 1);
  auto b = random_tensor<double>({5, 3}, 2);
  auto c = ops::matmul(a, b);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < 5; ++k) acc += a.at(i, k) * b.at(k, j);
      EXPECT_NEAR(c.at(i, j), acc, 1e-12);
    }
  }
}

TEST(Matmul, RepeatedRunsAreBitIdentical) {
  auto a = random_tensor({16, 9}, 3);
  auto b = random_tensor({9, 7}, 4);
  EXPECT_EQ(ops::matmul(a, b), ops::matmul(a, b));
}

TEST(Conv2d, IdentityKernel) {
  auto x = random_tensor({1, 5, 4}, 5);
  Tensor k({1, 1, 1, 1}, {1});
  EXPECT_EQ(ops::conv2d(x, k), x);
}

TEST(Conv2d, ZeroKernel) {
  auto x = random_tensor({2, 5, 5}, 6);
  Tensor k({3, 2, 3, 3});
  auto y = ops::conv2d(x, k);
  EXPECT_EQ(y.shape(), (Shape{3, 3, 3}));
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Conv2d, OnesHandArithmetic) {
  Tensor x = Tensor::full({1, 3, 3}, 1.0f);
  Tensor k = Tensor::full({1, 1, 2, 2}, 1.0f);
  EXPECT_EQ(ops::conv2d(x, k), Tensor::full({1, 2, 2}, 4.0f));
}

TEST(Conv2d, KernelLargerThanInput) {
  EXPECT_THROW(ops::conv2d(Tensor({1, 2, 2}), Tensor({1, 1, 3, 3})), DimensionError);
}

TEST(Conv2d, IsCrossCorrelationWithoutFlip) {
  Tensor x({1, 2, 2}, {1, 2, 3, 4});
  Tensor k({1, 1, 2, 2}, {1, 0, 0, 0});
  // A flipped kernel would pick the last element.
  EXPECT_EQ(ops::conv2d(x, k)[0], 1.0f);
}

TEST(Conv2d, MatchesDirectLoops) {
  auto x = random_tensor<double>({3, 7, 6}, 7);
  auto k = random_tensor<double>({4, 3, 3, 3}, 8);
  auto y = ops::conv2d(x, k);
  ASSERT_EQ(y.shape(), (Shape{4, 5, 4}));
  for (std::size_t f = 0; f < 4; ++f) {
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        double acc = 0;
        for (std::size_t c = 0; c < 3; ++c) {
          for (std::size_t u = 0; u < 3; ++u) {
            for (std::size_t v = 0; v < 3; ++v) acc += x.at(c, i + u, j + v) * k[((f * 3 + c) * 3 + u) * 3 + v];
          }
        }
        EXPECT_NEAR(y.at(f, i, j), acc, 1e-12);
      }
    }
  }
}

TEST(Relu, Definition) {
  EXPECT_EQ(ops::relu(Tensor({3}, {-1, 0, 2})), Tensor({3}, {0, 0, 2}));
}

TEST(Relu, Idempotent) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto x = random_tensor({4, 3, 3}, seed);
    auto once = ops::relu(x);
    EXPECT_EQ(ops::relu(once), once);
  }
}

TEST(Pooling, GlobalAveragePoolMean) {
  EXPECT_EQ(ops::global_avg_pool(Tensor({1, 2, 2}, {1, 2, 3, 4})), Tensor({1}, {2.5f}));
}

TEST(Pooling, AvgPool2DropsOddTail) {
  Tensor x({1, 3, 3}, {1, 2, 9, 3, 4, 9, 9, 9, 9});
  EXPECT_EQ(ops::avg_pool2(x), Tensor({1, 1, 1}, {2.5f}));
}

TEST(Pooling, AvgPool2TooSmall) {
  EXPECT_THROW(ops::avg_pool2(Tensor({1, 1, 4})), DimensionError);
}

TEST(Softmax, UniformLogitsGiveLn2) {
  EXPECT_NEAR(ops::softmax_ce(Tensor({2}, {0, 0}), 0), std::log(2.0), 1e-7);
}

TEST(Softmax, LabelOutOfRange) {
  EXPECT_THROW(ops::softmax_ce(Tensor({2}, {0, 0}), 2), IndexError);
  EXPECT_THROW(ops::softmax_ce_backward(Tensor({2}, {0, 0}), 5), IndexError);
}

TEST(Softmax, StableForLargeLogits) {
  Tensor logits({2}, {1000.0f, 0.0f});
  EXPECT_NEAR(ops::softmax_ce(logits, 0), 0.0f, 1e-6);
  auto p = ops::softmax(logits);
  EXPECT_TRUE(p.all_finite());
  EXPECT_NEAR(p[0], 1.0f, 1e-6);
}

TEST(Softmax, BackwardIsProbabilitiesMinusOneHot) {
  Tensor64 logits({3}, {0.5, -1.0, 2.0});
  auto g = ops::softmax_ce_backward(logits, 2);
  auto p = ops::softmax(logits);
  EXPECT_DOUBLE_EQ(g[0], p[0]);
  EXPECT_DOUBLE_EQ(g[2], p[2] - 1.0);
  EXPECT_NEAR(g.sum(), 0.0, 1e-15);
}

TEST(Ops, NonFiniteInputIsAnError) {
  Tensor a({1, 1}, {std::numeric_limits<float>::infinity()});
  Tensor b({1, 1}, {0.0f});
  EXPECT_THROW(ops::matmul(a, b), NumericError);
}

TEST(ChannelBias, AddsPerChannel) {
  Tensor x({2, 1, 2});
  Tensor b({2}, {1, -2});
  EXPECT_EQ(ops::add_channel_bias(x, b), Tensor({2, 1, 2}, {1, 1, -2, -2}));
  EXPECT_EQ(ops::channel_bias_backward(Tensor({2, 1, 2}, {1, 2, 3, 4})), Tensor({2}, {3, 7}));
}

}  // namespace
}  // namespace score
