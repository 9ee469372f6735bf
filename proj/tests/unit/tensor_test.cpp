#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "score/errors.hpp"
#include "score/rng.hpp"
#include "score/tensor.hpp"

namespace score {
namespace {

TEST(Tensor, DataLengthMatchesShape) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.dim(2), 4u);
  for (float v : t.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}), DimensionError);
}

TEST(Tensor, RejectsZeroDimension) {
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
}

TEST(Tensor, GradientBufferMatchesShape) {
  Tensor t({3, 2});
  EXPECT_FALSE(t.has_grad());
  t.grad()[4] = 2.5f;
  EXPECT_TRUE(t.has_grad());
  EXPECT_EQ(t.grad().size(), t.size());
  t.zero_grad();
  EXPECT_EQ(t.grad()[4], 0.0f);
  t.drop_grad();
  EXPECT_FALSE(t.has_grad());
}

TEST(Tensor, ReshapeKeepsDataAndChecksSize) {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  auto r = t.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_EQ(r.values(), t.values());
  EXPECT_THROW(t.reshaped({4, 2}), DimensionError);
}

TEST(Tensor, IndexingIsRowMajor) {
  Tensor t({2, 2, 3});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i);
  EXPECT_EQ(t.at(1, 0, 2), 8.0f);
  Tensor m({2, 3}, {0, 1, 2, 3, 4, 5});
  EXPECT_EQ(m.at(1, 1), 4.0f);
}

TEST(Tensor, CastRoundTrip) {
  Tensor t({2}, {0.5f, -1.25f});
  auto d = t.cast<double>();
  EXPECT_EQ(d[1], -1.25);
  EXPECT_EQ(d.cast<float>(), t);
}

TEST(Tensor, RequireFiniteNamesTheSite) {
  Tensor t({2}, {1.0f, std::numeric_limits<float>::quiet_NaN()});
  try {
    require_finite(t, "probe");
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("probe"), std::string::npos);
  }
  Tensor inf({1}, {std::numeric_limits<float>::infinity()});
  EXPECT_THROW(require_finite(inf, "x"), NumericError);
}

TEST(Tensor, ShapeString) {
  EXPECT_EQ(shape_string({3, 32, 32}), "[3x32x32]");
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, UniformInRange) {
  Rng r(3);
  for (int i = 0; i < 10000; ++i) {
    double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, BelowIsRoughlyUniform) {
  Rng r(11);
  std::vector<int> counts(5, 0);
  const int n = 50000;
  for (int i = 0; i < n; ++i) ++counts[r.below(5)];
  // Each bucket is Binomial(n, 0.2): sd = sqrt(n * 0.16) ~ 89.
  for (int c : counts) EXPECT_NEAR(c, n / 5, 5 * 90);
}

TEST(Rng, PermutationIsAPermutation) {
  Rng r(9);
  auto p = r.permutation(50);
  std::vector<bool> seen(50, false);
  for (auto i : p) {
    ASSERT_LT(i, 50u);
    EXPECT_FALSE(seen[i]);
    seen[i] = true;
  }
}

TEST(Rng, DerivedSeedsDiffer) {
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
  EXPECT_EQ(derive_seed(5, 7), derive_seed(5, 7));
}

}  // namespace
}  // namespace score
