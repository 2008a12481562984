#include <vector>

#include <gtest/gtest.h>

#include "fedforge/conv.hpp"
#include "fedforge/ops.hpp"
#include "support/gradcheck.hpp"

namespace fedforge {
namespace {

using testing::check_gradient;
using testing::random_leaf;

constexpr double kTol = 1e-3;

// Direct-loop cross-correlation used as a reference for the im2col path.
std::vector<float> naive_conv(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t o = k.dim(0), ks = k.dim(2);
  const std::size_t oh = (h + 2 * pad - ks) / stride + 1, ow = (w + 2 * pad - ks) / stride + 1;
  std::vector<float> out(n * o * oh * ow, 0.0f);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double acc = 0;
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t ky = 0; ky < ks; ++ky)
              for (std::size_t kx = 0; kx < ks; ++kx) {
                const auto iy = static_cast<long>(y * stride + ky) - static_cast<long>(pad);
                const auto ix = static_cast<long>(xx * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                acc += static_cast<double>(x.data()[((b * c + ic) * h + iy) * w + ix]) *
                       k.data()[((oc * c + ic) * ks + ky) * ks + kx];
              }
          out[((b * o + oc) * oh + y) * ow + xx] = static_cast<float>(acc);
        }
  return out;
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(1);
  auto x = random_leaf({1, 1, 5, 5}, rng);
  const auto y = conv2d(x, Tensor(Shape{1, 1, 1, 1}, {1.0f}), 1, 0);
  EXPECT_EQ(y.values(), x.values());
}

TEST(Conv2d, TwoByTwoExample) {
  const auto y = conv2d(Tensor(Shape{1, 1, 2, 2}, {1, 2, 3, 4}), Tensor(Shape{1, 1, 2, 2}, {1, 0, 0, 1}), 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.item(), 5.0f);
}

TEST(Conv2d, MatchesDirectLoops) {
  Rng rng(2);
  for (std::size_t stride : {1u, 2u})
    for (std::size_t pad : {0u, 1u}) {
      auto x = random_leaf({2, 3, 7, 7}, rng), k = random_leaf({4, 3, 3, 3}, rng);
      const auto y = conv2d(x, k, stride, pad);
      const auto ref = naive_conv(x, k, stride, pad);
      ASSERT_EQ(y.numel(), ref.size());
      for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-5);
    }
}

TEST(Conv2d, InvalidGeometry) {
  EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), 1, 0), std::invalid_argument);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 1, 3, 3}), 1, 0), std::invalid_argument);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 3, 3}), 0, 0), std::invalid_argument);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 4, 4}), Tensor::zeros({1, 1, 3, 3}), 1, 0), std::invalid_argument);
}

TEST(GradCheck, Conv2dKernelOnFourByFour) {
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    auto x = random_leaf({1, 1, 4, 4}, rng), k = random_leaf({1, 1, 3, 3}, rng);
    EXPECT_LT(check_gradient([&] { return sum(conv2d(x, k, 1, 0)); }, {k}).rel_error, kTol);
  }
}

TEST(GradCheck, Conv2dAllInputs) {
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const std::size_t stride = 1 + i % 2, pad = (i / 2) % 2;
    auto x = random_leaf({2, 2, 5, 5}, rng), k = random_leaf({3, 2, 3, 3}, rng), b = random_leaf({3}, rng);
    const auto probe = conv2d(x, k, stride, pad, b).shape();
    auto w = random_leaf(probe, rng);
    EXPECT_LT(check_gradient([&] { return sum(mul(conv2d(x, k, stride, pad, b), w)); }, {x, k, b}).rel_error,
              kTol);
  }
}

TEST(ConvTranspose2d, IsAdjointOfConv2d) {
  // <conv(x), y> == <x, conv_transpose(y)> when both use the same kernel.
  Rng rng(5);
  for (std::size_t stride : {1u, 2u}) {
    auto x = random_leaf({1, 2, 8, 8}, rng), k = random_leaf({3, 2, 4, 4}, rng);
    const auto cx = conv2d(x, k, stride, 1);
    auto y = random_leaf(cx.shape(), rng);
    const auto ty = conv_transpose2d(y, k, stride, 1);  // kernel read as [in=3, out=2, 4, 4]
    ASSERT_EQ(ty.shape(), x.shape());
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < cx.numel(); ++i) lhs += static_cast<double>(cx.data()[i]) * y.data()[i];
    for (std::size_t i = 0; i < x.numel(); ++i) rhs += static_cast<double>(x.data()[i]) * ty.data()[i];
    EXPECT_NEAR(lhs, rhs, 1e-4 * (1 + std::abs(lhs)));
  }
}

TEST(ConvTranspose2d, DoublesSpatialSizeAtStrideTwo) {
  EXPECT_EQ(conv_transpose2d(Tensor::zeros({1, 4, 8, 8}), Tensor::zeros({4, 2, 4, 4}), 2, 1).shape(),
            (Shape{1, 2, 16, 16}));
  EXPECT_THROW(conv_transpose2d(Tensor::zeros({1, 3, 8, 8}), Tensor::zeros({4, 2, 4, 4}), 2, 1),
               std::invalid_argument);
}

TEST(GradCheck, ConvTranspose2d) {
  Rng rng(6);
  for (int i = 0; i < 20; ++i) {
    auto x = random_leaf({2, 3, 3, 3}, rng), k = random_leaf({3, 2, 4, 4}, rng), b = random_leaf({2}, rng);
    auto w = random_leaf(conv_transpose2d(x, k, 2, 1, b).shape(), rng);
    EXPECT_LT(check_gradient([&] { return sum(mul(conv_transpose2d(x, k, 2, 1, b), w)); }, {x, k, b}).rel_error,
              kTol);
  }
}

}  // namespace
}  // namespace fedforge
