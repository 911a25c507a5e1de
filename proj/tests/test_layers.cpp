#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <random>

#include "slugplan/layers.hpp"
#include "support/oracles.hpp"

using namespace slugplan;

namespace {

::testing::AssertionResult BitEqual(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    return ::testing::AssertionFailure() << "shape " << a.shape() << " vs " << b.shape();
  }
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    if (std::bit_cast<std::uint32_t>(a.data()[i]) != std::bit_cast<std::uint32_t>(b.data()[i])) {
      return ::testing::AssertionFailure() << "element " << i << ": " << a.data()[i] << " vs " << b.data()[i];
    }
  }
  return ::testing::AssertionSuccess();
}

ParamTensor values(std::vector<float> v) { return ParamTensor{std::move(v), {}, std::nullopt}; }

Tensor from(Shape4 s, std::vector<float> v) { return Tensor(s, std::move(v)); }

Window win(std::int64_t k, std::int64_t s, std::int64_t p) { return {{k, k}, {s, s}, {p, p}}; }

Window random_window(std::mt19937_64& rng, std::int64_t h, std::int64_t w) {
  for (;;) {
    Window g{{1 + static_cast<std::int64_t>(rng() % 4), 1 + static_cast<std::int64_t>(rng() % 4)},
             {1 + static_cast<std::int64_t>(rng() % 3), 1 + static_cast<std::int64_t>(rng() % 3)},
             {0, 0}};
    g.padding = {static_cast<std::int64_t>(rng() % g.kernel.h), static_cast<std::int64_t>(rng() % g.kernel.w)};
    if (window_output_extent(h, g.kernel.h, g.stride.h, g.padding.h) >= 1 &&
        window_output_extent(w, g.kernel.w, g.stride.w, g.padding.w) >= 1) {
      return g;
    }
  }
}

Shape4 random_shape(std::mt19937_64& rng) {
  return {1 + rng() % 3, 1 + rng() % 4, 1 + rng() % 12, 1 + rng() % 12};
}

}  // namespace

TEST(Classify, ExhaustiveOverKinds) {
  for (LayerKind k : kAllLayerKinds) {
    const OpClass c = classify(k);
    const bool opaque = k == LayerKind::kConv2d || k == LayerKind::kLinear;
    EXPECT_EQ(c == OpClass::kOpaque, opaque);
    EXPECT_EQ(is_optimizable(k), !opaque);
    EXPECT_EQ(kind_from_name(kind_name(k)), k);
  }
  EXPECT_EQ(classify(LayerKind::kRelu), OpClass::kElementwise);
  EXPECT_EQ(classify(LayerKind::kBatchNorm), OpClass::kElementwise);
  EXPECT_EQ(classify(LayerKind::kMaxPool), OpClass::kPooling);
  EXPECT_EQ(classify(LayerKind::kAvgPool), OpClass::kPooling);
  EXPECT_FALSE(kind_from_name("softmax").has_value());
}

TEST(Relu, Examples) {
  EXPECT_TRUE(BitEqual(relu(from({1, 1, 1, 3}, {-1.0f, 0.0f, 2.5f})), from({1, 1, 1, 3}, {0.0f, 0.0f, 2.5f})));
  EXPECT_TRUE(BitEqual(relu(Tensor(Shape4{2, 2, 3, 3}, -0.5f)), Tensor(Shape4{2, 2, 3, 3}, 0.0f)));
}

TEST(Relu, MatchesOracle) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 60; ++i) {
    const Tensor x = prng_fill(rng(), random_shape(rng));
    EXPECT_TRUE(BitEqual(relu(x), oracle::relu(x)));
  }
}

TEST(BatchNorm, IdentityParameters) {
  const Tensor x = prng_fill(4, {1, 3, 5, 5});
  BatchNormParams p{values({1, 1, 1}), values({0, 0, 0}), values({0, 0, 0}), values({1, 1, 1}), 1e-12f};
  const Tensor y = batchnorm_inference(x, p);
  for (std::size_t i = 0; i < x.data().size(); ++i) {
    EXPECT_LE(std::fabs(y.data()[i] - x.data()[i]), 1e-6f * std::fabs(x.data()[i]));
  }
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  const Tensor x = prng_fill(4, {2, 2, 3, 3});
  BatchNormParams p{values({0, 0}), values({0.25f, -3.0f}), values({0.1f, 0.2f}), values({2, 1}), 1e-5f};
  const Tensor y = batchnorm_inference(x, p);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t h = 0; h < 3; ++h) {
      EXPECT_EQ(y.at(n, 0, h, 1), 0.25f);
      EXPECT_EQ(y.at(n, 1, h, 2), -3.0f);
    }
  }
}

TEST(BatchNorm, LengthMismatch) {
  const Tensor x = prng_fill(4, {1, 3, 2, 2});
  BatchNormParams p{values({1, 1}), values({0, 0}), values({0, 0}), values({1, 1}), 1e-5f};
  EXPECT_THROW(batchnorm_inference(x, p), ShapeError);
}

TEST(BatchNorm, MatchesOracle) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 60; ++i) {
    const Shape4 s = i == 0 ? Shape4{1, 2, 4, 4} : random_shape(rng);
    const Tensor x = prng_fill(rng(), s);
    auto gamma = prng_vector(rng(), s.c), beta = prng_vector(rng(), s.c), mean = prng_vector(rng(), s.c),
         var = prng_vector(rng(), s.c);
    for (float& v : var) v = std::fabs(v) * 3.0f;
    const float eps = 1e-5f;
    const BatchNormParams p{values(gamma), values(beta), values(mean), values(var), eps};
    EXPECT_TRUE(BitEqual(batchnorm_inference(x, p), oracle::batchnorm(x, gamma, beta, mean, var, eps)));
  }
}

TEST(MaxPool, HandEnumeration) {
  std::vector<float> v(16);
  for (int i = 0; i < 16; ++i) v[i] = static_cast<float>(i + 1);
  const Tensor y = maxpool2d(from({1, 1, 4, 4}, v), win(2, 2, 0));
  EXPECT_TRUE(BitEqual(y, from({1, 1, 2, 2}, {6, 8, 14, 16})));
}

TEST(MaxPool, IdentityWindow) {
  const Tensor x = prng_fill(3, {2, 3, 5, 4});
  EXPECT_TRUE(BitEqual(maxpool2d(x, win(1, 1, 0)), x));
}

TEST(MaxPool, PaddingNeverWins) {
  const Tensor y = maxpool2d(Tensor(Shape4{1, 1, 2, 2}, 5.0f), win(3, 1, 1));
  EXPECT_TRUE(BitEqual(y, Tensor(Shape4{1, 1, 2, 2}, 5.0f)));
  const Tensor z = maxpool2d(Tensor(Shape4{1, 1, 2, 2}, -5.0f), win(3, 1, 1));
  EXPECT_TRUE(BitEqual(z, Tensor(Shape4{1, 1, 2, 2}, -5.0f)));
}

TEST(AvgPool, Examples) {
  EXPECT_TRUE(BitEqual(avgpool2d(from({1, 1, 2, 2}, {1, 2, 3, 4}), win(2, 2, 0)), from({1, 1, 1, 1}, {2.5f})));
  const Tensor x = prng_fill(8, {1, 2, 3, 3});
  EXPECT_TRUE(BitEqual(avgpool2d(x, win(1, 1, 0)), x));
  const Tensor y = avgpool2d(Tensor(Shape4{1, 1, 2, 2}, 4.0f), win(3, 1, 1));
  EXPECT_EQ(y.at(0, 0, 0, 0), 16.0f / 9.0f);
}

TEST(Pool, RejectsEmptyOutput) {
  const Tensor x = prng_fill(8, {1, 1, 2, 2});
  EXPECT_THROW(maxpool2d(x, win(4, 1, 0)), ShapeError);
  EXPECT_THROW(avgpool2d(x, win(3, 1, 0)), ShapeError);
}

TEST(Pool, MatchesOracle) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 120; ++i) {
    const Shape4 s = random_shape(rng);
    const Window g = random_window(rng, static_cast<std::int64_t>(s.h), static_cast<std::int64_t>(s.w));
    const Tensor x = prng_fill(rng(), s);
    const auto args = std::make_tuple(g.kernel.h, g.kernel.w, g.stride.h, g.stride.w, g.padding.h, g.padding.w);
    const auto run = [&](bool is_max) {
      return oracle::pool(is_max, x, static_cast<int>(std::get<0>(args)), static_cast<int>(std::get<1>(args)),
                          static_cast<int>(std::get<2>(args)), static_cast<int>(std::get<3>(args)),
                          static_cast<int>(std::get<4>(args)), static_cast<int>(std::get<5>(args)));
    };
    EXPECT_TRUE(BitEqual(maxpool2d(x, g), run(true))) << to_string(g);
    EXPECT_TRUE(BitEqual(avgpool2d(x, g), run(false))) << to_string(g);
  }
}

TEST(Pool, ShapeLawProperty) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 200; ++i) {
    const Shape4 s = random_shape(rng);
    const Window g = random_window(rng, static_cast<std::int64_t>(s.h), static_cast<std::int64_t>(s.w));
    const Shape4 o = pool_output_shape(s, g);
    EXPECT_EQ(static_cast<std::int64_t>(o.h), (static_cast<std::int64_t>(s.h) + 2 * g.padding.h - g.kernel.h) / g.stride.h + 1);
    EXPECT_EQ(static_cast<std::int64_t>(o.w), (static_cast<std::int64_t>(s.w) + 2 * g.padding.w - g.kernel.w) / g.stride.w + 1);
  }
}

TEST(Pool, MaxDominatesAvgOnNonNegativeInputs) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const Shape4 s = random_shape(rng);
    const Window g = random_window(rng, static_cast<std::int64_t>(s.h), static_cast<std::int64_t>(s.w));
    Tensor x = prng_fill(rng(), s);
    for (float& v : x.data()) v = std::fabs(v);
    const Tensor mx = maxpool2d(x, g), av = avgpool2d(x, g);
    for (std::size_t k = 0; k < mx.data().size(); ++k) EXPECT_GE(mx.data()[k], av.data()[k]);
  }
}

// Patch form on an extracted window equals the matching window of the
// whole-tensor result.
TEST(Pool, PatchFormMatchesWholeForm) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 150; ++i) {
    const Shape4 s = random_shape(rng);
    const Window g = random_window(rng, static_cast<std::int64_t>(s.h), static_cast<std::int64_t>(s.w));
    const LayerKind kind = rng() % 2 ? LayerKind::kMaxPool : LayerKind::kAvgPool;
    const Tensor x = prng_fill(rng(), s);
    const Tensor whole = pool2d(kind, x, g);
    const auto oh = static_cast<std::int64_t>(whole.shape().h), ow = static_cast<std::int64_t>(whole.shape().w);
    const std::int64_t r0 = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(oh));
    const std::int64_t c0 = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(ow));
    const Region out{{r0, r0 + 1 + static_cast<std::int64_t>(rng() % 5)}, {c0, c0 + 1 + static_cast<std::int64_t>(rng() % 5)}};
    const Region in{{out.rows.lo * g.stride.h - g.padding.h, (out.rows.hi - 1) * g.stride.h + g.kernel.h - g.padding.h},
                    {out.cols.lo * g.stride.w - g.padding.w, (out.cols.hi - 1) * g.stride.w + g.kernel.w - g.padding.w}};
    const std::size_t b = rng() % s.n, c = rng() % s.c;
    // Deliberately load with the "wrong" policy: padding is decided by coordinates.
    const Patch src = extract_region(x, b, c, in, kind == LayerKind::kMaxPool ? PadPolicy::kZero : PadPolicy::kNegInf);
    const Patch got = pool_patch(kind, g, src, static_cast<std::int64_t>(s.h), static_cast<std::int64_t>(s.w), out, oh, ow);
    for (std::int64_t y = out.rows.lo; y < std::min(out.rows.hi, oh); ++y) {
      for (std::int64_t xx = out.cols.lo; xx < std::min(out.cols.hi, ow); ++xx) {
        EXPECT_EQ(std::bit_cast<std::uint32_t>(got.at(y, xx)),
                  std::bit_cast<std::uint32_t>(whole.at(b, c, static_cast<std::size_t>(y), static_cast<std::size_t>(xx))));
      }
    }
  }
}

TEST(Conv2d, Examples) {
  const Tensor x = prng_fill(1, {2, 1, 4, 5});
  Conv2dParams id{1, win(1, 1, 0), values({1.0f}), values({0.0f})};
  EXPECT_TRUE(BitEqual(conv2d(x, id), x));
  Conv2dParams zero{2, win(3, 1, 1), values(std::vector<float>(18, 0.0f)), values({1.5f, -2.0f})};
  const Tensor y = conv2d(x, zero);
  for (std::size_t h = 0; h < 4; ++h) {
    EXPECT_EQ(y.at(1, 0, h, 2), 1.5f);
    EXPECT_EQ(y.at(0, 1, h, 4), -2.0f);
  }
  Conv2dParams bad{1, win(1, 1, 0), values({1.0f, 2.0f}), values({0.0f})};
  EXPECT_THROW(conv2d(x, bad), ShapeError);
}

TEST(Conv2d, MatchesOracle) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 60; ++i) {
    Shape4 s = random_shape(rng);
    std::size_t kout = 1 + rng() % 4;
    Window g = random_window(rng, static_cast<std::int64_t>(s.h), static_cast<std::int64_t>(s.w));
    if (i == 0) {
      s = {1, 2, 5, 5};
      kout = 3;
      g = win(3, 1, 1);
    }
    const Tensor x = prng_fill(rng(), s);
    const auto w = prng_vector(rng(), kout * s.c * static_cast<std::size_t>(g.kernel.h * g.kernel.w));
    const auto b = prng_vector(rng(), kout);
    const Tensor got = conv2d(x, {kout, g, values(w), values(b)});
    const Tensor want = oracle::conv2d(x, w, b, kout, static_cast<int>(g.kernel.h), static_cast<int>(g.kernel.w),
                                       static_cast<int>(g.stride.h), static_cast<int>(g.stride.w),
                                       static_cast<int>(g.padding.h), static_cast<int>(g.padding.w));
    EXPECT_TRUE(BitEqual(got, want)) << to_string(g);
  }
}

TEST(Linear, Examples) {
  const Tensor x = prng_fill(2, {3, 2, 1, 2});
  std::vector<float> eye(16, 0.0f);
  for (int i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0f;
  const Tensor y = linear(x, {4, values(eye), values({0, 0, 0, 0})});
  EXPECT_EQ(y.shape(), (Shape4{3, 4, 1, 1}));
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
  const Tensor z = linear(Tensor(Shape4{2, 4, 1, 1}, 0.0f), {2, values(prng_vector(1, 8)), values({0.5f, -1.0f})});
  EXPECT_EQ(z.at(1, 0, 0, 0), 0.5f);
  EXPECT_EQ(z.at(1, 1, 0, 0), -1.0f);
  EXPECT_THROW(linear(x, {2, values(prng_vector(1, 7)), values({0, 0})}), ShapeError);
}

TEST(Linear, MatchesOracle) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 60; ++i) {
    const Shape4 s = i == 0 ? Shape4{4, 8, 1, 1} : random_shape(rng);
    const std::size_t out = i == 0 ? 3 : 1 + rng() % 6;
    const std::size_t f = s.c * s.h * s.w;
    const Tensor x = prng_fill(rng(), s);
    const auto w = prng_vector(rng(), out * f);
    const auto b = prng_vector(rng(), out);
    EXPECT_TRUE(BitEqual(linear(x, {out, values(w), values(b)}), oracle::linear(x, w, b, out)));
  }
}
