#include "support.hpp"

#include <chrnn/convnet.hpp>
#include <chrnn/errors.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace chrnn;
using chrnn::test::random_tensor;

namespace {

ConvLayerSpec make_spec(std::size_t out, std::size_t in, std::size_t k, std::size_t stride,
                        std::size_t pad, bool relu) {
  ConvLayerSpec s;
  s.out_channels = out;
  s.in_channels = in;
  s.kernel_h = k;
  s.kernel_w = k;
  s.stride = stride;
  s.padding = pad;
  s.relu = relu;
  return s;
}

// Six nested loops over (out, row, col, in, kh, kw); zero padding by bounds test.
Tensor<double> conv_oracle(const Tensor<double>& x, const ConvLayerSpec& s,
                           const Tensor<double>& w, const Tensor<double>& bias) {
  const std::size_t H = x.dim(1), W = x.dim(2);
  const std::size_t Ho = (H + 2 * s.padding - s.kernel_h) / s.stride + 1;
  const std::size_t Wo = (W + 2 * s.padding - s.kernel_w) / s.stride + 1;
  Tensor<double> y({s.out_channels, Ho, Wo});
  for (std::size_t o = 0; o < s.out_channels; ++o)
    for (std::size_t r = 0; r < Ho; ++r)
      for (std::size_t c = 0; c < Wo; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < s.in_channels; ++i)
          for (std::size_t kh = 0; kh < s.kernel_h; ++kh)
            for (std::size_t kw = 0; kw < s.kernel_w; ++kw) {
              const long h = static_cast<long>(r * s.stride + kh) - static_cast<long>(s.padding);
              const long v = static_cast<long>(c * s.stride + kw) - static_cast<long>(s.padding);
              if (h < 0 || v < 0 || h >= static_cast<long>(H) || v >= static_cast<long>(W)) continue;
              const double xv = x[(i * H + h) * W + v];
              acc += w(o, (i * s.kernel_h + kh) * s.kernel_w + kw) * xv;
            }
        acc += bias[o];
        y[(o * Ho + r) * Wo + c] = s.relu ? std::max(acc, 0.0) : acc;
      }
  return y;
}

Tensor<double> map_of(std::size_t d, std::size_t h, std::size_t w, std::size_t b, Rng& rng) {
  return random_tensor<double>({d, h, w, b}, rng);
}

}  // namespace

TEST(ConvSpec, OutputSizeFormula) {
  const auto s = make_spec(1, 1, 3, 2, 1, true);
  EXPECT_EQ(s.conv_extent(7, 3), 4u);
  EXPECT_EQ(s.output_size({7, 9}), (GridSize{4, 5}));
}

TEST(ConvSpec, ParsesLayerStack) {
  const auto stack = parse_conv_stack("16x5x5/s1/p2/pool2s2,32x5x5/s1/p2/pool2s2/linear", 3);
  ASSERT_EQ(stack.size(), 2u);
  EXPECT_EQ(stack[0].in_channels, 3u);
  EXPECT_EQ(stack[1].in_channels, 16u);
  EXPECT_EQ(stack[1].out_channels, 32u);
  EXPECT_TRUE(stack[0].relu);
  EXPECT_FALSE(stack[1].relu);
  ASSERT_TRUE(stack[0].pool.has_value());
  EXPECT_EQ(stack[0].pool->window, 2u);
  // Two such layers take 24x24 to a 6x6 map.
  GridSize g{24, 24};
  for (const auto& s : stack) g = s.output_size(g);
  EXPECT_EQ(g, (GridSize{6, 6}));
  EXPECT_EQ(parse_conv_stack(format_conv_stack(stack), 3).size(), 2u);
  EXPECT_THROW(parse_conv_stack("16x5", 1), ConfigError);
  EXPECT_THROW(parse_conv_stack("16x5x5/q3", 1), ConfigError);
}

TEST(Conv2d, OnesKernelOverOnesGivesNine) {
  const auto s = make_spec(1, 1, 3, 1, 0, false);
  Tensor<double> x({1, 3, 3}, 1.0);
  Tensor<double> w({1, 9}, 1.0);
  Tensor<double> b({1});
  const auto y = conv2d_forward(x, s, w, b);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(y[0], 9.0);
}

TEST(Conv2d, IdentityKernelPassesInputThrough) {
  Rng rng(1);
  const auto x = random_tensor<double>({1, 4, 5}, rng);
  const auto s = make_spec(1, 1, 1, 1, 0, false);
  const auto y = conv2d_forward(x, s, Tensor<double>({1, 1}, 1.0), Tensor<double>({1}));
  EXPECT_EQ(y, x);
}

TEST(Conv2d, BitIdenticalToSixLoopOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t pad = rng.below(2), stride = 1 + rng.below(2);
    const auto s = make_spec(3, 2, 3, stride, pad, rng.bernoulli(0.5));
    const auto x = random_tensor<double>({2, 5, 5}, rng);
    const auto w = random_tensor<double>({3, 18}, rng);
    const auto b = random_tensor<double>({3}, rng);
    EXPECT_EQ(conv2d_forward(x, s, w, b), conv_oracle(x, s, w, b)) << "seed " << seed;
  }
}

TEST(Conv2d, KernelLargerThanPaddedInputIsShapeError) {
  const auto s = make_spec(1, 1, 5, 1, 0, false);
  EXPECT_THROW(conv2d_forward(Tensor<double>({1, 3, 3}), s, Tensor<double>({1, 25}),
                              Tensor<double>({1})),
               ShapeError);
}

TEST(Conv2d, BatchedForwardMatchesPerSample) {
  Rng rng(4);
  auto s = make_spec(2, 3, 3, 1, 1, true);
  s.pool = PoolSpec{2, 2};
  Conv2d<double> layer(s);
  layer.init(rng);
  const auto x = random_tensor<double>({3, 6, 6, 3}, rng);
  const auto y = layer.forward(x);
  ASSERT_EQ(y.shape(), (Shape{2, 3, 3, 3}));
  for (std::size_t b = 0; b < 3; ++b) {
    Tensor<double> xb({3, 6, 6, 1});
    for (std::size_t i = 0; i < xb.size(); ++i) xb[i] = x[i * 3 + b];
    Conv2d<double> single(s);
    single.weight() = layer.weight();
    single.bias() = layer.bias();
    const auto yb = single.forward(xb);
    for (std::size_t i = 0; i < yb.size(); ++i) EXPECT_EQ(yb[i], y[i * 3 + b]);
  }
}

TEST(Conv2d, GradientsPassGradcheck) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto s = make_spec(2, 2, 3, 1 + rng.below(2), rng.below(2), seed % 2 == 0);
    if (seed % 3 == 0) s.pool = PoolSpec{2, 1};
    Conv2d<double> layer(s);
    layer.init(rng);
    for (auto& v : layer.bias().values()) v = rng.uniform(-0.5, 0.5);
    auto x = random_tensor<double>({2, 5, 5, 2}, rng);
    const Tensor<double> probe = layer.forward(x);
    const auto up = random_tensor<double>(probe.shape(), rng);

    layer.grad_weight().set_zero();
    layer.grad_bias().set_zero();
    const auto dx = layer.backward(up);
    auto loss = [&] { return test::weighted_sum(layer.forward(x), up); };
    const auto gw = test::to_vector(layer.grad_weight());
    const auto gb = test::to_vector(layer.grad_bias());
    EXPECT_TRUE(gradcheck(loss, layer.weight().values(), gw, "conv W").passed) << seed;
    EXPECT_TRUE(gradcheck(loss, layer.bias().values(), gb, "conv b").passed) << seed;
    EXPECT_TRUE(gradcheck(loss, x.values(), test::to_vector(dx), "conv x").passed) << seed;
  }
}

TEST(AdaptiveWindow, CoversInputAndMatchesFormula) {
  for (std::size_t in = 1; in <= 13; ++in)
    for (std::size_t out = 1; out <= in; ++out) {
      std::vector<int> covered(in, 0);
      for (std::size_t i = 0; i < out; ++i) {
        const auto [b, e] = adaptive_window(i, in, out);
        EXPECT_EQ(b, static_cast<std::size_t>(std::floor(double(i) * in / out)));
        EXPECT_EQ(e, static_cast<std::size_t>(std::ceil(double(i + 1) * in / out)));
        ASSERT_LT(b, e);
        for (std::size_t k = b; k < e; ++k) covered[k] = 1;
      }
      EXPECT_EQ(std::accumulate(covered.begin(), covered.end(), 0), static_cast<int>(in));
    }
}

TEST(AdaptiveMaxpool, GlobalTargetIsChannelMax) {
  Rng rng(2);
  const auto m = map_of(3, 5, 4, 2, rng);
  const auto p = adaptive_maxpool(m, {1, 1});
  for (std::size_t d = 0; d < 3; ++d)
    for (std::size_t b = 0; b < 2; ++b) {
      double best = -INFINITY;
      for (std::size_t h = 0; h < 5; ++h)
        for (std::size_t w = 0; w < 4; ++w) best = std::max(best, m[((d * 5 + h) * 4 + w) * 2 + b]);
      EXPECT_EQ(p.grid.at(0, 0, d, b), best);
    }
}

TEST(AdaptiveMaxpool, FullSizeTargetIsIdentity) {
  Rng rng(3);
  const auto m = map_of(2, 3, 4, 1, rng);
  const auto p = adaptive_maxpool(m, {3, 4});
  for (std::size_t d = 0; d < 2; ++d)
    for (std::size_t h = 0; h < 3; ++h)
      for (std::size_t w = 0; w < 4; ++w) EXPECT_EQ(p.grid.at(h, w, d), m[(d * 3 + h) * 4 + w]);
}

TEST(AdaptiveMaxpool, SixBySixToThreeByThreeTakesBlockMaxima) {
  Tensor<double> m({1, 6, 6, 1});
  std::vector<double> vals(36);
  std::iota(vals.begin(), vals.end(), 0.0);
  Rng rng(5);
  for (std::size_t i = 35; i > 0; --i) std::swap(vals[i], vals[rng.below(i + 1)]);
  for (std::size_t i = 0; i < 36; ++i) m[i] = vals[i];
  const auto p = adaptive_maxpool(m, {3, 3});
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      double best = -1;
      for (std::size_t h = 2 * r; h < 2 * r + 2; ++h)
        for (std::size_t w = 2 * c; w < 2 * c + 2; ++w) best = std::max(best, m[h * 6 + w]);
      EXPECT_EQ(p.grid.at(r, c, 0), best);
    }
}

TEST(AdaptiveMaxpool, MatchesBruteForceWindowsOnRandomShapes) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::size_t H = 1 + rng.below(9), W = 1 + rng.below(9);
    const std::size_t R = 1 + rng.below(H), C = 1 + rng.below(W);
    const auto m = map_of(2, H, W, 2, rng);
    const auto p = adaptive_maxpool(m, {R, C});
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t d = 0; d < 2; ++d)
          for (std::size_t b = 0; b < 2; ++b) {
            // Window bounds enumerated directly from the real-valued edges.
            double best = -INFINITY;
            for (std::size_t h = 0; h < H; ++h)
              for (std::size_t w = 0; w < W; ++w) {
                const bool in_r = h + 1 > double(r) * H / R && h < double(r + 1) * H / R;
                const bool in_c = w + 1 > double(c) * W / C && w < double(c + 1) * W / C;
                if (in_r && in_c) best = std::max(best, m[((d * H + h) * W + w) * 2 + b]);
              }
            ASSERT_EQ(p.grid.at(r, c, d, b), best) << "seed " << seed;
          }
  }
}

TEST(AdaptiveMaxpool, TargetLargerThanMapIsShapeError) {
  EXPECT_THROW(adaptive_maxpool(Tensor<double>({1, 3, 3, 1}), {4, 2}), ShapeError);
}

TEST(Pyramid, GlobalOnlyTarget) {
  Rng rng(6);
  const auto m = map_of(4, 6, 6, 1, rng);
  const std::vector<GridSize> t{{1, 1}};
  const auto p = build_pyramid(m, std::span<const GridSize>(t));
  ASSERT_EQ(p.levels.size(), 1u);
  EXPECT_EQ(p.levels[0].size(), (GridSize{1, 1}));
}

TEST(Pyramid, FourScalesOnSixBySixFinestIsRaw) {
  Rng rng(7);
  const auto m = map_of(5, 6, 6, 2, rng);
  const auto targets = parse_grid_list("1,2,3,6");
  const auto p = build_pyramid(m, std::span<const GridSize>(targets));
  ASSERT_EQ(p.levels.size(), 4u);
  for (std::size_t d = 0; d < 5; ++d)
    for (std::size_t h = 0; h < 6; ++h)
      for (std::size_t w = 0; w < 6; ++w)
        for (std::size_t b = 0; b < 2; ++b)
          EXPECT_EQ(p.levels[3].at(h, w, d, b), m[((d * 6 + h) * 6 + w) * 2 + b]);
}

TEST(Pyramid, ReferenceConfigurationRegionCounts) {
  Tensor<float> m({256, 6, 6, 1});
  const auto targets = parse_grid_list("1,2,3,6");
  const auto p = build_pyramid(m, std::span<const GridSize>(targets));
  const std::size_t expected[] = {1, 4, 9, 36};
  for (std::size_t l = 0; l < 4; ++l) {
    EXPECT_EQ(p.levels[l].cells(), expected[l]);
    EXPECT_EQ(p.levels[l].depth(), 256u);
  }
}

TEST(Pyramid, RejectsUnorderedTargets) {
  EXPECT_THROW(PyramidPooling<double>(parse_grid_list("3,2")), ShapeError);
}

TEST(Pyramid, MaxDominanceEveryCellIsAnInputValueInItsWindow) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto m = map_of(3, 7, 7, 1, rng);
    const auto targets = parse_grid_list("1,2,3,5");
    const auto p = build_pyramid(m, std::span<const GridSize>(targets));
    for (const auto& level : p.levels)
      for (std::size_t r = 0; r < level.rows(); ++r)
        for (std::size_t c = 0; c < level.cols(); ++c)
          for (std::size_t d = 0; d < 3; ++d) {
            const auto [h0, h1] = adaptive_window(r, 7, level.rows());
            const auto [w0, w1] = adaptive_window(c, 7, level.cols());
            bool found = false;
            for (std::size_t h = h0; h < h1; ++h)
              for (std::size_t w = w0; w < w1; ++w) {
                const double v = m[(d * 7 + h) * 7 + w];
                EXPECT_LE(v, level.at(r, c, d));
                found = found || v == level.at(r, c, d);
              }
            EXPECT_TRUE(found);
          }
  }
}

TEST(Pyramid, ChannelPermutationCommutesWithPooling) {
  Rng rng(8);
  const std::size_t D = 5;
  const auto m = map_of(D, 6, 6, 1, rng);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  Tensor<double> pm(m.shape());
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t k = 0; k < 36; ++k) pm[perm[d] * 36 + k] = m[d * 36 + k];
  const auto targets = parse_grid_list("1,2,3,6");
  const auto a = build_pyramid(m, std::span<const GridSize>(targets));
  const auto b = build_pyramid(pm, std::span<const GridSize>(targets));
  for (std::size_t l = 0; l < 4; ++l)
    for (std::size_t r = 0; r < a.levels[l].rows(); ++r)
      for (std::size_t c = 0; c < a.levels[l].cols(); ++c)
        for (std::size_t d = 0; d < D; ++d)
          EXPECT_EQ(b.levels[l].at(r, c, perm[d]), a.levels[l].at(r, c, d));
}

TEST(Pyramid, BackwardRoutesGradientsToArgmax) {
  Rng rng(9);
  auto m = map_of(2, 6, 6, 2, rng);
  const auto targets = parse_grid_list("1,2,3");
  PyramidPooling<double> pool(targets);
  const auto p = pool.forward(m);
  std::vector<FeatureGrid<double>> ups;
  for (const auto& l : p.levels) {
    FeatureGrid<double> g(l.rows(), l.cols(), l.depth(), l.batch());
    test::fill_uniform(g.tensor(), rng);
    ups.push_back(std::move(g));
  }
  const auto dm = pool.backward(ups);
  auto loss = [&] {
    const auto q = build_pyramid(m, std::span<const GridSize>(targets));
    double s = 0;
    for (std::size_t l = 0; l < q.levels.size(); ++l)
      s += test::weighted_sum(q.levels[l].tensor(), ups[l].tensor());
    return s;
  };
  EXPECT_TRUE(gradcheck(loss, m.values(), test::to_vector(dm), "pyramid").passed);
}
