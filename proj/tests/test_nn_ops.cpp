#include <gtest/gtest.h>

#include "egf/grad_check.hpp"
#include "egf/nn_ops.hpp"
#include "egf/ref/scalar_ref.hpp"
#include "support/test_util.hpp"

using namespace egf;
using egf::test::bit_identical;
using egf::test::max_abs_diff;
using egf::test::to_vol;

namespace {

Conv2dParams conv_from(const Tensor& w, const Tensor& b, int stride, int padding,
                       int dilation) {
  Conv2dParams p;
  p.weight = w;
  p.bias = b;
  p.stride = stride;
  p.padding = padding;
  p.dilation = dilation;
  return p;
}

std::vector<double> bias_vec(const Conv2dParams& p) {
  return p.bias.defined() ? p.bias.values() : std::vector<double>{};
}

}  // namespace

TEST(Conv2d, SpatialPreservingShapes) {
  Rng rng(0);
  auto s = rng.stream("init");
  Tensor x = Tensor::randn(Shape4{1, 8, 12, 10}, 1.0, s);
  for (int d = 1; d <= 4; ++d) {
    Conv2dParams p = make_conv2d(8, 5, 3, 1, d, d, s);
    Tensor y = conv2d(nullptr, x, p);
    EXPECT_EQ(y.shape(), (Shape4{1, 5, 12, 10})) << "dilation " << d;
  }
}

TEST(Conv2d, IdentityOneByOne) {
  Rng rng(1);
  auto s = rng.stream("init");
  Tensor x = Tensor::randn(Shape4{2, 3, 5, 5}, 1.0, s);
  Tensor w = Tensor::zeros(Shape4{3, 3, 1, 1});
  for (std::int64_t c = 0; c < 3; ++c) w.at(c, c, 0, 0) = 1.0;
  Conv2dParams p = conv_from(w, Tensor::zeros(Shape4{1, 3, 1, 1}), 1, 0, 1);
  EXPECT_TRUE(bit_identical(conv2d(nullptr, x, p), x));
}

TEST(Conv2d, MatchesLoopOracle) {
  Rng rng(2);
  auto s = rng.stream("init");
  for (std::int64_t n : {1, 2})
    for (std::int64_t cin : {1, 3})
      for (std::int64_t hw : {5, 9})
        for (int dil : {1, 2, 3, 4})
          for (int stride : {1, 2}) {
            const int pad = dil;  // keeps outputs non-degenerate
            if (conv_out_extent(hw, 3, stride, pad, dil) < 1) continue;
            Tensor x = Tensor::randn(Shape4{n, cin, hw, hw}, 1.0, s);
            Conv2dParams p = make_conv2d(cin, 4, 3, stride, pad, dil, s);
            Tensor got = conv2d(nullptr, x, p);
            ref::Vol want = ref::conv2d(to_vol(x), to_vol(p.weight), bias_vec(p),
                                        stride, pad, dil);
            ASSERT_EQ(got.numel(), want.numel());
            EXPECT_LT(max_abs_diff(got, want), 1e-10)
                << "n=" << n << " cin=" << cin << " hw=" << hw << " d=" << dil
                << " s=" << stride;
          }
}

TEST(Conv2d, DilatedCaseMatchesOracle) {
  Rng rng(3);
  auto s = rng.stream("init");
  Tensor x = Tensor::randn(Shape4{1, 2, 5, 5}, 1.0, s);
  Conv2dParams p = make_conv2d(2, 3, 3, 1, 2, 2, s);
  Tensor got = conv2d(nullptr, x, p);
  ref::Vol want = ref::conv2d(to_vol(x), to_vol(p.weight), bias_vec(p), 1, 2, 2);
  EXPECT_LT(max_abs_diff(got, want), 1e-10);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  auto s = rng.stream("init");
  Tensor x = Tensor::randn(Shape4{1, 2, 5, 5}, 1.0, s);
  Conv2dParams p = make_conv2d(2, 3, 3, 1, 2, 2, s);
  auto fwd = [&] { return sum(nullptr, conv2d(nullptr, x, p)).item(); };
  auto bwd = [&] {
    GradTape tape;
    backward(sum(&tape, conv2d(&tape, x, p)));
  };
  auto res = check_gradients(fwd, bwd,
                             {{"x", x}, {"w", p.weight}, {"b", p.bias}});
  EXPECT_TRUE(res.ok) << res.worst;
}

TEST(Conv2d, StridedGradients) {
  Rng rng(5);
  auto s = rng.stream("init");
  Tensor x = Tensor::randn(Shape4{2, 3, 6, 6}, 1.0, s);
  Conv2dParams p = make_conv2d(3, 2, 3, 2, 1, 1, s);
  auto fwd = [&] { return sum(nullptr, conv2d(nullptr, x, p)).item(); };
  auto bwd = [&] {
    GradTape tape;
    backward(sum(&tape, conv2d(&tape, x, p)));
  };
  auto res = check_gradients(fwd, bwd, {{"x", x}, {"w", p.weight}});
  EXPECT_TRUE(res.ok) << res.worst;
}

TEST(Conv2d, Errors) {
  Rng rng(6);
  auto s = rng.stream("init");
  Tensor x = Tensor::randn(Shape4{1, 2, 5, 5}, 1.0, s);
  Conv2dParams wrong_cin = make_conv2d(3, 2, 3, 1, 1, 1, s);
  EXPECT_THROW(conv2d(nullptr, x, wrong_cin), std::invalid_argument);
  Conv2dParams degenerate = make_conv2d(2, 2, 3, 1, 0, 4, s);  // taps span 9 > 5
  EXPECT_THROW(conv2d(nullptr, x, degenerate), std::invalid_argument);
}

TEST(BatchNorm2d, ZeroInputZeroShiftGivesZeros) {
  Tensor x = Tensor::zeros(Shape4{2, 3, 4, 4});
  BatchNormParams p = make_batchnorm(3);
  Tensor y = batchnorm2d(nullptr, x, p, BnMode::train);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(BatchNorm2d, NormalizesPerChannel) {
  Rng rng(7);
  auto s = rng.stream("init");
  Tensor x = Tensor::randn(Shape4{2, 3, 8, 8}, 2.0, s);
  for (double& v : x.values()) v += 1.5;
  BatchNormParams p = make_batchnorm(3);
  Tensor y = batchnorm2d(nullptr, x, p, BnMode::train);
  const std::int64_t plane = 8 * 8;
  for (std::int64_t c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t i = 0; i < plane; ++i)
        mean += y.values()[static_cast<std::size_t>((n * 3 + c) * plane + i)];
    mean /= 2 * plane;
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t i = 0; i < plane; ++i) {
        double d = y.values()[static_cast<std::size_t>((n * 3 + c) * plane + i)] - mean;
        var += d * d;
      }
    var /= 2 * plane;
    EXPECT_NEAR(mean, 0.0, 1e-8);
    EXPECT_NEAR(var, 1.0, 1e-3);  // eps shrinks the variance slightly
  }
}

TEST(BatchNorm2d, MatchesScalarOracle) {
  Rng rng(8);
  auto s = rng.stream("init");
  Tensor x = Tensor::randn(Shape4{2, 3, 4, 4}, 1.0, s);
  BatchNormParams p = make_batchnorm(3);
  for (double& v : p.scale.values()) v = 0.5 + s.next_double();
  for (double& v : p.shift.values()) v = s.next_double() - 0.5;

  Tensor got = batchnorm2d(nullptr, x, p, BnMode::train);
  ref::Vol want = ref::bn_train(to_vol(x), p.scale.values(), p.shift.values(), p.eps);
  EXPECT_LT(max_abs_diff(got, want), 1e-10);

  // Eval mode against the running stats the train pass just blended.
  Tensor got_eval = batchnorm2d(nullptr, x, p, BnMode::eval);
  ref::Vol want_eval = ref::bn_eval(to_vol(x), p.scale.values(), p.shift.values(),
                                    p.running_mean.values(), p.running_var.values(),
                                    p.eps);
  EXPECT_LT(max_abs_diff(got_eval, want_eval), 1e-10);
}

TEST(BatchNorm2d, RunningStatsMomentumBlend) {
  Rng rng(9);
  auto s = rng.stream("init");
  Tensor x = Tensor::randn(Shape4{4, 1, 3, 3}, 1.0, s);
  for (double& v : x.values()) v = 2.0 * v + 3.0;
  BatchNormParams p = make_batchnorm(1);
  double mean = 0.0, var = 0.0;
  for (double v : x.values()) mean += v;
  mean /= static_cast<double>(x.numel());
  for (double v : x.values()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.numel());
  batchnorm2d(nullptr, x, p, BnMode::train);
  EXPECT_NEAR(p.running_mean.values()[0], 0.9 * 0.0 + 0.1 * mean, 1e-12);
  EXPECT_NEAR(p.running_var.values()[0], 0.9 * 1.0 + 0.1 * var, 1e-12);
}

TEST(BatchNorm2d, GradientsMatchFiniteDifferences) {
  Rng rng(10);
  auto s = rng.stream("init");
  Tensor x = Tensor::randn(Shape4{1, 3, 6, 6}, 1.0, s);
  BatchNormParams p = make_batchnorm(3);
  for (double& v : p.scale.values()) v = 0.75 + 0.5 * s.next_double();

  // Weighted sum keeps the objective sensitive to normalization shape.
  Tensor probe = Tensor::randn(Shape4{1, 3, 6, 6}, 1.0, s);
  auto fwd = [&] {
    return sum(nullptr, mul(nullptr, batchnorm2d(nullptr, x, p, BnMode::train), probe))
        .item();
  };
  auto bwd = [&] {
    GradTape tape;
    backward(sum(&tape, mul(&tape, batchnorm2d(&tape, x, p, BnMode::train), probe)));
  };
  auto res = check_gradients(fwd, bwd,
                             {{"x", x}, {"scale", p.scale}, {"shift", p.shift}});
  EXPECT_TRUE(res.ok) << res.worst;
}

TEST(BatchNorm2d, EvalModeGradients) {
  Rng rng(11);
  auto s = rng.stream("init");
  Tensor x = Tensor::randn(Shape4{1, 2, 5, 5}, 1.0, s);
  BatchNormParams p = make_batchnorm(2);
  p.running_mean.values() = {0.3, -0.2};
  p.running_var.values() = {1.5, 0.7};
  Tensor probe = Tensor::randn(Shape4{1, 2, 5, 5}, 1.0, s);
  auto fwd = [&] {
    return sum(nullptr, mul(nullptr, batchnorm2d(nullptr, x, p, BnMode::eval), probe))
        .item();
  };
  auto bwd = [&] {
    GradTape tape;
    backward(sum(&tape, mul(&tape, batchnorm2d(&tape, x, p, BnMode::eval), probe)));
  };
  auto res = check_gradients(fwd, bwd, {{"x", x}, {"scale", p.scale}});
  EXPECT_TRUE(res.ok) << res.worst;
}

TEST(BatchNorm2d, Errors) {
  Tensor x = Tensor::zeros(Shape4{1, 2, 4, 4});
  BatchNormParams p = make_batchnorm(3);
  EXPECT_THROW(batchnorm2d(nullptr, x, p, BnMode::train), std::invalid_argument);
  Tensor empty = Tensor::zeros(Shape4{0, 3, 4, 4});
  EXPECT_THROW(batchnorm2d(nullptr, empty, p, BnMode::train), std::invalid_argument);
}

TEST(Upsample, FactorOneIsIdentity) {
  Rng rng(12);
  auto s = rng.stream("init");
  Tensor x = Tensor::randn(Shape4{1, 3, 4, 5}, 1.0, s);
  EXPECT_TRUE(bit_identical(upsample_bilinear(nullptr, x, 1), x));
}

TEST(Upsample, ConstantStaysConstant) {
  Tensor x = Tensor::full(Shape4{1, 2, 3, 3}, 4.25);
  Tensor y = upsample_bilinear(nullptr, x, 4);
  EXPECT_EQ(y.shape(), (Shape4{1, 2, 12, 12}));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 4.25);
}

TEST(Upsample, HandCaseMatchesCoordinateFormula) {
  Tensor x = Tensor::from_values(Shape4{1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor got = upsample_bilinear(nullptr, x, 2);
  ref::Vol want = ref::upsample_bilinear(to_vol(x), 2);
  EXPECT_EQ(max_abs_diff(got, want), 0.0);
  // Spot values derived by hand from the half-pixel-center formula.
  EXPECT_DOUBLE_EQ(got.at(0, 0, 0, 0), 1.0);
  EXPECT_DOUBLE_EQ(got.at(0, 0, 0, 1), 1.25);
  EXPECT_DOUBLE_EQ(got.at(0, 0, 1, 1), 1.75);
  EXPECT_DOUBLE_EQ(got.at(0, 0, 3, 3), 4.0);
}

TEST(Upsample, MatchesOracleOnRandomInput) {
  Rng rng(13);
  auto s = rng.stream("init");
  Tensor x = Tensor::randn(Shape4{2, 3, 3, 4}, 1.0, s);
  for (int f : {2, 3, 4}) {
    Tensor got = upsample_bilinear(nullptr, x, f);
    ref::Vol want = ref::upsample_bilinear(to_vol(x), f);
    EXPECT_LT(max_abs_diff(got, want), 1e-12) << "factor " << f;
  }
}

TEST(Upsample, GradientsMatchFiniteDifferences) {
  Rng rng(14);
  auto s = rng.stream("init");
  Tensor x = Tensor::randn(Shape4{1, 2, 3, 3}, 1.0, s);
  Tensor probe = Tensor::randn(Shape4{1, 2, 6, 6}, 1.0, s);
  auto fwd = [&] {
    return sum(nullptr, mul(nullptr, upsample_bilinear(nullptr, x, 2), probe)).item();
  };
  auto bwd = [&] {
    GradTape tape;
    backward(sum(&tape, mul(&tape, upsample_bilinear(&tape, x, 2), probe)));
  };
  auto res = check_gradients(fwd, bwd, {{"x", x}});
  EXPECT_TRUE(res.ok) << res.worst;
}

TEST(Cbr, MatchesPrimitiveComposition) {
  Rng rng(15);
  auto s = rng.stream("init");
  Tensor x = Tensor::randn(Shape4{1, 4, 6, 6}, 1.0, s);
  CbrBlock block = make_cbr(4, 5, 2, s);

  CbrBlock copy;
  copy.conv.weight = block.conv.weight.clone();
  copy.conv.bias = block.conv.bias.clone();
  copy.conv.stride = block.conv.stride;
  copy.conv.padding = block.conv.padding;
  copy.conv.dilation = block.conv.dilation;
  copy.bn = make_batchnorm(5);

  Tensor got = cbr(nullptr, x, block, BnMode::train);
  Tensor want = relu(nullptr,
                     batchnorm2d(nullptr, conv2d(nullptr, x, copy.conv), copy.bn,
                                 BnMode::train));
  EXPECT_TRUE(bit_identical(got, want));
  EXPECT_EQ(got.shape(), (Shape4{1, 5, 6, 6}));
}

TEST(Cbr, ZeroInputPropagatesZero) {
  Rng rng(16);
  auto s = rng.stream("init");
  Tensor x = Tensor::zeros(Shape4{1, 4, 6, 6});
  CbrBlock block = make_cbr(4, 3, 1, s);
  Tensor y = cbr(nullptr, x, block, BnMode::train);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Cbr, RejectsNonPreservingConv) {
  Rng rng(17);
  auto s = rng.stream("init");
  CbrBlock block;
  block.conv = make_conv2d(4, 4, 3, 1, 1, 2, s);  // padding != dilation
  block.bn = make_batchnorm(4);
  Tensor x = Tensor::zeros(Shape4{1, 4, 6, 6});
  EXPECT_THROW(cbr(nullptr, x, block, BnMode::train), std::invalid_argument);
}
