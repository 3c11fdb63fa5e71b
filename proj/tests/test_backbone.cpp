#include <gtest/gtest.h>

#include <map>
#include <set>

#include "egf/backbone.hpp"
#include "support/test_util.hpp"

using namespace egf;

TEST(Encoder, PyramidShapes) {
  Rng rng(0);
  auto s = rng.stream("init");
  Encoder enc = Encoder::init(EncoderConfig{}, s);
  Tensor img = Tensor::randn(Shape4{1, 3, 64, 64}, 1.0, s);
  FeaturePyramid fp = enc.encode(RunCtx::train(nullptr), img);
  const std::int64_t sizes[5] = {32, 16, 8, 4, 2};
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(fp.levels[static_cast<std::size_t>(i)].shape(),
              (Shape4{1, 64, sizes[i], sizes[i]}))
        << "level " << i + 1;
  }
}

TEST(Encoder, PyramidShapesNonSquare) {
  Rng rng(1);
  auto s = rng.stream("init");
  EncoderConfig cfg;
  cfg.in_channels = 1;
  Encoder enc = Encoder::init(cfg, s);
  Tensor img = Tensor::randn(Shape4{2, 1, 96, 64}, 1.0, s);
  FeaturePyramid fp = enc.encode(RunCtx::train(nullptr), img);
  for (int i = 0; i < 5; ++i) {
    const std::int64_t d = 2 << i;
    EXPECT_EQ(fp.levels[static_cast<std::size_t>(i)].shape(),
              (Shape4{2, 64, 96 / d, 64 / d}));
  }
}

TEST(Encoder, ZeroInputPropagatesZeros) {
  Rng rng(2);
  auto s = rng.stream("init");
  Encoder enc = Encoder::init(EncoderConfig{}, s);
  Tensor img = Tensor::zeros(Shape4{1, 3, 64, 64});
  FeaturePyramid fp = enc.encode(RunCtx::train(nullptr), img);
  for (const Tensor& level : fp.levels)
    for (double v : level.values()) EXPECT_EQ(v, 0.0);
}

TEST(Encoder, ParameterCountMatchesClosedForm) {
  Rng rng(3);
  auto s = rng.stream("init");
  EncoderConfig cfg;
  Encoder enc = Encoder::init(cfg, s);

  // Independent enumeration over the declared layer list.
  auto conv_params = [](std::int64_t cin, std::int64_t cout, std::int64_t k) {
    return cout * cin * k * k + cout;  // weight + bias
  };
  auto bn_params = [](std::int64_t c) { return 2 * c; };  // scale + shift
  std::int64_t want = conv_params(3, 16, 3) + bn_params(16);  // stem
  std::int64_t cin = cfg.stem_channels;
  for (int st = 0; st < 5; ++st) {
    const std::int64_t w = cfg.stage_widths[static_cast<std::size_t>(st)];
    const int stride = st > 0 ? 2 : 1;
    want += conv_params(cin, w, 3) + bn_params(w);  // conv1 + bn1
    want += conv_params(w, w, 3) + bn_params(w);    // conv2 + bn2
    if (stride != 1 || cin != w) want += conv_params(cin, w, 1) + bn_params(w);
    want += conv_params(w, 64, 1);  // level reduction
    cin = w;
  }
  EXPECT_EQ(param_count(enc), want);
}

TEST(Encoder, StreamsNeverShareParameters) {
  Rng rng(4);
  auto s = rng.stream("init");
  EncoderConfig rgb_cfg;
  EncoderConfig th_cfg;
  th_cfg.in_channels = 1;
  Encoder rgb = Encoder::init(rgb_cfg, s);
  Encoder th = Encoder::init(th_cfg, s);
  std::set<const void*> rgb_bufs;
  rgb.visit("rgb", [&](const std::string&, Tensor& t, bool) {
    rgb_bufs.insert(t.values().data());
  });
  th.visit("th", [&](const std::string&, Tensor& t, bool) {
    EXPECT_EQ(rgb_bufs.count(t.values().data()), 0u);
  });
  // Same seed state was consumed sequentially, so weights differ too.
  EXPECT_NE(rgb.stem.conv.weight.values(), th.stem.conv.weight.values());
}

TEST(Encoder, GradientsReachEveryParameter) {
  Rng rng(5);
  auto s = rng.stream("init");
  EncoderConfig cfg;
  cfg.stage_widths = {4, 4, 8, 8, 8};
  cfg.stem_channels = 4;
  cfg.reduced_channels = 8;
  cfg.blocks_per_stage = {1, 2, 1, 1, 1};
  Encoder enc = Encoder::init(cfg, s);
  Tensor img = Tensor::randn(Shape4{1, 3, 32, 32}, 1.0, s);

  // 32 is not divisible by 32? It is. Use the minimum valid input.
  GradTape tape;
  RunCtx ctx = RunCtx::train(&tape);
  FeaturePyramid fp = enc.encode(ctx, img);
  Tensor loss = sum(&tape, fp.levels[0]);
  for (int i = 1; i < 5; ++i)
    loss = add(&tape, loss, sum(&tape, fp.levels[static_cast<std::size_t>(i)]));
  backward(loss);

  enc.visit("enc", [&](const std::string& name, Tensor& t, bool is_buffer) {
    if (is_buffer) return;
    EXPECT_TRUE(t.has_grad()) << "no gradient reached " << name;
  });
}

TEST(Encoder, InputValidation) {
  Rng rng(6);
  auto s = rng.stream("init");
  Encoder enc = Encoder::init(EncoderConfig{}, s);
  Tensor bad_dims = Tensor::zeros(Shape4{1, 3, 48, 64});
  EXPECT_THROW(enc.encode(RunCtx::eval(), bad_dims), std::invalid_argument);
  Tensor bad_channels = Tensor::zeros(Shape4{1, 1, 64, 64});
  EXPECT_THROW(enc.encode(RunCtx::eval(), bad_channels), std::invalid_argument);
}

TEST(Encoder, CheckpointNameScheme) {
  Rng rng(7);
  auto s = rng.stream("init");
  Encoder enc = Encoder::init(EncoderConfig{}, s);
  std::set<std::string> names;
  enc.visit("rgb_encoder", [&](const std::string& n, Tensor&, bool) {
    EXPECT_EQ(names.count(n), 0u) << "duplicate name " << n;
    names.insert(n);
  });
  EXPECT_TRUE(names.count("rgb_encoder/stem/conv/weight"));
  EXPECT_TRUE(names.count("rgb_encoder/stage3/block0/conv1/weight"));
  EXPECT_TRUE(names.count("rgb_encoder/stage5/block0/proj_bn/running_var"));
  EXPECT_TRUE(names.count("rgb_encoder/reduce5/bias"));
}
