// Five-stage residual encoder producing one feature level per stage at
// cumulative strides {2,4,8,16,32}, each reduced to a common channel width
// by a 1x1 conv. The RGB and thermal streams instantiate this same
// architecture with independent parameters.

#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "egf/nn_ops.hpp"
#include "egf/tensor.hpp"

namespace egf {

struct RunCtx {
  GradTape* tape = nullptr;
  BnMode bn_mode = BnMode::eval;

  static RunCtx train(GradTape* tape) { return RunCtx{tape, BnMode::train}; }
  static RunCtx eval() { return RunCtx{nullptr, BnMode::eval}; }
};

using ParamVisitor = std::function<void(const std::string&, Tensor&, bool /*is_buffer*/)>;

inline void visit_conv(const std::string& prefix, Conv2dParams& p, const ParamVisitor& v) {
  v(prefix + "/weight", p.weight, false);
  if (p.bias.defined()) v(prefix + "/bias", p.bias, false);
}

inline void visit_bn(const std::string& prefix, BatchNormParams& p, const ParamVisitor& v) {
  v(prefix + "/scale", p.scale, false);
  v(prefix + "/shift", p.shift, false);
  v(prefix + "/running_mean", p.running_mean, true);
  v(prefix + "/running_var", p.running_var, true);
}

inline void visit_cbr(const std::string& prefix, CbrBlock& b, const ParamVisitor& v) {
  visit_conv(prefix + "/conv", b.conv, v);
  visit_bn(prefix + "/bn", b.bn, v);
}

struct EncoderConfig {
  std::int64_t in_channels = 3;
  std::int64_t stem_channels = 16;
  std::array<std::int64_t, 5> stage_widths{16, 32, 64, 128, 256};
  std::array<int, 5> blocks_per_stage{1, 1, 1, 1, 1};
  std::int64_t reduced_channels = 64;

  void validate() const {
    check_arg(in_channels >= 1 && stem_channels >= 1 && reduced_channels >= 1,
              "encoder config: channel counts must be positive");
    for (std::int64_t w : stage_widths)
      check_arg(w >= 1, "encoder config: stage widths must be positive");
    for (int b : blocks_per_stage)
      check_arg(b >= 1, "encoder config: each stage needs at least one block");
  }
};

// Per-level features of one encoder stream; level i (0-based index i-1) has
// shape [N, reduced, H/2^i, W/2^i].
struct FeaturePyramid {
  std::array<Tensor, 5> levels;
};

// Basic residual block: conv-BN-ReLU, conv-BN, shortcut add, ReLU. The
// shortcut is a strided 1x1 projection when geometry or width changes.
struct ResidualBlock {
  Conv2dParams conv1;
  BatchNormParams bn1;
  Conv2dParams conv2;
  BatchNormParams bn2;
  bool has_proj = false;
  Conv2dParams proj;
  BatchNormParams proj_bn;

  static ResidualBlock init(std::int64_t cin, std::int64_t cout, int stride,
                            Pcg32& rng) {
    ResidualBlock b;
    b.conv1 = make_conv2d(cin, cout, 3, stride, 1, 1, rng);
    b.bn1 = make_batchnorm(cout);
    b.conv2 = make_conv2d(cout, cout, 3, 1, 1, 1, rng);
    b.bn2 = make_batchnorm(cout);
    b.has_proj = stride != 1 || cin != cout;
    if (b.has_proj) {
      b.proj = make_conv2d(cin, cout, 1, stride, 0, 1, rng);
      b.proj_bn = make_batchnorm(cout);
    }
    return b;
  }

  Tensor forward(const RunCtx& ctx, const Tensor& x) {
    Tensor h = relu(ctx.tape, batchnorm2d(ctx.tape, conv2d(ctx.tape, x, conv1), bn1,
                                          ctx.bn_mode));
    h = batchnorm2d(ctx.tape, conv2d(ctx.tape, h, conv2), bn2, ctx.bn_mode);
    Tensor sc = has_proj
                    ? batchnorm2d(ctx.tape, conv2d(ctx.tape, x, proj), proj_bn,
                                  ctx.bn_mode)
                    : x;
    return relu(ctx.tape, add(ctx.tape, h, sc));
  }

  void visit(const std::string& prefix, const ParamVisitor& v) {
    visit_conv(prefix + "/conv1", conv1, v);
    visit_bn(prefix + "/bn1", bn1, v);
    visit_conv(prefix + "/conv2", conv2, v);
    visit_bn(prefix + "/bn2", bn2, v);
    if (has_proj) {
      visit_conv(prefix + "/proj", proj, v);
      visit_bn(prefix + "/proj_bn", proj_bn, v);
    }
  }
};

struct Encoder {
  EncoderConfig cfg;
  CbrBlock stem;  // 3x3 stride-2 conv stem supplies the stage-1 downsample
  std::array<std::vector<ResidualBlock>, 5> stages;
  std::array<Conv2dParams, 5> reduce;

  static Encoder init(const EncoderConfig& cfg, Pcg32& rng) {
    cfg.validate();
    Encoder e;
    e.cfg = cfg;
    e.stem.conv = make_conv2d(cfg.in_channels, cfg.stem_channels, 3, 2, 1, 1, rng);
    e.stem.bn = make_batchnorm(cfg.stem_channels);
    std::int64_t cin = cfg.stem_channels;
    for (int s = 0; s < 5; ++s) {
      const std::int64_t width = cfg.stage_widths[static_cast<std::size_t>(s)];
      const int blocks = cfg.blocks_per_stage[static_cast<std::size_t>(s)];
      for (int b = 0; b < blocks; ++b) {
        const int stride = (b == 0 && s > 0) ? 2 : 1;
        e.stages[static_cast<std::size_t>(s)].push_back(
            ResidualBlock::init(cin, width, stride, rng));
        cin = width;
      }
      e.reduce[static_cast<std::size_t>(s)] =
          make_conv2d(width, cfg.reduced_channels, 1, 1, 0, 1, rng);
    }
    return e;
  }

  FeaturePyramid encode(const RunCtx& ctx, const Tensor& img) {
    const Shape4& s = img.shape();
    check_arg(s.c == cfg.in_channels,
              "encode: expected " + std::to_string(cfg.in_channels) +
                  " input channels, got " + std::to_string(s.c));
    check_arg(s.h % 32 == 0 && s.w % 32 == 0,
              "encode: spatial dims must be divisible by 32, got " + s.str());
    FeaturePyramid out;
    Tensor h = relu(ctx.tape,
                    batchnorm2d(ctx.tape, conv2d(ctx.tape, img, stem.conv), stem.bn,
                                ctx.bn_mode));
    for (int st = 0; st < 5; ++st) {
      for (auto& block : stages[static_cast<std::size_t>(st)]) h = block.forward(ctx, h);
      out.levels[static_cast<std::size_t>(st)] =
          conv2d(ctx.tape, h, reduce[static_cast<std::size_t>(st)]);
    }
    return out;
  }

  void visit(const std::string& prefix, const ParamVisitor& v) {
    visit_cbr(prefix + "/stem", stem, v);
    for (int s = 0; s < 5; ++s) {
      const std::string sp = prefix + "/stage" + std::to_string(s + 1);
      auto& blocks = stages[static_cast<std::size_t>(s)];
      for (std::size_t b = 0; b < blocks.size(); ++b)
        blocks[b].visit(sp + "/block" + std::to_string(b), v);
      visit_conv(prefix + "/reduce" + std::to_string(s + 1),
                 reduce[static_cast<std::size_t>(s)], v);
    }
  }
};

// Trainable parameter count (buffers excluded).
template <typename Module>
std::int64_t param_count(Module& m) {
  std::int64_t total = 0;
  m.visit("m", [&](const std::string&, Tensor& t, bool is_buffer) {
    if (!is_buffer) total += t.numel();
  });
  return total;
}

}  // namespace egf
