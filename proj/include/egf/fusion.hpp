// EGFNet fusion stack: the multimodal fusion module, the global and
// semantic information modules, the cascaded sum-and-upsample decoder, the
// semantic guidance head, prior-edge embedding, and the full forward pass
// with its ablation switches.

#pragma once

#include <array>
#include <string>
#include <vector>

#include "egf/backbone.hpp"
#include "egf/edge_prior.hpp"
#include "egf/nn_ops.hpp"
#include "egf/tensor.hpp"

namespace egf {

// Table-4-style ablation switches plus the alternate inner-residual reading
// of the semantic information module.
struct VariantFlags {
  bool no_edge = false;   // multiply by an all-ones map instead of the prior
  bool no_mfm = false;    // fused level = R + T
  bool no_gim = false;    // high-level context = up2(level 5)
  bool no_sim = false;    // first cascade feature = up2(high + level 4)
  bool no_sup = false;    // supervise only the final semantic map
  bool residual_fs2 = false;  // inner residual adds the cross product instead
                              // of the high-level context
};

// ---------------------------------------------------------------------------
// Multimodal fusion module
// ---------------------------------------------------------------------------

struct Mfm {
  Conv2dParams cross_fuse;               // 1x1, 2X -> X
  CbrBlock refine_cbr;                   // 3x3 X -> X
  Conv2dParams refine_conv;              // 3x3 X -> X
  BatchNormParams refine_bn;
  std::array<Conv2dParams, 4> pyramid;   // 3x3, dilation rates 1..4
  Conv2dParams merge;                    // 3x3, 5X -> X
  CbrBlock head;                         // boundary (levels 1-3) or semantic (4-5)

  struct Out {
    Tensor fused;
    Tensor head_out;
  };

  static Mfm init(std::int64_t channels, Pcg32& rng) {
    Mfm m;
    m.cross_fuse = make_conv2d(2 * channels, channels, 1, 1, 0, 1, rng);
    m.refine_cbr = make_cbr(channels, channels, 1, rng);
    m.refine_conv = make_conv2d(channels, channels, 3, 1, 1, 1, rng);
    m.refine_bn = make_batchnorm(channels);
    for (int r = 0; r < 4; ++r)
      m.pyramid[static_cast<std::size_t>(r)] =
          make_conv2d(channels, channels, 3, 1, r + 1, r + 1, rng);
    m.merge = make_conv2d(5 * channels, channels, 3, 1, 1, 1, rng);
    m.head = make_cbr(channels, channels, 1, rng);
    return m;
  }

  // skip_fusion collapses the cross-modal block to plain addition while the
  // per-level head stays active.
  Out forward(const RunCtx& ctx, const Tensor& rgb_feat, const Tensor& th_feat,
              bool skip_fusion = false) {
    check_arg(rgb_feat.shape() == th_feat.shape(),
              "mfm: stream shapes differ: " + rgb_feat.shape().str() + " vs " +
                  th_feat.shape().str());
    GradTape* tape = ctx.tape;
    Tensor fused;
    if (skip_fusion) {
      fused = add(tape, rgb_feat, th_feat);
    } else {
      Tensor both = add(tape, rgb_feat, th_feat);
      Tensor fm = conv2d(tape,
                         concat_channels(tape, {mul(tape, both, rgb_feat),
                                                mul(tape, both, th_feat)}),
                         cross_fuse);
      Tensor refined = relu(
          tape, add(tape, fm,
                    batchnorm2d(tape,
                                conv2d(tape, cbr(tape, fm, refine_cbr, ctx.bn_mode),
                                       refine_conv),
                                refine_bn, ctx.bn_mode)));
      std::vector<Tensor> branches{refined};
      for (auto& conv : pyramid) branches.push_back(conv2d(tape, refined, conv));
      fused = conv2d(tape, concat_channels(tape, branches), merge);
    }
    return Out{fused, cbr(tape, fused, head, ctx.bn_mode)};
  }

  void visit(const std::string& prefix, const ParamVisitor& v) {
    visit_conv(prefix + "/cross_fuse", cross_fuse, v);
    visit_cbr(prefix + "/refine_cbr", refine_cbr, v);
    visit_conv(prefix + "/refine_conv", refine_conv, v);
    visit_bn(prefix + "/refine_bn", refine_bn, v);
    for (int r = 0; r < 4; ++r)
      visit_conv(prefix + "/pyramid" + std::to_string(r + 1),
                 pyramid[static_cast<std::size_t>(r)], v);
    visit_conv(prefix + "/merge", merge, v);
    visit_cbr(prefix + "/head", head, v);
  }
};

// ---------------------------------------------------------------------------
// Global information module: dilation pyramid over the deepest level, then
// residual 2x upsampled context.
// ---------------------------------------------------------------------------

struct Gim {
  Conv2dParams entry;                   // 1x1 X -> X
  std::array<Conv2dParams, 4> pyramid;  // 3x3, rates 1..4
  Conv2dParams merge;                   // 1x1 5X -> X
  CbrBlock out_cbr;

  static Gim init(std::int64_t channels, Pcg32& rng) {
    Gim g;
    g.entry = make_conv2d(channels, channels, 1, 1, 0, 1, rng);
    for (int r = 0; r < 4; ++r)
      g.pyramid[static_cast<std::size_t>(r)] =
          make_conv2d(channels, channels, 3, 1, r + 1, r + 1, rng);
    g.merge = make_conv2d(5 * channels, channels, 1, 1, 0, 1, rng);
    g.out_cbr = make_cbr(channels, channels, 1, rng);
    return g;
  }

  Tensor forward(const RunCtx& ctx, const Tensor& deepest) {
    GradTape* tape = ctx.tape;
    std::vector<Tensor> branches{conv2d(tape, deepest, entry)};
    for (auto& conv : pyramid) branches.push_back(conv2d(tape, deepest, conv));
    Tensor context = conv2d(tape, concat_channels(tape, branches), merge);
    return upsample_bilinear(
        tape, cbr(tape, add(tape, deepest, context), out_cbr, ctx.bn_mode), 2);
  }

  void visit(const std::string& prefix, const ParamVisitor& v) {
    visit_conv(prefix + "/entry", entry, v);
    for (int r = 0; r < 4; ++r)
      visit_conv(prefix + "/pyramid" + std::to_string(r + 1),
                 pyramid[static_cast<std::size_t>(r)], v);
    visit_conv(prefix + "/merge", merge, v);
    visit_cbr(prefix + "/out_cbr", out_cbr, v);
  }
};

// ---------------------------------------------------------------------------
// Semantic information module: cross products of the fused pair select
// agreeing responses; an inner residual preserves the high-level context.
// ---------------------------------------------------------------------------

struct Sim {
  Conv2dParams fuse;        // 1x1 2X -> X
  CbrBlock refine_cbr;      // 3x3 X -> X
  Conv2dParams refine_conv; // 3x3 X -> X
  BatchNormParams refine_bn;
  Conv2dParams out_conv;    // 1x1 X -> X

  static Sim init(std::int64_t channels, Pcg32& rng) {
    Sim s;
    s.fuse = make_conv2d(2 * channels, channels, 1, 1, 0, 1, rng);
    s.refine_cbr = make_cbr(channels, channels, 1, rng);
    s.refine_conv = make_conv2d(channels, channels, 3, 1, 1, 1, rng);
    s.refine_bn = make_batchnorm(channels);
    s.out_conv = make_conv2d(channels, channels, 1, 1, 0, 1, rng);
    return s;
  }

  // residual_fs2 switches the inner residual from the high-level context (as
  // printed) to the cross-product features.
  Tensor forward(const RunCtx& ctx, const Tensor& high, const Tensor& level4,
                 bool residual_fs2 = false) {
    check_arg(high.shape() == level4.shape(),
              "sim: shape mismatch " + high.shape().str() + " vs " +
                  level4.shape().str());
    GradTape* tape = ctx.tape;
    Tensor mixed = conv2d(tape, concat_channels(tape, {high, level4}), fuse);
    Tensor crossed = add(tape, mul(tape, mixed, high), mul(tape, mixed, level4));
    Tensor inner = batchnorm2d(
        tape, conv2d(tape, cbr(tape, crossed, refine_cbr, ctx.bn_mode), refine_conv),
        refine_bn, ctx.bn_mode);
    const Tensor& residual = residual_fs2 ? crossed : high;
    return upsample_bilinear(tape, conv2d(tape, add(tape, residual, inner), out_conv),
                             2);
  }

  void visit(const std::string& prefix, const ParamVisitor& v) {
    visit_conv(prefix + "/fuse", fuse, v);
    visit_cbr(prefix + "/refine_cbr", refine_cbr, v);
    visit_conv(prefix + "/refine_conv", refine_conv, v);
    visit_bn(prefix + "/refine_bn", refine_bn, v);
    visit_conv(prefix + "/out_conv", out_conv, v);
  }
};

// ---------------------------------------------------------------------------
// Simple fusion decoder step: align the high-level context, sum, upsample.
// `level` in {1,2,3} names the pyramid level the skip features come from.
// ---------------------------------------------------------------------------

inline Tensor sfm_step(const RunCtx& ctx, const Tensor& high, const Tensor& cascade,
                       const Tensor& skip, int level) {
  check_arg(level >= 1 && level <= 3, "sfm_step: level must be in {1,2,3}");
  check_arg(cascade.shape() == skip.shape(),
            "sfm_step: cascade/skip shapes differ: " + cascade.shape().str() +
                " vs " + skip.shape().str());
  const int factor = 1 << (4 - level);  // context sits at stride 16
  Tensor aligned = upsample_bilinear(ctx.tape, high, factor);
  check_arg(aligned.shape() == skip.shape(),
            "sfm_step: upsampled context " + aligned.shape().str() +
                " does not match level features " + skip.shape().str() +
                " (stride bug)");
  return upsample_bilinear(
      ctx.tape, add(ctx.tape, add(ctx.tape, aligned, cascade), skip), 2);
}

// ---------------------------------------------------------------------------
// Semantic guidance module: fuses the two semantic side-outputs at ground
// truth resolution into class logits.
// ---------------------------------------------------------------------------

struct Sgm {
  Conv2dParams fuse;        // 1x1 2X -> X
  CbrBlock refine;          // 3x3 X -> X
  Conv2dParams class_conv;  // 1x1 X -> C

  struct Out {
    Tensor concat_fused;  // after the 1x1 fusion of both upsampled side-outs
    Tensor sum_fused;     // plus both upsampled side-outs
    Tensor logits;        // class channels at full resolution
  };

  static Sgm init(std::int64_t channels, std::int64_t num_classes, Pcg32& rng) {
    Sgm s;
    s.fuse = make_conv2d(2 * channels, channels, 1, 1, 0, 1, rng);
    s.refine = make_cbr(channels, channels, 1, rng);
    s.class_conv = make_conv2d(channels, num_classes, 1, 1, 0, 1, rng);
    return s;
  }

  Out forward(const RunCtx& ctx, const Tensor& sem4, const Tensor& sem5) {
    check_arg(sem4.shape().h == 2 * sem5.shape().h &&
                  sem4.shape().w == 2 * sem5.shape().w,
              "sgm: side-outs must sit at strides 16 and 32");
    GradTape* tape = ctx.tape;
    Tensor up4 = upsample_bilinear(tape, sem4, 16);
    Tensor up5 = upsample_bilinear(tape, sem5, 32);
    Tensor concat_fused = conv2d(tape, concat_channels(tape, {up4, up5}), fuse);
    Tensor sum_fused = add(tape, add(tape, concat_fused, up4), up5);
    Tensor logits = conv2d(
        tape, mul(tape, cbr(tape, sum_fused, refine, ctx.bn_mode), up5), class_conv);
    return Out{concat_fused, sum_fused, logits};
  }

  void visit(const std::string& prefix, const ParamVisitor& v) {
    visit_conv(prefix + "/fuse", fuse, v);
    visit_cbr(prefix + "/refine", refine, v);
    visit_conv(prefix + "/class_conv", class_conv, v);
  }
};

// ---------------------------------------------------------------------------
// Prior-edge embedding
// ---------------------------------------------------------------------------

// Boundary supervision map: 1x1 head to a single channel, upsample to full
// resolution, gate by the prior edge map. `level` in {1,2,3}.
inline Tensor embed_edge_boundary(const RunCtx& ctx, const Tensor& boundary_feat,
                                  Conv2dParams& head_1x1, const Tensor& edge,
                                  int level) {
  check_arg(level >= 1 && level <= 3, "embed_edge_boundary: level in {1,2,3}");
  Tensor logits =
      upsample_bilinear(ctx.tape, conv2d(ctx.tape, boundary_feat, head_1x1),
                        1 << level);
  check_arg(logits.shape() == edge.shape(),
            "embed_edge_boundary: resolution mismatch " + logits.shape().str() +
                " vs " + edge.shape().str());
  return mul(ctx.tape, logits, edge);
}

// Semantic embedding: edge (*) x + x with single-channel broadcast.
inline Tensor embed_edge_semantic(const RunCtx& ctx, const Tensor& x,
                                  const Tensor& edge) {
  check_arg(edge.shape().c == 1 && edge.shape().h == x.shape().h &&
                edge.shape().w == x.shape().w && edge.shape().n == x.shape().n,
            "embed_edge_semantic: resolution mismatch " + x.shape().str() + " vs " +
                edge.shape().str());
  return add(ctx.tape, mul(ctx.tape, x, edge), x);
}

// ---------------------------------------------------------------------------
// Full network
// ---------------------------------------------------------------------------

// Fused per-level features plus the boundary/semantic head outputs.
struct FusedSet {
  std::array<Tensor, 5> fused;     // levels 1..5
  std::array<Tensor, 3> boundary;  // levels 1..3
  std::array<Tensor, 2> semantic;  // levels 4..5
};

// cascade[i] holds the decoder feature at stride 2^i (i = 3..0).
struct DecoderState {
  Tensor high;  // stride 16
  std::array<Tensor, 4> cascade;
};

struct PredictionSet {
  std::array<Tensor, 3> boundary;      // edge-gated boundary logits, full res
  Tensor sem_side;                     // edge-embedded side-out semantic logits
  Tensor sem_final;                    // edge-embedded final semantic logits
  // Intermediates retained for verification:
  std::array<Tensor, 3> boundary_pre;  // upsampled head outputs before gating
  Tensor sem_concat_fused;
  Tensor sem_sum_fused;
  Tensor sem_side_pre;   // side-out logits before edge embedding
  Tensor sem_final_pre;  // classified cascade terminus before edge embedding
};

struct ForwardTrace {
  FeaturePyramid rgb_pyramid;
  FeaturePyramid thermal_pyramid;
  FusedSet fused;
  DecoderState decoder;
  PredictionSet preds;
  Tensor edge_used;
};

struct EgfNetConfig {
  EncoderConfig encoder;  // in_channels is per-stream, set internally
  std::int64_t channels = 64;
  std::int64_t num_classes = 9;
  VariantFlags variants;

  void validate() const {
    check_arg(channels >= 1, "egfnet: channels must be positive");
    check_arg(num_classes >= 2, "egfnet: need at least two classes");
    check_arg(encoder.reduced_channels == channels,
              "egfnet: encoder reduction width must match fusion width");
  }
};

struct EgfNet {
  EgfNetConfig cfg;
  Encoder rgb_encoder;
  Encoder thermal_encoder;
  std::array<Mfm, 5> mfm;
  Gim gim;
  Sim sim;
  Sgm sgm;
  std::array<Conv2dParams, 3> boundary_head;  // 1x1 X -> 1
  Conv2dParams classifier;                    // 1x1 X -> C

  static EgfNet init(const EgfNetConfig& cfg, Pcg32& rng) {
    cfg.validate();
    EgfNet net;
    net.cfg = cfg;
    EncoderConfig rgb_cfg = cfg.encoder;
    rgb_cfg.in_channels = 3;
    EncoderConfig th_cfg = cfg.encoder;
    th_cfg.in_channels = 1;
    net.rgb_encoder = Encoder::init(rgb_cfg, rng);
    net.thermal_encoder = Encoder::init(th_cfg, rng);
    for (auto& m : net.mfm) m = Mfm::init(cfg.channels, rng);
    net.gim = Gim::init(cfg.channels, rng);
    net.sim = Sim::init(cfg.channels, rng);
    net.sgm = Sgm::init(cfg.channels, cfg.num_classes, rng);
    for (auto& h : net.boundary_head)
      h = make_conv2d(cfg.channels, 1, 1, 1, 0, 1, rng);
    net.classifier = make_conv2d(cfg.channels, cfg.num_classes, 1, 1, 0, 1, rng);
    return net;
  }

  ForwardTrace forward_trace(const RunCtx& ctx, const Tensor& rgb,
                             const Tensor& thermal, const Tensor& edge) {
    const Shape4& rs = rgb.shape();
    check_arg(thermal.shape() == Shape4{rs.n, 1, rs.h, rs.w},
              "egfnet: thermal shape mismatch " + thermal.shape().str());
    check_arg(edge.shape() == Shape4{rs.n, 1, rs.h, rs.w},
              "egfnet: edge map shape mismatch " + edge.shape().str());
    const VariantFlags& flags = cfg.variants;
    GradTape* tape = ctx.tape;

    ForwardTrace t;
    t.edge_used = flags.no_edge ? Tensor::ones(edge.shape()) : edge;
    t.rgb_pyramid = rgb_encoder.encode(ctx, rgb);
    t.thermal_pyramid = thermal_encoder.encode(ctx, thermal);

    for (int i = 0; i < 5; ++i) {
      auto out = mfm[static_cast<std::size_t>(i)].forward(
          ctx, t.rgb_pyramid.levels[static_cast<std::size_t>(i)],
          t.thermal_pyramid.levels[static_cast<std::size_t>(i)], flags.no_mfm);
      t.fused.fused[static_cast<std::size_t>(i)] = out.fused;
      if (i < 3) {
        t.fused.boundary[static_cast<std::size_t>(i)] = out.head_out;
      } else {
        t.fused.semantic[static_cast<std::size_t>(i - 3)] = out.head_out;
      }
    }

    t.decoder.high = flags.no_gim
                         ? upsample_bilinear(tape, t.fused.fused[4], 2)
                         : gim.forward(ctx, t.fused.fused[4]);
    t.decoder.cascade[3] =
        flags.no_sim
            ? upsample_bilinear(tape, add(tape, t.decoder.high, t.fused.fused[3]), 2)
            : sim.forward(ctx, t.decoder.high, t.fused.fused[3], flags.residual_fs2);
    for (int level = 3; level >= 1; --level) {
      t.decoder.cascade[static_cast<std::size_t>(level - 1)] = sfm_step(
          ctx, t.decoder.high, t.decoder.cascade[static_cast<std::size_t>(level)],
          t.fused.fused[static_cast<std::size_t>(level - 1)], level);
    }

    for (int i = 0; i < 3; ++i) {
      Tensor pre = upsample_bilinear(
          tape,
          conv2d(tape, t.fused.boundary[static_cast<std::size_t>(i)],
                 boundary_head[static_cast<std::size_t>(i)]),
          1 << (i + 1));
      t.preds.boundary_pre[static_cast<std::size_t>(i)] = pre;
      t.preds.boundary[static_cast<std::size_t>(i)] = mul(tape, pre, t.edge_used);
    }

    auto sgm_out = sgm.forward(ctx, t.fused.semantic[0], t.fused.semantic[1]);
    t.preds.sem_concat_fused = sgm_out.concat_fused;
    t.preds.sem_sum_fused = sgm_out.sum_fused;
    t.preds.sem_side_pre = sgm_out.logits;
    t.preds.sem_side = embed_edge_semantic(ctx, sgm_out.logits, t.edge_used);

    t.preds.sem_final_pre = conv2d(tape, t.decoder.cascade[0], classifier);
    t.preds.sem_final = embed_edge_semantic(ctx, t.preds.sem_final_pre, t.edge_used);
    return t;
  }

  PredictionSet forward(const RunCtx& ctx, const Tensor& rgb, const Tensor& thermal,
                        const Tensor& edge) {
    return forward_trace(ctx, rgb, thermal, edge).preds;
  }

  void visit(const ParamVisitor& v) {
    rgb_encoder.visit("rgb_encoder", v);
    thermal_encoder.visit("thermal_encoder", v);
    for (int i = 0; i < 5; ++i)
      mfm[static_cast<std::size_t>(i)].visit("mfm" + std::to_string(i + 1), v);
    gim.visit("gim", v);
    sim.visit("sim", v);
    sgm.visit("sgm", v);
    for (int i = 0; i < 3; ++i)
      visit_conv("boundary_head" + std::to_string(i + 1),
                 boundary_head[static_cast<std::size_t>(i)], v);
    visit_conv("classifier", classifier, v);
  }
};

}  // namespace egf
