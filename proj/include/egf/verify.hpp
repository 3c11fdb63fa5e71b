// Self-verification suites surfaced by the CLI: finite-difference gradient
// checks over every differentiable op and every fusion module, loop-oracle
// equivalence for the raster primitives, scalar-oracle equivalence for the
// whole fusion stack, and loss/metric oracle equivalence. All comparisons
// run against egf::ref, which shares no code with the production path.

#pragma once

#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "egf/edge_prior.hpp"
#include "egf/fusion.hpp"
#include "egf/grad_check.hpp"
#include "egf/metrics.hpp"
#include "egf/ref/scalar_ref.hpp"
#include "egf/supervision.hpp"

namespace egf {

struct VerifyOptions {
  int seeds = 5;
  // Test fixture: perturbs one analytic conv gradient so the gradient suite
  // must flag it. Never set outside tests.
  bool corrupt_conv_backward = false;
};

struct SuiteResult {
  std::string name;
  bool passed = true;
  std::string detail;
};

namespace verify_detail {

inline ref::Vol to_vol(const Tensor& t) {
  const Shape4& s = t.shape();
  ref::Vol v(s.n, s.c, s.h, s.w);
  v.v = t.values();
  return v;
}

template <typename Module>
ref::VolMap params_of(Module& m) {
  ref::VolMap out;
  m.visit("", [&](const std::string& name, Tensor& t, bool) {
    out[name.starts_with("/") ? name.substr(1) : name] = to_vol(t);
  });
  return out;
}

template <typename Module>
std::vector<std::pair<std::string, Tensor>> trainables_of(Module& m,
                                                          const std::string& tag) {
  std::vector<std::pair<std::string, Tensor>> out;
  m.visit(tag, [&](const std::string& name, Tensor& t, bool is_buffer) {
    if (!is_buffer) out.emplace_back(name, t);
  });
  return out;
}

inline double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_diff(const Tensor& t, const ref::Vol& v) {
  return max_diff(t.values(), v.v);
}

struct Tracker {
  bool ok = true;
  double worst = 0.0;
  std::string what;

  void take(const std::string& label, double err, double tol) {
    if (err > worst) {
      worst = err;
      what = label;
    }
    if (err > tol) ok = false;
  }
  void take(const std::string& label, const GradCheckResult& r) {
    if (r.max_err > worst) {
      worst = r.max_err;
      what = label + " (" + r.worst + ")";
    }
    if (!r.ok) ok = false;
  }
};

}  // namespace verify_detail

// ---------------------------------------------------------------------------
// Suite 1: finite-difference gradient checks
// ---------------------------------------------------------------------------

inline SuiteResult verify_gradients(const VerifyOptions& opt) {
  using verify_detail::Tracker;
  Tracker tr;

  for (int seed = 0; seed < opt.seeds; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    auto s = rng.stream("verify");

    {  // elementwise ops composite (add, mul + broadcast, concat, relu, sum)
      Tensor a = Tensor::randn(Shape4{1, 3, 6, 6}, 1.0, s);
      Tensor b = Tensor::randn(Shape4{1, 3, 6, 6}, 1.0, s);
      Tensor e = Tensor::randn(Shape4{1, 1, 6, 6}, 1.0, s);
      for (double& v : a.values()) v += (v >= 0 ? 0.05 : -0.05);
      auto build = [&](GradTape* t) {
        return sum(t, concat_channels(
                          t, {mul(t, add(t, a, b), e), relu(t, a)}));
      };
      auto fwd = [&] { return build(nullptr).item(); };
      auto bwd = [&] {
        GradTape t;
        backward(build(&t));
      };
      tr.take("elementwise seed " + std::to_string(seed),
              check_gradients(fwd, bwd, {{"a", a}, {"b", b}, {"e", e}}));
    }

    {  // conv2d, dilated and strided
      Tensor x = Tensor::randn(Shape4{1, 2, 5, 5}, 1.0, s);
      Conv2dParams p = make_conv2d(2, 3, 3, 1, 2, 2, s);
      Tensor probe = Tensor::randn(Shape4{1, 3, 5, 5}, 1.0, s);
      auto fwd = [&] {
        return sum(nullptr, mul(nullptr, conv2d(nullptr, x, p), probe)).item();
      };
      auto bwd = [&] {
        GradTape t;
        backward(sum(&t, mul(&t, conv2d(&t, x, p), probe)));
        if (opt.corrupt_conv_backward) p.weight.impl()->grad[0] += 0.25;
      };
      tr.take("conv2d seed " + std::to_string(seed),
              check_gradients(fwd, bwd,
                              {{"x", x}, {"weight", p.weight}, {"bias", p.bias}}));

      Tensor xs2 = Tensor::randn(Shape4{1, 3, 6, 6}, 1.0, s);
      Conv2dParams p2 = make_conv2d(3, 2, 3, 2, 1, 1, s);
      auto fwd2 = [&] { return sum(nullptr, conv2d(nullptr, xs2, p2)).item(); };
      auto bwd2 = [&] {
        GradTape t;
        backward(sum(&t, conv2d(&t, xs2, p2)));
      };
      tr.take("conv2d strided seed " + std::to_string(seed),
              check_gradients(fwd2, bwd2, {{"x", xs2}, {"weight", p2.weight}}));
    }

    {  // batchnorm2d, train mode
      Tensor x = Tensor::randn(Shape4{1, 3, 6, 6}, 1.0, s);
      BatchNormParams p = make_batchnorm(3);
      for (double& v : p.scale.values()) v = 0.5 + s.next_double();
      Tensor probe = Tensor::randn(Shape4{1, 3, 6, 6}, 1.0, s);
      auto fwd = [&] {
        return sum(nullptr,
                   mul(nullptr, batchnorm2d(nullptr, x, p, BnMode::train), probe))
            .item();
      };
      auto bwd = [&] {
        GradTape t;
        backward(sum(&t, mul(&t, batchnorm2d(&t, x, p, BnMode::train), probe)));
      };
      tr.take("batchnorm seed " + std::to_string(seed),
              check_gradients(fwd, bwd,
                              {{"x", x}, {"scale", p.scale}, {"shift", p.shift}}));
    }

    {  // bilinear upsampling
      Tensor x = Tensor::randn(Shape4{1, 2, 3, 3}, 1.0, s);
      Tensor probe = Tensor::randn(Shape4{1, 2, 6, 6}, 1.0, s);
      auto fwd = [&] {
        return sum(nullptr, mul(nullptr, upsample_bilinear(nullptr, x, 2), probe))
            .item();
      };
      auto bwd = [&] {
        GradTape t;
        backward(sum(&t, mul(&t, upsample_bilinear(&t, x, 2), probe)));
      };
      tr.take("upsample seed " + std::to_string(seed),
              check_gradients(fwd, bwd, {{"x", x}}));
    }

    {  // both losses
      Tensor logits = Tensor::randn(Shape4{1, 1, 5, 5}, 1.5, s);
      Tensor target = Tensor::zeros(Shape4{1, 1, 5, 5});
      for (double& t : target.values()) t = s.next_u32() & 1 ? 1.0 : 0.0;
      ClassWeights w;
      w.boundary = {1.0, 5.0};
      auto fwd = [&] { return weighted_bce(nullptr, logits, target, w).item(); };
      auto bwd = [&] {
        GradTape t;
        backward(weighted_bce(&t, logits, target, w));
      };
      tr.take("weighted_bce seed " + std::to_string(seed),
              check_gradients(fwd, bwd, {{"logits", logits}}));

      Tensor slog = Tensor::randn(Shape4{1, 3, 6, 6}, 1.0, s);
      LabelMap labels(1, 6, 6, 0);
      for (auto& l : labels.v) l = static_cast<std::int32_t>(s.bounded(3));
      ClassWeights ws;
      ws.semantic = {0.5, 1.5, 3.0};
      auto fwd2 = [&] { return weighted_ce(nullptr, slog, labels, ws).item(); };
      auto bwd2 = [&] {
        GradTape t;
        backward(weighted_ce(&t, slog, labels, ws));
      };
      tr.take("weighted_ce seed " + std::to_string(seed),
              check_gradients(fwd2, bwd2, {{"logits", slog}}));
    }

    const std::int64_t ch = 8;
    {  // multimodal fusion module
      Mfm m = Mfm::init(ch, s);
      Tensor r = Tensor::randn(Shape4{1, ch, 6, 6}, 1.0, s);
      Tensor t2 = Tensor::randn(Shape4{1, ch, 6, 6}, 1.0, s);
      Tensor p1 = Tensor::randn(Shape4{1, ch, 6, 6}, 1.0, s);
      Tensor p2 = Tensor::randn(Shape4{1, ch, 6, 6}, 1.0, s);
      auto build = [&](GradTape* t) {
        auto out = m.forward(RunCtx{t, BnMode::train}, r, t2);
        return add(t, sum(t, mul(t, out.fused, p1)), sum(t, mul(t, out.head_out, p2)));
      };
      auto fwd = [&] { return build(nullptr).item(); };
      auto bwd = [&] {
        GradTape t;
        backward(build(&t));
      };
      auto wrt = verify_detail::trainables_of(m, "mfm");
      wrt.emplace_back("rgb_in", r);
      wrt.emplace_back("thermal_in", t2);
      tr.take("mfm seed " + std::to_string(seed), check_gradients(fwd, bwd, wrt));
    }

    {  // global information module
      Gim g = Gim::init(ch, s);
      Tensor x = Tensor::randn(Shape4{1, ch, 3, 3}, 1.0, s);
      Tensor probe = Tensor::randn(Shape4{1, ch, 6, 6}, 1.0, s);
      auto build = [&](GradTape* t) {
        return sum(t, mul(t, g.forward(RunCtx{t, BnMode::train}, x), probe));
      };
      auto fwd = [&] { return build(nullptr).item(); };
      auto bwd = [&] {
        GradTape t;
        backward(build(&t));
      };
      auto wrt = verify_detail::trainables_of(g, "gim");
      wrt.emplace_back("x", x);
      tr.take("gim seed " + std::to_string(seed), check_gradients(fwd, bwd, wrt));
    }

    {  // semantic information module
      Sim sm = Sim::init(ch, s);
      Tensor high = Tensor::randn(Shape4{1, ch, 3, 3}, 1.0, s);
      Tensor lvl4 = Tensor::randn(Shape4{1, ch, 3, 3}, 1.0, s);
      Tensor probe = Tensor::randn(Shape4{1, ch, 6, 6}, 1.0, s);
      auto build = [&](GradTape* t) {
        return sum(t, mul(t, sm.forward(RunCtx{t, BnMode::train}, high, lvl4), probe));
      };
      auto fwd = [&] { return build(nullptr).item(); };
      auto bwd = [&] {
        GradTape t;
        backward(build(&t));
      };
      auto wrt = verify_detail::trainables_of(sm, "sim");
      wrt.emplace_back("high", high);
      wrt.emplace_back("level4", lvl4);
      tr.take("sim seed " + std::to_string(seed), check_gradients(fwd, bwd, wrt));
    }

    {  // decoder fusion step (level 3)
      Tensor high = Tensor::randn(Shape4{1, 4, 3, 3}, 1.0, s);
      Tensor cascade = Tensor::randn(Shape4{1, 4, 6, 6}, 1.0, s);
      Tensor skip = Tensor::randn(Shape4{1, 4, 6, 6}, 1.0, s);
      Tensor probe = Tensor::randn(Shape4{1, 4, 12, 12}, 1.0, s);
      auto build = [&](GradTape* t) {
        return sum(t, mul(t, sfm_step(RunCtx{t, BnMode::train}, high, cascade,
                                      skip, 3),
                          probe));
      };
      auto fwd = [&] { return build(nullptr).item(); };
      auto bwd = [&] {
        GradTape t;
        backward(build(&t));
      };
      tr.take("sfm seed " + std::to_string(seed),
              check_gradients(fwd, bwd,
                              {{"high", high}, {"cascade", cascade}, {"skip", skip}}));
    }

    {  // semantic guidance module
      Sgm g = Sgm::init(ch, 5, s);
      Tensor s4 = Tensor::randn(Shape4{1, ch, 2, 2}, 1.0, s);
      Tensor s5 = Tensor::randn(Shape4{1, ch, 1, 1}, 1.0, s);
      Tensor probe = Tensor::randn(Shape4{1, 5, 32, 32}, 1.0, s);
      auto build = [&](GradTape* t) {
        return sum(t, mul(t, g.forward(RunCtx{t, BnMode::train}, s4, s5).logits,
                          probe));
      };
      auto fwd = [&] { return build(nullptr).item(); };
      auto bwd = [&] {
        GradTape t;
        backward(build(&t));
      };
      auto wrt = verify_detail::trainables_of(g, "sgm");
      wrt.emplace_back("s4", s4);
      wrt.emplace_back("s5", s5);
      tr.take("sgm seed " + std::to_string(seed), check_gradients(fwd, bwd, wrt));
    }

    {  // edge embeddings
      Conv2dParams head = make_conv2d(ch, 1, 1, 1, 0, 1, s);
      Tensor feat = Tensor::randn(Shape4{1, ch, 6, 6}, 1.0, s);
      Tensor edge = Tensor::randn(Shape4{1, 1, 12, 12}, 1.0, s);
      for (double& v : edge.values()) v = std::abs(v) / 3.0;
      auto build = [&](GradTape* t) {
        return sum(t, embed_edge_boundary(RunCtx{t, BnMode::train}, feat, head,
                                          edge, 1));
      };
      auto fwd = [&] { return build(nullptr).item(); };
      auto bwd = [&] {
        GradTape t;
        backward(build(&t));
      };
      tr.take("edge boundary seed " + std::to_string(seed),
              check_gradients(fwd, bwd, {{"feat", feat},
                                         {"head_w", head.weight},
                                         {"head_b", head.bias}}));

      Tensor x = Tensor::randn(Shape4{1, 3, 6, 6}, 1.0, s);
      Tensor e2 = Tensor::randn(Shape4{1, 1, 6, 6}, 1.0, s);
      for (double& v : e2.values()) v = std::abs(v) / 3.0;
      auto build2 = [&](GradTape* t) {
        return sum(t, embed_edge_semantic(RunCtx{t, BnMode::train}, x, e2));
      };
      auto fwd2 = [&] { return build2(nullptr).item(); };
      auto bwd2 = [&] {
        GradTape t;
        backward(build2(&t));
      };
      tr.take("edge semantic seed " + std::to_string(seed),
              check_gradients(fwd2, bwd2, {{"x", x}}));
    }
  }

  SuiteResult res;
  res.name = "gradients";
  res.passed = tr.ok;
  std::ostringstream os;
  os << "worst combined-tolerance ratio " << tr.worst << " at " << tr.what;
  res.detail = os.str();
  return res;
}

// ---------------------------------------------------------------------------
// Suite 2: loop-oracle equivalence for conv/BN/upsample/Sobel (<= 1e-10)
// ---------------------------------------------------------------------------

inline SuiteResult verify_loop_oracles(const VerifyOptions&) {
  using verify_detail::Tracker;
  using verify_detail::to_vol;
  Tracker tr;
  const double tol = 1e-10;
  Rng rng(1234);
  auto s = rng.stream("loop");

  for (std::int64_t n : {1, 2})
    for (std::int64_t cin : {1, 4})
      for (std::int64_t hw : {5, 9})
        for (int dil : {1, 2, 3, 4})
          for (int stride : {1, 2}) {
            if (conv_out_extent(hw, 3, stride, dil, dil) < 1) continue;
            Tensor x = Tensor::randn(Shape4{n, cin, hw, hw}, 1.0, s);
            Conv2dParams p = make_conv2d(cin, 4, 3, stride, dil, dil, s);
            Tensor got = conv2d(nullptr, x, p);
            ref::Vol want = ref::conv2d(to_vol(x), to_vol(p.weight),
                                        p.bias.values(), stride, dil, dil);
            tr.take("conv2d", verify_detail::max_diff(got, want), tol);
          }

  {
    Tensor x = Tensor::randn(Shape4{2, 3, 4, 4}, 1.0, s);
    BatchNormParams p = make_batchnorm(3);
    for (double& v : p.scale.values()) v = 0.5 + s.next_double();
    for (double& v : p.shift.values()) v = s.next_double() - 0.5;
    Tensor got = batchnorm2d(nullptr, x, p, BnMode::train);
    ref::Vol want = ref::bn_train(to_vol(x), p.scale.values(), p.shift.values(), p.eps);
    tr.take("batchnorm train", verify_detail::max_diff(got, want), tol);
    Tensor got_eval = batchnorm2d(nullptr, x, p, BnMode::eval);
    ref::Vol want_eval =
        ref::bn_eval(to_vol(x), p.scale.values(), p.shift.values(),
                     p.running_mean.values(), p.running_var.values(), p.eps);
    tr.take("batchnorm eval", verify_detail::max_diff(got_eval, want_eval), tol);
  }

  {
    Tensor x = Tensor::randn(Shape4{2, 3, 3, 4}, 1.0, s);
    for (int f : {1, 2, 3, 4}) {
      Tensor got = upsample_bilinear(nullptr, x, f);
      ref::Vol want = ref::upsample_bilinear(to_vol(x), f);
      tr.take("upsample x" + std::to_string(f),
              verify_detail::max_diff(got, want), tol);
    }
  }

  {
    Tensor img = Tensor::randn(Shape4{2, 1, 7, 7}, 1.0, s);
    Tensor got = sobel_magnitude(img);
    ref::Vol want = ref::sobel_magnitude(to_vol(img));
    tr.take("sobel", verify_detail::max_diff(got, want), tol);
  }

  SuiteResult res;
  res.name = "loop_oracles";
  res.passed = tr.ok;
  res.detail = "max deviation " + std::to_string(tr.worst) + " at " + tr.what;
  return res;
}

// ---------------------------------------------------------------------------
// Suite 3: scalar-oracle equivalence for the fusion stack (<= 1e-8)
// ---------------------------------------------------------------------------

inline SuiteResult verify_module_oracles(const VerifyOptions&) {
  using verify_detail::Tracker;
  using verify_detail::params_of;
  using verify_detail::to_vol;
  Tracker tr;
  const double tol = 1e-8;
  auto s = Rng(0).stream("init");

  {
    Mfm m = Mfm::init(64, s);
    Tensor r = Tensor::ones(Shape4{1, 64, 8, 8});
    Tensor t = Tensor::ones(Shape4{1, 64, 8, 8});
    auto got = m.forward(RunCtx{nullptr, BnMode::train}, r, t);
    auto want = ref::mfm(to_vol(r), to_vol(t), params_of(m), m.refine_bn.eps);
    tr.take("mfm fused", verify_detail::max_diff(got.fused, want.fused), tol);
    tr.take("mfm head", verify_detail::max_diff(got.head_out, want.head), tol);
  }
  {
    Gim g = Gim::init(64, s);
    Tensor x = Tensor::randn(Shape4{1, 64, 4, 4}, 1.0, s);
    tr.take("gim",
            verify_detail::max_diff(g.forward(RunCtx{nullptr, BnMode::train}, x),
                                    ref::gim(to_vol(x), params_of(g),
                                             g.out_cbr.bn.eps)),
            tol);
  }
  {
    Sim sm = Sim::init(64, s);
    Tensor high = Tensor::randn(Shape4{1, 64, 4, 4}, 1.0, s);
    Tensor lvl4 = Tensor::randn(Shape4{1, 64, 4, 4}, 1.0, s);
    for (bool alt : {false, true}) {
      Tensor got = sm.forward(RunCtx{nullptr, BnMode::train}, high, lvl4, alt);
      ref::Vol want =
          ref::sim(to_vol(high), to_vol(lvl4), params_of(sm), sm.refine_bn.eps, alt);
      tr.take(alt ? "sim alt residual" : "sim", verify_detail::max_diff(got, want),
              tol);
    }
  }
  {
    Tensor high = Tensor::randn(Shape4{1, 64, 2, 2}, 1.0, s);
    Tensor cascade = Tensor::randn(Shape4{1, 64, 4, 4}, 1.0, s);
    Tensor skip = Tensor::randn(Shape4{1, 64, 4, 4}, 1.0, s);
    Tensor got = sfm_step(RunCtx{nullptr, BnMode::train}, high, cascade, skip, 3);
    ref::Vol want = ref::sfm_step(to_vol(high), to_vol(cascade), to_vol(skip), 3);
    tr.take("sfm", verify_detail::max_diff(got, want), tol);
  }
  {
    Sgm g = Sgm::init(64, 9, s);
    Tensor s4 = Tensor::randn(Shape4{1, 64, 2, 2}, 1.0, s);
    Tensor s5 = Tensor::randn(Shape4{1, 64, 1, 1}, 1.0, s);
    auto got = g.forward(RunCtx{nullptr, BnMode::train}, s4, s5);
    auto want = ref::sgm(to_vol(s4), to_vol(s5), params_of(g), g.refine.bn.eps);
    tr.take("sgm fused", verify_detail::max_diff(got.concat_fused, want.concat_fused),
            tol);
    tr.take("sgm sum", verify_detail::max_diff(got.sum_fused, want.sum_fused), tol);
    tr.take("sgm logits", verify_detail::max_diff(got.logits, want.logits), tol);
  }
  {
    Conv2dParams head = make_conv2d(64, 1, 1, 1, 0, 1, s);
    Tensor feat = Tensor::randn(Shape4{1, 64, 8, 8}, 1.0, s);
    Tensor edge = Tensor::randn(Shape4{1, 1, 16, 16}, 1.0, s);
    for (double& v : edge.values()) v = std::abs(v) / 3.0;
    Tensor got = embed_edge_boundary(RunCtx{nullptr, BnMode::train}, feat, head,
                                     edge, 1);
    ref::VolMap hp;
    hp["head/weight"] = to_vol(head.weight);
    hp["head/bias"] = to_vol(head.bias);
    ref::Vol want = ref::embed_boundary(to_vol(feat), hp, to_vol(edge), 1);
    tr.take("edge boundary", verify_detail::max_diff(got, want), tol);
  }
  {
    Tensor x = Tensor::randn(Shape4{1, 9, 8, 8}, 1.0, s);
    Tensor edge = Tensor::randn(Shape4{1, 1, 8, 8}, 1.0, s);
    for (double& v : edge.values()) v = std::abs(v) / 3.0;
    Tensor got = embed_edge_semantic(RunCtx{nullptr, BnMode::train}, x, edge);
    ref::Vol want = ref::embed_semantic(to_vol(x), to_vol(edge));
    tr.take("edge semantic", verify_detail::max_diff(got, want), tol);
  }

  SuiteResult res;
  res.name = "module_oracles";
  res.passed = tr.ok;
  res.detail = "max deviation " + std::to_string(tr.worst) + " at " + tr.what;
  return res;
}

// ---------------------------------------------------------------------------
// Suite 4: loss and optimizer oracles (<= 1e-12)
// ---------------------------------------------------------------------------

inline SuiteResult verify_loss_oracles(const VerifyOptions&) {
  using verify_detail::Tracker;
  Tracker tr;
  const double tol = 1e-12;

  {  // binary form, hand case
    Tensor logits = Tensor::from_values(Shape4{1, 1, 2, 2}, {0.5, -0.5, 1.0, -1.0});
    Tensor target = Tensor::from_values(Shape4{1, 1, 2, 2}, {1.0, 0.0, 1.0, 0.0});
    ClassWeights w;
    w.boundary = {1.0, 2.0};
    double want = 0.0;
    for (int i = 0; i < 4; ++i) {
      const double z = logits.values()[static_cast<std::size_t>(i)];
      const double t = target.values()[static_cast<std::size_t>(i)];
      const double p = 1.0 / (1.0 + std::exp(-z));
      want -= (t == 1.0 ? 2.0 : 1.0) *
              (t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
    }
    want /= 4.0;
    tr.take("bce hand case",
            std::abs(weighted_bce(nullptr, logits, target, w).item() - want), tol);

    Tensor zeros = Tensor::zeros(Shape4{1, 1, 3, 3});
    ClassWeights uw;
    uw.boundary = {1.0, 1.0};
    tr.take("bce ln2",
            std::abs(weighted_bce(nullptr, zeros, Tensor::zeros(zeros.shape()), uw)
                         .item() -
                     std::log(2.0)),
            tol);
  }

  for (std::int64_t C : {2, 5, 9}) {  // softmax form, uniform logits
    Tensor logits = Tensor::zeros(Shape4{1, C, 3, 3});
    LabelMap labels(1, 3, 3, 0);
    for (std::size_t i = 0; i < labels.v.size(); ++i)
      labels.v[i] = static_cast<std::int32_t>(i % static_cast<std::size_t>(C));
    ClassWeights w;
    w.semantic.assign(static_cast<std::size_t>(C), 1.0);
    tr.take("ce lnC C=" + std::to_string(C),
            std::abs(weighted_ce(nullptr, logits, labels, w).item() -
                     std::log(static_cast<double>(C))),
            tol);
  }

  {  // softmax form, random scalar oracle
    auto s = Rng(5).stream("loss");
    Tensor logits = Tensor::randn(Shape4{1, 3, 1, 2}, 1.0, s);
    LabelMap labels(1, 1, 2, 0);
    labels.at(0, 0, 0) = 2;
    labels.at(0, 0, 1) = 1;
    ClassWeights w;
    w.semantic = {0.7, 1.3, 2.1};
    double want = 0.0;
    for (std::int64_t i = 0; i < 2; ++i) {
      double denom = 0.0;
      for (std::int64_t c = 0; c < 3; ++c) denom += std::exp(logits.at(0, c, 0, i));
      const std::int32_t y = labels.at(0, 0, i);
      want -= w.semantic[static_cast<std::size_t>(y)] *
              std::log(std::exp(logits.at(0, y, 0, i)) / denom);
    }
    want /= 2.0;
    tr.take("ce scalar oracle",
            std::abs(weighted_ce(nullptr, logits, labels, w).item() - want), tol);
  }

  {  // total = sum of five parts
    auto s = Rng(6).stream("loss");
    PredictionSet preds;
    for (auto& b : preds.boundary) b = Tensor::randn(Shape4{1, 1, 8, 8}, 1.0, s);
    preds.sem_side = Tensor::randn(Shape4{1, 4, 8, 8}, 1.0, s);
    preds.sem_final = Tensor::randn(Shape4{1, 4, 8, 8}, 1.0, s);
    LabelMap labels(1, 8, 8, 0);
    for (auto& l : labels.v) l = static_cast<std::int32_t>(s.bounded(4));
    Tensor bt = Tensor::zeros(Shape4{1, 1, 8, 8});
    for (double& v : bt.values()) v = s.next_u32() & 1 ? 1.0 : 0.0;
    ClassWeights w = class_weights({40, 30, 20, 10});
    double parts = 0.0;
    for (const Tensor& b : preds.boundary)
      parts += weighted_bce(nullptr, b, bt, w).item();
    parts += weighted_ce(nullptr, preds.sem_side, labels, w).item();
    parts += weighted_ce(nullptr, preds.sem_final, labels, w).item();
    tr.take("total loss sum",
            std::abs(total_loss(nullptr, preds, labels, bt, w).total.item() - parts),
            tol);
  }

  {  // class weight formula
    ClassWeights w = class_weights({75, 25});
    tr.take("class weights", std::abs(w.semantic[0] - 1.0 / std::log(1.77)) +
                                 std::abs(w.semantic[1] - 1.0 / std::log(1.27)),
            tol);
  }

  {  // Adam against a scalar trace
    AdamConfig cfg;
    cfg.lr = 0.05;
    cfg.weight_decay = 0.01;
    Tensor w = Tensor::zeros(Shape4{1, 1, 1, 1});
    Adam opt(cfg);
    double rw = 0.0, m = 0.0, v = 0.0;
    double worst = 0.0;
    for (int t = 1; t <= 5; ++t) {
      GradTape tape;
      Tensor diff = add(&tape, w, Tensor::full(w.shape(), -3.0));
      backward(mul(&tape, mul(&tape, diff, diff), Tensor::full(w.shape(), 0.5)));
      opt.step({{"w", w}});
      const double g = rw - 3.0;
      m = cfg.beta1 * m + (1 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
      rw -= cfg.lr * (m / (1 - std::pow(cfg.beta1, t)) /
                          (std::sqrt(v / (1 - std::pow(cfg.beta2, t))) + cfg.eps) +
                      cfg.weight_decay * rw);
      worst = std::max(worst, std::abs(w.values()[0] - rw));
    }
    tr.take("adam trace", worst, tol);
  }

  SuiteResult res;
  res.name = "loss_oracles";
  res.passed = tr.ok;
  res.detail = "max deviation " + std::to_string(tr.worst) + " at " + tr.what;
  return res;
}

// ---------------------------------------------------------------------------
// Suite 5: metric oracles (<= 1e-12, benchmark row within 0.05)
// ---------------------------------------------------------------------------

inline SuiteResult verify_metric_oracles(const VerifyOptions&) {
  using verify_detail::Tracker;
  Tracker tr;

  Pcg32 rng(21, 9);
  for (int trial = 0; trial < 25; ++trial) {
    ConfusionMatrix cm(6);
    for (auto& c : cm.counts) c = rng.bounded(40);
    MetricSummary got = summary(cm);
    double macc = 0.0, miou = 0.0;
    int na = 0, ni = 0;
    for (std::int64_t c = 0; c < 6; ++c) {
      double row = 0, col = 0;
      for (std::int64_t k = 0; k < 6; ++k) {
        row += static_cast<double>(cm.at(c, k));
        col += static_cast<double>(cm.at(k, c));
      }
      const double diag = static_cast<double>(cm.at(c, c));
      if (row > 0) {
        macc += diag / row;
        ++na;
      }
      if (row + col - diag > 0) {
        miou += diag / (row + col - diag);
        ++ni;
      }
    }
    if (na) macc /= na;
    if (ni) miou /= ni;
    tr.take("metrics brute force",
            std::abs(got.macc - macc) + std::abs(got.miou - miou), 1e-12);
  }

  {
    std::vector<ClassStat> stats(9);
    const double accs[9] = {98.7, 95.8, 89.0, 80.6, 71.5, 48.7, 33.6, 65.3, 71.1};
    const double ious[9] = {98.0, 87.6, 69.8, 58.8, 42.8, 33.8, 7.0, 48.3, 47.1};
    for (int c = 0; c < 9; ++c) {
      stats[static_cast<std::size_t>(c)].acc = accs[c];
      stats[static_cast<std::size_t>(c)].iou = ious[c];
    }
    MetricSummary s = summarize(stats);
    tr.take("benchmark row macc", std::abs(s.macc - 72.7), 0.05);
    tr.take("benchmark row miou", std::abs(s.miou - 54.8), 0.05);
  }

  SuiteResult res;
  res.name = "metric_oracles";
  res.passed = tr.ok;
  res.detail = "max deviation " + std::to_string(tr.worst) + " at " + tr.what;
  return res;
}

inline std::vector<SuiteResult> run_verification(const VerifyOptions& opt = {}) {
  return {verify_gradients(opt), verify_loop_oracles(opt),
          verify_module_oracles(opt), verify_loss_oracles(opt),
          verify_metric_oracles(opt)};
}

inline bool all_passed(const std::vector<SuiteResult>& results) {
  for (const auto& r : results)
    if (!r.passed) return false;
  return true;
}

}  // namespace egf
