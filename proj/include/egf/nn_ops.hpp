// Neural-net primitives: dilated 2-D convolution (cross-correlation),
// batch normalization, bilinear upsampling, and the conv+BN+ReLU block.
//
// Convolution runs as im2col + a blocked GEMM whose per-output accumulation
// order matches the naive quadruple loop, so results agree with the loop
// oracle to rounding. Gradients are accumulated batch-sequentially to keep
// results independent of the worker count.

#pragma once

#include <cmath>
#include <vector>

#include "egf/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace egf {

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

struct Conv2dParams {
  Tensor weight;          // [Cout, Cin, k, k]
  Tensor bias;            // [1, Cout, 1, 1]; undefined => no bias
  int stride = 1;
  int padding = 0;
  int dilation = 1;

  std::int64_t out_channels() const { return weight.shape().n; }
  std::int64_t in_channels() const { return weight.shape().c; }
  std::int64_t kernel() const { return weight.shape().h; }
};

inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, int stride,
                                    int padding, int dilation) {
  return (in + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
}

namespace detail {

// C[M,N] += A[M,K] * B[K,N]; per (i,j) the K accumulation runs in order.
inline void gemm_acc(std::int64_t M, std::int64_t N, std::int64_t K,
                     const double* A, const double* B, double* C) {
#ifdef _OPENMP
#pragma omp parallel for num_threads(max_threads()) schedule(static) if (M * N * K > 65536)
#endif
  for (std::int64_t i = 0; i < M; ++i) {
    double* Ci = C + i * N;
    const double* Ai = A + i * K;
    for (std::int64_t k = 0; k < K; ++k) {
      const double a = Ai[k];
      const double* Bk = B + k * N;
      for (std::int64_t j = 0; j < N; ++j) Ci[j] += a * Bk[j];
    }
  }
}

inline void transpose(std::int64_t rows, std::int64_t cols, const double* src,
                      double* dst) {
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

// Packs one batch item into [Cin*k*k, Ho*Wo]; k-index order (cin, ky, kx)
// matches the weight layout and the oracle loop order.
inline void im2col(const double* x, std::int64_t cin, std::int64_t h, std::int64_t w,
                   std::int64_t k, int stride, int padding, int dilation,
                   std::int64_t ho, std::int64_t wo, double* col) {
  const std::int64_t p = ho * wo;
  for (std::int64_t c = 0; c < cin; ++c) {
    const double* xc = x + c * h * w;
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        double* row = col + ((c * k + ky) * k + kx) * p;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          const std::int64_t iy = oy * stride - padding + ky * dilation;
          if (iy < 0 || iy >= h) {
            std::fill(row + oy * wo, row + (oy + 1) * wo, 0.0);
            continue;
          }
          const double* xrow = xc + iy * w;
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            const std::int64_t ix = ox * stride - padding + kx * dilation;
            row[oy * wo + ox] = (ix >= 0 && ix < w) ? xrow[ix] : 0.0;
          }
        }
      }
    }
  }
}

inline void col2im_acc(const double* col, std::int64_t cin, std::int64_t h,
                       std::int64_t w, std::int64_t k, int stride, int padding,
                       int dilation, std::int64_t ho, std::int64_t wo, double* gx) {
  const std::int64_t p = ho * wo;
  for (std::int64_t c = 0; c < cin; ++c) {
    double* gc = gx + c * h * w;
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        const double* row = col + ((c * k + ky) * k + kx) * p;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          const std::int64_t iy = oy * stride - padding + ky * dilation;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            const std::int64_t ix = ox * stride - padding + kx * dilation;
            if (ix >= 0 && ix < w) gc[iy * w + ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

inline Tensor conv2d(GradTape* tape, const Tensor& x, const Conv2dParams& p) {
  const Shape4& xs = x.shape();
  const Shape4& ws = p.weight.shape();
  check_arg(ws.h == ws.w, "conv2d: kernel must be square");
  check_arg(xs.c == ws.c, "conv2d: input has " + std::to_string(xs.c) +
                              " channels, weight expects " + std::to_string(ws.c));
  check_arg(p.stride >= 1 && p.dilation >= 1 && p.padding >= 0,
            "conv2d: bad stride/padding/dilation");
  const std::int64_t ho = conv_out_extent(xs.h, ws.h, p.stride, p.padding, p.dilation);
  const std::int64_t wo = conv_out_extent(xs.w, ws.w, p.stride, p.padding, p.dilation);
  check_arg(ho >= 1 && wo >= 1, "conv2d: degenerate output size for input " + xs.str());
  if (p.bias.defined()) {
    check_arg(p.bias.shape() == Shape4{1, ws.n, 1, 1}, "conv2d: bias shape mismatch");
  }

  const std::int64_t ckk = ws.c * ws.h * ws.w;
  const std::int64_t pix = ho * wo;
  Tensor out = Tensor::zeros(Shape4{xs.n, ws.n, ho, wo});
  std::vector<double> col(static_cast<std::size_t>(ckk * pix));
  for (std::int64_t n = 0; n < xs.n; ++n) {
    detail::im2col(x.values().data() + n * xs.c * xs.h * xs.w, xs.c, xs.h, xs.w,
                   ws.h, p.stride, p.padding, p.dilation, ho, wo, col.data());
    double* on = out.values().data() + n * ws.n * pix;
    detail::gemm_acc(ws.n, pix, ckk, p.weight.values().data(), col.data(), on);
    if (p.bias.defined()) {
      for (std::int64_t co = 0; co < ws.n; ++co) {
        const double b = p.bias.values()[static_cast<std::size_t>(co)];
        double* oc = on + co * pix;
        for (std::int64_t i = 0; i < pix; ++i) oc[i] += b;
      }
    }
  }
  check_finite(out.values(), "conv2d");

  if (tape) {
    auto xd = x.impl();
    auto wd = p.weight.impl();
    const bool has_bias = p.bias.defined();
    const Conv2dParams cfg = p;  // shares weight/bias buffers
    std::vector<Tensor> inputs{x, p.weight};
    if (has_bias) inputs.push_back(p.bias);
    tape->record(out, inputs, [xd, wd, cfg, has_bias, ho, wo](detail::BackwardCtx& ctx) {
      const Shape4 xs = xd->shape;
      const Shape4 ws = wd->shape;
      const std::int64_t ckk = ws.c * ws.h * ws.w;
      const std::int64_t pix = ho * wo;
      const auto& g = ctx.out_grad();
      auto& gx = ctx.in_grad(0);
      auto& gw = ctx.in_grad(1);
      std::vector<double> col(static_cast<std::size_t>(ckk * pix));
      std::vector<double> colT(static_cast<std::size_t>(ckk * pix));
      std::vector<double> wT(static_cast<std::size_t>(ws.n * ckk));
      std::vector<double> gcol(static_cast<std::size_t>(ckk * pix));
      detail::transpose(ws.n, ckk, wd->values.data(), wT.data());
      for (std::int64_t n = 0; n < xs.n; ++n) {
        const double* gn = g.data() + n * ws.n * pix;
        detail::im2col(xd->values.data() + n * xs.c * xs.h * xs.w, xs.c, xs.h, xs.w,
                       ws.h, cfg.stride, cfg.padding, cfg.dilation, ho, wo, col.data());
        detail::transpose(ckk, pix, col.data(), colT.data());
        detail::gemm_acc(ws.n, ckk, pix, gn, colT.data(), gw.data());
        std::fill(gcol.begin(), gcol.end(), 0.0);
        detail::gemm_acc(ckk, pix, ws.n, wT.data(), gn, gcol.data());
        detail::col2im_acc(gcol.data(), xs.c, xs.h, xs.w, ws.h, cfg.stride,
                           cfg.padding, cfg.dilation, ho, wo,
                           gx.data() + n * xs.c * xs.h * xs.w);
      }
      if (has_bias) {
        auto& gb = ctx.in_grad(2);
        for (std::int64_t n = 0; n < xs.n; ++n)
          for (std::int64_t co = 0; co < ws.n; ++co) {
            const double* gc = g.data() + (n * ws.n + co) * pix;
            double acc = 0.0;
            for (std::int64_t i = 0; i < pix; ++i) acc += gc[i];
            gb[static_cast<std::size_t>(co)] += acc;
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

enum class BnMode { train, eval };

struct BatchNormParams {
  Tensor scale;         // [1,C,1,1]
  Tensor shift;         // [1,C,1,1]
  Tensor running_mean;  // [1,C,1,1]
  Tensor running_var;   // [1,C,1,1]
  double momentum = 0.1;
  double eps = 1e-5;
};

inline Tensor batchnorm2d(GradTape* tape, const Tensor& x, BatchNormParams& p,
                          BnMode mode) {
  const Shape4& xs = x.shape();
  const std::int64_t C = p.scale.shape().c;
  check_arg(xs.c == C, "batchnorm2d: channel mismatch");
  const std::int64_t m = xs.n * xs.h * xs.w;
  check_arg(m > 0, "batchnorm2d: empty batch");
  check_arg(p.eps > 0, "batchnorm2d: eps must be positive");

  const std::int64_t plane = xs.h * xs.w;
  std::vector<double> mean(static_cast<std::size_t>(C), 0.0);
  std::vector<double> inv_std(static_cast<std::size_t>(C), 0.0);
  const auto& xv = x.values();

  if (mode == BnMode::train) {
    for (std::int64_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (std::int64_t n = 0; n < xs.n; ++n) {
        const double* xp = xv.data() + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) acc += xp[i];
      }
      const double mu = acc / static_cast<double>(m);
      double var_acc = 0.0;
      for (std::int64_t n = 0; n < xs.n; ++n) {
        const double* xp = xv.data() + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const double d = xp[i] - mu;
          var_acc += d * d;
        }
      }
      const double var = var_acc / static_cast<double>(m);  // biased
      mean[static_cast<std::size_t>(c)] = mu;
      inv_std[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var + p.eps);
      auto& rm = p.running_mean.values()[static_cast<std::size_t>(c)];
      auto& rv = p.running_var.values()[static_cast<std::size_t>(c)];
      rm = (1.0 - p.momentum) * rm + p.momentum * mu;
      rv = (1.0 - p.momentum) * rv + p.momentum * var;
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      mean[static_cast<std::size_t>(c)] = p.running_mean.values()[static_cast<std::size_t>(c)];
      inv_std[static_cast<std::size_t>(c)] =
          1.0 / std::sqrt(p.running_var.values()[static_cast<std::size_t>(c)] + p.eps);
    }
  }

  Tensor out = Tensor::zeros(xs);
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto& ov = out.values();
  for (std::int64_t n = 0; n < xs.n; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const double mu = mean[static_cast<std::size_t>(c)];
      const double inv = inv_std[static_cast<std::size_t>(c)];
      const double sc = p.scale.values()[static_cast<std::size_t>(c)];
      const double sh = p.shift.values()[static_cast<std::size_t>(c)];
      const std::int64_t off = (n * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        const double h = (xv[static_cast<std::size_t>(off + i)] - mu) * inv;
        (*xhat)[static_cast<std::size_t>(off + i)] = h;
        ov[static_cast<std::size_t>(off + i)] = sc * h + sh;
      }
    }
  check_finite(ov, "batchnorm2d");

  if (tape) {
    auto sd = p.scale.impl();
    const bool train = mode == BnMode::train;
    tape->record(out, {x, p.scale, p.shift},
                 [xs, C, plane, m, xhat, inv_std, sd, train](detail::BackwardCtx& ctx) {
                   const auto& g = ctx.out_grad();
                   auto& gx = ctx.in_grad(0);
                   auto& gscale = ctx.in_grad(1);
                   auto& gshift = ctx.in_grad(2);
                   for (std::int64_t c = 0; c < C; ++c) {
                     const double sc = sd->values[static_cast<std::size_t>(c)];
                     const double inv = inv_std[static_cast<std::size_t>(c)];
                     double sum_g = 0.0, sum_gh = 0.0;
                     for (std::int64_t n = 0; n < xs.n; ++n) {
                       const std::int64_t off = (n * C + c) * plane;
                       for (std::int64_t i = 0; i < plane; ++i) {
                         const double gi = g[static_cast<std::size_t>(off + i)];
                         sum_g += gi;
                         sum_gh += gi * (*xhat)[static_cast<std::size_t>(off + i)];
                       }
                     }
                     gscale[static_cast<std::size_t>(c)] += sum_gh;
                     gshift[static_cast<std::size_t>(c)] += sum_g;
                     const double md = static_cast<double>(m);
                     for (std::int64_t n = 0; n < xs.n; ++n) {
                       const std::int64_t off = (n * C + c) * plane;
                       for (std::int64_t i = 0; i < plane; ++i) {
                         const double gi = g[static_cast<std::size_t>(off + i)];
                         const double h = (*xhat)[static_cast<std::size_t>(off + i)];
                         if (train) {
                           gx[static_cast<std::size_t>(off + i)] +=
                               sc * inv * (gi - sum_g / md - h * sum_gh / md);
                         } else {
                           gx[static_cast<std::size_t>(off + i)] += sc * inv * gi;
                         }
                       }
                     }
                   }
                 });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bilinear upsampling (half-pixel centers, edge clamped)
// ---------------------------------------------------------------------------

inline Tensor upsample_bilinear(GradTape* tape, const Tensor& x, int factor) {
  check_arg(factor >= 1, "upsample_bilinear: factor must be >= 1");
  const Shape4& xs = x.shape();
  const std::int64_t ho = xs.h * factor;
  const std::int64_t wo = xs.w * factor;
  Tensor out = Tensor::zeros(Shape4{xs.n, xs.c, ho, wo});

  struct Tap {
    std::int64_t i0, i1;
    double w1;  // weight of i1; i0 gets (1 - w1)
  };
  auto make_taps = [factor](std::int64_t out_len, std::int64_t in_len) {
    std::vector<Tap> taps(static_cast<std::size_t>(out_len));
    for (std::int64_t i = 0; i < out_len; ++i) {
      const double src = (static_cast<double>(i) + 0.5) / factor - 0.5;
      std::int64_t i0 = static_cast<std::int64_t>(std::floor(src));
      const double w1 = src - static_cast<double>(i0);
      std::int64_t i1 = i0 + 1;
      i0 = std::clamp<std::int64_t>(i0, 0, in_len - 1);
      i1 = std::clamp<std::int64_t>(i1, 0, in_len - 1);
      taps[static_cast<std::size_t>(i)] = Tap{i0, i1, w1};
    }
    return taps;
  };
  const auto ty = make_taps(ho, xs.h);
  const auto tx = make_taps(wo, xs.w);

  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::int64_t n = 0; n < xs.n; ++n)
    for (std::int64_t c = 0; c < xs.c; ++c) {
      const double* xp = xv.data() + (n * xs.c + c) * xs.h * xs.w;
      double* op = ov.data() + (n * xs.c + c) * ho * wo;
      for (std::int64_t oy = 0; oy < ho; ++oy) {
        const Tap& a = ty[static_cast<std::size_t>(oy)];
        for (std::int64_t ox = 0; ox < wo; ++ox) {
          const Tap& b = tx[static_cast<std::size_t>(ox)];
          const double v00 = xp[a.i0 * xs.w + b.i0];
          const double v01 = xp[a.i0 * xs.w + b.i1];
          const double v10 = xp[a.i1 * xs.w + b.i0];
          const double v11 = xp[a.i1 * xs.w + b.i1];
          op[oy * wo + ox] = (1.0 - a.w1) * ((1.0 - b.w1) * v00 + b.w1 * v01) +
                             a.w1 * ((1.0 - b.w1) * v10 + b.w1 * v11);
        }
      }
    }
  check_finite(ov, "upsample_bilinear");

  if (tape) {
    tape->record(out, {x}, [xs, ho, wo, ty, tx](detail::BackwardCtx& ctx) {
      const auto& g = ctx.out_grad();
      auto& gx = ctx.in_grad(0);
      for (std::int64_t n = 0; n < xs.n; ++n)
        for (std::int64_t c = 0; c < xs.c; ++c) {
          double* gp = gx.data() + (n * xs.c + c) * xs.h * xs.w;
          const double* go = g.data() + (n * xs.c + c) * ho * wo;
          for (std::int64_t oy = 0; oy < ho; ++oy) {
            const Tap& a = ty[static_cast<std::size_t>(oy)];
            for (std::int64_t ox = 0; ox < wo; ++ox) {
              const Tap& b = tx[static_cast<std::size_t>(ox)];
              const double gi = go[oy * wo + ox];
              gp[a.i0 * xs.w + b.i0] += (1.0 - a.w1) * (1.0 - b.w1) * gi;
              gp[a.i0 * xs.w + b.i1] += (1.0 - a.w1) * b.w1 * gi;
              gp[a.i1 * xs.w + b.i0] += a.w1 * (1.0 - b.w1) * gi;
              gp[a.i1 * xs.w + b.i1] += a.w1 * b.w1 * gi;
            }
          }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// CBR block and layer factories
// ---------------------------------------------------------------------------

// He fan-in init for conv weights; biases, BN shift start at zero.
inline Conv2dParams make_conv2d(std::int64_t cin, std::int64_t cout, std::int64_t k,
                                int stride, int padding, int dilation, Pcg32& rng,
                                bool with_bias = true) {
  Conv2dParams p;
  const double stddev = std::sqrt(2.0 / static_cast<double>(cin * k * k));
  p.weight = Tensor::randn(Shape4{cout, cin, k, k}, stddev, rng);
  if (with_bias) p.bias = Tensor::zeros(Shape4{1, cout, 1, 1});
  p.stride = stride;
  p.padding = padding;
  p.dilation = dilation;
  return p;
}

inline BatchNormParams make_batchnorm(std::int64_t c) {
  BatchNormParams p;
  p.scale = Tensor::ones(Shape4{1, c, 1, 1});
  p.shift = Tensor::zeros(Shape4{1, c, 1, 1});
  p.running_mean = Tensor::zeros(Shape4{1, c, 1, 1});
  p.running_var = Tensor::ones(Shape4{1, c, 1, 1});
  return p;
}

struct CbrBlock {
  Conv2dParams conv;
  BatchNormParams bn;
};

// 3x3 spatial-preserving conv (padding == dilation) + BN + ReLU.
inline CbrBlock make_cbr(std::int64_t cin, std::int64_t cout, int dilation,
                         Pcg32& rng) {
  CbrBlock b;
  b.conv = make_conv2d(cin, cout, 3, 1, dilation, dilation, rng);
  b.bn = make_batchnorm(cout);
  return b;
}

inline Tensor cbr(GradTape* tape, const Tensor& x, CbrBlock& block, BnMode mode) {
  check_arg(block.conv.kernel() == 3 && block.conv.padding == block.conv.dilation &&
                block.conv.stride == 1,
            "cbr: requires a spatial-preserving 3x3 conv (padding == dilation)");
  return relu(tape, batchnorm2d(tape, conv2d(tape, x, block.conv), block.bn, mode));
}

}  // namespace egf
