// Straight-line scalar reference implementations.
//
// Everything in egf::ref is written as plain loops over std::vector<double>
// with explicit indexing and shares no code with the production ops. The
// verification suites and tests compare the two paths; keep it that way.

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace egf::ref {

struct Vol {
  std::int64_t n = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;

  Vol() = default;
  Vol(std::int64_t n_, std::int64_t c_, std::int64_t h_, std::int64_t w_)
      : n(n_), c(c_), h(h_), w(w_),
        v(static_cast<std::size_t>(n_ * c_ * h_ * w_), 0.0) {}

  double& at(std::int64_t i, std::int64_t ch, std::int64_t y, std::int64_t x) {
    return v[static_cast<std::size_t>(((i * c + ch) * h + y) * w + x)];
  }
  double at(std::int64_t i, std::int64_t ch, std::int64_t y, std::int64_t x) const {
    return v[static_cast<std::size_t>(((i * c + ch) * h + y) * w + x)];
  }
  std::int64_t numel() const { return n * c * h * w; }
};

using VolMap = std::map<std::string, Vol>;

inline const Vol& named(const VolMap& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) throw std::runtime_error("scalar_ref: missing param " + key);
  return it->second;
}

// Cross-correlation with zero padding; weight is [Cout, Cin, k, k] in wv.
inline Vol conv2d(const Vol& x, const Vol& weight, const std::vector<double>& bias,
                  int stride, int padding, int dilation) {
  const std::int64_t k = weight.h;
  const std::int64_t ho = (x.h + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
  const std::int64_t wo = (x.w + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
  Vol out(x.n, weight.n, ho, wo);
  for (std::int64_t b = 0; b < x.n; ++b)
    for (std::int64_t co = 0; co < weight.n; ++co)
      for (std::int64_t oy = 0; oy < ho; ++oy)
        for (std::int64_t ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          for (std::int64_t ci = 0; ci < x.c; ++ci)
            for (std::int64_t ky = 0; ky < k; ++ky)
              for (std::int64_t kx = 0; kx < k; ++kx) {
                const std::int64_t iy = oy * stride - padding + ky * dilation;
                const std::int64_t ix = ox * stride - padding + kx * dilation;
                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                acc += x.at(b, ci, iy, ix) * weight.at(co, ci, ky, kx);
              }
          if (!bias.empty()) acc += bias[static_cast<std::size_t>(co)];
          out.at(b, co, oy, ox) = acc;
        }
  return out;
}

inline Vol bn_train(const Vol& x, const std::vector<double>& scale,
                    const std::vector<double>& shift, double eps) {
  Vol out(x.n, x.c, x.h, x.w);
  const double m = static_cast<double>(x.n * x.h * x.w);
  for (std::int64_t c = 0; c < x.c; ++c) {
    double mean = 0.0;
    for (std::int64_t b = 0; b < x.n; ++b)
      for (std::int64_t y = 0; y < x.h; ++y)
        for (std::int64_t xx = 0; xx < x.w; ++xx) mean += x.at(b, c, y, xx);
    mean /= m;
    double var = 0.0;
    for (std::int64_t b = 0; b < x.n; ++b)
      for (std::int64_t y = 0; y < x.h; ++y)
        for (std::int64_t xx = 0; xx < x.w; ++xx) {
          const double d = x.at(b, c, y, xx) - mean;
          var += d * d;
        }
    var /= m;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::int64_t b = 0; b < x.n; ++b)
      for (std::int64_t y = 0; y < x.h; ++y)
        for (std::int64_t xx = 0; xx < x.w; ++xx)
          out.at(b, c, y, xx) = scale[static_cast<std::size_t>(c)] *
                                    (x.at(b, c, y, xx) - mean) * inv +
                                shift[static_cast<std::size_t>(c)];
  }
  return out;
}

inline Vol bn_eval(const Vol& x, const std::vector<double>& scale,
                   const std::vector<double>& shift,
                   const std::vector<double>& running_mean,
                   const std::vector<double>& running_var, double eps) {
  Vol out(x.n, x.c, x.h, x.w);
  for (std::int64_t c = 0; c < x.c; ++c) {
    const double inv = 1.0 / std::sqrt(running_var[static_cast<std::size_t>(c)] + eps);
    for (std::int64_t b = 0; b < x.n; ++b)
      for (std::int64_t y = 0; y < x.h; ++y)
        for (std::int64_t xx = 0; xx < x.w; ++xx)
          out.at(b, c, y, xx) =
              scale[static_cast<std::size_t>(c)] *
                  (x.at(b, c, y, xx) - running_mean[static_cast<std::size_t>(c)]) * inv +
              shift[static_cast<std::size_t>(c)];
  }
  return out;
}

inline Vol relu(const Vol& x) {
  Vol out = x;
  for (double& v : out.v) v = v > 0.0 ? v : 0.0;
  return out;
}

inline Vol add(const Vol& a, const Vol& b) {
  Vol out = a;
  if (b.c == a.c) {
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = a.v[i] + b.v[i];
  } else {
    for (std::int64_t n = 0; n < a.n; ++n)
      for (std::int64_t c = 0; c < a.c; ++c)
        for (std::int64_t y = 0; y < a.h; ++y)
          for (std::int64_t x = 0; x < a.w; ++x)
            out.at(n, c, y, x) = a.at(n, c, y, x) + b.at(n, 0, y, x);
  }
  return out;
}

inline Vol mul(const Vol& a, const Vol& b) {
  Vol out = a;
  if (b.c == a.c) {
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
  } else {
    for (std::int64_t n = 0; n < a.n; ++n)
      for (std::int64_t c = 0; c < a.c; ++c)
        for (std::int64_t y = 0; y < a.h; ++y)
          for (std::int64_t x = 0; x < a.w; ++x)
            out.at(n, c, y, x) = a.at(n, c, y, x) * b.at(n, 0, y, x);
  }
  return out;
}

inline Vol concat(const std::vector<Vol>& parts) {
  std::int64_t c = 0;
  for (const Vol& p : parts) c += p.c;
  Vol out(parts.front().n, c, parts.front().h, parts.front().w);
  for (std::int64_t n = 0; n < out.n; ++n) {
    std::int64_t co = 0;
    for (const Vol& p : parts) {
      for (std::int64_t pc = 0; pc < p.c; ++pc, ++co)
        for (std::int64_t y = 0; y < out.h; ++y)
          for (std::int64_t x = 0; x < out.w; ++x)
            out.at(n, co, y, x) = p.at(n, pc, y, x);
    }
  }
  return out;
}

// Half-pixel-center bilinear upsampling with edge clamping.
inline Vol upsample_bilinear(const Vol& x, int factor) {
  Vol out(x.n, x.c, x.h * factor, x.w * factor);
  auto clampi = [](std::int64_t v, std::int64_t lo, std::int64_t hi) {
    return v < lo ? lo : (v > hi ? hi : v);
  };
  for (std::int64_t n = 0; n < x.n; ++n)
    for (std::int64_t c = 0; c < x.c; ++c)
      for (std::int64_t oy = 0; oy < out.h; ++oy)
        for (std::int64_t ox = 0; ox < out.w; ++ox) {
          const double sy = (static_cast<double>(oy) + 0.5) / factor - 0.5;
          const double sx = (static_cast<double>(ox) + 0.5) / factor - 0.5;
          const std::int64_t y0r = static_cast<std::int64_t>(std::floor(sy));
          const std::int64_t x0r = static_cast<std::int64_t>(std::floor(sx));
          const double wy = sy - static_cast<double>(y0r);
          const double wx = sx - static_cast<double>(x0r);
          const std::int64_t y0 = clampi(y0r, 0, x.h - 1);
          const std::int64_t y1 = clampi(y0r + 1, 0, x.h - 1);
          const std::int64_t x0 = clampi(x0r, 0, x.w - 1);
          const std::int64_t x1 = clampi(x0r + 1, 0, x.w - 1);
          out.at(n, c, oy, ox) =
              (1.0 - wy) * ((1.0 - wx) * x.at(n, c, y0, x0) + wx * x.at(n, c, y0, x1)) +
              wy * ((1.0 - wx) * x.at(n, c, y1, x0) + wx * x.at(n, c, y1, x1));
        }
  return out;
}

// ---------------------------------------------------------------------------
// Module composites. Parameters arrive as a name->Vol map using the same
// relative names the modules expose; all layer hyperparameters (kernel
// sizes, dilations, paddings) are hard-coded from the architecture
// definition rather than read from the implementation.
// ---------------------------------------------------------------------------

inline std::vector<double> bias_of(const VolMap& p, const std::string& name) {
  return named(p, name + "/bias").v;
}

inline Vol conv_named(const Vol& x, const VolMap& p, const std::string& name,
                      int stride, int padding, int dilation) {
  return conv2d(x, named(p, name + "/weight"), bias_of(p, name), stride, padding,
                dilation);
}

// conv(3x3, padding==dilation) + train-mode BN + relu
inline Vol cbr_block(const Vol& x, const VolMap& p, const std::string& name,
                     double eps, int dilation = 1) {
  Vol c = conv_named(x, p, name + "/conv", 1, dilation, dilation);
  return relu(bn_train(c, named(p, name + "/bn/scale").v,
                       named(p, name + "/bn/shift").v, eps));
}

struct MfmRefOut {
  Vol fused;
  Vol head;
};

inline MfmRefOut mfm(const Vol& rgb_feat, const Vol& th_feat, const VolMap& p,
                     double eps) {
  Vol both = add(rgb_feat, th_feat);
  Vol crossed = concat({mul(both, rgb_feat), mul(both, th_feat)});
  Vol fm = conv_named(crossed, p, "cross_fuse", 1, 0, 1);
  Vol inner = bn_train(conv_named(cbr_block(fm, p, "refine_cbr", eps), p,
                                  "refine_conv", 1, 1, 1),
                       named(p, "refine_bn/scale").v, named(p, "refine_bn/shift").v,
                       eps);
  Vol refined = relu(add(fm, inner));
  std::vector<Vol> branches{refined};
  for (int r = 1; r <= 4; ++r)
    branches.push_back(conv_named(refined, p, "pyramid" + std::to_string(r), 1, r, r));
  Vol fused = conv_named(concat(branches), p, "merge", 1, 1, 1);
  return MfmRefOut{fused, cbr_block(fused, p, "head", eps)};
}

inline Vol gim(const Vol& deepest, const VolMap& p, double eps) {
  std::vector<Vol> branches{conv_named(deepest, p, "entry", 1, 0, 1)};
  for (int r = 1; r <= 4; ++r)
    branches.push_back(conv_named(deepest, p, "pyramid" + std::to_string(r), 1, r, r));
  Vol context = conv_named(concat(branches), p, "merge", 1, 0, 1);
  return upsample_bilinear(cbr_block(add(deepest, context), p, "out_cbr", eps), 2);
}

inline Vol sim(const Vol& high, const Vol& level4, const VolMap& p, double eps,
               bool residual_fs2) {
  Vol mixed = conv_named(concat({high, level4}), p, "fuse", 1, 0, 1);
  Vol crossed = add(mul(mixed, high), mul(mixed, level4));
  Vol inner = bn_train(conv_named(cbr_block(crossed, p, "refine_cbr", eps), p,
                                  "refine_conv", 1, 1, 1),
                       named(p, "refine_bn/scale").v, named(p, "refine_bn/shift").v,
                       eps);
  const Vol& residual = residual_fs2 ? crossed : high;
  return upsample_bilinear(conv_named(add(residual, inner), p, "out_conv", 1, 0, 1),
                           2);
}

inline Vol sfm_step(const Vol& high, const Vol& cascade, const Vol& skip, int level) {
  Vol aligned = upsample_bilinear(high, 1 << (4 - level));
  return upsample_bilinear(add(add(aligned, cascade), skip), 2);
}

struct SgmRefOut {
  Vol concat_fused;
  Vol sum_fused;
  Vol logits;
};

inline SgmRefOut sgm(const Vol& sem4, const Vol& sem5, const VolMap& p, double eps) {
  Vol up4 = upsample_bilinear(sem4, 16);
  Vol up5 = upsample_bilinear(sem5, 32);
  Vol concat_fused = conv_named(concat({up4, up5}), p, "fuse", 1, 0, 1);
  Vol sum_fused = add(add(concat_fused, up4), up5);
  Vol logits = conv_named(mul(cbr_block(sum_fused, p, "refine", eps), up5), p,
                          "class_conv", 1, 0, 1);
  return SgmRefOut{concat_fused, sum_fused, logits};
}

// Boundary embedding: 1x1 single-channel head, upsample by 2^level, gate by
// the edge map.
inline Vol embed_boundary(const Vol& boundary_feat, const VolMap& head,
                          const Vol& edge, int level) {
  Vol logits = upsample_bilinear(conv_named(boundary_feat, head, "head", 1, 0, 1),
                                 1 << level);
  return mul(logits, edge);
}

inline Vol embed_semantic(const Vol& x, const Vol& edge) {
  return add(mul(x, edge), x);
}

// |Gx| + |Gy| with the standard 3x3 Sobel kernels, zero padding, and the
// 1-pixel border of the result forced to zero.
inline Vol sobel_magnitude(const Vol& img) {
  static const double kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  static const double ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  Vol out(img.n, 1, img.h, img.w);
  for (std::int64_t n = 0; n < img.n; ++n)
    for (std::int64_t y = 0; y < img.h; ++y)
      for (std::int64_t x = 0; x < img.w; ++x) {
        if (y == 0 || x == 0 || y == img.h - 1 || x == img.w - 1) {
          out.at(n, 0, y, x) = 0.0;
          continue;
        }
        double gx = 0.0, gy = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const std::int64_t yy = y + dy;
            const std::int64_t xx = x + dx;
            if (yy < 0 || yy >= img.h || xx < 0 || xx >= img.w) continue;
            gx += kx[dy + 1][dx + 1] * img.at(n, 0, yy, xx);
            gy += ky[dy + 1][dx + 1] * img.at(n, 0, yy, xx);
          }
        out.at(n, 0, y, x) = std::abs(gx) + std::abs(gy);
      }
  return out;
}

}  // namespace egf::ref
