// Prior edge map from the input modalities and boundary ground truth from
// label maps. The edge map is a fixed input-derived prior: nothing here
// records onto a tape and no gradient ever flows into it.

#pragma once

#include <cmath>

#include "egf/tensor.hpp"

namespace egf {

// Edge-strength raster [N,1,H,W] with values in [0,1].
using EdgeMap = Tensor;

// Binary boundary mask [N,1,H,W] with values in {0,1}.
using BoundaryTarget = Tensor;

// |Gx| + |Gy| with the standard 3x3 Sobel kernels (zero padding). Zero
// padding manufactures edges along the frame, so the 1-pixel border of the
// magnitude map is forced to 0.
inline Tensor sobel_magnitude(const Tensor& img) {
  const Shape4& s = img.shape();
  check_arg(s.c == 1, "sobel_magnitude: expected single-channel input, got " + s.str());
  Tensor out = Tensor::zeros(s);
  for (std::int64_t n = 0; n < s.n; ++n) {
    const double* x = img.values().data() + n * s.h * s.w;
    double* o = out.values().data() + n * s.h * s.w;
    for (std::int64_t y = 1; y + 1 < s.h; ++y) {
      for (std::int64_t xx = 1; xx + 1 < s.w; ++xx) {
        const double tl = x[(y - 1) * s.w + xx - 1], tc = x[(y - 1) * s.w + xx],
                     tr = x[(y - 1) * s.w + xx + 1];
        const double ml = x[y * s.w + xx - 1], mr = x[y * s.w + xx + 1];
        const double bl = x[(y + 1) * s.w + xx - 1], bc = x[(y + 1) * s.w + xx],
                     br = x[(y + 1) * s.w + xx + 1];
        // Each gradient is a difference of two symmetric tap groups, so a
        // constant image cancels exactly instead of leaving rounding residue
        // that min-max normalization would then amplify.
        const double gx = (tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl);
        const double gy = (bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr);
        o[y * s.w + xx] = std::abs(gx) + std::abs(gy);
      }
    }
  }
  check_finite(out.values(), "sobel_magnitude");
  return out;
}

// BT.601 luma; collapses RGB to one plane matching the thermal raster.
inline Tensor rgb_to_luma(const Tensor& rgb) {
  const Shape4& s = rgb.shape();
  check_arg(s.c == 3, "rgb_to_luma: expected 3 channels, got " + s.str());
  Tensor out = Tensor::zeros(Shape4{s.n, 1, s.h, s.w});
  const std::int64_t plane = s.h * s.w;
  for (std::int64_t n = 0; n < s.n; ++n) {
    const double* r = rgb.values().data() + (n * 3 + 0) * plane;
    const double* g = rgb.values().data() + (n * 3 + 1) * plane;
    const double* b = rgb.values().data() + (n * 3 + 2) * plane;
    double* o = out.values().data() + n * plane;
    for (std::int64_t i = 0; i < plane; ++i)
      o[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
  }
  return out;
}

// Sobel on luma(rgb) plus Sobel on thermal, then per-image min-max
// normalization to [0,1]; a constant image yields an all-zero map.
inline EdgeMap prior_edge_map(const Tensor& rgb, const Tensor& thermal) {
  const Shape4& rs = rgb.shape();
  const Shape4& ts = thermal.shape();
  check_arg(ts.c == 1, "prior_edge_map: thermal must be single-channel");
  check_arg(rs.n == ts.n && rs.h == ts.h && rs.w == ts.w,
            "prior_edge_map: shape mismatch " + rs.str() + " vs " + ts.str());
  Tensor e = add(nullptr, sobel_magnitude(rgb_to_luma(rgb)), sobel_magnitude(thermal));
  const std::int64_t plane = rs.h * rs.w;
  for (std::int64_t n = 0; n < rs.n; ++n) {
    double* p = e.values().data() + n * plane;
    double lo = p[0], hi = p[0];
    for (std::int64_t i = 0; i < plane; ++i) {
      lo = std::min(lo, p[i]);
      hi = std::max(hi, p[i]);
    }
    if (hi > lo) {
      const double inv = 1.0 / (hi - lo);
      for (std::int64_t i = 0; i < plane; ++i) p[i] = (p[i] - lo) * inv;
    } else {
      for (std::int64_t i = 0; i < plane; ++i) p[i] = 0.0;
    }
  }
  return e;
}

// A pixel is boundary iff any 4-neighbor carries a different label; the mask
// is then dilated `dilate_radius` times with a 3x3 square element.
inline BoundaryTarget boundary_gt(const LabelMap& labels, std::int64_t num_classes,
                                  int dilate_radius = 1) {
  for (std::int32_t v : labels.v)
    check_arg(v >= 0 && v < num_classes,
              "boundary_gt: label " + std::to_string(v) + " out of range");
  check_arg(dilate_radius >= 0, "boundary_gt: negative dilation radius");
  const std::int64_t h = labels.h, w = labels.w;
  Tensor mask = Tensor::zeros(Shape4{labels.n, 1, h, w});
  for (std::int64_t n = 0; n < labels.n; ++n) {
    double* m = mask.values().data() + n * h * w;
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const std::int32_t v = labels.at(n, y, x);
        const bool edge = (y > 0 && labels.at(n, y - 1, x) != v) ||
                          (y + 1 < h && labels.at(n, y + 1, x) != v) ||
                          (x > 0 && labels.at(n, y, x - 1) != v) ||
                          (x + 1 < w && labels.at(n, y, x + 1) != v);
        m[y * w + x] = edge ? 1.0 : 0.0;
      }
  }
  for (int r = 0; r < dilate_radius; ++r) {
    Tensor grown = Tensor::zeros(mask.shape());
    for (std::int64_t n = 0; n < labels.n; ++n) {
      const double* src = mask.values().data() + n * h * w;
      double* dst = grown.values().data() + n * h * w;
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
          double v = 0.0;
          for (std::int64_t dy = -1; dy <= 1 && v == 0.0; ++dy)
            for (std::int64_t dx = -1; dx <= 1; ++dx) {
              const std::int64_t yy = y + dy, xx = x + dx;
              if (yy >= 0 && yy < h && xx >= 0 && xx < w && src[yy * w + xx] > 0.0) {
                v = 1.0;
                break;
              }
            }
          dst[y * w + x] = v;
        }
    }
    mask = grown;
  }
  return mask;
}

}  // namespace egf
