// Supervision: frequency-based class weighting, the weighted cross-entropy
// losses (sigmoid form for boundary maps, softmax form for semantic maps),
// the multitask total, and the Adam optimizer with decoupled weight decay.

#pragma once

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "egf/fusion.hpp"
#include "egf/tensor.hpp"

namespace egf {

struct ClassWeights {
  std::vector<double> semantic;               // one positive weight per class
  std::array<double, 2> boundary{1.0, 5.0};   // {negative, positive} pixels
};

// w_c = 1 / ln(1.02 + p_c) over class pixel frequencies; classes absent from
// the histogram inherit the largest computed weight.
inline ClassWeights class_weights(const std::vector<std::int64_t>& histogram) {
  check_arg(!histogram.empty(), "class_weights: empty histogram");
  std::int64_t total = 0;
  for (std::int64_t c : histogram) {
    check_arg(c >= 0, "class_weights: negative count");
    total += c;
  }
  check_arg(total > 0, "class_weights: all-zero histogram");
  ClassWeights w;
  w.semantic.resize(histogram.size(), 0.0);
  double max_w = 0.0;
  for (std::size_t i = 0; i < histogram.size(); ++i) {
    if (histogram[i] == 0) continue;
    const double p = static_cast<double>(histogram[i]) / static_cast<double>(total);
    w.semantic[i] = 1.0 / std::log(1.02 + p);
    max_w = std::max(max_w, w.semantic[i]);
  }
  for (std::size_t i = 0; i < histogram.size(); ++i)
    if (histogram[i] == 0) w.semantic[i] = max_w;
  return w;
}

namespace detail {

inline double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace detail

// Mean over all pixels of w_t * (softplus(z) - t*z), the stable form of the
// weighted binary cross-entropy on logits.
inline Tensor weighted_bce(GradTape* tape, const Tensor& logits,
                           const Tensor& target, const ClassWeights& w) {
  const Shape4& s = logits.shape();
  check_arg(s.c == 1, "weighted_bce: logits must be single-channel");
  check_arg(target.shape() == s, "weighted_bce: target shape mismatch");
  check_arg(w.boundary[0] > 0 && w.boundary[1] > 0,
            "weighted_bce: weights must be positive");
  const auto& zv = logits.values();
  const auto& tv = target.values();
  for (double t : tv)
    check_arg(t == 0.0 || t == 1.0, "weighted_bce: target must be binary");

  const double inv_count = 1.0 / static_cast<double>(s.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < zv.size(); ++i) {
    const double wt = w.boundary[tv[i] == 1.0 ? 1 : 0];
    acc += wt * (detail::softplus(zv[i]) - tv[i] * zv[i]);
  }
  Tensor out = Tensor::full(Shape4{1, 1, 1, 1}, acc * inv_count);
  check_finite(out.values(), "weighted_bce");

  if (tape) {
    auto zd = logits.impl();
    auto td = target.impl();
    const std::array<double, 2> bw = w.boundary;
    tape->record(out, {logits}, [zd, td, bw, inv_count](detail::BackwardCtx& ctx) {
      const double g = ctx.out_grad()[0];
      auto& gz = ctx.in_grad(0);
      for (std::size_t i = 0; i < gz.size(); ++i) {
        const double t = td->values[i];
        const double wt = bw[t == 1.0 ? 1 : 0];
        gz[i] += g * wt * (detail::sigmoid(zd->values[i]) - t) * inv_count;
      }
    });
  }
  return out;
}

// Softmax cross-entropy over channels: -(1/|valid|) sum over valid pixels of
// w_label * log P_label. Pixels labeled ignore_index drop out entirely.
inline Tensor weighted_ce(GradTape* tape, const Tensor& logits,
                          const LabelMap& labels, const ClassWeights& w,
                          std::optional<std::int32_t> ignore_index = {}) {
  const Shape4& s = logits.shape();
  check_arg(labels.n == s.n && labels.h == s.h && labels.w == s.w,
            "weighted_ce: label map shape mismatch");
  check_arg(static_cast<std::int64_t>(w.semantic.size()) == s.c,
            "weighted_ce: need one weight per class");
  const std::int64_t C = s.c;
  const std::int64_t plane = s.h * s.w;
  const auto& zv = logits.values();

  std::int64_t valid = 0;
  for (std::int32_t l : labels.v) {
    if (ignore_index && l == *ignore_index) continue;
    check_arg(l >= 0 && l < C, "weighted_ce: label " + std::to_string(l) +
                                   " out of range for C=" + std::to_string(C));
    ++valid;
  }
  if (valid == 0) {
    // Nothing to supervise; contributes nothing and no gradients.
    return Tensor::zeros(Shape4{1, 1, 1, 1});
  }
  const double inv_valid = 1.0 / static_cast<double>(valid);

  double acc = 0.0;
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t i = 0; i < plane; ++i) {
      const std::int32_t label = labels.v[static_cast<std::size_t>(n * plane + i)];
      if (ignore_index && label == *ignore_index) continue;
      double zmax = -std::numeric_limits<double>::infinity();
      for (std::int64_t c = 0; c < C; ++c)
        zmax = std::max(zmax, zv[static_cast<std::size_t>((n * C + c) * plane + i)]);
      double lse = 0.0;
      for (std::int64_t c = 0; c < C; ++c)
        lse += std::exp(zv[static_cast<std::size_t>((n * C + c) * plane + i)] - zmax);
      lse = zmax + std::log(lse);
      const double zy = zv[static_cast<std::size_t>((n * C + label) * plane + i)];
      acc += w.semantic[static_cast<std::size_t>(label)] * (lse - zy);
    }
  Tensor out = Tensor::full(Shape4{1, 1, 1, 1}, acc * inv_valid);
  check_finite(out.values(), "weighted_ce");

  if (tape) {
    auto zd = logits.impl();
    const LabelMap labels_copy = labels;
    const std::vector<double> weights = w.semantic;
    tape->record(out, {logits},
                 [zd, labels_copy, weights, ignore_index, inv_valid, s, C,
                  plane](detail::BackwardCtx& ctx) {
                   const double g = ctx.out_grad()[0];
                   auto& gz = ctx.in_grad(0);
                   const auto& zv = zd->values;
                   for (std::int64_t n = 0; n < s.n; ++n)
                     for (std::int64_t i = 0; i < plane; ++i) {
                       const std::int32_t label =
                           labels_copy.v[static_cast<std::size_t>(n * plane + i)];
                       if (ignore_index && label == *ignore_index) continue;
                       double zmax = -std::numeric_limits<double>::infinity();
                       for (std::int64_t c = 0; c < C; ++c)
                         zmax = std::max(
                             zmax,
                             zv[static_cast<std::size_t>((n * C + c) * plane + i)]);
                       double lse = 0.0;
                       for (std::int64_t c = 0; c < C; ++c)
                         lse += std::exp(
                             zv[static_cast<std::size_t>((n * C + c) * plane + i)] -
                             zmax);
                       const double wy =
                           weights[static_cast<std::size_t>(label)] * g * inv_valid;
                       for (std::int64_t c = 0; c < C; ++c) {
                         const std::size_t idx =
                             static_cast<std::size_t>((n * C + c) * plane + i);
                         const double p = std::exp(zv[idx] - zmax) / lse;
                         gz[idx] += wy * (p - (c == label ? 1.0 : 0.0));
                       }
                     }
                 });
  }
  return out;
}

// Unit-coefficient sum of the three boundary losses and both semantic
// losses; the no_sup ablation keeps only the final semantic term.
struct LossBreakdown {
  Tensor total;
  std::array<double, 3> boundary{0.0, 0.0, 0.0};
  double sem_side = 0.0;
  double sem_final = 0.0;
};

inline LossBreakdown total_loss(GradTape* tape, const PredictionSet& preds,
                                const LabelMap& semantic_gt,
                                const BoundaryTarget& boundary_target,
                                const ClassWeights& w, bool no_sup = false,
                                std::optional<std::int32_t> ignore_index = {}) {
  LossBreakdown out;
  Tensor final_term = weighted_ce(tape, preds.sem_final, semantic_gt, w, ignore_index);
  out.sem_final = final_term.item();
  if (no_sup) {
    out.total = final_term;
    return out;
  }
  Tensor total = weighted_bce(tape, preds.boundary[0], boundary_target, w);
  out.boundary[0] = total.item();
  for (int i = 1; i < 3; ++i) {
    Tensor li = weighted_bce(tape, preds.boundary[static_cast<std::size_t>(i)],
                             boundary_target, w);
    out.boundary[static_cast<std::size_t>(i)] = li.item();
    total = add(tape, total, li);
  }
  Tensor side_term = weighted_ce(tape, preds.sem_side, semantic_gt, w, ignore_index);
  out.sem_side = side_term.item();
  total = add(tape, total, side_term);
  out.total = add(tape, total, final_term);
  return out;
}

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 5e-5;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::int64_t step_count() const { return step_; }

  // One update over (name, tensor) pairs; every tensor must carry a grad.
  void step(const std::vector<std::pair<std::string, Tensor>>& params) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (const auto& [name, p] : params) {
      check_arg(p.has_grad(), "adam: no gradient for " + name);
      const auto& g = p.grad();
      auto& slot = moments_[name];
      if (slot.m.empty()) {
        slot.m.assign(g.size(), 0.0);
        slot.v.assign(g.size(), 0.0);
      }
      check_arg(slot.m.size() == g.size(), "adam: shape changed for " + name);
      Tensor param = p;
      auto& pv = param.values();
      for (std::size_t i = 0; i < g.size(); ++i) {
        slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g[i];
        slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = slot.m[i] / bc1;
        const double vhat = slot.v[i] / bc2;
        pv[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                            cfg_.weight_decay * pv[i]);
      }
      check_finite(pv, "adam_step");
    }
  }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  AdamConfig cfg_;
  std::map<std::string, Moments> moments_;
  std::int64_t step_ = 0;
};

}  // namespace egf
