// Confusion-matrix accumulation and the evaluation metrics derived from it:
// per-class accuracy (recall) and IoU, their class means, and overall pixel
// accuracy. Matrices merge by addition, so per-worker accumulation is safe.

#pragma once

#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "egf/tensor.hpp"

namespace egf {

struct ConfusionMatrix {
  std::int64_t num_classes = 0;
  std::vector<std::uint64_t> counts;  // [gt][pred], row-major

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::int64_t c)
      : num_classes(c), counts(static_cast<std::size_t>(c * c), 0) {
    check_arg(c >= 1, "confusion matrix needs at least one class");
  }

  std::uint64_t& at(std::int64_t gt, std::int64_t pred) {
    return counts[static_cast<std::size_t>(gt * num_classes + pred)];
  }
  std::uint64_t at(std::int64_t gt, std::int64_t pred) const {
    return counts[static_cast<std::size_t>(gt * num_classes + pred)];
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (std::uint64_t c : counts) t += c;
    return t;
  }

  void merge(const ConfusionMatrix& other) {
    check_arg(num_classes == other.num_classes, "merge: class count mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  }
};

inline void accumulate(ConfusionMatrix& cm, const LabelMap& pred,
                       const LabelMap& gt) {
  check_arg(pred.n == gt.n && pred.h == gt.h && pred.w == gt.w,
            "accumulate: prediction/ground-truth shape mismatch");
  for (std::size_t i = 0; i < gt.v.size(); ++i) {
    const std::int32_t t = gt.v[i];
    const std::int32_t p = pred.v[i];
    check_arg(t >= 0 && t < cm.num_classes, "accumulate: gt label out of range");
    check_arg(p >= 0 && p < cm.num_classes, "accumulate: pred label out of range");
    ++cm.at(t, p);
  }
}

// Acc_c = diag/row (recall); IoU_c = diag/(row + col - diag). A class with a
// zero denominator reports no value and is excluded from the means.
struct ClassStat {
  std::optional<double> acc;
  std::optional<double> iou;
};

inline std::vector<ClassStat> per_class(const ConfusionMatrix& cm) {
  std::vector<ClassStat> stats(static_cast<std::size_t>(cm.num_classes));
  for (std::int64_t c = 0; c < cm.num_classes; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::int64_t k = 0; k < cm.num_classes; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const std::uint64_t diag = cm.at(c, c);
    auto& s = stats[static_cast<std::size_t>(c)];
    if (row > 0)
      s.acc = static_cast<double>(diag) / static_cast<double>(row);
    const std::uint64_t uni = row + col - diag;
    if (uni > 0)
      s.iou = static_cast<double>(diag) / static_cast<double>(uni);
  }
  return stats;
}

struct MetricSummary {
  double macc = 0.0;
  double miou = 0.0;
  double pixel_acc = 0.0;
};

// Unweighted means over present classes (background included).
inline MetricSummary summarize(const std::vector<ClassStat>& stats) {
  MetricSummary s;
  std::int64_t n_acc = 0, n_iou = 0;
  for (const ClassStat& c : stats) {
    if (c.acc) {
      s.macc += *c.acc;
      ++n_acc;
    }
    if (c.iou) {
      s.miou += *c.iou;
      ++n_iou;
    }
  }
  if (n_acc > 0) s.macc /= static_cast<double>(n_acc);
  if (n_iou > 0) s.miou /= static_cast<double>(n_iou);
  return s;
}

inline MetricSummary summary(const ConfusionMatrix& cm) {
  MetricSummary s = summarize(per_class(cm));
  const std::uint64_t total = cm.total();
  if (total > 0) {
    std::uint64_t diag = 0;
    for (std::int64_t c = 0; c < cm.num_classes; ++c) diag += cm.at(c, c);
    s.pixel_acc = static_cast<double>(diag) / static_cast<double>(total);
  }
  return s;
}

// Per-pixel argmax over channels; ties resolve to the lowest class index.
inline LabelMap argmax_channels(const Tensor& logits) {
  const Shape4& s = logits.shape();
  LabelMap out(s.n, s.h, s.w);
  const std::int64_t plane = s.h * s.w;
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t i = 0; i < plane; ++i) {
      std::int32_t best = 0;
      double best_v = logits.values()[static_cast<std::size_t>(n * s.c * plane + i)];
      for (std::int64_t c = 1; c < s.c; ++c) {
        const double v =
            logits.values()[static_cast<std::size_t>((n * s.c + c) * plane + i)];
        if (v > best_v) {
          best_v = v;
          best = static_cast<std::int32_t>(c);
        }
      }
      out.v[static_cast<std::size_t>(n * plane + i)] = best;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

inline nlohmann::json metrics_json(const std::vector<ClassStat>& stats,
                                   const MetricSummary& s,
                                   const std::vector<std::string>& class_names) {
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t c = 0; c < stats.size(); ++c) {
    nlohmann::json row;
    row["name"] = c < class_names.size() ? class_names[c]
                                         : "class" + std::to_string(c);
    if (stats[c].acc)
      row["acc"] = *stats[c].acc;
    else
      row["acc"] = nullptr;
    if (stats[c].iou)
      row["iou"] = *stats[c].iou;
    else
      row["iou"] = nullptr;
    per.push_back(row);
  }
  nlohmann::json out;
  out["per_class"] = per;
  out["macc"] = s.macc;
  out["miou"] = s.miou;
  out["pixel_acc"] = s.pixel_acc;
  return out;
}

inline std::string metrics_table(const std::vector<ClassStat>& stats,
                                 const MetricSummary& s,
                                 const std::vector<std::string>& class_names) {
  std::ostringstream os;
  os << std::left << std::setw(18) << "class" << std::right << std::setw(9) << "acc"
     << std::setw(9) << "iou" << "\n";
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("   -");
    std::ostringstream c;
    c << std::fixed << std::setprecision(4) << *v;
    return c.str();
  };
  for (std::size_t c = 0; c < stats.size(); ++c) {
    const std::string name =
        c < class_names.size() ? class_names[c] : "class" + std::to_string(c);
    os << std::left << std::setw(18) << name << std::right << std::setw(9)
       << cell(stats[c].acc) << std::setw(9) << cell(stats[c].iou) << "\n";
  }
  os << std::left << std::setw(18) << "mean" << std::right << std::setw(9)
     << cell(s.macc) << std::setw(9) << cell(s.miou) << "\n";
  os << std::left << std::setw(18) << "pixel_acc" << std::right << std::setw(9)
     << cell(s.pixel_acc) << "\n";
  return os.str();
}

}  // namespace egf
