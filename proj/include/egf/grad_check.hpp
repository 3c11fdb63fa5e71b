// Central finite-difference gradient checking.
//
// The checker perturbs each coordinate of the watched tensors by +-h, runs
// the caller's eager scalar evaluation twice, and compares the quotient
// against the analytic gradient produced by one taped backward pass. It only
// ever drives the forward path, so it stays independent of every backward
// rule it verifies.

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "egf/tensor.hpp"

namespace egf {

struct GradCheckResult {
  bool ok = true;
  double max_err = 0.0;       // worst combined-tolerance ratio seen
  std::string worst;          // description of the worst coordinate
  std::int64_t checked = 0;
};

struct GradCheckOptions {
  double h = 1e-4;
  double rel_tol = 1e-4;
  double abs_floor = 1e-7;  // guards the relative test when both grads ~ 0
  // A probe that crosses a relu kink measures an averaged slope, not the
  // one-sided subgradient. Coordinates failing at h are re-measured at these
  // step sizes; a genuine backward bug fails at every h, a kink crossing
  // vanishes once h drops below the distance to the kink.
  std::vector<double> kink_retry_hs{1e-5, 1e-6};
};

// `forward` must evaluate the scalar objective eagerly (no tape) from the
// current contents of `wrt`; `backward_once` must populate grads on every
// tensor in `wrt` via one taped forward+backward.
inline GradCheckResult check_gradients(
    const std::function<double()>& forward,
    const std::function<void()>& backward_once,
    const std::vector<std::pair<std::string, Tensor>>& wrt,
    const GradCheckOptions& opt = {}) {
  for (const auto& [name, t] : wrt) t.clear_grad();
  backward_once();

  GradCheckResult res;
  for (const auto& [name, t] : wrt) {
    check_arg(t.has_grad(), "gradient check: no grad on " + name);
    const std::vector<double> analytic = t.grad();
    Tensor mutable_t = t;
    auto& v = mutable_t.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      const double a = analytic[i];
      auto measure = [&](double h) {
        v[i] = saved + h;
        const double fp = forward();
        v[i] = saved - h;
        const double fm = forward();
        v[i] = saved;
        return (fp - fm) / (2.0 * h);
      };
      double fd = measure(opt.h);
      double diff = std::abs(a - fd);
      double tol = opt.rel_tol * std::max(std::abs(a), std::abs(fd)) + opt.abs_floor;
      if (diff > tol) {
        for (double h : opt.kink_retry_hs) {
          fd = measure(h);
          diff = std::abs(a - fd);
          tol = opt.rel_tol * std::max(std::abs(a), std::abs(fd)) + opt.abs_floor;
          if (diff <= tol) break;
        }
      }
      const double err = diff / tol;
      ++res.checked;
      if (err > res.max_err) {
        res.max_err = err;
        res.worst = name + "[" + std::to_string(i) + "]: analytic=" +
                    std::to_string(a) + " fd=" + std::to_string(fd);
      }
      if (diff > tol) res.ok = false;
    }
  }
  return res;
}

}  // namespace egf
