// Dense rank-4 tensor core with tape-based reverse-mode autodiff.
//
// Tensors are cheap handles onto shared 64-bit float buffers in row-major
// [N,C,H,W] order. Ops run eagerly; passing a GradTape* records each op on
// the tape so that GradTape::backward can replay gradient rules in reverse.
// A tape and its tensors are confined to one thread; independent tapes may
// run on separate threads with no shared mutable state.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace egf {

inline void check_arg(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// Worker cap shared by op kernels and eval workers. EGF_THREADS overrides
// the hardware default; values are clamped to [1, 64].
inline int max_threads() {
  static const int cached = [] {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    if (const char* env = std::getenv("EGF_THREADS")) {
      char* end = nullptr;
      long v = std::strtol(env, &end, 10);
      if (end != env && v >= 1) n = std::min<long>(v, 64);
    }
    return std::clamp(n, 1, 64);
  }();
  return cached;
}

// ---------------------------------------------------------------------------
// Shapes and integer label rasters
// ---------------------------------------------------------------------------

struct Shape4 {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  std::int64_t numel() const {
    check_arg(n >= 0 && c >= 0 && h >= 0 && w >= 0, "negative tensor extent");
    // Guard element-count overflow before multiplying out.
    const std::int64_t limit = std::int64_t{1} << 40;
    check_arg(n < limit && c < limit && h < limit && w < limit,
              "tensor extent overflow");
    std::int64_t total = 1;
    for (std::int64_t d : {n, c, h, w}) {
      if (d == 0) return 0;
      check_arg(total <= limit / d, "tensor element count overflow");
      total *= d;
    }
    return total;
  }

  bool operator==(const Shape4&) const = default;

  std::string str() const {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + "]";
  }
};

// Integer class-index raster [N,H,W]; used for labels and predictions.
struct LabelMap {
  std::int64_t n = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<std::int32_t> v;

  LabelMap() = default;
  LabelMap(std::int64_t n_, std::int64_t h_, std::int64_t w_, std::int32_t fill = 0)
      : n(n_), h(h_), w(w_), v(static_cast<std::size_t>(n_ * h_ * w_), fill) {}

  std::int64_t numel() const { return n * h * w; }
  std::int32_t& at(std::int64_t i, std::int64_t y, std::int64_t x) {
    return v[static_cast<std::size_t>((i * h + y) * w + x)];
  }
  std::int32_t at(std::int64_t i, std::int64_t y, std::int64_t x) const {
    return v[static_cast<std::size_t>((i * h + y) * w + x)];
  }
};

// ---------------------------------------------------------------------------
// PCG-XSH-RR 64/32 generator with purpose-tagged substreams
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Pcg32 {
 public:
  Pcg32() : Pcg32(0, 0) {}
  Pcg32(std::uint64_t initstate, std::uint64_t initseq) {
    state_ = 0;
    inc_ = (initseq << 1u) | 1u;
    next_u32();
    state_ += initstate;
    next_u32();
  }

  std::uint32_t next_u32() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    std::uint32_t xorshifted =
        static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
  }

  std::uint64_t next_u64() {
    std::uint64_t hi = next_u32();
    std::uint64_t lo = next_u32();
    return (hi << 32) | lo;
  }

  // Unbiased bounded draw in [0, bound) via rejection.
  std::uint32_t bounded(std::uint32_t bound) {
    check_arg(bound > 0, "bounded() requires bound > 0");
    std::uint32_t threshold = (-bound) % bound;
    for (;;) {
      std::uint32_t r = next_u32();
      if (r >= threshold) return r % bound;
    }
  }

  // 53-bit uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller on two u32 draws; the spare half of each
  // pair is cached so successive calls consume the stream deterministically.
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = (static_cast<double>(next_u32()) + 0.5) * 0x1.0p-32;
    double u2 = (static_cast<double>(next_u32()) + 0.5) * 0x1.0p-32;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 1;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Seeded root generator handing out independent substreams keyed by
// (purpose tag, index). Same seed => bit-identical streams everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {}

  Pcg32 stream(std::string_view tag, std::uint64_t index = 0) const {
    std::uint64_t h = fnv1a64(tag);
    std::uint64_t mix = h ^ (0x9E3779B97F4A7C15ULL * (index + 1));
    return Pcg32(seed_ ^ mix, h + 0x632BE59BD9B4E019ULL * index);
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

class GradTape;

namespace detail {

struct TensorData {
  Shape4 shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a backward pass populates it
  bool grad_set = false;
  GradTape* tape = nullptr;  // binding into the recording tape, if any
  std::int64_t node = -1;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape4& s) { return full(s, 0.0); }
  static Tensor ones(const Shape4& s) { return full(s, 1.0); }

  static Tensor full(const Shape4& s, double value) {
    Tensor t;
    t.data_ = std::make_shared<detail::TensorData>();
    t.data_->shape = s;
    t.data_->values.assign(static_cast<std::size_t>(s.numel()), value);
    return t;
  }

  static Tensor from_values(const Shape4& s, std::vector<double> values) {
    check_arg(static_cast<std::int64_t>(values.size()) == s.numel(),
              "value count does not match shape " + s.str());
    Tensor t;
    t.data_ = std::make_shared<detail::TensorData>();
    t.data_->shape = s;
    t.data_->values = std::move(values);
    return t;
  }

  // I.i.d. normal(0, stddev^2) draws from the given stream.
  static Tensor randn(const Shape4& s, double stddev, Pcg32& rng) {
    Tensor t = Tensor::zeros(s);
    for (double& x : t.values()) x = stddev * rng.next_gaussian();
    return t;
  }

  bool defined() const { return data_ != nullptr; }
  const Shape4& shape() const { return data_->shape; }
  std::int64_t numel() const { return data_->shape.numel(); }

  std::vector<double>& values() { return data_->values; }
  const std::vector<double>& values() const { return data_->values; }

  double& at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) {
    const Shape4& s = data_->shape;
    return data_->values[static_cast<std::size_t>(((n * s.c + c) * s.h + y) * s.w + x)];
  }
  double at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const {
    const Shape4& s = data_->shape;
    return data_->values[static_cast<std::size_t>(((n * s.c + c) * s.h + y) * s.w + x)];
  }

  bool has_grad() const { return data_ && data_->grad_set; }
  const std::vector<double>& grad() const {
    check_arg(has_grad(), "tensor has no gradient");
    return data_->grad;
  }
  void clear_grad() const {
    if (data_) {
      data_->grad.clear();
      data_->grad_set = false;
    }
  }

  Tensor clone() const {
    Tensor t;
    t.data_ = std::make_shared<detail::TensorData>();
    t.data_->shape = data_->shape;
    t.data_->values = data_->values;
    return t;
  }

  double item() const {
    check_arg(defined() && numel() == 1, "item() requires a scalar tensor");
    return data_->values[0];
  }

  bool same_buffer(const Tensor& other) const { return data_ == other.data_; }

  // Internal shared state; used by GradTape and op implementations.
  const std::shared_ptr<detail::TensorData>& impl() const { return data_; }

 private:
  std::shared_ptr<detail::TensorData> data_;
};

inline void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw std::domain_error(std::string("non-finite value produced by ") + op);
    }
  }
}

// ---------------------------------------------------------------------------
// GradTape
// ---------------------------------------------------------------------------

namespace detail {
class BackwardCtx;
using BackwardFn = std::function<void(BackwardCtx&)>;
}  // namespace detail

class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  ~GradTape() {
    for (auto& node : nodes_) {
      if (node.td && node.td->tape == this) {
        node.td->tape = nullptr;
        node.td->node = -1;
      }
    }
  }

  // Registers a tensor as a leaf (idempotent); returns its node id.
  std::int64_t watch(const Tensor& t) {
    check_arg(t.defined(), "cannot watch an undefined tensor");
    auto td = t.impl();
    if (td->tape == this) return td->node;
    td->tape = this;
    td->node = static_cast<std::int64_t>(nodes_.size());
    nodes_.push_back(Node{td, {}, nullptr});
    return td->node;
  }

  // Records an executed op: inputs are auto-watched, the output becomes a
  // new node whose backward rule is `fn`.
  void record(const Tensor& out, const std::vector<Tensor>& inputs,
              detail::BackwardFn fn) {
    Node node;
    node.inputs.reserve(inputs.size());
    for (const Tensor& in : inputs) node.inputs.push_back(watch(in));
    auto td = out.impl();
    check_arg(td->tape == nullptr || td->tape == this,
              "output tensor already bound to another tape");
    td->tape = this;
    td->node = static_cast<std::int64_t>(nodes_.size());
    node.td = td;
    node.fn = std::move(fn);
    nodes_.push_back(std::move(node));
  }

  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  bool owns(const Tensor& t) const {
    return t.defined() && t.impl()->tape == this;
  }

 private:
  friend class detail::BackwardCtx;
  struct Node {
    std::shared_ptr<detail::TensorData> td;
    std::vector<std::int64_t> inputs;
    detail::BackwardFn fn;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;  // live only during backward
};

namespace detail {

class BackwardCtx {
 public:
  BackwardCtx(GradTape& tape, std::int64_t node) : tape_(tape), node_(node) {}

  const std::vector<double>& out_grad() const { return tape_.grads_[node_]; }

  // Zero-initialized accumulator for d(loss)/d(input k).
  std::vector<double>& in_grad(std::size_t k) {
    const auto& node = tape_.nodes_[node_];
    std::int64_t id = node.inputs.at(k);
    auto& buf = tape_.grads_[id];
    if (buf.empty()) {
      buf.assign(static_cast<std::size_t>(tape_.nodes_[id].td->shape.numel()), 0.0);
    }
    return buf;
  }

 private:
  GradTape& tape_;
  std::int64_t node_;
};

}  // namespace detail

inline void GradTape::backward(const Tensor& loss) {
  check_arg(loss.defined(), "backward on undefined tensor");
  check_arg(loss.shape() == Shape4{1, 1, 1, 1},
            "backward requires a scalar [1,1,1,1] loss, got " + loss.shape().str());
  check_arg(owns(loss), "loss tensor is not recorded on this tape");
  const std::int64_t start = loss.impl()->node;

  // Mark everything the loss depends on.
  std::vector<char> reachable(nodes_.size(), 0);
  std::vector<std::int64_t> stack{start};
  reachable[static_cast<std::size_t>(start)] = 1;
  while (!stack.empty()) {
    std::int64_t id = stack.back();
    stack.pop_back();
    for (std::int64_t in : nodes_[static_cast<std::size_t>(id)].inputs) {
      if (!reachable[static_cast<std::size_t>(in)]) {
        reachable[static_cast<std::size_t>(in)] = 1;
        stack.push_back(in);
      }
    }
  }

  grads_.assign(nodes_.size(), {});
  grads_[static_cast<std::size_t>(start)] = {1.0};

  for (std::int64_t id = start; id >= 0; --id) {
    auto& node = nodes_[static_cast<std::size_t>(id)];
    if (!reachable[static_cast<std::size_t>(id)]) continue;
    if (grads_[static_cast<std::size_t>(id)].empty()) continue;
    if (node.fn) {
      detail::BackwardCtx ctx(*this, id);
      node.fn(ctx);
    }
  }

  // Publish gradients onto reachable tensors; untouched tensors keep none.
  for (std::size_t id = 0; id <= static_cast<std::size_t>(start); ++id) {
    if (!reachable[id] || grads_[id].empty()) continue;
    check_finite(grads_[id], "backward");
    nodes_[id].td->grad = std::move(grads_[id]);
    nodes_[id].td->grad_set = true;
  }
  grads_.clear();
}

inline void backward(const Tensor& scalar_loss) {
  check_arg(scalar_loss.defined() && scalar_loss.impl()->tape != nullptr,
            "loss tensor is not recorded on any tape");
  scalar_loss.impl()->tape->backward(scalar_loss);
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

// add/mul accept equal shapes, or b = [N,1,H,W] broadcast across a's channels.
inline bool broadcast_ok(const Shape4& a, const Shape4& b) {
  return b.c == 1 && a.n == b.n && a.h == b.h && a.w == b.w;
}

inline void check_binary_shapes(const Shape4& a, const Shape4& b, const char* op) {
  check_arg(a == b || broadcast_ok(a, b),
            std::string(op) + ": incompatible shapes " + a.str() + " vs " + b.str());
}

}  // namespace detail

inline Tensor add(GradTape* tape, const Tensor& a, const Tensor& b) {
  detail::check_binary_shapes(a.shape(), b.shape(), "add");
  const Shape4 s = a.shape();
  Tensor out = Tensor::zeros(s);
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  } else {
    const std::int64_t plane = s.h * s.w;
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t c = 0; c < s.c; ++c) {
        const double* bp = bv.data() + n * plane;
        double* op = ov.data() + (n * s.c + c) * plane;
        const double* ap = av.data() + (n * s.c + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) op[i] = ap[i] + bp[i];
      }
  }
  check_finite(ov, "add");
  if (tape) {
    const bool bcast = !(a.shape() == b.shape());
    tape->record(out, {a, b}, [s, bcast](detail::BackwardCtx& ctx) {
      const auto& g = ctx.out_grad();
      auto& ga = ctx.in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      auto& gb = ctx.in_grad(1);
      if (!bcast) {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      } else {
        const std::int64_t plane = s.h * s.w;
        for (std::int64_t n = 0; n < s.n; ++n)
          for (std::int64_t c = 0; c < s.c; ++c) {
            const double* gp = g.data() + (n * s.c + c) * plane;
            double* gbp = gb.data() + n * plane;
            for (std::int64_t i = 0; i < plane; ++i) gbp[i] += gp[i];
          }
      }
    });
  }
  return out;
}

inline Tensor mul(GradTape* tape, const Tensor& a, const Tensor& b) {
  detail::check_binary_shapes(a.shape(), b.shape(), "mul");
  const Shape4 s = a.shape();
  Tensor out = Tensor::zeros(s);
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  const bool bcast = !(a.shape() == b.shape());
  if (!bcast) {
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  } else {
    const std::int64_t plane = s.h * s.w;
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t c = 0; c < s.c; ++c) {
        const double* bp = bv.data() + n * plane;
        const double* ap = av.data() + (n * s.c + c) * plane;
        double* op = ov.data() + (n * s.c + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) op[i] = ap[i] * bp[i];
      }
  }
  check_finite(ov, "mul");
  if (tape) {
    auto ad = a.impl();
    auto bd = b.impl();
    tape->record(out, {a, b}, [s, bcast, ad, bd](detail::BackwardCtx& ctx) {
      const auto& g = ctx.out_grad();
      auto& ga = ctx.in_grad(0);
      auto& gb = ctx.in_grad(1);
      const auto& av = ad->values;
      const auto& bv = bd->values;
      if (!bcast) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * bv[i];
          gb[i] += g[i] * av[i];
        }
      } else {
        const std::int64_t plane = s.h * s.w;
        for (std::int64_t n = 0; n < s.n; ++n)
          for (std::int64_t c = 0; c < s.c; ++c) {
            const std::int64_t off = (n * s.c + c) * plane;
            const double* gp = g.data() + off;
            const double* ap = av.data() + off;
            const double* bp = bv.data() + n * plane;
            double* gap = ga.data() + off;
            double* gbp = gb.data() + n * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              gap[i] += gp[i] * bp[i];
              gbp[i] += gp[i] * ap[i];
            }
          }
      }
    });
  }
  return out;
}

inline Tensor concat_channels(GradTape* tape, const std::vector<Tensor>& parts) {
  check_arg(!parts.empty(), "concat_channels: empty part list");
  const Shape4 first = parts.front().shape();
  std::int64_t channels = 0;
  for (const Tensor& p : parts) {
    const Shape4& s = p.shape();
    check_arg(s.n == first.n && s.h == first.h && s.w == first.w,
              "concat_channels: mismatched spatial dims " + s.str() + " vs " + first.str());
    channels += s.c;
  }
  const Shape4 os{first.n, channels, first.h, first.w};
  Tensor out = Tensor::zeros(os);
  auto& ov = out.values();
  const std::int64_t plane = first.h * first.w;
  std::int64_t coff = 0;
  for (const Tensor& p : parts) {
    const auto& pv = p.values();
    const std::int64_t pc = p.shape().c;
    for (std::int64_t n = 0; n < os.n; ++n) {
      std::copy(pv.begin() + n * pc * plane, pv.begin() + (n + 1) * pc * plane,
                ov.begin() + (n * channels + coff) * plane);
    }
    coff += pc;
  }
  if (tape) {
    std::vector<std::int64_t> part_channels;
    for (const Tensor& p : parts) part_channels.push_back(p.shape().c);
    tape->record(out, parts, [os, plane, part_channels](detail::BackwardCtx& ctx) {
      const auto& g = ctx.out_grad();
      std::int64_t coff = 0;
      for (std::size_t k = 0; k < part_channels.size(); ++k) {
        auto& gp = ctx.in_grad(k);
        const std::int64_t pc = part_channels[k];
        for (std::int64_t n = 0; n < os.n; ++n) {
          const double* src = g.data() + (n * os.c + coff) * plane;
          double* dst = gp.data() + n * pc * plane;
          for (std::int64_t i = 0; i < pc * plane; ++i) dst[i] += src[i];
        }
        coff += pc;
      }
    });
  }
  return out;
}

// Eager slice of channel range [c0, c1); test/debug helper, not recorded.
inline Tensor slice_channels(const Tensor& x, std::int64_t c0, std::int64_t c1) {
  const Shape4& s = x.shape();
  check_arg(0 <= c0 && c0 < c1 && c1 <= s.c, "slice_channels: bad channel range");
  const Shape4 os{s.n, c1 - c0, s.h, s.w};
  Tensor out = Tensor::zeros(os);
  const std::int64_t plane = s.h * s.w;
  for (std::int64_t n = 0; n < s.n; ++n) {
    std::copy(x.values().begin() + (n * s.c + c0) * plane,
              x.values().begin() + (n * s.c + c1) * plane,
              out.values().begin() + n * os.c * plane);
  }
  return out;
}

inline Tensor relu(GradTape* tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  check_finite(ov, "relu");
  if (tape) {
    auto xd = x.impl();
    tape->record(out, {x}, [xd](detail::BackwardCtx& ctx) {
      const auto& g = ctx.out_grad();
      auto& gx = ctx.in_grad(0);
      const auto& xv = xd->values;
      // Subgradient 0 at exactly 0.
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xv[i] > 0.0) gx[i] += g[i];
    });
  }
  return out;
}

inline Tensor sum(GradTape* tape, const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  Tensor out = Tensor::full(Shape4{1, 1, 1, 1}, total);
  check_finite(out.values(), "sum");
  if (tape) {
    tape->record(out, {x}, [](detail::BackwardCtx& ctx) {
      const double g = ctx.out_grad()[0];
      auto& gx = ctx.in_grad(0);
      for (double& v : gx) v += g;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Debug dump format: little-endian 4xu64 shape header + raw 64-bit floats
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
  std::array<unsigned char, 8> b;
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = (v >> (8 * i)) & 0xff;
  os.write(reinterpret_cast<const char*>(b.data()), 8);
}

inline std::uint64_t read_u64_le(std::istream& is) {
  std::array<unsigned char, 8> b;
  is.read(reinterpret_cast<char*>(b.data()), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

inline void write_f64_le(std::ostream& os, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  write_u64_le(os, v);
}

inline double read_f64_le(std::istream& is) {
  std::uint64_t v = read_u64_le(is);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

}  // namespace detail

inline void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  check_arg(os.good(), "cannot open " + path + " for writing");
  const Shape4& s = t.shape();
  for (std::int64_t d : {s.n, s.c, s.h, s.w})
    detail::write_u64_le(os, static_cast<std::uint64_t>(d));
  for (double v : t.values()) detail::write_f64_le(os, v);
  check_arg(os.good(), "write failed for " + path);
}

inline Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check_arg(is.good(), "cannot open " + path);
  Shape4 s;
  s.n = static_cast<std::int64_t>(detail::read_u64_le(is));
  s.c = static_cast<std::int64_t>(detail::read_u64_le(is));
  s.h = static_cast<std::int64_t>(detail::read_u64_le(is));
  s.w = static_cast<std::int64_t>(detail::read_u64_le(is));
  check_arg(is.good(), "truncated tensor header in " + path);
  std::vector<double> values(static_cast<std::size_t>(s.numel()));
  for (double& v : values) v = detail::read_f64_le(is);
  check_arg(is.good(), "truncated tensor payload in " + path);
  return Tensor::from_values(s, std::move(values));
}

}  // namespace egf
