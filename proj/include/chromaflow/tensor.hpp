#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "chromaflow/errors.hpp"

namespace chromaflow {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {
inline std::int64_t next_tensor_id() {
  static std::atomic<std::int64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

struct TensorData {
  Shape shape;
  std::vector<double> v;  // values, row-major
  std::vector<double> g;  // gradient; empty until backward reaches this tensor
  bool requires_grad = false;
  std::int64_t id = detail::next_tensor_id();

  double* grad_buffer() {
    if (g.empty()) g.assign(v.size(), 0.0);
    return g.data();
  }
};

// Value-semantics handle onto tensor storage. Tensors are free-standing;
// a Graph records only the operations that connect them, so read-only
// tensors (weights with requires_grad = false) can be shared across graphs.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false) {
    std::size_t n = shape_numel(shape);
    if (shape.empty() || n != values.size())
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    for (int d : shape)
      if (d <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
    d_ = std::make_shared<TensorData>();
    d_->shape = std::move(shape);
    d_->v = std::move(values);
    d_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape), 0.0);
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }
  static Tensor scalar(double x, bool requires_grad = false) {
    return Tensor({1}, {x}, requires_grad);
  }

  bool valid() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  std::size_t numel() const { return d_->v.size(); }
  bool requires_grad() const { return d_->requires_grad; }
  std::int64_t id() const { return d_->id; }

  std::vector<double>& values() { return d_->v; }
  const std::vector<double>& values() const { return d_->v; }

  // Gradient view; empty if backward never reached this tensor.
  const std::vector<double>& grad() const { return d_->g; }
  bool has_grad() const { return !d_->g.empty(); }

  std::shared_ptr<TensorData> data() const { return d_; }

 private:
  std::shared_ptr<TensorData> d_;
};

// One recorded operation. `back` scatters the output gradient into the
// inputs; empty for ops whose inputs are all constant.
struct Node {
  const char* kind;
  std::vector<std::int64_t> input_ids;
  std::vector<std::shared_ptr<TensorData>> inputs;
  std::shared_ptr<TensorData> out;
  std::function<void()> back;
};

// Define-by-run tape, rebuilt every iteration. Confined to one worker; the
// tensors it references may be shared read-only across workers.
class Graph {
 public:
  // Registers an operation. `out` must be freshly produced by the op.
  void record(const char* kind, const std::vector<Tensor>& inputs, const Tensor& out,
              std::function<void()> back) {
    check_finite(kind, out);
    Node n;
    n.kind = kind;
    n.inputs.reserve(inputs.size());
    for (const Tensor& t : inputs) {
      n.input_ids.push_back(t.id());
      n.inputs.push_back(t.data());
    }
    n.out = out.data();
    if (out.requires_grad()) n.back = std::move(back);
    out_ids_.insert(out.id());
    nodes_.push_back(std::move(n));
  }

  // Computes dloss/dleaf for every requires_grad tensor reachable from loss.
  void backward(const Tensor& loss) {
    if (!loss.valid() || loss.numel() != 1)
      throw ShapeError("backward: loss must be a scalar tensor");
    if (!out_ids_.count(loss.id()))
      throw ShapeError("backward: loss is not an output of this graph");
    if (backward_run_)
      throw AccumulationError("backward: gradients already computed; call reset_backward first");
    backward_run_ = true;
    loss.data()->grad_buffer()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
      if (it->back && !it->out->g.empty()) it->back();
  }

  // Clears every gradient this tape touched so backward may run again.
  void reset_backward() {
    for (Node& n : nodes_) {
      n.out->g.clear();
      for (auto& in : n.inputs) in->g.clear();
    }
    backward_run_ = false;
  }

  std::size_t node_count() const { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_[i]; }

  // Kink telemetry: ops mix their discrete branch choices (relu sign, clamp
  // region, pool argmax, bilinear cell) into a running hash so a
  // finite-difference harness can tell when a probe stepped across a kink.
  void trace_kinks(bool on) {
    trace_kinks_ = on;
    kink_hash_ = 1469598103934665603ULL;
  }
  bool tracing_kinks() const { return trace_kinks_; }
  std::uint64_t kink_hash() const { return kink_hash_; }
  void mix_kink(std::uint64_t x) { kink_hash_ = (kink_hash_ ^ x) * 1099511628211ULL; }

 private:
  static void check_finite(const char* kind, const Tensor& t) {
    for (double x : t.values())
      if (!std::isfinite(x))
        throw NumericError(std::string(kind) + ": non-finite value in output");
  }

  std::vector<Node> nodes_;
  std::unordered_set<std::int64_t> out_ids_;
  bool backward_run_ = false;
  bool trace_kinks_ = false;
  std::uint64_t kink_hash_ = 1469598103934665603ULL;
};

namespace detail {

inline bool any_requires(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Tensor tanh(Graph& g, const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
  Tensor res(a.shape(), std::move(out), a.requires_grad());
  auto ad = a.data();
  auto od = res.data();
  g.record("tanh", {a}, res, [ad, od]() {
    double* ag = ad->grad_buffer();
    for (std::size_t i = 0; i < od->v.size(); ++i)
      ag[i] += od->g[i] * (1.0 - od->v[i] * od->v[i]);
  });
  return res;
}

inline Tensor relu(Graph& g, const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  if (g.tracing_kinks()) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < out.size(); ++i)
      h = (h ^ (av[i] > 0.0 ? 1u : 0u)) * 1099511628211ULL;
    g.mix_kink(h);
  }
  Tensor res(a.shape(), std::move(out), a.requires_grad());
  auto ad = a.data();
  auto od = res.data();
  g.record("relu", {a}, res, [ad, od]() {
    double* ag = ad->grad_buffer();
    for (std::size_t i = 0; i < od->v.size(); ++i)
      if (ad->v[i] > 0.0) ag[i] += od->g[i];  // relu'(0) = 0
  });
  return res;
}

inline Tensor clamp01(Graph& g, const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(1.0, std::max(0.0, av[i]));
  if (g.tracing_kinks()) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::uint64_t region = av[i] <= 0.0 ? 0u : (av[i] >= 1.0 ? 2u : 1u);
      h = (h ^ region) * 1099511628211ULL;
    }
    g.mix_kink(h);
  }
  Tensor res(a.shape(), std::move(out), a.requires_grad());
  auto ad = a.data();
  auto od = res.data();
  g.record("clamp01", {a}, res, [ad, od]() {
    double* ag = ad->grad_buffer();
    for (std::size_t i = 0; i < od->v.size(); ++i)
      if (ad->v[i] > 0.0 && ad->v[i] < 1.0) ag[i] += od->g[i];  // boundary gradient = 0
  });
  return res;
}

inline Tensor square(Graph& g, const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * av[i];
  Tensor res(a.shape(), std::move(out), a.requires_grad());
  auto ad = a.data();
  auto od = res.data();
  g.record("square", {a}, res, [ad, od]() {
    double* ag = ad->grad_buffer();
    for (std::size_t i = 0; i < od->v.size(); ++i) ag[i] += od->g[i] * 2.0 * ad->v[i];
  });
  return res;
}

namespace detail {

enum class BinKind { Add, Sub, Mul };

inline Tensor binary_op(Graph& g, const char* kind, BinKind op, const Tensor& a, const Tensor& b) {
  const bool a_scalar = a.numel() == 1;
  const bool b_scalar = b.numel() == 1;
  if (a.shape() != b.shape() && !a_scalar && !b_scalar)
    throw ShapeError(std::string(kind) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const Shape& out_shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(out_shape);
  std::vector<double> out(n);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    double x = av[a_scalar ? 0 : i];
    double y = bv[b_scalar ? 0 : i];
    out[i] = op == BinKind::Add ? x + y : (op == BinKind::Sub ? x - y : x * y);
  }
  Tensor res(out_shape, std::move(out), any_requires({&a, &b}));
  auto ad = a.data();
  auto bd = b.data();
  auto od = res.data();
  const bool areq = a.requires_grad(), breq = b.requires_grad();
  g.record(kind, {a, b}, res, [=]() {
    const auto& og = od->g;
    if (areq) {
      double* ag = ad->grad_buffer();
      for (std::size_t i = 0; i < og.size(); ++i) {
        double d = op == BinKind::Mul ? og[i] * bd->v[b_scalar ? 0 : i] : og[i];
        ag[a_scalar ? 0 : i] += d;
      }
    }
    if (breq) {
      double* bg = bd->grad_buffer();
      for (std::size_t i = 0; i < og.size(); ++i) {
        double d = op == BinKind::Mul ? og[i] * ad->v[a_scalar ? 0 : i]
                                      : (op == BinKind::Sub ? -og[i] : og[i]);
        bg[b_scalar ? 0 : i] += d;
      }
    }
  });
  return res;
}

}  // namespace detail

inline Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  return detail::binary_op(g, "add", detail::BinKind::Add, a, b);
}
inline Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
  return detail::binary_op(g, "sub", detail::BinKind::Sub, a, b);
}
inline Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  return detail::binary_op(g, "mul", detail::BinKind::Mul, a, b);
}

inline Tensor mul_const(Graph& g, const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  Tensor res(a.shape(), std::move(out), a.requires_grad());
  auto ad = a.data();
  auto od = res.data();
  g.record("mul_const", {a}, res, [ad, od, c]() {
    double* ag = ad->grad_buffer();
    for (std::size_t i = 0; i < od->g.size(); ++i) ag[i] += od->g[i] * c;
  });
  return res;
}

inline Tensor add_const(Graph& g, const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
  Tensor res(a.shape(), std::move(out), a.requires_grad());
  auto ad = a.data();
  auto od = res.data();
  g.record("add_const", {a}, res, [ad, od]() {
    double* ag = ad->grad_buffer();
    for (std::size_t i = 0; i < od->g.size(); ++i) ag[i] += od->g[i];
  });
  return res;
}

// ---------------------------------------------------------------------------
// Linear algebra / structural ops
// ---------------------------------------------------------------------------

inline Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw ShapeError("matmul: operands must be rank-2");
  const int m = a.shape()[0], k = a.shape()[1];
  const int k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw ShapeError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      const double* brow = bv + static_cast<std::size_t>(p) * n;
      double* orow = out.data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  Tensor res({m, n}, std::move(out), detail::any_requires({&a, &b}));
  auto ad = a.data();
  auto bd = b.data();
  auto od = res.data();
  const bool areq = a.requires_grad(), breq = b.requires_grad();
  g.record("matmul", {a, b}, res, [=]() {
    const double* og = od->g.data();
    if (areq) {
      double* ag = ad->grad_buffer();  // a.grad += g * b^T
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          double s = 0.0;
          const double* grow = og + static_cast<std::size_t>(i) * n;
          const double* brow = bd->v.data() + static_cast<std::size_t>(p) * n;
          for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
          ag[i * k + p] += s;
        }
    }
    if (breq) {
      double* bg = bd->grad_buffer();  // b.grad += a^T * g
      for (int p = 0; p < k; ++p)
        for (int i = 0; i < m; ++i) {
          const double x = ad->v[i * k + p];
          const double* grow = og + static_cast<std::size_t>(i) * n;
          double* brow = bg + static_cast<std::size_t>(p) * n;
          for (int j = 0; j < n; ++j) brow[j] += x * grow[j];
        }
    }
  });
  return res;
}

namespace detail {

// Output index range where 0 <= y*stride + koff - padding < limit.
inline void conv_bounds(int koff, int padding, int stride, int limit, int out_limit, int& lo,
                        int& hi) {
  const int shift = koff - padding;
  lo = shift < 0 ? (-shift + stride - 1) / stride : 0;
  const int top = limit - 1 - shift;
  hi = top < 0 ? 0 : std::min(top / stride + 1, out_limit);
}

}  // namespace detail

// Cross-correlation with zero padding. input [C,H,W], kernels [F,C,k,k],
// bias [F] -> output [F,H',W'] with H' = (H+2p-k)/stride + 1.
inline Tensor conv2d(Graph& g, const Tensor& input, const Tensor& kernels, const Tensor& bias,
                     int stride, int padding) {
  if (input.shape().size() != 3 || kernels.shape().size() != 4 || bias.shape().size() != 1)
    throw ShapeError("conv2d: expected input [C,H,W], kernels [F,C,k,k], bias [F]");
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: bad stride/padding");
  const int C = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  const int F = kernels.shape()[0];
  if (kernels.shape()[1] != C) throw ShapeError("conv2d: kernel channel count mismatch");
  if (kernels.shape()[2] != kernels.shape()[3])
    throw ShapeError("conv2d: only square kernels supported");
  const int k = kernels.shape()[2];
  if (bias.shape()[0] != F) throw ShapeError("conv2d: bias size mismatch");
  if (k > H + 2 * padding || k > W + 2 * padding)
    throw ShapeError("conv2d: kernel larger than padded input");
  if ((H + 2 * padding - k) % stride != 0 || (W + 2 * padding - k) % stride != 0)
    throw ShapeError("conv2d: non-integral output size");
  const int OH = (H + 2 * padding - k) / stride + 1;
  const int OW = (W + 2 * padding - k) / stride + 1;

  std::vector<double> out(static_cast<std::size_t>(F) * OH * OW);
  {
    const double* in = input.values().data();
    const double* ker = kernels.values().data();
    const double* bi = bias.values().data();
    for (int f = 0; f < F; ++f) {
      double* oplane = out.data() + static_cast<std::size_t>(f) * OH * OW;
      std::fill(oplane, oplane + static_cast<std::size_t>(OH) * OW, bi[f]);
      for (int c = 0; c < C; ++c) {
        const double* iplane = in + static_cast<std::size_t>(c) * H * W;
        for (int ky = 0; ky < k; ++ky) {
          int ylo, yhi;
          detail::conv_bounds(ky, padding, stride, H, OH, ylo, yhi);
          for (int kx = 0; kx < k; ++kx) {
            int xlo, xhi;
            detail::conv_bounds(kx, padding, stride, W, OW, xlo, xhi);
            const double wgt = ker[((static_cast<std::size_t>(f) * C + c) * k + ky) * k + kx];
            for (int y = ylo; y < yhi; ++y) {
              const double* irow = iplane + static_cast<std::size_t>(y * stride + ky - padding) * W;
              double* orow = oplane + static_cast<std::size_t>(y) * OW;
              if (stride == 1) {
                const double* ir = irow + (kx - padding);
                for (int x = xlo; x < xhi; ++x) orow[x] += wgt * ir[x];
              } else {
                for (int x = xlo; x < xhi; ++x) orow[x] += wgt * irow[x * stride + kx - padding];
              }
            }
          }
        }
      }
    }
  }

  Tensor res({F, OH, OW}, std::move(out), detail::any_requires({&input, &kernels, &bias}));
  auto ind = input.data();
  auto kd = kernels.data();
  auto bd = bias.data();
  auto od = res.data();
  const bool in_req = input.requires_grad(), k_req = kernels.requires_grad(),
             b_req = bias.requires_grad();
  g.record("conv2d", {input, kernels, bias}, res, [=]() {
    const double* og = od->g.data();
    if (b_req) {
      double* bg = bd->grad_buffer();
      for (int f = 0; f < F; ++f) {
        const double* oplane = og + static_cast<std::size_t>(f) * OH * OW;
        double s = 0.0;
        for (std::size_t i = 0; i < static_cast<std::size_t>(OH) * OW; ++i) s += oplane[i];
        bg[f] += s;
      }
    }
    if (!in_req && !k_req) return;
    double* ig = in_req ? ind->grad_buffer() : nullptr;
    double* kg = k_req ? kd->grad_buffer() : nullptr;
    for (int f = 0; f < F; ++f) {
      const double* oplane = og + static_cast<std::size_t>(f) * OH * OW;
      for (int c = 0; c < C; ++c) {
        const double* iplane = ind->v.data() + static_cast<std::size_t>(c) * H * W;
        double* igplane = ig ? ig + static_cast<std::size_t>(c) * H * W : nullptr;
        for (int ky = 0; ky < k; ++ky) {
          int ylo, yhi;
          detail::conv_bounds(ky, padding, stride, H, OH, ylo, yhi);
          for (int kx = 0; kx < k; ++kx) {
            int xlo, xhi;
            detail::conv_bounds(kx, padding, stride, W, OW, xlo, xhi);
            const std::size_t kidx = ((static_cast<std::size_t>(f) * C + c) * k + ky) * k + kx;
            const double wgt = kd->v[kidx];
            double ksum = 0.0;
            for (int y = ylo; y < yhi; ++y) {
              const std::size_t row_off = static_cast<std::size_t>(y * stride + ky - padding) * W;
              const double* grow = oplane + static_cast<std::size_t>(y) * OW;
              if (stride == 1) {
                const int off = kx - padding;
                if (kg) {
                  const double* irow = iplane + row_off + off;
                  for (int x = xlo; x < xhi; ++x) ksum += grow[x] * irow[x];
                }
                if (igplane) {
                  double* igrow = igplane + row_off + off;
                  for (int x = xlo; x < xhi; ++x) igrow[x] += wgt * grow[x];
                }
              } else {
                for (int x = xlo; x < xhi; ++x) {
                  const std::size_t ii = row_off + x * stride + kx - padding;
                  if (kg) ksum += grow[x] * iplane[ii];
                  if (igplane) igplane[ii] += wgt * grow[x];
                }
              }
            }
            if (kg) kg[kidx] += ksum;
          }
        }
      }
    }
  });
  return res;
}

// 2x2 non-overlapping max pool; ties go to the first cell in row-major order.
inline Tensor maxpool2(Graph& g, const Tensor& input) {
  if (input.shape().size() != 3) throw ShapeError("maxpool2: expected input [C,H,W]");
  const int C = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  if (H % 2 != 0 || W % 2 != 0) throw ShapeError("maxpool2: H and W must be even");
  const int OH = H / 2, OW = W / 2;
  std::vector<double> out(static_cast<std::size_t>(C) * OH * OW);
  auto argmax = std::make_shared<std::vector<std::int32_t>>(out.size());
  const double* in = input.values().data();
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < OH; ++y)
      for (int x = 0; x < OW; ++x) {
        const int base = (c * H + 2 * y) * W + 2 * x;
        int best = base;
        double bv = in[base];
        const int cand[3] = {base + 1, base + W, base + W + 1};
        for (int idx : cand)
          if (in[idx] > bv) {
            bv = in[idx];
            best = idx;
          }
        const std::size_t o = (static_cast<std::size_t>(c) * OH + y) * OW + x;
        out[o] = bv;
        (*argmax)[o] = best;
      }
  if (g.tracing_kinks()) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::int32_t a : *argmax) h = (h ^ static_cast<std::uint64_t>(a)) * 1099511628211ULL;
    g.mix_kink(h);
  }
  Tensor res({C, OH, OW}, std::move(out), input.requires_grad());
  auto ind = input.data();
  auto od = res.data();
  g.record("maxpool2", {input}, res, [ind, od, argmax]() {
    double* ig = ind->grad_buffer();
    for (std::size_t i = 0; i < od->g.size(); ++i) ig[(*argmax)[i]] += od->g[i];
  });
  return res;
}

// Numerically stabilized cross-entropy on raw logits; scalar output.
inline Tensor softmax_cross_entropy(Graph& g, const Tensor& logits, int label) {
  if (logits.shape().size() != 1) throw ShapeError("softmax_cross_entropy: logits must be rank-1");
  const int n = logits.shape()[0];
  if (label < 0 || label >= n)
    throw IndexError("softmax_cross_entropy: label " + std::to_string(label) +
                     " out of range [0," + std::to_string(n) + ")");
  const auto& z = logits.values();
  double m = z[0];
  for (double x : z) m = std::max(m, x);
  double se = 0.0;
  for (double x : z) se += std::exp(x - m);
  const double loss = std::log(se) - (z[label] - m);
  Tensor res({1}, {loss}, logits.requires_grad());
  auto ld = logits.data();
  auto od = res.data();
  g.record("softmax_cross_entropy", {logits}, res, [ld, od, label, m, se]() {
    double* lg = ld->grad_buffer();
    const double go = od->g[0];
    for (std::size_t i = 0; i < ld->v.size(); ++i) {
      const double p = std::exp(ld->v[i] - m) / se;
      lg[i] += go * (p - (static_cast<int>(i) == label ? 1.0 : 0.0));
    }
  });
  return res;
}

inline Tensor sum(Graph& g, const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  Tensor res({1}, {s}, a.requires_grad());
  auto ad = a.data();
  auto od = res.data();
  g.record("sum", {a}, res, [ad, od]() {
    double* ag = ad->grad_buffer();
    const double go = od->g[0];
    for (std::size_t i = 0; i < ad->v.size(); ++i) ag[i] += go;
  });
  return res;
}

// Extracts channel c of a [C,H,W] tensor as [H,W].
inline Tensor select_channel(Graph& g, const Tensor& t, int c) {
  if (t.shape().size() != 3) throw ShapeError("select_channel: expected [C,H,W]");
  const int C = t.shape()[0], H = t.shape()[1], W = t.shape()[2];
  if (c < 0 || c >= C) throw IndexError("select_channel: channel out of range");
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<double> out(t.values().begin() + c * plane, t.values().begin() + (c + 1) * plane);
  Tensor res({H, W}, std::move(out), t.requires_grad());
  auto td = t.data();
  auto od = res.data();
  g.record("select_channel", {t}, res, [td, od, c, plane]() {
    double* tg = td->grad_buffer();
    for (std::size_t i = 0; i < plane; ++i) tg[c * plane + i] += od->g[i];
  });
  return res;
}

// Stacks same-shape [H,W] planes into [C,H,W].
inline Tensor stack_planes(Graph& g, const std::vector<Tensor>& planes) {
  if (planes.empty()) throw ShapeError("stack_planes: no planes");
  const Shape& s0 = planes[0].shape();
  if (s0.size() != 2) throw ShapeError("stack_planes: planes must be rank-2");
  for (const Tensor& p : planes)
    if (p.shape() != s0) throw ShapeError("stack_planes: plane shapes disagree");
  const int H = s0[0], W = s0[1];
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<double> out;
  out.reserve(plane * planes.size());
  for (const Tensor& p : planes) out.insert(out.end(), p.values().begin(), p.values().end());
  bool req = false;
  for (const Tensor& p : planes) req = req || p.requires_grad();
  Tensor res({static_cast<int>(planes.size()), H, W}, std::move(out), req);
  std::vector<std::shared_ptr<TensorData>> datas;
  datas.reserve(planes.size());
  for (const Tensor& p : planes) datas.push_back(p.data());
  auto od = res.data();
  g.record("stack_planes", planes, res, [datas, od, plane]() {
    for (std::size_t c = 0; c < datas.size(); ++c) {
      if (!datas[c]->requires_grad) continue;
      double* pg = datas[c]->grad_buffer();
      for (std::size_t i = 0; i < plane; ++i) pg[i] += od->g[c * plane + i];
    }
  });
  return res;
}

inline Tensor reshape(Graph& g, const Tensor& t, Shape new_shape) {
  if (shape_numel(new_shape) != t.numel())
    throw ShapeError("reshape: element count mismatch " + shape_str(t.shape()) + " -> " +
                     shape_str(new_shape));
  Tensor res(std::move(new_shape), t.values(), t.requires_grad());
  auto td = t.data();
  auto od = res.data();
  g.record("reshape", {t}, res, [td, od]() {
    double* tg = td->grad_buffer();
    for (std::size_t i = 0; i < od->g.size(); ++i) tg[i] += od->g[i];
  });
  return res;
}

}  // namespace chromaflow
