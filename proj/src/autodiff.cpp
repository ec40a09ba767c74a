#include "dyroad/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "dyroad/error.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace dyroad::ad {
namespace {

#if defined(__GLIBC__)
// Graph buffers are allocated and released on every step. Serving them from
// the heap instead of fresh mmap regions avoids constant page faulting.
const bool kMallocTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
  return true;
}();
#endif

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

std::atomic<std::uint64_t> g_seq{1};

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> value, const char* op) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  node->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  return node;
}

// Output node that records `inputs` and a backward rule only when some input
// needs a gradient.
Tensor make_op(const char* op, Shape shape, std::vector<double> value,
               std::vector<std::shared_ptr<Node>> inputs,
               std::function<void(Node&)> rule) {
  auto node = make_node(std::move(shape), std::move(value), op);
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const auto& n) { return n->requires_grad; });
  if (any) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(rule);
  }
  return Tensor::from_node(std::move(node));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                   shape_str(b));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw Error(std::string(op) + ": undefined tensor");
}

enum class Bcast { kSame, kScalar, kLastAxis };

Bcast classify(const char* op, const Tensor& a, const Tensor& b, bool allow_bias) {
  if (a.shape() == b.shape()) return Bcast::kSame;
  if (b.size() == 1) return Bcast::kScalar;
  if (allow_bias && b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.dim(0))
    return Bcast::kLastAxis;
  shape_fail(op, a.shape(), b.shape());
}

std::size_t b_index(Bcast mode, std::size_t i, std::size_t last) {
  switch (mode) {
    case Bcast::kSame: return i;
    case Bcast::kScalar: return 0;
    case Bcast::kLastAxis: return i % last;
  }
  return i;
}

template <typename Fwd, typename Dfn>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Dfn dydx) {
  require_defined(x, op);
  std::vector<double> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make_op(op, x.shape(), std::move(out), {x.node_ptr()}, [dydx](Node& self) {
    Node& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * dydx(in.value[i], self.value[i]);
  });
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::from_node(std::shared_ptr<Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size())
    throw ShapeError("constant: " + shape_str(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  return from_node(make_node(std::move(shape), std::move(values), "leaf"));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  t.node_->grad_buffer();
  return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> v(shape_size(shape), 0.0);
  return requires_grad ? parameter(std::move(shape), std::move(v))
                       : constant(std::move(shape), std::move(v));
}

Tensor Tensor::full(Shape shape, double value) {
  std::vector<double> v(shape_size(shape), value);
  return constant(std::move(shape), std::move(v));
}

Tensor Tensor::scalar(double value) { return constant({}, {value}); }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

// ---------------------------------------------------------------------------
// Elementwise binary

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  Bcast mode = classify("add", a, b, true);
  std::size_t last = b.size();
  std::vector<double> out(a.size());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[b_index(mode, i, last)];
  return make_op("add", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                 [mode, last](Node& self) {
                   Node& x = *self.inputs[0];
                   Node& y = *self.inputs[1];
                   if (x.requires_grad) {
                     auto& g = x.grad_buffer();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                   }
                   if (y.requires_grad) {
                     auto& g = y.grad_buffer();
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       g[b_index(mode, i, last)] += self.grad[i];
                   }
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  Bcast mode = classify("sub", a, b, true);
  std::size_t last = b.size();
  std::vector<double> out(a.size());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[b_index(mode, i, last)];
  return make_op("sub", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                 [mode, last](Node& self) {
                   Node& x = *self.inputs[0];
                   Node& y = *self.inputs[1];
                   if (x.requires_grad) {
                     auto& g = x.grad_buffer();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                   }
                   if (y.requires_grad) {
                     auto& g = y.grad_buffer();
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       g[b_index(mode, i, last)] -= self.grad[i];
                   }
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  Bcast mode = classify("mul", a, b, false);
  std::vector<double> out(a.size());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[b_index(mode, i, 1)];
  return make_op("mul", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                 [mode](Node& self) {
                   Node& x = *self.inputs[0];
                   Node& y = *self.inputs[1];
                   if (x.requires_grad) {
                     auto& g = x.grad_buffer();
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += self.grad[i] * y.value[b_index(mode, i, 1)];
                   }
                   if (y.requires_grad) {
                     auto& g = y.grad_buffer();
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       g[b_index(mode, i, 1)] += self.grad[i] * x.value[i];
                   }
                 });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

// ---------------------------------------------------------------------------
// Matrix products

namespace {

struct MatmulPlan {
  std::size_t batch, m, k, n;
  bool batched_b;
  Shape out_shape;
};

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  MatmulPlan p{};
  if (a.rank() == 3 && b.rank() == 3) {
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) shape_fail("matmul", a.shape(), b.shape());
    p = {a.dim(0), a.dim(1), a.dim(2), b.dim(2), true, {a.dim(0), a.dim(1), b.dim(2)}};
  } else if (a.rank() >= 1 && b.rank() == 2) {
    if (a.shape().back() != b.dim(0)) shape_fail("matmul", a.shape(), b.shape());
    Shape out = a.shape();
    out.back() = b.dim(1);
    p = {1, a.size() / b.dim(0), b.dim(0), b.dim(1), false, std::move(out)};
  } else {
    shape_fail("matmul", a.shape(), b.shape());
  }
  std::vector<double> out(p.batch * p.m * p.n);
  for (std::size_t i = 0; i < p.batch; ++i) {
    CMapMat am(a.values().data() + i * p.m * p.k, p.m, p.k);
    CMapMat bm(b.values().data() + (p.batched_b ? i * p.k * p.n : 0), p.k, p.n);
    MapMat om(out.data() + i * p.m * p.n, p.m, p.n);
    om.noalias() = am * bm;
  }
  return make_op("matmul", p.out_shape, std::move(out), {a.node_ptr(), b.node_ptr()},
                 [p](Node& self) {
                   Node& x = *self.inputs[0];
                   Node& y = *self.inputs[1];
                   for (std::size_t i = 0; i < p.batch; ++i) {
                     CMapMat gm(self.grad.data() + i * p.m * p.n, p.m, p.n);
                     if (x.requires_grad) {
                       MapMat gx(x.grad_buffer().data() + i * p.m * p.k, p.m, p.k);
                       CMapMat ym(y.value.data() + (p.batched_b ? i * p.k * p.n : 0), p.k, p.n);
                       gx.noalias() += gm * ym.transpose();
                     }
                     if (y.requires_grad) {
                       MapMat gy(y.grad_buffer().data() + (p.batched_b ? i * p.k * p.n : 0), p.k, p.n);
                       CMapMat xm(x.value.data() + i * p.m * p.k, p.m, p.k);
                       gy.noalias() += xm.transpose() * gm;
                     }
                   }
                 });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul_nt");
  require_defined(b, "matmul_nt");
  std::size_t batch, m, k, n;
  Shape out_shape;
  if (a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2)) {
    batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
    out_shape = {batch, m, n};
  } else if (a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1)) {
    batch = 1, m = a.dim(0), k = a.dim(1), n = b.dim(0);
    out_shape = {m, n};
  } else {
    shape_fail("matmul_nt", a.shape(), b.shape());
  }
  std::vector<double> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    CMapMat am(a.values().data() + i * m * k, m, k);
    CMapMat bm(b.values().data() + i * n * k, n, k);
    MapMat om(out.data() + i * m * n, m, n);
    om.noalias() = am * bm.transpose();
  }
  return make_op("matmul_nt", std::move(out_shape), std::move(out),
                 {a.node_ptr(), b.node_ptr()}, [batch, m, k, n](Node& self) {
                   Node& x = *self.inputs[0];
                   Node& y = *self.inputs[1];
                   for (std::size_t i = 0; i < batch; ++i) {
                     CMapMat gm(self.grad.data() + i * m * n, m, n);
                     if (x.requires_grad) {
                       MapMat gx(x.grad_buffer().data() + i * m * k, m, k);
                       CMapMat ym(y.value.data() + i * n * k, n, k);
                       gx.noalias() += gm * ym;
                     }
                     if (y.requires_grad) {
                       MapMat gy(y.grad_buffer().data() + i * n * k, n, k);
                       CMapMat xm(x.value.data() + i * m * k, m, k);
                       gy.noalias() += gm.transpose() * xm;
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// Layout

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error("concat: no inputs");
  for (const auto& t : parts) require_defined(t, "concat");
  const Shape& ref = parts.front().shape();
  if (ref.empty()) throw ShapeError("concat: scalar inputs");
  std::size_t rows = parts.front().size() / ref.back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& t : parts) {
    const Shape& s = t.shape();
    if (s.size() != ref.size() || !std::equal(s.begin(), s.end() - 1, ref.begin()))
      shape_fail("concat", ref, s);
    widths.push_back(s.back());
    total += s.back();
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto v = parts[p].values();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * widths[p], widths[p], out.data() + r * total + offset);
    offset += widths[p];
  }
  Shape shape = ref;
  shape.back() = total;
  std::vector<std::shared_ptr<Node>> inputs;
  for (const auto& t : parts) inputs.push_back(t.node_ptr());
  return make_op("concat", std::move(shape), std::move(out), std::move(inputs),
                 [rows, total, widths](Node& self) {
                   std::size_t off = 0;
                   for (std::size_t p = 0; p < self.inputs.size(); ++p) {
                     Node& in = *self.inputs[p];
                     if (in.requires_grad) {
                       auto& g = in.grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < widths[p]; ++c)
                           g[r * widths[p] + c] += self.grad[r * total + off + c];
                     }
                     off += widths[p];
                   }
                 });
}

Tensor slice(const Tensor& x, std::size_t begin, std::size_t end) {
  require_defined(x, "slice");
  if (x.rank() == 0 || begin >= end || end > x.shape().back())
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for shape " + shape_str(x.shape()));
  std::size_t width = x.shape().back();
  std::size_t rows = x.size() / width;
  std::size_t w = end - begin;
  std::vector<double> out(rows * w);
  auto v = x.values();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(v.data() + r * width + begin, w, out.data() + r * w);
  Shape shape = x.shape();
  shape.back() = w;
  return make_op("slice", std::move(shape), std::move(out), {x.node_ptr()},
                 [rows, width, begin, w](Node& self) {
                   auto& g = self.inputs[0]->grad_buffer();
                   for (std::size_t r = 0; r < rows; ++r)
                     for (std::size_t c = 0; c < w; ++c)
                       g[r * width + begin + c] += self.grad[r * w + c];
                 });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_size(shape) != x.size()) shape_fail("reshape", x.shape(), shape);
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_op("reshape", std::move(shape), std::move(out), {x.node_ptr()}, [](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  require_defined(x, "permute");
  const Shape& in = x.shape();
  const std::size_t r = in.size();
  std::vector<std::size_t> sorted = axes;
  std::sort(sorted.begin(), sorted.end());
  bool valid = axes.size() == r;
  for (std::size_t i = 0; valid && i < r; ++i) valid = sorted[i] == i;
  if (!valid) throw ShapeError("permute: invalid axes for shape " + shape_str(in));

  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in[axes[i]];

  // map[out_flat] = in_flat
  std::vector<std::size_t> map(x.size());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < map.size(); ++o) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_stride[axes[i]];
    map[o] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<double> out(x.size());
  auto v = x.values();
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = v[map[o]];
  return make_op("permute", std::move(out_shape), std::move(out), {x.node_ptr()},
                 [map = std::move(map)](Node& self) {
                   auto& g = self.inputs[0]->grad_buffer();
                   for (std::size_t o = 0; o < map.size(); ++o) g[map[o]] += self.grad[o];
                 });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_op("sum", {}, {s}, {x.node_ptr()}, [](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (double& gi : g) gi += self.grad[0];
  });
}

Tensor sum_last(const Tensor& x) {
  require_defined(x, "sum_last");
  if (x.rank() == 0) throw ShapeError("sum_last: scalar input");
  std::size_t width = x.shape().back();
  std::size_t rows = x.size() / width;
  std::vector<double> out(rows, 0.0);
  auto v = x.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) out[r] += v[r * width + c];
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  return make_op("sum_last", std::move(shape), std::move(out), {x.node_ptr()},
                 [width](Node& self) {
                   auto& g = self.inputs[0]->grad_buffer();
                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i / width];
                 });
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor cos(const Tensor& x) {
  return unary(
      "cos", x, [](double v) { return std::cos(v); },
      [](double v, double) { return -std::sin(v); });
}

Tensor sin(const Tensor& x) {
  return unary(
      "sin", x, [](double v) { return std::sin(v); },
      [](double v, double) { return std::cos(v); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor softmax(const Tensor& x) {
  require_defined(x, "softmax");
  if (x.rank() == 0) throw ShapeError("softmax: scalar input");
  std::size_t width = x.shape().back();
  std::size_t rows = x.size() / width;
  std::vector<double> out(x.size());
  auto v = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = v.data() + r * width;
    double* o = out.data() + r * width;
    double mx = *std::max_element(in, in + width);
    double z = 0.0;
    for (std::size_t c = 0; c < width; ++c) z += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < width; ++c) o[c] /= z;
  }
  return make_op("softmax", x.shape(), std::move(out), {x.node_ptr()},
                 [rows, width](Node& self) {
                   auto& g = self.inputs[0]->grad_buffer();
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* y = self.value.data() + r * width;
                     const double* dy = self.grad.data() + r * width;
                     double dot = 0.0;
                     for (std::size_t c = 0; c < width; ++c) dot += dy[c] * y[c];
                     for (std::size_t c = 0; c < width; ++c)
                       g[r * width + c] += y[c] * (dy[c] - dot);
                   }
                 });
}

Tensor log_softmax(const Tensor& x) {
  require_defined(x, "log_softmax");
  if (x.rank() == 0) throw ShapeError("log_softmax: scalar input");
  std::size_t width = x.shape().back();
  std::size_t rows = x.size() / width;
  std::vector<double> out(x.size());
  auto v = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = v.data() + r * width;
    double mx = *std::max_element(in, in + width);
    double z = 0.0;
    for (std::size_t c = 0; c < width; ++c) z += std::exp(in[c] - mx);
    double lz = mx + std::log(z);
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = in[c] - lz;
  }
  return make_op("log_softmax", x.shape(), std::move(out), {x.node_ptr()},
                 [rows, width](Node& self) {
                   auto& g = self.inputs[0]->grad_buffer();
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* y = self.value.data() + r * width;
                     const double* dy = self.grad.data() + r * width;
                     double total = 0.0;
                     for (std::size_t c = 0; c < width; ++c) total += dy[c];
                     for (std::size_t c = 0; c < width; ++c)
                       g[r * width + c] += dy[c] - std::exp(y[c]) * total;
                   }
                 });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_defined(x, "layer_norm");
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  std::size_t width = x.shape().back();
  if (gain.shape() != Shape{width}) shape_fail("layer_norm", x.shape(), gain.shape());
  if (bias.shape() != Shape{width}) shape_fail("layer_norm", x.shape(), bias.shape());
  std::size_t rows = x.size() / width;
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  std::vector<double> out(x.size());
  auto v = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  const double n = static_cast<double>(width);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = v.data() + r * width;
    double mu = 0.0;
    for (std::size_t c = 0; c < width; ++c) mu += in[c];
    mu /= n;
    double var = 0.0;
    for (std::size_t c = 0; c < width; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= n;
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < width; ++c) {
      double h = (in[c] - mu) * is;
      xhat[r * width + c] = h;
      out[r * width + c] = h * gv[c] + bv[c];
    }
  }
  return make_op(
      "layer_norm", x.shape(), std::move(out),
      {x.node_ptr(), gain.node_ptr(), bias.node_ptr()},
      [rows, width, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& xin = *self.inputs[0];
        Node& gin = *self.inputs[1];
        Node& bin = *self.inputs[2];
        const double n = static_cast<double>(width);
        if (gin.requires_grad || bin.requires_grad) {
          auto& gg = gin.grad_buffer();
          auto& gb = bin.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < width; ++c) {
              double dy = self.grad[r * width + c];
              gg[c] += dy * xhat[r * width + c];
              gb[c] += dy;
            }
        }
        if (xin.requires_grad) {
          auto& gx = xin.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t c = 0; c < width; ++c) {
              double dh = self.grad[r * width + c] * gin.value[c];
              s1 += dh;
              s2 += dh * xhat[r * width + c];
            }
            for (std::size_t c = 0; c < width; ++c) {
              double dh = self.grad[r * width + c] * gin.value[c];
              gx[r * width + c] +=
                  inv_std[r] / n * (n * dh - s1 - xhat[r * width + c] * s2);
            }
          }
        }
      });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> indices) {
  require_defined(table, "embedding_lookup");
  if (table.rank() == 0) throw ShapeError("embedding_lookup: scalar table");
  std::size_t rows = table.dim(0);
  std::size_t width = table.size() / rows;
  std::vector<double> out(indices.size() * width);
  auto v = table.values();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows)
      throw ShapeError("embedding_lookup: index " + std::to_string(indices[i]) +
                       " out of range for table " + shape_str(table.shape()));
    std::copy_n(v.data() + indices[i] * width, width, out.data() + i * width);
  }
  Shape shape = table.shape();
  shape[0] = indices.size();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_op("embedding_lookup", std::move(shape), std::move(out), {table.node_ptr()},
                 [width, idx = std::move(idx)](Node& self) {
                   auto& g = self.inputs[0]->grad_buffer();
                   for (std::size_t i = 0; i < idx.size(); ++i)
                     for (std::size_t c = 0; c < width; ++c)
                       g[idx[i] * width + c] += self.grad[i * width + c];
                 });
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw Error("dropout: p must be < 1");
  std::vector<double> keep(x.size());
  std::bernoulli_distribution coin(1.0 - p);
  const double s = 1.0 / (1.0 - p);
  for (double& k : keep) k = coin(rng) ? s : 0.0;
  return mul(x, Tensor::constant(x.shape(), std::move(keep)));
}

// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.size() != 1)
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  Node* root = loss.node();
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& in : n->inputs)
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
  }
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->seq > b->seq; });

  root->grad_buffer()[0] += 1.0;
  for (Node* n : order) {
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  // Interior grads are consumed; release them so a retained graph can be
  // differentiated again without double counting.
  for (Node* n : order)
    if (n->backward) n->grad.clear();
}

void sgd_step(std::span<Tensor> params, double lr) {
  for (auto& p : params) {
    if (!p.requires_grad() || !p.has_grad())
      throw Error("sgd_step: parameter has no gradient");
    auto v = p.mutable_values();
    auto g = p.mutable_grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
    p.zero_grad();
  }
}

void adam_step(std::span<Tensor> params, std::span<std::vector<double>> m,
               std::span<std::vector<double>> v, std::uint64_t step, const AdamConfig& cfg) {
  if (m.size() != params.size() || v.size() != params.size())
    throw Error("adam_step: moment state does not match parameter count");
  const double t = static_cast<double>(step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.requires_grad() || !p.has_grad())
      throw Error("adam_step: parameter has no gradient");
    auto val = p.mutable_values();
    auto g = p.mutable_grad();
    auto& mi = m[i];
    auto& vi = v[i];
    if (mi.size() != val.size()) mi.assign(val.size(), 0.0);
    if (vi.size() != val.size()) vi.assign(val.size(), 0.0);
    for (std::size_t j = 0; j < val.size(); ++j) {
      mi[j] = cfg.beta1 * mi[j] + (1.0 - cfg.beta1) * g[j];
      vi[j] = cfg.beta2 * vi[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      double mhat = mi[j] / c1;
      double vhat = vi[j] / c2;
      val[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    p.zero_grad();
  }
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), m_(params_.size()), v_(params_.size()), cfg_(cfg) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].size(), 0.0);
    v_[i].assign(params_[i].size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  adam_step(params_, m_, v_, t_, cfg_);
}

}  // namespace dyroad::ad
