#pragma once

// Dense reverse-mode differentiation over row-major float64 tensors.
//
// Graphs are built on the fly: every op allocates an output node that keeps
// its inputs alive and records a local backward rule. Each node is stamped
// with a process-wide increasing sequence number at creation, so sorting the
// reachable nodes by that number recovers a topological order (inputs are
// always created before the ops that consume them). A graph is dropped when
// the last handle to its loss goes away.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dyroad::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> values() const { return node_->value; }
  // Only meaningful on leaves; optimizers and loaders write through this.
  std::span<double> mutable_values() { return node_->value; }
  double item() const;
  double at(std::size_t flat) const { return node_->value.at(flat); }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  const char* op() const { return node_->op; }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

  // Wraps a fresh node; used by op implementations.
  static Tensor from_node(std::shared_ptr<Node> node);

 private:
  std::shared_ptr<Node> node_;
};

// Elementwise arithmetic. Operands must share a shape, except that the second
// operand may be a single element (scalar broadcast) or, for add/sub, a
// vector matching the last axis (bias add).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// [m,k]x[k,n]; [..., k]x[k,n] (leading axes flattened); [b,m,k]x[b,k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
// Batched a * b^T: [b,m,k]x[b,n,k] -> [b,m,n]; also plain 2-D.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor concat(const std::vector<Tensor>& parts);  // last axis
Tensor slice(const Tensor& x, std::size_t begin, std::size_t end);  // last axis
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);

Tensor sum(const Tensor& x);       // -> shape {}
Tensor sum_last(const Tensor& x);  // reduces the last axis
Tensor mean(const Tensor& x);      // -> shape {}

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor cos(const Tensor& x);
Tensor sin(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor softmax(const Tensor& x);      // last axis, max-subtracted
Tensor log_softmax(const Tensor& x);  // last axis

inline constexpr double kLayerNormEps = 1e-5;
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = kLayerNormEps);

// Gathers rows of `table` (first axis) -> [indices.size(), row...].
Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> indices);

// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

// Populates grads of every requires_grad node reachable from `loss`.
void backward(const Tensor& loss);

void sgd_step(std::span<Tensor> params, double lr);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, AdamConfig cfg = {});

  void step();
  void set_lr(double lr) { cfg_.lr = lr; }
  const AdamConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
};

// Single Adam update on explicit moment buffers; `step` is 1-based.
void adam_step(std::span<Tensor> params, std::span<std::vector<double>> m,
               std::span<std::vector<double>> v, std::uint64_t step,
               const AdamConfig& cfg);

}  // namespace dyroad::ad
