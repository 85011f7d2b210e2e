#pragma once

// Reverse-mode automatic differentiation over dense row-major tensors of
// doubles. The graph is define-by-run: every forward pass builds fresh nodes
// that hold shared references to their operands, and parameters are
// long-lived leaf nodes reused across passes.
//
// Layout convention: rows are samples. A batch of n feature vectors of width d
// is an n x d matrix; per-sample scalars (energies, losses) are rank-1 [n].

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ebosal/errors.hpp"

namespace ebosal::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class Tensor {
 public:
  // Empty rank-1 tensor of length zero.
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> data);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-2 accessors; a rank-1 tensor is treated as a column (n x 1).
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  // Value of a single-element tensor.
  double item() const;

  void fill(double value);
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

struct Node {
  Tensor value;
  Tensor grad;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's grad into its parents' grads. Empty for leaves.
  std::function<void(Node&)> backward_rule;
  bool requires_grad = false;
};

// Handle to a graph node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  // Leaf that never receives gradient.
  static Var constant(Tensor value);
  // Leaf that accumulates gradient across backward() calls until reset.
  static Var parameter(Tensor value);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad() { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return !node_->backward_rule; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Linear algebra and elementwise ops. Elementwise binary ops require equal
// shapes; there is no general broadcasting.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var neg(const Var& a);
Var square(const Var& a);
// relu'(0) is defined as 0.
Var relu(const Var& a);
// Each row divided by sqrt(|row|^2 + eps).
Var normalize_rows(const Var& a, double eps = 1e-12);
// x[n x m] + bias[m] added to every row.
Var add_row_bias(const Var& x, const Var& bias);

// Reductions to a rank-0 scalar. sum of an empty tensor is 0; mean of an empty
// tensor is a dimension error.
Var sum(const Var& a);
Var mean(const Var& a);

Var reshape(const Var& a, Shape shape);
// Rows [begin, end) of a rank-1 or rank-2 tensor.
Var slice_rows(const Var& a, std::size_t begin, std::size_t end);
// Vertical concatenation of rank-2 tensors with equal column counts.
Var concat_rows(std::span<const Var> parts);

// Row-wise log sum exp over columns, max-shifted: [n x C] -> [n].
Var logsumexp_rows(const Var& logits);
// Row-wise softmax: [n x C] -> [n x C].
Var softmax_rows(const Var& logits);
// out[i] = x[i, index[i]]: [n x C] -> [n].
Var gather_rows(const Var& x, std::span<const int> index);
// out[i] = -log(max(1 - p[i], floor)); gradient is zero where the floor binds.
Var neg_log_one_minus(const Var& p, double floor);
// Mean over rows of -log softmax(logits)[target].
Var softmax_cross_entropy(const Var& logits, std::span<const int> targets);

// While alive on the current thread, new graph nodes record no backward rule
// (inference mode). Parameters keep requires_grad but are treated as constants.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// Accumulates d(root)/d(node) into every reachable node that requires grad.
// Interior grads are recomputed on each call; leaf grads accumulate until
// zero_grad. Throws ContractError when root is not a single element.
void backward(const Var& root);
// Zeroes grad on every node reachable from root.
void zero_grad(const Var& root);
void zero_grad(std::span<const Var> params);

struct SgdOptions {
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  // SgdMomentum rescales the joint gradient to at most this L2 norm before
  // the update; 0 disables. sgd_step itself never clips.
  double max_grad_norm = 5.0;
};

// Heavy-ball SGD with coupled weight decay:
//   v <- momentum * v + grad + weight_decay * param
//   param <- param - lr * v
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Var> params, SgdOptions options);

  // Returns the joint gradient norm before clipping.
  double step();
  void zero_grad();
  const std::vector<Tensor>& velocity() const { return velocity_; }
  const SgdOptions& options() const { return options_; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> velocity_;
  SgdOptions options_;
};

// Single in-place update of one parameter tensor with its velocity buffer.
void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity,
              const SgdOptions& options);

}  // namespace ebosal::ad
