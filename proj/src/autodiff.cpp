#include "ebosal/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace ebosal::ad {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------- Tensor

Tensor::Tensor() : shape_{0} {}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_to_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " elements");
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> data) {
  const std::size_t n = data.size();
  return Tensor(Shape{n}, std::move(data));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor(Shape{rows, cols}, std::move(data));
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 1;
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() < 2) return 1;
  return shape_[1];
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_to_string(shape_));
  }
  return data_[0];
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------- Var

Var Var::constant(Tensor value) {
  if (!value.all_finite()) throw ContractError("non-finite value in constant tensor");
  auto node = std::make_shared<Node>();
  node->grad = Tensor(value.shape(), 0.0);
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Var::parameter(Tensor value) {
  Var v = constant(std::move(value));
  v.node()->requires_grad = true;
  return v;
}

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

namespace {

using Rule = std::function<void(Node&)>;

Var make_node(Tensor value, std::vector<std::shared_ptr<Node>> parents, Rule rule) {
  if (!value.all_finite()) {
    throw ContractError("operation produced a non-finite value, shape " +
                        shape_to_string(value.shape()));
  }
  auto node = std::make_shared<Node>();
  node->requires_grad = g_grad_enabled &&
                        std::any_of(parents.begin(), parents.end(),
                                    [](const auto& p) { return p->requires_grad; });
  node->grad = Tensor(value.shape(), 0.0);
  node->value = std::move(value);
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward_rule = std::move(rule);
  }
  return Var(std::move(node));
}

void require_defined(const Var& a, const char* op) {
  if (!a.defined()) throw ContractError(std::string(op) + ": undefined operand");
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

void require_matrix(const Var& a, const char* op) {
  require_defined(a, op);
  if (a.value().rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         shape_to_string(a.shape()));
  }
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x k] += A[m x n] * B[k x n]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    double* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += arow[j] * brow[j];
      crow[p] += s;
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

Var unary(const Var& a, Tensor out, std::function<void(const Node& self, Node& parent)> rule) {
  return make_node(std::move(out), {a.node()}, [rule = std::move(rule)](Node& self) {
    Node& parent = *self.parents[0];
    if (parent.requires_grad) rule(self, parent);
  });
}

}  // namespace

// ---------------------------------------------------------------- ops

Var matmul(const Var& a, const Var& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.value().rows(), k = a.value().cols(), n = b.value().cols();
  if (b.value().rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_to_string(a.shape()) +
                         " x " + shape_to_string(b.shape()));
  }
  Tensor out(Shape{m, n}, 0.0);
  gemm_nn(a.value().data().data(), b.value().data().data(), out.data().data(), m, k, n);
  return make_node(std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const double* g = self.grad.data().data();
    if (pa.requires_grad) gemm_nt(g, pb.value.data().data(), pa.grad.data().data(), m, n, k);
    if (pb.requires_grad) gemm_tn(pa.value.data().data(), g, pb.grad.data().data(), m, k, n);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += self.grad[i];
      if (pb.requires_grad) pb.grad[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double g = self.grad[i];
      // Read both values before writing: a and b may be the same node.
      const double av = pa.value[i], bv = pb.value[i];
      if (pa.requires_grad) pa.grad[i] += g * bv;
      if (pb.requires_grad) pb.grad[i] += g * av;
    }
  });
}

Var scale(const Var& a, double factor) {
  require_defined(a, "scale");
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  return unary(a, std::move(out), [factor](const Node& self, Node& parent) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) parent.grad[i] += factor * self.grad[i];
  });
}

Var add_scalar(const Var& a, double offset) {
  require_defined(a, "add_scalar");
  Tensor out = a.value();
  for (double& v : out.data()) v += offset;
  return unary(a, std::move(out), [](const Node& self, Node& parent) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) parent.grad[i] += self.grad[i];
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var square(const Var& a) {
  require_defined(a, "square");
  Tensor out = a.value();
  for (double& v : out.data()) v *= v;
  return unary(a, std::move(out), [](const Node& self, Node& parent) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      parent.grad[i] += 2.0 * parent.value[i] * self.grad[i];
  });
}

Var relu(const Var& a) {
  require_defined(a, "relu");
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return unary(a, std::move(out), [](const Node& self, Node& parent) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (parent.value[i] > 0.0) parent.grad[i] += self.grad[i];
  });
}

Var normalize_rows(const Var& a, double eps) {
  require_matrix(a, "normalize_rows");
  if (!(eps > 0.0)) throw ContractError("normalize_rows: eps must be > 0");
  const std::size_t n = a.value().rows(), m = a.value().cols();
  Tensor out = a.value();
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = eps;
    for (std::size_t j = 0; j < m; ++j) sq += out[i * m + j] * out[i * m + j];
    norms[i] = std::sqrt(sq);
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= norms[i];
  }
  return unary(a, std::move(out), [n, m, norms](const Node& self, Node& parent) {
    // d/dx (x / r) applied to g: (g - y (y.g)) / r
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += self.value[i * m + j] * self.grad[i * m + j];
      for (std::size_t j = 0; j < m; ++j)
        parent.grad[i * m + j] += (self.grad[i * m + j] - self.value[i * m + j] * dot) / norms[i];
    }
  });
}

Var add_row_bias(const Var& x, const Var& bias) {
  require_matrix(x, "add_row_bias");
  require_defined(bias, "add_row_bias");
  const std::size_t n = x.value().rows(), m = x.value().cols();
  if (bias.size() != m) {
    throw DimensionError("add_row_bias: bias of size " + std::to_string(bias.size()) +
                         " for " + std::to_string(m) + " columns");
  }
  Tensor out = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += bias.value()[j];
  return make_node(std::move(out), {x.node(), bias.node()}, [n, m](Node& self) {
    Node& px = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const double g = self.grad[i * m + j];
        if (px.requires_grad) px.grad[i * m + j] += g;
        if (pb.requires_grad) pb.grad[j] += g;
      }
    }
  });
}

Var sum(const Var& a) {
  require_defined(a, "sum");
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return unary(a, Tensor::scalar(s), [](const Node& self, Node& parent) {
    const double g = self.grad[0];
    for (double& pg : parent.grad.data()) pg += g;
  });
}

Var mean(const Var& a) {
  require_defined(a, "mean");
  if (a.size() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var reshape(const Var& a, Shape shape) {
  require_defined(a, "reshape");
  Tensor out(std::move(shape), std::vector<double>(a.value().data().begin(), a.value().data().end()));
  return unary(a, std::move(out), [](const Node& self, Node& parent) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) parent.grad[i] += self.grad[i];
  });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  require_defined(a, "slice_rows");
  const Tensor& v = a.value();
  if (v.rank() != 1 && v.rank() != 2) {
    throw DimensionError("slice_rows: expected rank 1 or 2, got " + shape_to_string(v.shape()));
  }
  if (begin > end || end > v.rows()) {
    throw IndexError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside " + std::to_string(v.rows()) + " rows");
  }
  const std::size_t stride = v.cols();
  Shape shape = v.shape();
  shape[0] = end - begin;
  std::vector<double> data(v.data().begin() + begin * stride, v.data().begin() + end * stride);
  return unary(a, Tensor(std::move(shape), std::move(data)),
               [offset = begin * stride](const Node& self, Node& parent) {
                 for (std::size_t i = 0; i < self.grad.size(); ++i)
                   parent.grad[offset + i] += self.grad[i];
               });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no operands");
  for (const Var& p : parts) require_matrix(p, "concat_rows");
  const std::size_t m = parts[0].value().cols();
  std::size_t n = 0;
  std::vector<double> data;
  std::vector<std::shared_ptr<Node>> parents;
  for (const Var& p : parts) {
    if (p.value().cols() != m) throw DimensionError("concat_rows: column counts disagree");
    n += p.value().rows();
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    parents.push_back(p.node());
  }
  return make_node(Tensor(Shape{n, m}, std::move(data)), std::move(parents), [](Node& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      const std::size_t len = p->value.size();
      if (p->requires_grad)
        for (std::size_t i = 0; i < len; ++i) p->grad[i] += self.grad[offset + i];
      offset += len;
    }
  });
}

Var logsumexp_rows(const Var& logits) {
  require_matrix(logits, "logsumexp_rows");
  const std::size_t n = logits.value().rows(), c = logits.value().cols();
  if (c == 0) throw DimensionError("logsumexp_rows: zero columns");
  const auto x = logits.value().data();
  Tensor out(Shape{n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    out[i] = mx + std::log(s);
  }
  return unary(logits, std::move(out), [n, c](const Node& self, Node& parent) {
    for (std::size_t i = 0; i < n; ++i) {
      const double g = self.grad[i];
      const double lse = self.value[i];
      for (std::size_t j = 0; j < c; ++j)
        parent.grad[i * c + j] += g * std::exp(parent.value[i * c + j] - lse);
    }
  });
}

Var softmax_rows(const Var& logits) {
  require_matrix(logits, "softmax_rows");
  const std::size_t n = logits.value().rows(), c = logits.value().cols();
  if (c == 0) throw DimensionError("softmax_rows: zero columns");
  Tensor out = logits.value();
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.data().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    for (std::size_t j = 0; j < c; ++j) row[j] /= s;
  }
  return unary(logits, std::move(out), [n, c](const Node& self, Node& parent) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* y = self.value.data().data() + i * c;
      const double* g = self.grad.data().data() + i * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < c; ++j) parent.grad[i * c + j] += y[j] * (g[j] - dot);
    }
  });
}

Var gather_rows(const Var& x, std::span<const int> index) {
  require_matrix(x, "gather_rows");
  const std::size_t n = x.value().rows(), c = x.value().cols();
  if (index.size() != n) {
    throw DimensionError("gather_rows: " + std::to_string(index.size()) + " indices for " +
                         std::to_string(n) + " rows");
  }
  std::vector<std::size_t> flat(n);
  Tensor out(Shape{n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= c) {
      throw IndexError("gather_rows: index " + std::to_string(index[i]) + " outside [0, " +
                       std::to_string(c) + ")");
    }
    flat[i] = i * c + static_cast<std::size_t>(index[i]);
    out[i] = x.value()[flat[i]];
  }
  return unary(x, std::move(out), [flat = std::move(flat)](const Node& self, Node& parent) {
    for (std::size_t i = 0; i < flat.size(); ++i) parent.grad[flat[i]] += self.grad[i];
  });
}

Var neg_log_one_minus(const Var& p, double floor) {
  require_defined(p, "neg_log_one_minus");
  Tensor out = p.value();
  for (double& v : out.data()) v = -std::log(std::max(1.0 - v, floor));
  return unary(p, std::move(out), [floor](const Node& self, Node& parent) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double q = 1.0 - parent.value[i];
      if (q > floor) parent.grad[i] += self.grad[i] / q;
    }
  });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> targets) {
  require_matrix(logits, "softmax_cross_entropy");
  const std::size_t n = logits.value().rows(), c = logits.value().cols();
  if (targets.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(n) + " rows");
  }
  if (n == 0) throw DimensionError("softmax_cross_entropy: empty batch");
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw IndexError("softmax_cross_entropy: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(c) + ")");
    }
  }
  const auto x = logits.value().data();
  std::vector<double> probs(n * c);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - lse);
    total += lse - row[targets[i]];
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  return unary(logits, Tensor::scalar(total / static_cast<double>(n)),
               [probs = std::move(probs), tgt = std::move(tgt), n, c](const Node& self,
                                                                      Node& parent) {
                 const double g = self.grad[0] / static_cast<double>(n);
                 for (std::size_t i = 0; i < n; ++i) {
                   for (std::size_t j = 0; j < c; ++j) {
                     const double onehot = static_cast<std::size_t>(tgt[i]) == j ? 1.0 : 0.0;
                     parent.grad[i * c + j] += g * (probs[i * c + j] - onehot);
                   }
                 }
               });
}

// ---------------------------------------------------------------- backward

namespace {

// Post-order over nodes that require grad; parents precede children.
std::vector<Node*> topological_order(Node* root, bool only_requiring_grad) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  if (only_requiring_grad && !root->requires_grad) return order;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if ((!only_requiring_grad || parent->requires_grad) && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void backward(const Var& root) {
  if (!root.defined()) throw ContractError("backward: undefined root");
  if (root.size() != 1) {
    throw ContractError("backward: root must be a scalar, got shape " +
                        shape_to_string(root.shape()));
  }
  Node* r = root.node().get();
  if (!r->backward_rule) {
    r->grad[0] += 1.0;
    return;
  }
  const std::vector<Node*> order = topological_order(r, true);
  for (Node* n : order)
    if (n->backward_rule) n->grad.fill(0.0);
  r->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_rule) (*it)->backward_rule(**it);
}

void zero_grad(const Var& root) {
  if (!root.defined()) return;
  for (Node* n : topological_order(root.node().get(), false)) n->grad.fill(0.0);
}

void zero_grad(std::span<const Var> params) {
  for (const Var& p : params) p.node()->grad.fill(0.0);
}

// ---------------------------------------------------------------- SGD

void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, const SgdOptions& options) {
  if (!param.same_shape(grad) || !param.same_shape(velocity)) {
    throw DimensionError("sgd_step: parameter, gradient and velocity shapes disagree");
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = options.momentum * velocity[i] + grad[i] + options.weight_decay * param[i];
    param[i] -= options.learning_rate * velocity[i];
  }
}

SgdMomentum::SgdMomentum(std::vector<Var> params, SgdOptions options)
    : params_(std::move(params)), options_(options) {
  velocity_.reserve(params_.size());
  for (const Var& p : params_) velocity_.emplace_back(p.shape(), 0.0);
}

double SgdMomentum::step() {
  double sq = 0.0;
  for (const Var& p : params_)
    for (double g : p.node()->grad.data()) sq += g * g;
  const double norm = std::sqrt(sq);
  const double factor =
      options_.max_grad_norm > 0.0 && norm > options_.max_grad_norm ? options_.max_grad_norm / norm : 1.0;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Node& node = *params_[i].node();
    if (factor != 1.0)
      for (double& g : node.grad.data()) g *= factor;
    sgd_step(node.value, node.grad, velocity_[i], options_);
    if (!node.value.all_finite()) throw ContractError("parameter became non-finite after SGD step");
  }
  return norm;
}

void SgdMomentum::zero_grad() { ad::zero_grad(params_); }

}  // namespace ebosal::ad
