#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace wnlab {

using Vec = Eigen::VectorXd;
// Row-major matrices map directly onto flattened tensor storage.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Shape = std::vector<int>;

long shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorNode {
  Shape shape;
  Vec value;
  Vec grad;  // empty until touched by backward or explicitly allocated
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Propagates this node's grad into parents' grads (accumulating).
  std::function<void(TensorNode&)> backprop;

  void ensure_grad() {
    if (grad.size() != value.size()) grad = Vec::Zero(value.size());
  }
};

// Value-semantic handle to a node of the gradient tape. Copies share the
// underlying node. A detached tensor has requires_grad == false, no parents,
// and never receives gradient.
class Tensor {
 public:
  Tensor() = default;

  // Detached constant.
  static Tensor constant(Shape shape, Vec value);
  // Attached leaf that accumulates gradient (a parameter or attack input).
  static Tensor leaf(Shape shape, Vec value);
  static Tensor zeros(Shape shape);

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  long numel() const { return node_->value.size(); }
  const Vec& value() const { return node_->value; }
  Vec& value() { return node_->value; }
  bool attached() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const Vec& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Vec::Zero(node_->value.size()); }
  void clear_grad() { node_->grad.resize(0); }

  Tensor detach() const { return constant(node_->shape, node_->value); }

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<TensorNode> node_;

  friend Tensor make_op(Shape shape, Vec value, std::vector<Tensor> parents,
                        std::function<void(TensorNode&)> backprop);
};

Tensor make_op(Shape shape, Vec value, std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backprop);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor tanh_op(const Tensor& a);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor l2_squared(const Tensor& a);  // sum of squares

// ---- layers ----
// x: (N, in), w: (in, out), b: (out) -> (N, out)
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);
// x: (N, C, H, W), w: (F, C, 3, 3), b: (F); zero padding 1, stride 1
Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b);
// x: (N, C, H, W), H and W even -> (N, C, H/2, W/2)
Tensor avgpool2(const Tensor& x);
Tensor flatten(const Tensor& x);  // (N, ...) -> (N, rest)

// ---- classification ----
// x: (N, m) -> row-wise softmax
Tensor softmax(const Tensor& x);
// probs: (N, m), labels in [0, m); mean of -log p[label] over the batch
Tensor cross_entropy(const Tensor& probs, const std::vector<int>& labels);
// Carlini-Wagner hinge: sum over batch of max(-kappa, max_{i != t} z_i - z_t)
Tensor cw_hinge(const Tensor& logits, const std::vector<int>& targets,
                double kappa);

// Reverse-mode sweep from a scalar loss. `seed` is the gradient seeded at the
// loss node. Gradients accumulate additively into every attached tensor.
void backward(const Tensor& loss, double seed = 1.0);

}  // namespace wnlab
