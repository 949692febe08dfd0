#pragma once

// Dense tensor with reverse-mode automatic differentiation. The operator set
// is exactly what the network needs: elementwise maps, linear layers, 2-D
// convolution and its transpose, an LSTM layer, pooling, concatenation,
// soft-thresholding and the MSE loss. Gradients flow through a dynamically
// built graph; backward() runs one reverse topological sweep and then clears
// the tape.

#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "avse/common.hpp"

namespace avse {

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

struct TensorNode {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily, same extent as data
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int64_t size() const { return static_cast<int64_t>(node_->data.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }

  std::span<double> data() { return node_->data; }
  std::span<const double> data() const { return node_->data; }
  std::span<const double> grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    if (rg) node_->ensure_grad();
  }
  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->data.size(), 0.0);
  }

  double item() const {
    if (size() != 1) throw std::invalid_argument("item(): tensor is not scalar");
    return node_->data[0];
  }

  const NodePtr& node() const { return node_; }

  // Throws if any element is non-finite. Used by debug checks and the
  // training loop's divergence guard.
  void check_finite(const char* what) const;

 private:
  NodePtr node_;
};

enum class EwOp { Add, Sub, Mul, Neg, Abs, Relu, Sigmoid, Tanh, Elu };

// Unary elementwise ops.
Tensor neg(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor elu(const Tensor& a);

// Binary elementwise ops; shapes must match or one operand must be scalar.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

// y = x Wᵀ + b, x:[B,in], W:[out,in], b:[out].
Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b);

// x:[B,C_in,F,T], k:[C_out,C_in,kF,kT], zero padding.
Tensor conv2d(const Tensor& x, const Tensor& k, std::pair<int, int> stride,
              std::pair<int, int> pad);

// Exact adjoint of conv2d under the same kernel and geometry.
// x:[B,C_out,F,T], k:[C_out,C_in,kF,kT] -> [B,C_in,F_up,T_up].
Tensor conv2d_transpose(const Tensor& x, const Tensor& k, std::pair<int, int> stride,
                        std::pair<int, int> pad);

// Adds a per-channel bias to a [B,C,F,T] map.
Tensor add_channel_bias(const Tensor& x, const Tensor& b);

// x:[B,T,in], Wx:[4H,in], Wh:[4H,H], b:[4H]; gate order i,f,g,o.
// Zero initial hidden and cell state; full backprop through time.
Tensor lstm_layer(const Tensor& x, const Tensor& Wx, const Tensor& Wh, const Tensor& b);

// out[b,c] = mean_{f,t} |x[b,c,f,t]|.
Tensor global_avg_pool_abs(const Tensor& x);

// [B,C1,F,T] + [B,C2,F,T] -> [B,C1+C2,F,T].
Tensor concat_channels(const Tensor& a, const Tensor& b);

// [B,T,D1] + [B,T,D2] -> [B,T,D1+D2].
Tensor concat_last(const Tensor& a, const Tensor& b);

// Soft-thresholding shrinkage. tau must be elementwise >= 0 and either
// scalar, the same shape as x, or [B,C] broadcast over a [B,C,F,T] input.
Tensor soft_threshold(const Tensor& x, const Tensor& tau);

Tensor mse_loss(const Tensor& pred, const Tensor& target);
Tensor sum(const Tensor& a);

// View-style reshapes (data copied, gradient passed through).
Tensor reshape(const Tensor& x, std::vector<int> new_shape);

// [B,C,F,T] -> [B,T,C*F]  (per-time-step flattening for the LSTM bottleneck).
Tensor flatten_per_time(const Tensor& x);
// [B,T,C*F] -> [B,C,F,T].
Tensor unflatten_per_time(const Tensor& x, int C, int F);

// [B,T,D] -> [B,T*factor,D], nearest-neighbor repetition along time.
Tensor repeat_time(const Tensor& x, int factor);

// Reverse sweep from a scalar loss; accumulates into leaf grads and clears
// the tape (parents and backward closures are released).
void backward(const Tensor& loss);

// Standard Adam with bias correction. State is owned by the optimizer and
// keyed by parameter order.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double lr = 1e-3, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

  void zero_grad();
  // Scales gradients so the global L2 norm is at most max_norm (<=0 disables).
  double clip_grad_norm(double max_norm);
  void step();

  int64_t t() const { return t_; }
  std::vector<Tensor>& params() { return params_; }
  std::vector<std::vector<double>>& moment1() { return m_; }
  std::vector<std::vector<double>>& moment2() { return v_; }
  void set_t(int64_t t) { t_ = t; }
  double lr() const { return lr_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace avse
