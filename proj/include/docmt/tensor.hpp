#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "docmt/rng.hpp"

namespace docmt {

#ifdef DOCMT_USE_DOUBLE
using Real = double;
#else
using Real = float;
#endif

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TensorImpl;

/// Shared handle to a dense row-major tensor that may take part in a
/// reverse-mode autodiff graph. Copying a Tensor copies the handle; use
/// clone() for a deep copy of the values.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<Real> data();
  std::span<const Real> data() const;
  Real item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  /// Gradient buffer; empty span when no gradient has been accumulated.
  std::span<Real> grad();
  std::span<const Real> grad() const;
  void zero_grad();

  /// Deep copy of values only; the copy is a fresh leaf.
  Tensor clone() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& handle() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;

  friend Tensor make_tensor(std::shared_ptr<TensorImpl> impl);
};

struct TensorImpl {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;
  bool requires_grad = false;

  // Graph record: present only on non-leaf tensors produced while gradient
  // recording is enabled. Cleared by backward().
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;
  bool consumed = false;

  std::vector<Real>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
    return grad;
  }
};

Tensor make_tensor(std::shared_ptr<TensorImpl> impl);

/// Gradient recording is thread-local and on by default.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Runs reverse accumulation from a scalar loss. Leaf gradients accumulate
/// (call zero_grad between steps). The graph is consumed: a second call on the
/// same loss throws std::logic_error.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Operations. All accept and return Tensor handles and record backward
// closures when any input requires grad and recording is enabled.

/// [.., p, q] x [.., q, r] -> [.., p, r]; leading dims broadcast numpy-style.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Elementwise with numpy broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Real factor);
Tensor relu(const Tensor& x);
Tensor softmax(const Tensor& x, int axis = -1);
Tensor log_softmax(const Tensor& x, int axis = -1);
/// Normalizes over the last axis, then applies gain * x_hat + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps = Real(1e-6));
/// Inverted dropout; identity when !train_mode or rate == 0.
Tensor dropout(const Tensor& x, Real rate, Rng& rng, bool train_mode);
/// Gathers rows of table [V, d] -> ids.shape + [d].
Tensor embedding(const Tensor& table, std::span<const int> ids, const Shape& ids_shape);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, int axis1, int axis2);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Mean over unmasked rows of the label-smoothed cross-entropy
/// -sum_v q_v log p_v with q = (1 - smoothing) on the gold id and
/// smoothing / (V - 1) elsewhere. Rows whose target equals ignore_id are
/// excluded. logits: [N, V]; targets: N ids.
Tensor cross_entropy_ls(const Tensor& logits, std::span<const int> targets, Real smoothing,
                        int ignore_id = -1);

}  // namespace docmt
