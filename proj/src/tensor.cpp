#include "docmt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace docmt {

namespace {

thread_local bool g_grad_enabled = true;

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

bool needs_graph(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Builds the output tensor and, if required, attaches the backward closure.
Tensor finish(Shape shape, std::vector<Real> values, std::initializer_list<const Tensor*> inputs,
              std::function<void(TensorImpl&)> fn) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  if (needs_graph(inputs)) {
    impl->requires_grad = true;
    for (const Tensor* t : inputs) impl->parents.push_back(t->handle());
    impl->backward_fn = std::move(fn);
  }
  return make_tensor(std::move(impl));
}

void check_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

// Broadcast of two shapes, numpy rules (right aligned).
Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Flat offsets into `src` for every element of the broadcast shape `out`.
std::vector<std::size_t> broadcast_offsets(const Shape& src, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t pad = rank - src.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > pad;) {
    const std::size_t d = src[i - pad];
    stride[i] = d == 1 ? 0 : s;
    s *= d;
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> offsets(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    offsets[flat] = off;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      off += stride[ax];
      if (idx[ax] < out[ax]) break;
      off -= stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return offsets;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

enum class BinOp { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  check_defined(a, name);
  check_defined(b, name);
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape(), name);
  const std::size_t n = shape_numel(out_shape);
  const auto& ad = a.impl()->data;
  const auto& bd = b.impl()->data;

  // Offset maps; empty vectors mean "identity" or "modulo" fast paths.
  std::vector<std::size_t> ao, bo;
  const bool a_full = a.shape() == out_shape;
  const bool b_full = b.shape() == out_shape;
  const bool b_suffix = a_full && !b_full && is_suffix(b.shape(), out_shape);
  if (!a_full) ao = broadcast_offsets(a.shape(), out_shape);
  if (!b_full && !b_suffix) bo = broadcast_offsets(b.shape(), out_shape);
  const std::size_t bn = b.numel();

  auto a_at = [&](std::size_t i) { return a_full ? i : ao[i]; };
  auto b_at = [&](std::size_t i) { return b_full ? i : (b_suffix ? i % bn : bo[i]); };

  std::vector<Real> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Real x = ad[a_at(i)];
    const Real y = bd[b_at(i)];
    switch (op) {
      case BinOp::kAdd: out[i] = x + y; break;
      case BinOp::kSub: out[i] = x - y; break;
      case BinOp::kMul: out[i] = x * y; break;
    }
  }

  auto ai = a.handle();
  auto bi = b.handle();
  return finish(out_shape, std::move(out), {&a, &b},
                [ai, bi, op, a_full, b_full, b_suffix, bn, ao = std::move(ao), bo = std::move(bo)](TensorImpl& self) {
                  const auto& g = self.grad;
                  const std::size_t n = g.size();
                  auto a_at = [&](std::size_t i) { return a_full ? i : ao[i]; };
                  auto b_at = [&](std::size_t i) { return b_full ? i : (b_suffix ? i % bn : bo[i]); };
                  if (ai->requires_grad) {
                    auto& ga = ai->ensure_grad();
                    for (std::size_t i = 0; i < n; ++i) {
                      ga[a_at(i)] += op == BinOp::kMul ? g[i] * bi->data[b_at(i)] : g[i];
                    }
                  }
                  if (bi->requires_grad) {
                    auto& gb = bi->ensure_grad();
                    for (std::size_t i = 0; i < n; ++i) {
                      Real v = g[i];
                      if (op == BinOp::kSub) v = -v;
                      if (op == BinOp::kMul) v *= ai->data[a_at(i)];
                      gb[b_at(i)] += v;
                    }
                  }
                });
}

// C[p, r] += A[p, q] * B[q, r]
void gemm_nn(const Real* __restrict A, const Real* __restrict B, Real* __restrict C, std::size_t p, std::size_t q,
             std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    Real* __restrict c = C + i * r;
    const Real* arow = A + i * q;
    for (std::size_t k = 0; k < q; ++k) {
      const Real av = arow[k];
      const Real* __restrict brow = B + k * r;
      for (std::size_t j = 0; j < r; ++j) c[j] += av * brow[j];
    }
  }
}

// dA[p, q] += dC[p, r] * B[q, r]^T, via an explicit transpose of B so the
// inner loop is an axpy rather than a serial reduction.
void gemm_nt(const Real* __restrict dC, const Real* __restrict B, Real* __restrict dA, std::size_t p, std::size_t q,
             std::size_t r) {
  thread_local std::vector<Real> bt;
  bt.resize(q * r);
  for (std::size_t k = 0; k < q; ++k) {
    for (std::size_t j = 0; j < r; ++j) bt[j * q + k] = B[k * r + j];
  }
  gemm_nn(dC, bt.data(), dA, p, r, q);
}

// dB[q, r] += A[p, q]^T * dC[p, r]
void gemm_tn(const Real* __restrict A, const Real* __restrict dC, Real* __restrict dB, std::size_t p, std::size_t q,
             std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    const Real* arow = A + i * q;
    const Real* __restrict g = dC + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const Real av = arow[k];
      Real* __restrict out = dB + k * r;
      for (std::size_t j = 0; j < r; ++j) out[j] += av * g[j];
    }
  }
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor make_tensor(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), Real(0), requires_grad); }

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<Real> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(Real value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  check_defined(*this, "shape");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const { return shape().at(axis); }

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<Real> Tensor::data() { return impl_->data; }
std::span<const Real> Tensor::data() const { return impl_->data; }

Real Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { impl_->requires_grad = flag; }
bool Tensor::has_grad() const { return impl_ && impl_->grad.size() == impl_->data.size(); }
std::span<Real> Tensor::grad() { return impl_->grad; }
std::span<const Real> Tensor::grad() const { return impl_->grad; }
void Tensor::zero_grad() {
  if (impl_) impl_->grad.assign(impl_->data.size(), Real(0));
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->requires_grad = impl_->requires_grad;
  return Tensor(std::move(impl));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  check_defined(loss, "backward");
  TensorImpl* root = loss.impl();
  if (root->consumed) throw std::logic_error("backward: graph already consumed by a previous backward call");
  if (root->data.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(root->shape));
  if (!root->requires_grad) throw std::logic_error("backward: loss does not depend on any parameter");

  // Iterative post-order DFS gives a topological order.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl* p = node->parents[next++].get();
      if (p->backward_fn && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
  for (TensorImpl* node : order) {
    node->backward_fn = nullptr;
    node->parents.clear();
    node->consumed = true;
  }
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kMul, "mul"); }

Tensor scale(const Tensor& x, Real factor) {
  check_defined(x, "scale");
  std::vector<Real> out(x.data().begin(), x.data().end());
  for (Real& v : out) v *= factor;
  auto xi = x.handle();
  return finish(x.shape(), std::move(out), {&x}, [xi, factor](TensorImpl& self) {
    auto& g = xi->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor relu(const Tensor& x) {
  check_defined(x, "relu");
  std::vector<Real> out(x.data().begin(), x.data().end());
  for (Real& v : out) v = v > 0 ? v : Real(0);
  auto xi = x.handle();
  return finish(x.shape(), std::move(out), {&x}, [xi](TensorImpl& self) {
    auto& g = xi->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xi->data[i] > 0) g[i] += self.grad[i];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(as) + " and " + shape_str(bs));
  }
  const std::size_t p = as[as.size() - 2];
  const std::size_t q = as.back();
  const std::size_t r = bs.back();
  if (bs[bs.size() - 2] != q) {
    throw ShapeError("matmul: inner dimensions differ for " + shape_str(as) + " and " + shape_str(bs));
  }
  const Shape a_batch(as.begin(), as.end() - 2);
  const Shape b_batch(bs.begin(), bs.end() - 2);
  Shape out_batch;
  try {
    out_batch = broadcast_shapes(a_batch, b_batch, "matmul");
  } catch (const ShapeError&) {
    throw ShapeError("matmul: batch dimensions of " + shape_str(as) + " and " + shape_str(bs) + " do not broadcast");
  }
  const std::size_t nbatch = shape_numel(out_batch);
  Shape out_shape = out_batch;
  out_shape.push_back(p);
  out_shape.push_back(r);

  std::vector<std::size_t> a_off, b_off;
  const bool shared_b = shape_numel(b_batch) == 1 && a_batch == out_batch;
  if (!shared_b) {
    const auto ao = broadcast_offsets(a_batch, out_batch);
    const auto bo = broadcast_offsets(b_batch, out_batch);
    a_off.resize(nbatch);
    b_off.resize(nbatch);
    for (std::size_t i = 0; i < nbatch; ++i) {
      a_off[i] = ao[i] * p * q;
      b_off[i] = bo[i] * q * r;
    }
  }

  std::vector<Real> out(nbatch * p * r, Real(0));
  const Real* A = a.impl()->data.data();
  const Real* B = b.impl()->data.data();
  if (shared_b) {
    gemm_nn(A, B, out.data(), nbatch * p, q, r);
  } else {
    for (std::size_t i = 0; i < nbatch; ++i) gemm_nn(A + a_off[i], B + b_off[i], out.data() + i * p * r, p, q, r);
  }

  auto ai = a.handle();
  auto bi = b.handle();
  return finish(std::move(out_shape), std::move(out), {&a, &b},
                [ai, bi, p, q, r, nbatch, shared_b, a_off = std::move(a_off), b_off = std::move(b_off)](TensorImpl& self) {
                  const Real* G = self.grad.data();
                  if (ai->requires_grad) {
                    Real* dA = ai->ensure_grad().data();
                    if (shared_b) {
                      gemm_nt(G, bi->data.data(), dA, nbatch * p, q, r);
                    } else {
                      for (std::size_t i = 0; i < nbatch; ++i)
                        gemm_nt(G + i * p * r, bi->data.data() + b_off[i], dA + a_off[i], p, q, r);
                    }
                  }
                  if (bi->requires_grad) {
                    Real* dB = bi->ensure_grad().data();
                    if (shared_b) {
                      gemm_tn(ai->data.data(), G, dB, nbatch * p, q, r);
                    } else {
                      for (std::size_t i = 0; i < nbatch; ++i)
                        gemm_tn(ai->data.data() + a_off[i], G + i * p * r, dB + b_off[i], p, q, r);
                    }
                  }
                });
}

namespace {

struct AxisLayout {
  std::size_t outer, n, inner;
};

AxisLayout axis_layout(const Shape& shape, int axis) {
  const std::size_t ax = normalize_axis(axis, shape.size());
  AxisLayout l{1, shape[ax], 1};
  for (std::size_t i = 0; i < ax; ++i) l.outer *= shape[i];
  for (std::size_t i = ax + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  check_defined(x, "softmax");
  const AxisLayout l = axis_layout(x.shape(), axis);
  const auto& xd = x.impl()->data;
  std::vector<Real> out(xd.size());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.n * l.inner + in;
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t j = 0; j < l.n; ++j) mx = std::max(mx, xd[base + j * l.inner]);
      Real total = 0;
      for (std::size_t j = 0; j < l.n; ++j) {
        const Real e = std::exp(xd[base + j * l.inner] - mx);
        out[base + j * l.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < l.n; ++j) out[base + j * l.inner] /= total;
    }
  }
  auto xi = x.handle();
  return finish(x.shape(), std::move(out), {&x}, [xi, l](TensorImpl& self) {
    auto& g = xi->ensure_grad();
    const auto& y = self.data;
    const auto& dy = self.grad;
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.n * l.inner + in;
        Real dot = 0;
        for (std::size_t j = 0; j < l.n; ++j) dot += dy[base + j * l.inner] * y[base + j * l.inner];
        for (std::size_t j = 0; j < l.n; ++j) {
          const std::size_t k = base + j * l.inner;
          g[k] += y[k] * (dy[k] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  check_defined(x, "log_softmax");
  const AxisLayout l = axis_layout(x.shape(), axis);
  const auto& xd = x.impl()->data;
  std::vector<Real> out(xd.size());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.n * l.inner + in;
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t j = 0; j < l.n; ++j) mx = std::max(mx, xd[base + j * l.inner]);
      Real total = 0;
      for (std::size_t j = 0; j < l.n; ++j) total += std::exp(xd[base + j * l.inner] - mx);
      const Real lse = mx + std::log(total);
      for (std::size_t j = 0; j < l.n; ++j) out[base + j * l.inner] = xd[base + j * l.inner] - lse;
    }
  }
  auto xi = x.handle();
  return finish(x.shape(), std::move(out), {&x}, [xi, l](TensorImpl& self) {
    auto& g = xi->ensure_grad();
    const auto& y = self.data;
    const auto& dy = self.grad;
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.n * l.inner + in;
        Real total = 0;
        for (std::size_t j = 0; j < l.n; ++j) total += dy[base + j * l.inner];
        for (std::size_t j = 0; j < l.n; ++j) {
          const std::size_t k = base + j * l.inner;
          g[k] += dy[k] - std::exp(y[k]) * total;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps) {
  check_defined(x, "layer_norm");
  if (!(eps > 0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(d) + " elements");
  }
  const std::size_t rows = x.numel() / d;
  const auto& xd = x.impl()->data;
  const auto& gd = gain.impl()->data;
  const auto& bd = bias.impl()->data;
  std::vector<Real> out(xd.size());
  std::vector<Real> xhat(xd.size());
  std::vector<Real> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = xd.data() + r * d;
    Real mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<Real>(d);
    Real var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<Real>(d);
    const Real inv = Real(1) / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const Real h = (row[j] - mu) * inv;
      xhat[r * d + j] = h;
      out[r * d + j] = gd[j] * h + bd[j];
    }
  }
  auto xi = x.handle();
  auto gi = gain.handle();
  auto bi = bias.handle();
  return finish(x.shape(), std::move(out), {&x, &gain, &bias},
                [xi, gi, bi, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorImpl& self) {
                  const auto& dy = self.grad;
                  if (gi->requires_grad || bi->requires_grad) {
                    auto& gg = gi->ensure_grad();
                    auto& gb = bi->ensure_grad();
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t j = 0; j < d; ++j) {
                        gg[j] += dy[r * d + j] * xhat[r * d + j];
                        gb[j] += dy[r * d + j];
                      }
                    }
                  }
                  if (xi->requires_grad) {
                    auto& gx = xi->ensure_grad();
                    const Real nd = static_cast<Real>(d);
                    for (std::size_t r = 0; r < rows; ++r) {
                      Real s1 = 0, s2 = 0;
                      for (std::size_t j = 0; j < d; ++j) {
                        const Real dh = dy[r * d + j] * gi->data[j];
                        s1 += dh;
                        s2 += dh * xhat[r * d + j];
                      }
                      for (std::size_t j = 0; j < d; ++j) {
                        const Real dh = dy[r * d + j] * gi->data[j];
                        gx[r * d + j] += inv_std[r] * (dh - s1 / nd - xhat[r * d + j] * s2 / nd);
                      }
                    }
                  }
                });
}

Tensor dropout(const Tensor& x, Real rate, Rng& rng, bool train_mode) {
  check_defined(x, "dropout");
  if (!(rate >= 0 && rate < 1)) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (!train_mode || rate == 0) return x;
  const Real keep_scale = Real(1) / (Real(1) - rate);
  std::vector<Real> mask(x.numel());
  for (Real& m : mask) m = rng.uniform() < rate ? Real(0) : keep_scale;
  std::vector<Real> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  auto xi = x.handle();
  return finish(x.shape(), std::move(out), {&x}, [xi, mask = std::move(mask)](TensorImpl& self) {
    auto& g = xi->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

Tensor embedding(const Tensor& table, std::span<const int> ids, const Shape& ids_shape) {
  check_defined(table, "embedding");
  if (table.rank() != 2) throw ShapeError("embedding: table must be [V, d], got " + shape_str(table.shape()));
  if (shape_numel(ids_shape) != ids.size()) throw ShapeError("embedding: ids do not match shape " + shape_str(ids_shape));
  const std::size_t V = table.dim(0);
  const std::size_t d = table.dim(1);
  std::vector<Real> out(ids.size() * d);
  const auto& td = table.impl()->data;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= V) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " + std::to_string(V));
    }
    std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  Shape shape = ids_shape;
  shape.push_back(d);
  auto ti = table.handle();
  std::vector<int> idv(ids.begin(), ids.end());
  return finish(std::move(shape), std::move(out), {&table}, [ti, d, idv = std::move(idv)](TensorImpl& self) {
    auto& g = ti->ensure_grad();
    for (std::size_t i = 0; i < idv.size(); ++i) {
      Real* dst = g.data() + static_cast<std::size_t>(idv[i]) * d;
      const Real* src = self.grad.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  check_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<Real> out(x.data().begin(), x.data().end());
  auto xi = x.handle();
  return finish(std::move(shape), std::move(out), {&x}, [xi](TensorImpl& self) {
    auto& g = xi->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x, int axis1, int axis2) {
  check_defined(x, "transpose");
  const Shape& in_shape = x.shape();
  const std::size_t a1 = normalize_axis(axis1, in_shape.size());
  const std::size_t a2 = normalize_axis(axis2, in_shape.size());
  Shape out_shape = in_shape;
  std::swap(out_shape[a1], out_shape[a2]);
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_stride(rank);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > 0;) {
    in_stride[i] = s;
    s *= in_shape[i];
  }
  std::vector<std::size_t> stride = in_stride;
  std::swap(stride[a1], stride[a2]);
  // src[i] is the input offset of output element i.
  const std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    src[flat] = off;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      off += stride[ax];
      if (idx[ax] < out_shape[ax]) break;
      off -= stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  std::vector<Real> out(n);
  const auto& xd = x.impl()->data;
  for (std::size_t i = 0; i < n; ++i) out[i] = xd[src[i]];
  auto xi = x.handle();
  return finish(std::move(out_shape), std::move(out), {&x}, [xi, src = std::move(src)](TensorImpl& self) {
    auto& g = xi->ensure_grad();
    for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  check_defined(x, "sum");
  Real total = 0;
  for (Real v : x.data()) total += v;
  auto xi = x.handle();
  return finish({1}, {total}, {&x}, [xi](TensorImpl& self) {
    auto& g = xi->ensure_grad();
    for (Real& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), Real(1) / static_cast<Real>(x.numel())); }

Tensor cross_entropy_ls(const Tensor& logits, std::span<const int> targets, Real smoothing, int ignore_id) {
  check_defined(logits, "cross_entropy_ls");
  if (!(smoothing >= 0 && smoothing < 1)) throw std::invalid_argument("cross_entropy_ls: smoothing must be in [0, 1)");
  if (logits.rank() < 1) throw ShapeError("cross_entropy_ls: logits must have a class axis");
  const std::size_t V = logits.shape().back();
  const std::size_t N = logits.numel() / V;
  if (targets.size() != N) {
    throw ShapeError("cross_entropy_ls: " + std::to_string(targets.size()) + " targets for " + std::to_string(N) + " rows");
  }
  if (smoothing > 0 && V < 2) throw std::invalid_argument("cross_entropy_ls: smoothing needs at least two classes");
  const Real off = V > 1 ? smoothing / static_cast<Real>(V - 1) : Real(0);
  const Real on = Real(1) - smoothing;

  const auto& ld = logits.impl()->data;
  std::vector<Real> logp(ld.size());
  std::size_t count = 0;
  Real total = 0;
  for (std::size_t r = 0; r < N; ++r) {
    const int t = targets[r];
    if (t == ignore_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= V) {
      throw std::out_of_range("cross_entropy_ls: target id " + std::to_string(t) + " outside vocabulary of " + std::to_string(V));
    }
    const Real* row = ld.data() + r * V;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t v = 0; v < V; ++v) mx = std::max(mx, row[v]);
    Real z = 0;
    for (std::size_t v = 0; v < V; ++v) z += std::exp(row[v] - mx);
    const Real lse = mx + std::log(z);
    Real row_loss = 0;
    for (std::size_t v = 0; v < V; ++v) {
      const Real lp = row[v] - lse;
      logp[r * V + v] = lp;
      row_loss -= (static_cast<int>(v) == t ? on : off) * lp;
    }
    total += row_loss;
    ++count;
  }
  const Real denom = count ? static_cast<Real>(count) : Real(1);
  auto li = logits.handle();
  std::vector<int> tv(targets.begin(), targets.end());
  return finish({1}, {total / denom}, {&logits},
                [li, V, N, on, off, denom, ignore_id, tv = std::move(tv), logp = std::move(logp)](TensorImpl& self) {
                  auto& g = li->ensure_grad();
                  const Real scale_g = self.grad[0] / denom;
                  for (std::size_t r = 0; r < N; ++r) {
                    if (tv[r] == ignore_id) continue;
                    for (std::size_t v = 0; v < V; ++v) {
                      const Real q = static_cast<int>(v) == tv[r] ? on : off;
                      g[r * V + v] += scale_g * (std::exp(logp[r * V + v]) - q);
                    }
                  }
                });
}

}  // namespace docmt
