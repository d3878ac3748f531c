#pragma once

// Minimal tape-free reverse-mode autodiff over dense tensors.
//
// Every op result is a Node that remembers its inputs and a closure that
// pushes its output gradient into them. Node ids grow monotonically, so
// sorting reachable nodes by descending id is a valid reverse topological
// order. Inputs and closures are only recorded when some input requires a
// gradient and recording is enabled (see NoGradGuard).

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "tensor.hpp"

namespace tdpaint::ad {

namespace detail {
inline std::atomic<std::uint64_t> next_node_id{0};
inline thread_local int no_grad_depth = 0;
}  // namespace detail

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class T>
struct Node {
  BasicTensor<T> value;
  BasicTensor<T> grad;  // allocated lazily, only when requires_grad
  bool requires_grad = false;
  std::uint64_t id = detail::next_node_id.fetch_add(1, std::memory_order_relaxed);
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  BasicTensor<T>& grad_buffer() {
    if (grad.data.empty()) grad = BasicTensor<T>(value.shape);
    return grad;
  }
  bool has_grad() const { return !grad.data.empty(); }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var leaf(BasicTensor<T> value, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }
  static Var constant(BasicTensor<T> value) { return leaf(std::move(value), false); }

  const BasicTensor<T>& value() const { return node_->value; }
  BasicTensor<T>& mutable_value() { return node_->value; }
  const BasicTensor<T>& grad() const { return node_->grad; }
  BasicTensor<T>& mutable_grad() { return node_->grad_buffer(); }
  bool has_grad() const { return node_->has_grad(); }
  bool requires_grad() const { return node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape; }
  std::size_t numel() const { return node_->value.numel(); }
  T item() const {
    if (numel() != 1) throw std::invalid_argument("item() on non-scalar " + shape_string(shape()));
    return node_->value[0];
  }

  void zero_grad() {
    if (node_->has_grad()) std::fill(node_->grad.data.begin(), node_->grad.data.end(), T(0));
  }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds a result node. `backward` receives the result node; its inputs are
// in node.inputs in the same order as `inputs` here.
template <class T, class F>
Var<T> make_result(BasicTensor<T> value, std::initializer_list<Var<T>> inputs, F&& backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any && grad_enabled()) {
    n->requires_grad = true;
    for (const auto& in : inputs) n->inputs.push_back(in.node_ptr());
    n->backward_fn = std::forward<F>(backward);
  }
  return Var<T>(std::move(n));
}

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires a
/// gradient. Each node is visited once.
template <class T>
void backward(const Var<T>& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward() requires a scalar loss, got " + shape_string(loss.shape()));
  if (!loss.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{loss.node()};
  seen.insert(loss.node());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node<T>* a, const Node<T>* b) { return a->id > b->id; });

  loss.node()->grad_buffer()[0] += T(1);
  for (Node<T>* n : order) {
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------- elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "add");
  BasicTensor<T> out(a.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "mul");
  BasicTensor<T> out(a.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>& x = *self.inputs[0];
    Node<T>& y = *self.inputs[1];
    if (x.requires_grad) {
      auto& g = x.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * y.value[i];
    }
    if (y.requires_grad) {
      auto& g = y.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * x.value[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * s;
  return make_result<T>(std::move(out), {a}, [s](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * s;
  });
}

template <class T>
T sigmoid_scalar(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = sigmoid_scalar(a.value()[i]);
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const T s = self.value[i];
      g[i] += self.grad[i] * s * (T(1) - s);
    }
  });
}

template <class T>
Var<T> silu(const Var<T>& a) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * sigmoid_scalar(a.value()[i]);
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    Node<T>& x = *self.inputs[0];
    auto& g = x.grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const T s = sigmoid_scalar(x.value[i]);
      g[i] += self.grad[i] * s * (T(1) + x.value[i] * (T(1) - s));
    }
  });
}

// ---------------------------------------------------------------- losses

template <class T>
Var<T> mse_loss(const Var<T>& pred, const Var<T>& target) {
  require_same_shape(pred.value(), target.value(), "mse_loss");
  const std::size_t n = pred.numel();
  if (n == 0) throw std::invalid_argument("mse_loss on empty tensor");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pred.value()[i]) - target.value()[i];
    acc += d * d;
  }
  BasicTensor<T> out(Shape{1}, static_cast<T>(acc / static_cast<double>(n)));
  return make_result<T>(std::move(out), {pred, target}, [n](Node<T>& self) {
    Node<T>& p = *self.inputs[0];
    Node<T>& t = *self.inputs[1];
    const T k = T(2) * self.grad[0] / static_cast<T>(n);
    if (p.requires_grad) {
      auto& g = p.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) g[i] += k * (p.value[i] - t.value[i]);
    }
    if (t.requires_grad) {
      auto& g = t.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) g[i] -= k * (p.value[i] - t.value[i]);
    }
  });
}

/// Mean squared error over the positions where `weight` is nonzero. `weight`
/// has the spatial shape h x w and is broadcast over channels of c x h x w.
template <class T>
Var<T> masked_mse_loss(const Var<T>& pred, const Var<T>& target, const std::vector<std::uint8_t>& select) {
  require_same_shape(pred.value(), target.value(), "masked_mse_loss");
  if (pred.value().rank() != 3) throw std::invalid_argument("masked_mse_loss expects c x h x w");
  const int c = pred.value().dim(0);
  const std::size_t plane = static_cast<std::size_t>(pred.value().dim(1)) * pred.value().dim(2);
  if (select.size() != plane) throw std::invalid_argument("masked_mse_loss: selection size mismatch");
  std::size_t count = 0;
  for (auto s : select) count += s ? 1 : 0;
  count *= static_cast<std::size_t>(c);
  if (count == 0) throw std::invalid_argument("masked_mse_loss: empty selection");
  double acc = 0.0;
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < plane; ++p) {
      if (!select[p]) continue;
      const std::size_t i = ch * plane + p;
      const double d = static_cast<double>(pred.value()[i]) - target.value()[i];
      acc += d * d;
    }
  BasicTensor<T> out(Shape{1}, static_cast<T>(acc / static_cast<double>(count)));
  return make_result<T>(std::move(out), {pred, target}, [select, c, plane, count](Node<T>& self) {
    Node<T>& p = *self.inputs[0];
    Node<T>& t = *self.inputs[1];
    const T k = T(2) * self.grad[0] / static_cast<T>(count);
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t q = 0; q < plane; ++q) {
        if (!select[q]) continue;
        const std::size_t i = ch * plane + q;
        const T d = k * (p.value[i] - t.value[i]);
        if (p.requires_grad) p.grad_buffer()[i] += d;
        if (t.requires_grad) t.grad_buffer()[i] -= d;
      }
  });
}

// ---------------------------------------------------------------- dense layers

/// y = W x + b applied to each row of x. x is [n] or [rows x n]; W is [m x n].
/// Rows are computed independently with the same arithmetic, so a row's
/// result does not depend on how many rows are passed.
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (wv.rank() != 2) throw std::invalid_argument("linear: weight must be m x n, got " + shape_string(wv.shape));
  const int m = wv.dim(0);
  const int n = wv.dim(1);
  if (b.value().shape != Shape{m})
    throw std::invalid_argument("linear: bias shape " + shape_string(b.value().shape) + " expected [" +
                                std::to_string(m) + "]");
  int rows = 0;
  Shape out_shape;
  if (xv.rank() == 1 && xv.dim(0) == n) {
    rows = 1;
    out_shape = {m};
  } else if (xv.rank() == 2 && xv.dim(1) == n) {
    rows = xv.dim(0);
    out_shape = {rows, m};
  } else {
    throw std::invalid_argument("linear: input " + shape_string(xv.shape) + " incompatible with weight " +
                                shape_string(wv.shape));
  }

  // Transposed weight so the inner loop runs over contiguous outputs.
  std::vector<T> wt(static_cast<std::size_t>(m) * n);
  for (int o = 0; o < m; ++o)
    for (int i = 0; i < n; ++i) wt[static_cast<std::size_t>(i) * m + o] = wv.data[static_cast<std::size_t>(o) * n + i];

  BasicTensor<T> out(out_shape);
  for (int r = 0; r < rows; ++r) {
    T* __restrict acc = out.ptr() + static_cast<std::size_t>(r) * m;
    const T* xr = xv.ptr() + static_cast<std::size_t>(r) * n;
    for (int o = 0; o < m; ++o) acc[o] = b.value()[o];
    for (int i = 0; i < n; ++i) {
      const T xi = xr[i];
      const T* __restrict wrow = wt.data() + static_cast<std::size_t>(i) * m;
      for (int o = 0; o < m; ++o) acc[o] += wrow[o] * xi;
    }
  }
  return make_result<T>(std::move(out), {x, w, b}, [rows, m, n](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    Node<T>& wn = *self.inputs[1];
    Node<T>& bn = *self.inputs[2];
    const T* g = self.grad.ptr();
    if (xn.requires_grad) {
      T* gx = xn.grad_buffer().ptr();
      for (int r = 0; r < rows; ++r)
        for (int o = 0; o < m; ++o) {
          const T go = g[static_cast<std::size_t>(r) * m + o];
          const T* wrow = wn.value.ptr() + static_cast<std::size_t>(o) * n;
          T* gxr = gx + static_cast<std::size_t>(r) * n;
          for (int i = 0; i < n; ++i) gxr[i] += go * wrow[i];
        }
    }
    if (wn.requires_grad) {
      T* gw = wn.grad_buffer().ptr();
      for (int r = 0; r < rows; ++r)
        for (int o = 0; o < m; ++o) {
          const T go = g[static_cast<std::size_t>(r) * m + o];
          const T* xr = xn.value.ptr() + static_cast<std::size_t>(r) * n;
          T* gwr = gw + static_cast<std::size_t>(o) * n;
          for (int i = 0; i < n; ++i) gwr[i] += go * xr[i];
        }
    }
    if (bn.requires_grad) {
      T* gb = bn.grad_buffer().ptr();
      for (int r = 0; r < rows; ++r)
        for (int o = 0; o < m; ++o) gb[o] += g[static_cast<std::size_t>(r) * m + o];
    }
  });
}

// ---------------------------------------------------------------- convolution

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Unfolds a zero-padded c x hp x wp buffer into (c*k*k) x (ho*wo) columns.
template <class T>
RowMatrix<T> im2col(const std::vector<T>& padded, int c, int hp, int wp, int k, int ho, int wo) {
  RowMatrix<T> cols(static_cast<Eigen::Index>(c) * k * k, static_cast<Eigen::Index>(ho) * wo);
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* dst = cols.data() + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * ho * wo;
        for (int y = 0; y < ho; ++y)
          std::copy_n(padded.data() + (static_cast<std::size_t>(ci) * hp + y + ky) * wp + kx, wo,
                      dst + static_cast<std::size_t>(y) * wo);
      }
  return cols;
}

}  // namespace detail

/// Stride-1 cross-correlation. input c_in x h x w, weight c_out x c_in x k x k,
/// bias c_out. Output spatial size is h + 2p - k + 1. Computed as an
/// im2col matrix product.
template <class T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, int padding) {
  using Mat = detail::RowMatrix<T>;
  using ConstMap = Eigen::Map<const Mat>;
  using MutMap = Eigen::Map<Mat>;
  const auto& xv = input.value();
  const auto& wv = weight.value();
  if (xv.rank() != 3) throw std::invalid_argument("conv2d: input must be c x h x w, got " + shape_string(xv.shape));
  if (wv.rank() != 4 || wv.dim(2) != wv.dim(3))
    throw std::invalid_argument("conv2d: weight must be c_out x c_in x k x k, got " + shape_string(wv.shape));
  const int cin = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  const int cout = wv.dim(0), k = wv.dim(2);
  if (wv.dim(1) != cin)
    throw std::invalid_argument("conv2d: input channels " + std::to_string(cin) + " do not match weight " +
                                shape_string(wv.shape));
  if (bias.value().shape != Shape{cout})
    throw std::invalid_argument("conv2d: bias shape " + shape_string(bias.value().shape));
  if (k % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd, got " + std::to_string(k));
  if (padding < 0) throw std::invalid_argument("conv2d: negative padding");
  const int hp = h + 2 * padding, wp = w + 2 * padding;
  const int ho = hp - k + 1, wo = wp - k + 1;
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");
  const Eigen::Index rows_k = static_cast<Eigen::Index>(cin) * k * k;
  const Eigen::Index npix = static_cast<Eigen::Index>(ho) * wo;

  std::vector<T> padded(static_cast<std::size_t>(cin) * hp * wp, T(0));
  for (int c = 0; c < cin; ++c)
    for (int y = 0; y < h; ++y)
      std::copy_n(xv.ptr() + (static_cast<std::size_t>(c) * h + y) * w, w,
                  padded.data() + (static_cast<std::size_t>(c) * hp + y + padding) * wp + padding);

  BasicTensor<T> out(Shape{cout, ho, wo});
  {
    const Mat cols = detail::im2col(padded, cin, hp, wp, k, ho, wo);
    MutMap o(out.ptr(), cout, npix);
    o.noalias() = ConstMap(wv.ptr(), cout, rows_k) * cols;
    for (int co = 0; co < cout; ++co) o.row(co).array() += bias.value()[co];
  }

  return make_result<T>(
      std::move(out), {input, weight, bias},
      [padded = std::move(padded), cin, h, w, cout, k, padding, hp, wp, ho, wo, rows_k, npix](Node<T>& self) {
        Node<T>& xn = *self.inputs[0];
        Node<T>& wn = *self.inputs[1];
        Node<T>& bn = *self.inputs[2];
        ConstMap g(self.grad.ptr(), cout, npix);
        if (bn.requires_grad) {
          auto& gb = bn.grad_buffer();
          for (int co = 0; co < cout; ++co) {
            T acc = T(0);
            for (Eigen::Index i = 0; i < npix; ++i) acc += g(co, i);
            gb[co] += acc;
          }
        }
        if (wn.requires_grad) {
          const Mat cols = detail::im2col(padded, cin, hp, wp, k, ho, wo);
          MutMap gw(wn.grad_buffer().ptr(), cout, rows_k);
          gw.noalias() += g * cols.transpose();
        }
        if (xn.requires_grad) {
          const Mat gcols = ConstMap(wn.value.ptr(), cout, rows_k).transpose() * g;
          auto& gx = xn.grad_buffer();
          for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const T* src = gcols.data() + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * ho * wo;
                for (int y = 0; y < ho; ++y) {
                  const int iy = y + ky - padding;
                  if (iy < 0 || iy >= h) continue;
                  T* dst = gx.ptr() + (static_cast<std::size_t>(ci) * h + iy) * w;
                  const T* srow = src + static_cast<std::size_t>(y) * wo;
                  for (int x = 0; x < wo; ++x) {
                    const int ix = x + kx - padding;
                    if (ix >= 0 && ix < w) dst[ix] += srow[x];
                  }
                }
              }
        }
      });
}

// ---------------------------------------------------------------- normalization

/// Group normalization without affine parameters: each group of c/groups
/// channels is shifted to mean 0 and scaled by 1/sqrt(var + eps), with the
/// population variance.
template <class T>
Var<T> group_norm(const Var<T>& input, int groups, T eps) {
  const auto& xv = input.value();
  if (xv.rank() != 3) throw std::invalid_argument("group_norm: input must be c x h x w");
  const int c = xv.dim(0);
  if (groups <= 0 || c % groups != 0)
    throw std::invalid_argument("group_norm: " + std::to_string(c) + " channels not divisible by " +
                                std::to_string(groups) + " groups");
  const std::size_t group_size = static_cast<std::size_t>(c / groups) * xv.dim(1) * xv.dim(2);
  BasicTensor<T> out(xv.shape);
  std::vector<T> rstd(static_cast<std::size_t>(groups));
  for (int g = 0; g < groups; ++g) {
    const T* src = xv.ptr() + g * group_size;
    double sum = 0.0;
    for (std::size_t i = 0; i < group_size; ++i) sum += src[i];
    const double mean = sum / static_cast<double>(group_size);
    double var = 0.0;
    for (std::size_t i = 0; i < group_size; ++i) {
      const double d = src[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(group_size);
    const T r = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    const T m = static_cast<T>(mean);
    rstd[g] = r;
    T* dst = out.ptr() + g * group_size;
    for (std::size_t i = 0; i < group_size; ++i) dst[i] = (src[i] - m) * r;
  }
  return make_result<T>(std::move(out), {input}, [rstd = std::move(rstd), groups, group_size](Node<T>& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (int g = 0; g < groups; ++g) {
      const T* go = self.grad.ptr() + g * group_size;
      const T* xh = self.value.ptr() + g * group_size;
      double mean_g = 0.0, mean_gx = 0.0;
      for (std::size_t i = 0; i < group_size; ++i) {
        mean_g += go[i];
        mean_gx += static_cast<double>(go[i]) * xh[i];
      }
      mean_g /= static_cast<double>(group_size);
      mean_gx /= static_cast<double>(group_size);
      T* dst = gx.ptr() + g * group_size;
      const T mg = static_cast<T>(mean_g), mgx = static_cast<T>(mean_gx);
      for (std::size_t i = 0; i < group_size; ++i) dst[i] += rstd[g] * (go[i] - mg - xh[i] * mgx);
    }
  });
}

/// Per-pixel affine modulation:
///   out[c, p] = x[c, p] * (1 + scale[row[p], c]) + shift[row[p], c]
/// x is c x h x w; scale and shift are rows x c (or a single c-vector).
/// `row` maps each pixel to a conditioning row; pass an empty vector to mean
/// "row p for pixel p" when rows == h*w, or "row 0" when rows == 1.
template <class T>
Var<T> modulate(const Var<T>& x, const Var<T>& scale_rows, const Var<T>& shift_rows, std::vector<int> row = {}) {
  const auto& xv = x.value();
  if (xv.rank() != 3) throw std::invalid_argument("modulate: x must be c x h x w");
  const int c = xv.dim(0);
  const int plane = xv.dim(1) * xv.dim(2);
  auto rows_of = [&](const BasicTensor<T>& t, const char* name) {
    if (t.rank() == 1 && t.dim(0) == c) return 1;
    if (t.rank() == 2 && t.dim(1) == c) return t.dim(0);
    throw std::invalid_argument(std::string("modulate: ") + name + " shape " + shape_string(t.shape) +
                                " incompatible with features " + shape_string(xv.shape));
  };
  const int rows = rows_of(scale_rows.value(), "scale");
  if (rows_of(shift_rows.value(), "shift") != rows) throw std::invalid_argument("modulate: scale and shift row counts differ");
  if (row.empty()) {
    if (rows == plane) {
      row.resize(static_cast<std::size_t>(plane));
      for (int p = 0; p < plane; ++p) row[p] = p;
    } else if (rows == 1) {
      row.assign(static_cast<std::size_t>(plane), 0);
    } else {
      throw std::invalid_argument("modulate: " + std::to_string(rows) + " conditioning rows for " +
                                  std::to_string(plane) + " pixels");
    }
  }
  if (row.size() != static_cast<std::size_t>(plane)) throw std::invalid_argument("modulate: row index size mismatch");
  for (int r : row)
    if (r < 0 || r >= rows) throw std::invalid_argument("modulate: row index out of range");

  BasicTensor<T> out(xv.shape);
  const T* s = scale_rows.value().ptr();
  const T* b = shift_rows.value().ptr();
  for (int ch = 0; ch < c; ++ch) {
    const T* src = xv.ptr() + static_cast<std::size_t>(ch) * plane;
    T* dst = out.ptr() + static_cast<std::size_t>(ch) * plane;
    for (int p = 0; p < plane; ++p) {
      const std::size_t r = static_cast<std::size_t>(row[p]) * c + ch;
      dst[p] = src[p] * (T(1) + s[r]) + b[r];
    }
  }
  return make_result<T>(std::move(out), {x, scale_rows, shift_rows}, [c, plane, row = std::move(row)](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    Node<T>& sn = *self.inputs[1];
    Node<T>& bn = *self.inputs[2];
    T* gx = xn.requires_grad ? xn.grad_buffer().ptr() : nullptr;
    T* gs = sn.requires_grad ? sn.grad_buffer().ptr() : nullptr;
    T* gb = bn.requires_grad ? bn.grad_buffer().ptr() : nullptr;
    for (int ch = 0; ch < c; ++ch) {
      const T* go = self.grad.ptr() + static_cast<std::size_t>(ch) * plane;
      const T* xs = xn.value.ptr() + static_cast<std::size_t>(ch) * plane;
      for (int p = 0; p < plane; ++p) {
        const std::size_t r = static_cast<std::size_t>(row[p]) * c + ch;
        if (gx) gx[static_cast<std::size_t>(ch) * plane + p] += go[p] * (T(1) + sn.value[r]);
        if (gs) gs[r] += go[p] * xs[p];
        if (gb) gb[r] += go[p];
      }
    }
  });
}

// ---------------------------------------------------------------- resampling

/// 2x2 average pooling; h and w must be even.
template <class T>
Var<T> avg_pool2(const Var<T>& x) {
  const auto& xv = x.value();
  if (xv.rank() != 3 || xv.dim(1) % 2 || xv.dim(2) % 2)
    throw std::invalid_argument("avg_pool2: need c x h x w with even h, w; got " + shape_string(xv.shape));
  const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2), ho = h / 2, wo = w / 2;
  BasicTensor<T> out(Shape{c, ho, wo});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx)
        out.at(ch, y, xx) = T(0.25) * (xv.at(ch, 2 * y, 2 * xx) + xv.at(ch, 2 * y, 2 * xx + 1) +
                                       xv.at(ch, 2 * y + 1, 2 * xx) + xv.at(ch, 2 * y + 1, 2 * xx + 1));
  return make_result<T>(std::move(out), {x}, [c, ho, wo](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx) {
          const T v = T(0.25) * self.grad.at(ch, y, xx);
          g.at(ch, 2 * y, 2 * xx) += v;
          g.at(ch, 2 * y, 2 * xx + 1) += v;
          g.at(ch, 2 * y + 1, 2 * xx) += v;
          g.at(ch, 2 * y + 1, 2 * xx + 1) += v;
        }
  });
}

/// Nearest-neighbour 2x upsampling.
template <class T>
Var<T> upsample2(const Var<T>& x) {
  const auto& xv = x.value();
  if (xv.rank() != 3) throw std::invalid_argument("upsample2: input must be c x h x w");
  const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  BasicTensor<T> out(Shape{c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx) out.at(ch, y, xx) = xv.at(ch, y / 2, xx / 2);
  return make_result<T>(std::move(out), {x}, [c, h, w](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) g.at(ch, y / 2, xx / 2) += self.grad.at(ch, y, xx);
  });
}

/// Channel concatenation of two c_i x h x w tensors.
template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(1) != bv.dim(1) || av.dim(2) != bv.dim(2))
    throw std::invalid_argument("concat_channels: incompatible " + shape_string(av.shape) + " and " +
                                shape_string(bv.shape));
  BasicTensor<T> out(Shape{av.dim(0) + bv.dim(0), av.dim(1), av.dim(2)});
  std::copy(av.data.begin(), av.data.end(), out.data.begin());
  std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(av.numel()));
  const std::size_t na = av.numel();
  return make_result<T>(std::move(out), {a, b}, [na](Node<T>& self) {
    Node<T>& an = *self.inputs[0];
    Node<T>& bn = *self.inputs[1];
    if (an.requires_grad) {
      auto& g = an.grad_buffer();
      for (std::size_t i = 0; i < na; ++i) g[i] += self.grad[i];
    }
    if (bn.requires_grad) {
      auto& g = bn.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[na + i];
    }
  });
}

}  // namespace tdpaint::ad
