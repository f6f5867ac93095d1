// vkl/autodiff.hpp

// Copyright 2026  The vkl Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef VKL_AUTODIFF_HPP
#define VKL_AUTODIFF_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vkl/tensor.hpp"

namespace vkl::ad {

// log inputs are clamped at this value; KL terms touch near-zero
// probabilities.
inline constexpr double kLogEps = 1e-12;

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of a reverse-mode computation graph. Leaves hold parameters or
/// inputs; interior nodes remember their parents and how to push gradients
/// into them. A graph is confined to one thread; Tensors are freely copyable.
struct Node {
  Tensor value;
  Tensor grad;  // allocated by backward(); valid while grad_live
  bool needs_grad = false;
  bool grad_live = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> pull;  // accumulates this->grad into parents
};

inline NodePtr constant(Tensor v) {
  if (!v.all_finite())
    throw std::invalid_argument("ad::constant: non-finite value");
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  return n;
}

/// A differentiable leaf (parameter or probed input).
inline NodePtr leaf(Tensor v) {
  if (!v.all_finite()) throw std::invalid_argument("ad::leaf: non-finite value");
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->needs_grad = true;
  return n;
}

namespace detail {

inline NodePtr make_op(Tensor value, std::vector<NodePtr> parents,
                       std::function<void(Node&)> pull, const char* op_name) {
  if (!value.all_finite())
    throw std::runtime_error(std::string("ad::") + op_name +
                             ": non-finite result");
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const NodePtr& p : n->parents)
    if (p->needs_grad) n->needs_grad = true;
  if (n->needs_grad) n->pull = std::move(pull);
  return n;
}

inline void accumulate(Node& target, const Tensor& g) {
  for (std::size_t k = 0; k < g.size(); ++k) target.grad[k] += g[k];
}

// Broadcast pattern of b against a 2-D tensor a: equal shape, a 1xC row
// applied to every row, or an Lx1 column applied to every column.
enum class Bcast { kSame, kRow, kCol };

inline Bcast bcast_of(const Tensor& a, const Tensor& b, const char* op) {
  if (a.same_shape(b)) return Bcast::kSame;
  if (a.rank() == 2 && b.rank() == 2) {
    if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::kRow;
    if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::kCol;
  }
  throw std::invalid_argument(std::string("ad::") + op + ": shape mismatch " +
                              a.shape_str() + " vs " + b.shape_str());
}

// Value of b at the flat position k of a under the given broadcast.
inline double bcast_at(const Tensor& a, const Tensor& b, Bcast bc,
                       std::size_t k) {
  switch (bc) {
    case Bcast::kSame:
      return b[k];
    case Bcast::kRow:
      return b[k % a.cols()];
    case Bcast::kCol:
      return b[k / a.cols()];
  }
  return 0.0;  // unreachable
}

// Accumulates an a-shaped gradient into the (possibly broadcast) operand b.
inline void bcast_accumulate(Node& b, const Tensor& a_shaped, Bcast bc,
                             std::size_t a_cols) {
  if (bc == Bcast::kSame) {
    accumulate(b, a_shaped);
    return;
  }
  if (bc == Bcast::kRow) {
    for (std::size_t k = 0; k < a_shaped.size(); ++k)
      b.grad[k % a_cols] += a_shaped[k];
  } else {
    for (std::size_t k = 0; k < a_shaped.size(); ++k)
      b.grad[k / a_cols] += a_shaped[k];
  }
}

}  // namespace detail

inline NodePtr add(const NodePtr& a, const NodePtr& b) {
  auto bc = detail::bcast_of(a->value, b->value, "add");
  Tensor out = a->value;
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] += detail::bcast_at(a->value, b->value, bc, k);
  return detail::make_op(
      std::move(out), {a, b},
      [bc](Node& self) {
        if (self.parents[0]->needs_grad)
          detail::accumulate(*self.parents[0], self.grad);
        if (self.parents[1]->needs_grad)
          detail::bcast_accumulate(*self.parents[1], self.grad, bc,
                                   self.value.rank() == 2 ? self.value.cols()
                                                          : 1);
      },
      "add");
}

inline NodePtr sub(const NodePtr& a, const NodePtr& b) {
  auto bc = detail::bcast_of(a->value, b->value, "sub");
  Tensor out = a->value;
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] -= detail::bcast_at(a->value, b->value, bc, k);
  return detail::make_op(
      std::move(out), {a, b},
      [bc](Node& self) {
        if (self.parents[0]->needs_grad)
          detail::accumulate(*self.parents[0], self.grad);
        if (self.parents[1]->needs_grad) {
          Tensor neg = self.grad;
          for (std::size_t k = 0; k < neg.size(); ++k) neg[k] = -neg[k];
          detail::bcast_accumulate(*self.parents[1], neg, bc,
                                   self.value.rank() == 2 ? self.value.cols()
                                                          : 1);
        }
      },
      "sub");
}

/// Elementwise product; b may be a broadcast row or column vector.
inline NodePtr mul(const NodePtr& a, const NodePtr& b) {
  auto bc = detail::bcast_of(a->value, b->value, "mul");
  Tensor out = a->value;
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] *= detail::bcast_at(a->value, b->value, bc, k);
  return detail::make_op(
      std::move(out), {a, b},
      [bc](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        std::size_t cols = self.value.rank() == 2 ? self.value.cols() : 1;
        if (self.parents[0]->needs_grad) {
          Tensor g = self.grad;
          for (std::size_t k = 0; k < g.size(); ++k)
            g[k] *= detail::bcast_at(av, bv, bc, k);
          detail::accumulate(*self.parents[0], g);
        }
        if (self.parents[1]->needs_grad) {
          Tensor g = self.grad;
          for (std::size_t k = 0; k < g.size(); ++k) g[k] *= av[k];
          detail::bcast_accumulate(*self.parents[1], g, bc, cols);
        }
      },
      "mul");
}

inline NodePtr scale(const NodePtr& a, double k) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= k;
  return detail::make_op(
      std::move(out), {a},
      [k](Node& self) {
        if (!self.parents[0]->needs_grad) return;
        Tensor g = self.grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= k;
        detail::accumulate(*self.parents[0], g);
      },
      "scale");
}

inline NodePtr matmul(const NodePtr& a, const NodePtr& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows())
    throw std::invalid_argument("ad::matmul: shape mismatch " +
                                av.shape_str() + " vs " + bv.shape_str());
  std::size_t n = av.rows(), m = av.cols(), p = bv.cols();
  Tensor out({n, p});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < m; ++k) {
      double aik = av(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < p; ++j) out(i, j) += aik * bv(k, j);
    }
  return detail::make_op(
      std::move(out), {a, b},
      [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        const Tensor& g = self.grad;
        std::size_t n = av.rows(), m = av.cols(), p = bv.cols();
        if (self.parents[0]->needs_grad) {  // dA = G * B^T
          Tensor& da = self.parents[0]->grad;
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < p; ++j) {
              double gij = g(i, j);
              if (gij == 0.0) continue;
              for (std::size_t k = 0; k < m; ++k)
                da(i, k) += gij * bv(k, j);
            }
        }
        if (self.parents[1]->needs_grad) {  // dB = A^T * G
          Tensor& db = self.parents[1]->grad;
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < m; ++k) {
              double aik = av(i, k);
              if (aik == 0.0) continue;
              for (std::size_t j = 0; j < p; ++j)
                db(k, j) += aik * g(i, j);
            }
        }
      },
      "matmul");
}

inline NodePtr transpose(const NodePtr& a) {
  const Tensor& av = a->value;
  if (av.rank() != 2)
    throw std::invalid_argument("ad::transpose: rank-2 tensor required");
  Tensor out({av.cols(), av.rows()});
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(j, i) = av(i, j);
  return detail::make_op(
      std::move(out), {a},
      [](Node& self) {
        if (!self.parents[0]->needs_grad) return;
        Tensor& da = self.parents[0]->grad;
        const Tensor& g = self.grad;
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) da(j, i) += g(i, j);
      },
      "transpose");
}

/// Stacks 2-D pieces along axis 0 (rows) or 1 (columns).
inline NodePtr concat(const std::vector<NodePtr>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("ad::concat: no parts");
  if (axis != 0 && axis != 1)
    throw std::invalid_argument("ad::concat: axis must be 0 or 1");
  for (const auto& p : parts)
    if (p->value.rank() != 2)
      throw std::invalid_argument("ad::concat: rank-2 tensors required");
  std::size_t rows = 0, cols = 0;
  if (axis == 0) {
    cols = parts[0]->value.cols();
    for (const auto& p : parts) {
      if (p->value.cols() != cols)
        throw std::invalid_argument("ad::concat: column mismatch");
      rows += p->value.rows();
    }
  } else {
    rows = parts[0]->value.rows();
    for (const auto& p : parts) {
      if (p->value.rows() != rows)
        throw std::invalid_argument("ad::concat: row mismatch");
      cols += p->value.cols();
    }
  }
  Tensor out({rows, cols});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor& v = p->value;
    if (axis == 0) {
      for (std::size_t i = 0; i < v.rows(); ++i)
        for (std::size_t j = 0; j < cols; ++j) out(off + i, j) = v(i, j);
      off += v.rows();
    } else {
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < v.cols(); ++j) out(i, off + j) = v(i, j);
      off += v.cols();
    }
  }
  return detail::make_op(
      std::move(out), parts,
      [axis](Node& self) {
        std::size_t off = 0;
        for (auto& p : self.parents) {
          const Tensor& v = p->value;
          if (p->needs_grad) {
            Tensor& dp = p->grad;
            if (axis == 0) {
              for (std::size_t i = 0; i < v.rows(); ++i)
                for (std::size_t j = 0; j < v.cols(); ++j)
                  dp(i, j) += self.grad(off + i, j);
            } else {
              for (std::size_t i = 0; i < v.rows(); ++i)
                for (std::size_t j = 0; j < v.cols(); ++j)
                  dp(i, j) += self.grad(i, off + j);
            }
          }
          off += axis == 0 ? v.rows() : v.cols();
        }
      },
      "concat");
}

inline NodePtr concat_rows(const std::vector<NodePtr>& parts) {
  return concat(parts, 0);
}

/// Rows [r0, r1) of a 2-D tensor.
inline NodePtr slice_rows(const NodePtr& a, std::size_t r0, std::size_t r1) {
  const Tensor& av = a->value;
  if (av.rank() != 2 || r0 >= r1 || r1 > av.rows())
    throw std::invalid_argument("ad::slice_rows: bad range");
  Tensor out({r1 - r0, av.cols()});
  for (std::size_t i = r0; i < r1; ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(i - r0, j) = av(i, j);
  return detail::make_op(
      std::move(out), {a},
      [r0](Node& self) {
        if (!self.parents[0]->needs_grad) return;
        Tensor& da = self.parents[0]->grad;
        const Tensor& g = self.grad;
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) da(r0 + i, j) += g(i, j);
      },
      "slice_rows");
}

/// Row gather: out[i] = a[indices[i]]. Duplicate indices accumulate on
/// backward.
inline NodePtr gather_rows(const NodePtr& a,
                           const std::vector<std::size_t>& indices) {
  const Tensor& av = a->value;
  if (av.rank() != 2)
    throw std::invalid_argument("ad::gather_rows: rank-2 tensor required");
  if (indices.empty())
    throw std::invalid_argument("ad::gather_rows: empty index list");
  for (std::size_t r : indices)
    if (r >= av.rows())
      throw std::invalid_argument("ad::gather_rows: index out of range");
  Tensor out({indices.size(), av.cols()});
  for (std::size_t i = 0; i < indices.size(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) = av(indices[i], j);
  return detail::make_op(
      std::move(out), {a},
      [indices](Node& self) {
        if (!self.parents[0]->needs_grad) return;
        Tensor& da = self.parents[0]->grad;
        const Tensor& g = self.grad;
        for (std::size_t i = 0; i < indices.size(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j)
            da(indices[i], j) += g(i, j);
      },
      "gather_rows");
}

inline NodePtr sum(const NodePtr& a) {
  double s = 0.0;
  for (std::size_t k = 0; k < a->value.size(); ++k) s += a->value[k];
  return detail::make_op(
      Tensor::scalar(s), {a},
      [](Node& self) {
        if (!self.parents[0]->needs_grad) return;
        double g = self.grad[0];
        Tensor& da = self.parents[0]->grad;
        for (std::size_t k = 0; k < da.size(); ++k) da[k] += g;
      },
      "sum");
}

inline NodePtr mean(const NodePtr& a) {
  double s = 0.0;
  std::size_t n = a->value.size();
  for (std::size_t k = 0; k < n; ++k) s += a->value[k];
  return detail::make_op(
      Tensor::scalar(s / static_cast<double>(n)), {a},
      [n](Node& self) {
        if (!self.parents[0]->needs_grad) return;
        double g = self.grad[0] / static_cast<double>(n);
        Tensor& da = self.parents[0]->grad;
        for (std::size_t k = 0; k < da.size(); ++k) da[k] += g;
      },
      "mean");
}

namespace detail {

template <typename F, typename DF>
NodePtr unary(const NodePtr& a, F f, DF df, const char* name) {
  Tensor out = a->value;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = f(out[k]);
  return make_op(
      std::move(out), {a},
      [df](Node& self) {
        if (!self.parents[0]->needs_grad) return;
        const Tensor& x = self.parents[0]->value;
        const Tensor& y = self.value;
        Tensor& da = self.parents[0]->grad;
        for (std::size_t k = 0; k < x.size(); ++k)
          da[k] += self.grad[k] * df(x[k], y[k]);
      },
      name);
}

}  // namespace detail

inline NodePtr exp(const NodePtr& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; }, "exp");
}

/// Natural log with the input clamped at kLogEps. The derivative is zero on
/// the clamped branch.
inline NodePtr log(const NodePtr& a) {
  return detail::unary(
      a, [](double x) { return std::log(std::max(x, kLogEps)); },
      [](double x, double) { return x > kLogEps ? 1.0 / x : 0.0; }, "log");
}

inline NodePtr tanh(const NodePtr& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; }, "tanh");
}

inline NodePtr sigmoid(const NodePtr& a) {
  return detail::unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

inline NodePtr relu(const NodePtr& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, "relu");
}

/// Row-wise softmax of a 2-D tensor, computed with max subtraction.
inline NodePtr softmax_rows(const NodePtr& a) {
  const Tensor& av = a->value;
  if (av.rank() != 2)
    throw std::invalid_argument("ad::softmax_rows: rank-2 tensor required");
  Tensor out({av.rows(), av.cols()});
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double mx = av(i, 0);
    for (std::size_t j = 1; j < av.cols(); ++j) mx = std::max(mx, av(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < av.cols(); ++j) {
      out(i, j) = std::exp(av(i, j) - mx);
      z += out(i, j);
    }
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) /= z;
  }
  return detail::make_op(
      std::move(out), {a},
      [](Node& self) {
        if (!self.parents[0]->needs_grad) return;
        const Tensor& y = self.value;
        const Tensor& g = self.grad;
        Tensor& da = self.parents[0]->grad;
        for (std::size_t i = 0; i < y.rows(); ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
          for (std::size_t j = 0; j < y.cols(); ++j)
            da(i, j) += y(i, j) * (g(i, j) - dot);
        }
      },
      "softmax_rows");
}

/// Reverse accumulation from a scalar root. Gradients left by a previous
/// backward() must be cleared (zero_grad) first; reuse raises.
inline void backward(const NodePtr& root) {
  if (!root) throw std::invalid_argument("ad::backward: null root");
  if (!root->value.is_scalar())
    throw std::invalid_argument("ad::backward: root must be scalar, got " +
                                root->value.shape_str());
  if (!root->needs_grad) return;  // graph of constants; nothing to do

  // Post-order over the needs_grad subgraph; reversed it is a valid
  // topological order (every consumer precedes its producers).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    bool descended = false;
    while (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->needs_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
        descended = true;
        break;
      }
    }
    if (!descended && (stack.back().second >= stack.back().first->parents.size())) {
      order.push_back(stack.back().first);
      stack.pop_back();
    }
  }

  for (Node* n : order)
    if (n->grad_live)
      throw std::runtime_error(
          "ad::backward: gradients already live; call zero_grad first");
  for (Node* n : order) {
    n->grad = Tensor::zeros(n->value.shape());
    n->grad_live = true;
  }
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->pull) (*it)->pull(**it);
}

/// Clears gradients on the given nodes (typically model parameters) so they
/// can participate in a fresh backward pass.
inline void zero_grad(const std::vector<NodePtr>& nodes) {
  for (const NodePtr& n : nodes) {
    n->grad_live = false;
    n->grad = Tensor();
  }
}

/// Central-difference gradient verification. f must build a fresh scalar
/// graph from its leaf argument. Returns the worst per-coordinate error:
/// relative where the magnitudes are meaningful, absolute below 1e-4.
inline double grad_check(const std::function<NodePtr(const NodePtr&)>& f,
                         const Tensor& x, double h) {
  if (h <= 0.0) throw std::invalid_argument("ad::grad_check: h must be > 0");
  NodePtr lx = leaf(x);
  NodePtr root = f(lx);
  if (!root->value.is_scalar())
    throw std::invalid_argument("ad::grad_check: f must be scalar-valued");
  backward(root);
  Tensor analytic =
      lx->grad_live ? lx->grad : Tensor::zeros(x.shape());

  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    double fp = f(leaf(xp))->value[0];
    double fm = f(leaf(xm))->value[0];
    double numeric = (fp - fm) / (2.0 * h);
    double a = analytic[i];
    double denom = std::max(std::abs(a), std::abs(numeric));
    double err = denom < 1e-4 ? std::abs(a - numeric)
                              : std::abs(a - numeric) / denom;
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace vkl::ad

#endif  // VKL_AUTODIFF_HPP
