#pragma once

// Reverse-mode automatic differentiation over dense rank<=2 tensors.
//
// A Tape is a Wengert list: nodes are appended in construction order, which
// is already a topological order of the DAG, so the backward pass is a single
// reverse sweep. Gradients accumulate into each node's grad tensor; a
// backward pass propagates its own adjoint buffer and adds it into the grads
// at the end, so running backward twice without zeroing yields exactly 2x.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "cpr/tensor.hpp"

namespace cpr::ad {

// probability clamp for all log/BCE ops
inline constexpr double kProbEps = 1e-7;

enum class Op : uint8_t {
  leaf,
  add,
  mul,      // elementwise
  matmul,
  concat,   // vertical, equal column counts
  slice,    // row range [r0, r1)
  reshape,
  tanh_fn,
  sigmoid_fn,
  sum,      // over all elements -> 1x1
  mean,     // over all elements -> 1x1
  scale,    // multiply by a compile-time constant
  bce,      // elementwise binary cross-entropy against constant targets
  l1,       // sum of absolute values -> 1x1, subgradient sign with sign(0)=0
};

struct Node {
  Op op = Op::leaf;
  std::array<int32_t, 2> in{-1, -1};
  Tensor val;
  Tensor grad;   // same shape as val, zero until backward
  double a = 0;  // scale factor / slice r0
  double b = 0;  // slice r1
  Tensor aux;    // bce targets
};

class Tape;

class Value {
 public:
  Value() = default;
  Value(Tape* tape, int32_t id) : tape_(tape), id_(id) {}

  const Tensor& val() const;
  const Tensor& grad() const;
  int rows() const { return val().rows(); }
  int cols() const { return val().cols(); }
  bool valid() const { return tape_ != nullptr; }

  Tape* tape() const { return tape_; }
  int32_t id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  int32_t id_ = -1;
};

class Tape {
 public:
  Value leaf(Tensor t) {
    Node n;
    n.op = Op::leaf;
    n.grad = Tensor(t.rows(), t.cols());
    n.val = std::move(t);
    return push(std::move(n));
  }

  Value leaf(double x) { return leaf(Tensor::scalar(x)); }

  size_t size() const { return nodes_.size(); }

  const Node& node(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }

  void zero_grad() {
    for (Node& n : nodes_)
      std::fill(n.grad.data().begin(), n.grad.data().end(), 0.0);
  }

  // Propagates d(loss)/d(node) into every node's grad. loss must be a scalar
  // on this tape. Nodes not reachable from loss keep their grads untouched.
  void backward(const Value& loss) {
    if (loss.tape() != this) throw std::invalid_argument("backward: value is not on this tape");
    const Node& ln = node(loss.id());
    if (!ln.val.is_scalar())
      throw std::invalid_argument(
          detail::str("backward: loss must be a scalar, got ", ln.val.shape_str()));

    std::vector<Tensor> adj(static_cast<size_t>(loss.id()) + 1);
    adj[loss.id()] = Tensor::scalar(1.0);
    for (int32_t i = loss.id(); i >= 0; --i) {
      if (adj[i].size() == 0) continue;  // not reachable from loss
      propagate(i, adj);
      add_into(nodes_[i].grad, adj[i]);
    }
  }

  Value push(Node n) {
    nodes_.emplace_back(std::move(n));
    return Value(this, static_cast<int32_t>(nodes_.size()) - 1);
  }

 private:
  std::vector<Node> nodes_;

  static void add_into(Tensor& dst, const Tensor& src) {
    double* d = dst.data().data();
    const double* s = src.data().data();
    for (int i = 0, n = dst.size(); i < n; ++i) d[i] += s[i];
  }

  Tensor& adj_of(std::vector<Tensor>& adj, int32_t id) {
    Tensor& t = adj[id];
    if (t.size() == 0) t = Tensor(nodes_[id].val.rows(), nodes_[id].val.cols());
    return t;
  }

  void propagate(int32_t id, std::vector<Tensor>& adj) {
    const Node& n = nodes_[id];
    const Tensor& g = adj[id];
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::add: {
        add_into(adj_of(adj, n.in[0]), g);
        add_into(adj_of(adj, n.in[1]), g);
        break;
      }
      case Op::mul: {
        Tensor& da = adj_of(adj, n.in[0]);
        Tensor& db = adj_of(adj, n.in[1]);
        const Tensor& a = nodes_[n.in[0]].val;
        const Tensor& b = nodes_[n.in[1]].val;
        for (int i = 0; i < g.size(); ++i) {
          da[i] += g[i] * b[i];
          db[i] += g[i] * a[i];
        }
        break;
      }
      case Op::matmul: {
        const Tensor& A = nodes_[n.in[0]].val;  // m x k
        const Tensor& B = nodes_[n.in[1]].val;  // k x p
        Tensor& dA = adj_of(adj, n.in[0]);
        Tensor& dB = adj_of(adj, n.in[1]);
        const int m = A.rows(), k = A.cols(), p = B.cols();
        // dA += g * B^T ; dB += A^T * g
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < p; ++j) {
            const double gij = g(i, j);
            if (gij == 0.0) continue;
            for (int l = 0; l < k; ++l) {
              dA(i, l) += gij * B(l, j);
              dB(l, j) += A(i, l) * gij;
            }
          }
        break;
      }
      case Op::concat: {
        Tensor& da = adj_of(adj, n.in[0]);
        Tensor& db = adj_of(adj, n.in[1]);
        const int ra = da.rows(), cols = da.cols();
        for (int r = 0; r < ra; ++r)
          for (int c = 0; c < cols; ++c) da(r, c) += g(r, c);
        for (int r = 0; r < db.rows(); ++r)
          for (int c = 0; c < cols; ++c) db(r, c) += g(ra + r, c);
        break;
      }
      case Op::slice: {
        Tensor& da = adj_of(adj, n.in[0]);
        const int r0 = static_cast<int>(n.a);
        for (int r = 0; r < g.rows(); ++r)
          for (int c = 0; c < g.cols(); ++c) da(r0 + r, c) += g(r, c);
        break;
      }
      case Op::reshape: {
        Tensor& da = adj_of(adj, n.in[0]);
        for (int i = 0; i < g.size(); ++i) da[i] += g[i];
        break;
      }
      case Op::tanh_fn: {
        Tensor& da = adj_of(adj, n.in[0]);
        for (int i = 0; i < g.size(); ++i) da[i] += g[i] * (1.0 - n.val[i] * n.val[i]);
        break;
      }
      case Op::sigmoid_fn: {
        Tensor& da = adj_of(adj, n.in[0]);
        for (int i = 0; i < g.size(); ++i) da[i] += g[i] * n.val[i] * (1.0 - n.val[i]);
        break;
      }
      case Op::sum: {
        Tensor& da = adj_of(adj, n.in[0]);
        const double gs = g[0];
        for (int i = 0; i < da.size(); ++i) da[i] += gs;
        break;
      }
      case Op::mean: {
        Tensor& da = adj_of(adj, n.in[0]);
        const double gs = g[0] / static_cast<double>(da.size());
        for (int i = 0; i < da.size(); ++i) da[i] += gs;
        break;
      }
      case Op::scale: {
        Tensor& da = adj_of(adj, n.in[0]);
        for (int i = 0; i < g.size(); ++i) da[i] += g[i] * n.a;
        break;
      }
      case Op::bce: {
        // gradient uses the clamped probability in the analytic formula so
        // saturated predictions still receive a finite, nonzero signal
        Tensor& dp = adj_of(adj, n.in[0]);
        const Tensor& p = nodes_[n.in[0]].val;
        for (int i = 0; i < g.size(); ++i) {
          const double ph = std::min(1.0 - kProbEps, std::max(kProbEps, p[i]));
          dp[i] += g[i] * (ph - n.aux[i]) / (ph * (1.0 - ph));
        }
        break;
      }
      case Op::l1: {
        Tensor& da = adj_of(adj, n.in[0]);
        const Tensor& a = nodes_[n.in[0]].val;
        const double gs = g[0];
        for (int i = 0; i < da.size(); ++i) {
          const double s = a[i] > 0.0 ? 1.0 : (a[i] < 0.0 ? -1.0 : 0.0);
          da[i] += gs * s;
        }
        break;
      }
    }
  }
};

inline const Tensor& Value::val() const { return tape_->node(id_).val; }
inline const Tensor& Value::grad() const { return tape_->node(id_).grad; }

namespace detail_ad {

inline Tape* same_tape(const Value& a, const Value& b) {
  if (a.tape() != b.tape())
    throw std::invalid_argument("operands live on different tapes");
  return a.tape();
}

inline Value unary(const Value& a, Op op, Tensor val, double pa = 0, double pb = 0) {
  Node n;
  n.op = op;
  n.in = {a.id(), -1};
  n.grad = Tensor(val.rows(), val.cols());
  n.val = std::move(val);
  n.a = pa;
  n.b = pb;
  return a.tape()->push(std::move(n));
}

inline Value binary(const Value& a, const Value& b, Op op, Tensor val) {
  Tape* t = same_tape(a, b);
  Node n;
  n.op = op;
  n.in = {a.id(), b.id()};
  n.grad = Tensor(val.rows(), val.cols());
  n.val = std::move(val);
  return t->push(std::move(n));
}

}  // namespace detail_ad

inline Value add(const Value& a, const Value& b) {
  check_same_shape(a.val(), b.val(), "add");
  Tensor out = a.val();
  for (int i = 0; i < out.size(); ++i) out[i] += b.val()[i];
  return detail_ad::binary(a, b, Op::add, std::move(out));
}

inline Value mul(const Value& a, const Value& b) {
  check_same_shape(a.val(), b.val(), "mul");
  Tensor out = a.val();
  for (int i = 0; i < out.size(); ++i) out[i] *= b.val()[i];
  return detail_ad::binary(a, b, Op::mul, std::move(out));
}

inline Value matmul(const Value& a, const Value& b) {
  const Tensor& A = a.val();
  const Tensor& B = b.val();
  if (A.cols() != B.rows())
    throw std::invalid_argument(
        detail::str("matmul: shape mismatch ", A.shape_str(), " vs ", B.shape_str()));
  Tensor out(A.rows(), B.cols());
  for (int i = 0; i < A.rows(); ++i)
    for (int l = 0; l < A.cols(); ++l) {
      const double ail = A(i, l);
      if (ail == 0.0) continue;
      for (int j = 0; j < B.cols(); ++j) out(i, j) += ail * B(l, j);
    }
  return detail_ad::binary(a, b, Op::matmul, std::move(out));
}

inline Value concat(const Value& a, const Value& b) {
  const Tensor& A = a.val();
  const Tensor& B = b.val();
  if (A.cols() != B.cols())
    throw std::invalid_argument(
        detail::str("concat: shape mismatch ", A.shape_str(), " vs ", B.shape_str()));
  Tensor out(A.rows() + B.rows(), A.cols());
  for (int r = 0; r < A.rows(); ++r)
    for (int c = 0; c < A.cols(); ++c) out(r, c) = A(r, c);
  for (int r = 0; r < B.rows(); ++r)
    for (int c = 0; c < B.cols(); ++c) out(A.rows() + r, c) = B(r, c);
  return detail_ad::binary(a, b, Op::concat, std::move(out));
}

inline Value slice_rows(const Value& a, int r0, int r1) {
  const Tensor& A = a.val();
  if (r0 < 0 || r1 > A.rows() || r0 >= r1)
    throw std::invalid_argument(
        detail::str("slice_rows: range [", r0, ", ", r1, ") invalid for ", A.shape_str()));
  Tensor out(r1 - r0, A.cols());
  for (int r = r0; r < r1; ++r)
    for (int c = 0; c < A.cols(); ++c) out(r - r0, c) = A(r, c);
  return detail_ad::unary(a, Op::slice, std::move(out), r0, r1);
}

inline Value reshape(const Value& a, int rows, int cols) {
  const Tensor& A = a.val();
  if (rows * cols != A.size())
    throw std::invalid_argument(detail::str("reshape: cannot view ", A.shape_str(), " as ",
                                            rows, "x", cols));
  Tensor out = Tensor::from_rows(rows, cols, A.data());
  return detail_ad::unary(a, Op::reshape, std::move(out));
}

inline Value tanh(const Value& a) {
  Tensor out = a.val();
  for (int i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  return detail_ad::unary(a, Op::tanh_fn, std::move(out));
}

inline Value sigmoid(const Value& a) {
  Tensor out = a.val();
  for (int i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  return detail_ad::unary(a, Op::sigmoid_fn, std::move(out));
}

inline Value sum(const Value& a) {
  double s = 0;
  for (int i = 0; i < a.val().size(); ++i) s += a.val()[i];
  return detail_ad::unary(a, Op::sum, Tensor::scalar(s));
}

inline Value mean(const Value& a) {
  if (a.val().size() == 0) throw std::invalid_argument("mean of empty tensor");
  double s = 0;
  for (int i = 0; i < a.val().size(); ++i) s += a.val()[i];
  return detail_ad::unary(a, Op::mean, Tensor::scalar(s / a.val().size()));
}

inline Value scale(const Value& a, double c) {
  Tensor out = a.val();
  for (int i = 0; i < out.size(); ++i) out[i] *= c;
  return detail_ad::unary(a, Op::scale, std::move(out), c);
}

// Elementwise binary cross-entropy against constant targets. Probabilities
// are clamped to [kProbEps, 1 - kProbEps] so loss and gradient stay finite.
inline Value bce(const Value& pred, const Tensor& targets) {
  check_same_shape(pred.val(), targets, "bce");
  Tensor out(pred.val().rows(), pred.val().cols());
  for (int i = 0; i < out.size(); ++i) {
    const double ph =
        std::min(1.0 - kProbEps, std::max(kProbEps, pred.val()[i]));
    const double y = targets[i];
    out[i] = -(y * std::log(ph) + (1.0 - y) * std::log(1.0 - ph));
  }
  Node n;
  n.op = Op::bce;
  n.in = {pred.id(), -1};
  n.grad = Tensor(out.rows(), out.cols());
  n.val = std::move(out);
  n.aux = targets;
  return pred.tape()->push(std::move(n));
}

inline Value l1(const Value& a) {
  double s = 0;
  for (int i = 0; i < a.val().size(); ++i) s += std::abs(a.val()[i]);
  return detail_ad::unary(a, Op::l1, Tensor::scalar(s));
}

// dot product of two column vectors
inline Value dot(const Value& a, const Value& b) { return sum(mul(a, b)); }

// Max over coordinates of |autodiff - central difference| / max(1, |central
// difference|) for a scalar function f evaluated at `point`. f is called with
// a fresh tape and the probe leaf; it must return a scalar on that tape.
template <class F>
double grad_check(F&& f, const Tensor& point, double step) {
  if (!(step > 0)) throw std::invalid_argument("grad_check: step must be > 0");

  Tape tape;
  Value x = tape.leaf(point);
  Value loss = f(tape, x);
  if (!loss.val().is_scalar())
    throw std::invalid_argument("grad_check: f must return a scalar");
  tape.backward(loss);
  const Tensor autograd = x.grad();

  auto eval = [&](const Tensor& p) {
    Tape t;
    Value v = t.leaf(p);
    double y = f(t, v).val().scalar_value();
    if (!std::isfinite(y)) throw std::runtime_error("grad_check: non-finite function value");
    return y;
  };

  double worst = 0;
  Tensor probe = point;
  for (int i = 0; i < point.size(); ++i) {
    const double x0 = point[i];
    probe[i] = x0 + step;
    const double fp = eval(probe);
    probe[i] = x0 - step;
    const double fm = eval(probe);
    probe[i] = x0;
    const double fd = (fp - fm) / (2.0 * step);
    if (!std::isfinite(fd) || !std::isfinite(autograd[i]))
      throw std::runtime_error("grad_check: non-finite derivative");
    const double err = std::abs(autograd[i] - fd) / std::max(1.0, std::abs(fd));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace cpr::ad
