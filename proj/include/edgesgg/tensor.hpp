#pragma once

// Dense 2-D tensors with a reverse-mode tape. The op set is deliberately small:
// exactly what the message-passing layers, classifier heads and losses use.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "edgesgg/error.hpp"
#include "edgesgg/hash.hpp"

namespace edgesgg::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

inline constexpr double kLogClamp = 1e-12;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/************ Tensor **************************************/

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false)
      : value_(std::move(value)), requires_grad_(requires_grad) {
    if (requires_grad_) grad_ = Matrix::Zero(value_.rows(), value_.cols());
  }

  static Tensor zeros(Index rows, Index cols, bool requires_grad = false) {
    return Tensor(Matrix::Zero(rows, cols), requires_grad);
  }

  Index rows() const noexcept { return value_.rows(); }
  Index cols() const noexcept { return value_.cols(); }
  bool requires_grad() const noexcept { return requires_grad_; }

  const Matrix& value() const noexcept { return value_; }
  Matrix& value() noexcept { return value_; }
  const Matrix& grad() const noexcept { return grad_; }
  Matrix& grad() noexcept { return grad_; }

  void zero_grad() {
    if (requires_grad_) grad_.setZero();
  }

 private:
  Matrix value_;
  Matrix grad_;
  bool requires_grad_{false};
};

/************ ParamStore **********************************/

// Named learnable parameters. Initial values depend only on (name, shape, seed).
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  Tensor& create(const std::string& name, Index rows, Index cols, Index fan_in) {
    require(!params_.contains(name), ErrorKind::usage, "duplicate parameter " + name);
    require(rows > 0 && cols > 0 && fan_in > 0, ErrorKind::usage, "bad shape for " + name);
    std::uint64_t state = fnv1a(name) ^ (seed_ * 0x9E3779B97F4A7C15ULL) ^
                          (static_cast<std::uint64_t>(rows) << 32) ^ static_cast<std::uint64_t>(cols);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) {
      double u = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
      m.data()[i] = (2.0 * u - 1.0) * bound;
    }
    return params_.emplace(name, Tensor(std::move(m), true)).first->second;
  }

  Tensor& at(const std::string& name) {
    auto it = params_.find(name);
    require(it != params_.end(), ErrorKind::usage, "unknown parameter " + name);
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = params_.find(name);
    require(it != params_.end(), ErrorKind::usage, "unknown parameter " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.contains(name); }

  void zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
  }

  std::size_t size() const noexcept { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::uint64_t seed_;
  std::map<std::string, Tensor> params_;
};

// p <- p - lr * grad, then grads are zeroed. lr = 0 is a valid no-op step.
inline void sgd_step(ParamStore& params, double lr) {
  require(std::isfinite(lr) && lr >= 0.0, ErrorKind::usage, "learning rate must be >= 0");
  for (auto& [_, t] : params) {
    t.value() -= lr * t.grad();
    t.zero_grad();
  }
}

/************ Tape ****************************************/

class Tape;

struct Var {
  Tape* tape{nullptr};
  std::size_t id{0};
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) { return push(std::move(value), false, {}); }

  // Leaf bound to a parameter; its gradient is accumulated into the store on backward().
  Var param(ParamStore& store, const std::string& name) {
    Tensor& t = store.at(name);
    used_.insert(name);
    Var v = push(t.value(), true, {});
    nodes_[v.id].sink = &t;
    return v;
  }

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  double scalar(Var v) const {
    const Matrix& m = value(v);
    require(m.rows() == 1 && m.cols() == 1, ErrorKind::usage, "not a scalar");
    return m(0, 0);
  }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  // Gradient of the last backward() pass with respect to an intermediate node.
  const Matrix& grad(Var v) const { return nodes_.at(v.id).grad; }

  const std::set<std::string>& used_params() const noexcept { return used_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  void backward(Var loss) {
    require(loss.tape == this, ErrorKind::usage, "loss belongs to another tape");
    const Matrix& lv = nodes_[loss.id].value;
    require(lv.rows() == 1 && lv.cols() == 1, ErrorKind::usage, "loss is not a scalar");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[loss.id].grad = Matrix::Ones(1, 1);
    for (std::size_t k = loss.id + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, k);
      if (n.sink) n.sink->grad() += n.grad;
    }
  }

  // Op construction API. The backward callback reads node `self`'s gradient and
  // pushes contributions to its inputs through accumulate().
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Var push(Matrix value, bool needs_grad, Backward backward) {
#ifndef NDEBUG
    require(all_finite(value), ErrorKind::numerical, "non-finite value produced on tape");
#endif
    nodes_.push_back(Node{std::move(value), Matrix(), needs_grad, std::move(backward), nullptr});
    return Var{this, nodes_.size() - 1};
  }

  const Matrix& grad_of(std::size_t id) const { return nodes_[id].grad; }
  const Matrix& value_of(std::size_t id) const { return nodes_[id].value; }

  template <typename Expr>
  void accumulate(Var target, const Expr& contribution) {
    Node& n = nodes_[target.id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
      n.grad = contribution;
    else
      n.grad += contribution;
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad{false};
    Backward backward;
    Tensor* sink{nullptr};
  };

  std::vector<Node> nodes_;
  std::set<std::string> used_;
};

/************ ops *****************************************/

namespace detail {

inline Tape& tape_of(Var a, Var b) {
  require(a.tape != nullptr && a.tape == b.tape, ErrorKind::usage, "operands on different tapes");
  return *a.tape;
}

inline std::string shape_str(const Matrix& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  require(av.cols() == bv.rows(), ErrorKind::usage,
          "matmul shape mismatch " + detail::shape_str(av) + " * " + detail::shape_str(bv));
  Matrix out = av * bv;
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_of(self);
    if (tp.needs_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
    if (tp.needs_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
  });
}

inline Var add(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), ErrorKind::usage,
          "add shape mismatch " + detail::shape_str(av) + " + " + detail::shape_str(bv));
  Matrix out = av + bv;
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape& tp, std::size_t self) {
    tp.accumulate(a, tp.grad_of(self));
    tp.accumulate(b, tp.grad_of(self));
  });
}

// x (n x c) plus a bias row (1 x c) broadcast over rows.
inline Var add_bias(Var x, Var bias) {
  Tape& t = detail::tape_of(x, bias);
  const Matrix& xv = t.value(x);
  const Matrix& bv = t.value(bias);
  require(bv.rows() == 1 && bv.cols() == xv.cols(), ErrorKind::usage, "bias shape mismatch");
  Matrix out = xv.rowwise() + bv.row(0);
  return t.push(std::move(out), t.needs_grad(x) || t.needs_grad(bias),
                [x, bias](Tape& tp, std::size_t self) {
                  const Matrix& g = tp.grad_of(self);
                  tp.accumulate(x, g);
                  if (tp.needs_grad(bias)) tp.accumulate(bias, g.colwise().sum());
                });
}

inline Var hadamard(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), ErrorKind::usage, "hadamard shape mismatch");
  Matrix out = av.cwiseProduct(bv);
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_of(self);
    if (tp.needs_grad(a)) tp.accumulate(a, g.cwiseProduct(tp.value(b)));
    if (tp.needs_grad(b)) tp.accumulate(b, g.cwiseProduct(tp.value(a)));
  });
}

inline Var scale(Var x, double s) {
  Tape& t = *x.tape;
  Matrix out = t.value(x) * s;
  return t.push(std::move(out), t.needs_grad(x),
                [x, s](Tape& tp, std::size_t self) { tp.accumulate(x, tp.grad_of(self) * s); });
}

// 1 - x, elementwise.
inline Var one_minus(Var x) {
  Tape& t = *x.tape;
  Matrix out = (1.0 - t.value(x).array()).matrix();
  return t.push(std::move(out), t.needs_grad(x),
                [x](Tape& tp, std::size_t self) { tp.accumulate(x, -tp.grad_of(self)); });
}

// Subgradient at 0 is 0.
inline Var relu(Var x) {
  Tape& t = *x.tape;
  Matrix out = t.value(x).cwiseMax(0.0);
  return t.push(std::move(out), t.needs_grad(x), [x](Tape& tp, std::size_t self) {
    const Matrix& xv = tp.value(x);
    tp.accumulate(x, (xv.array() > 0.0).select(tp.grad_of(self), 0.0));
  });
}

inline Var sum(Var x) {
  Tape& t = *x.tape;
  Matrix out(1, 1);
  out(0, 0) = t.value(x).sum();
  return t.push(std::move(out), t.needs_grad(x), [x](Tape& tp, std::size_t self) {
    const Matrix& xv = tp.value(x);
    tp.accumulate(x, Matrix::Constant(xv.rows(), xv.cols(), tp.grad_of(self)(0, 0)));
  });
}

// out.row(k) = x.row(index[k])
inline Var gather_rows(Var x, std::vector<Index> index) {
  Tape& t = *x.tape;
  const Matrix& xv = t.value(x);
  Matrix out(static_cast<Index>(index.size()), xv.cols());
  for (std::size_t k = 0; k < index.size(); ++k) {
    require(index[k] >= 0 && index[k] < xv.rows(), ErrorKind::usage, "gather index out of range");
    out.row(static_cast<Index>(k)) = xv.row(index[k]);
  }
  return t.push(std::move(out), t.needs_grad(x), [x, index = std::move(index)](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_of(self);
    Matrix dx = Matrix::Zero(tp.value(x).rows(), g.cols());
    for (std::size_t k = 0; k < index.size(); ++k) dx.row(index[k]) += g.row(static_cast<Index>(k));
    tp.accumulate(x, dx);
  });
}

// out.row(s) = sum of x.row(k) over all k with segment[k] == s; empty segments give 0.
inline Var segment_sum(Var x, std::vector<Index> segment, Index num_segments) {
  Tape& t = *x.tape;
  const Matrix& xv = t.value(x);
  require(static_cast<Index>(segment.size()) == xv.rows(), ErrorKind::usage, "segment size mismatch");
  Matrix out = Matrix::Zero(num_segments, xv.cols());
  for (std::size_t k = 0; k < segment.size(); ++k) {
    require(segment[k] >= 0 && segment[k] < num_segments, ErrorKind::usage, "segment out of range");
    out.row(segment[k]) += xv.row(static_cast<Index>(k));
  }
  return t.push(std::move(out), t.needs_grad(x), [x, segment = std::move(segment)](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_of(self);
    Matrix dx(static_cast<Index>(segment.size()), g.cols());
    for (std::size_t k = 0; k < segment.size(); ++k) dx.row(static_cast<Index>(k)) = g.row(segment[k]);
    tp.accumulate(x, dx);
  });
}

// Scales row k of x by the scalar w(k, 0).
inline Var row_scale(Var x, Var w) {
  Tape& t = detail::tape_of(x, w);
  const Matrix& xv = t.value(x);
  const Matrix& wv = t.value(w);
  require(wv.cols() == 1 && wv.rows() == xv.rows(), ErrorKind::usage, "row_scale shape mismatch");
  Matrix out = xv.array().colwise() * wv.col(0).array();
  return t.push(std::move(out), t.needs_grad(x) || t.needs_grad(w), [x, w](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_of(self);
    if (tp.needs_grad(x)) tp.accumulate(x, Matrix(g.array().colwise() * tp.value(w).col(0).array()));
    if (tp.needs_grad(w)) tp.accumulate(w, Matrix(g.cwiseProduct(tp.value(x)).rowwise().sum()));
  });
}

// Two-way softmax over a score column: out[k] = exp(s[a_k]) / (exp(s[a_k]) + exp(s[b_k])).
inline Var pair_softmax(Var scores, std::vector<Index> first, std::vector<Index> second) {
  Tape& t = *scores.tape;
  const Matrix& sv = t.value(scores);
  require(sv.cols() == 1, ErrorKind::usage, "pair_softmax expects a score column");
  require(first.size() == second.size(), ErrorKind::usage, "pair_softmax index mismatch");
  Matrix out(static_cast<Index>(first.size()), 1);
  for (std::size_t k = 0; k < first.size(); ++k) {
    double a = sv(first[k], 0);
    double b = sv(second[k], 0);
    double m = std::max(a, b);
    double ea = std::exp(a - m);
    double eb = std::exp(b - m);
    out(static_cast<Index>(k), 0) = ea / (ea + eb);
  }
  return t.push(std::move(out), t.needs_grad(scores),
                [scores, first = std::move(first), second = std::move(second)](Tape& tp, std::size_t self) {
                  const Matrix& g = tp.grad_of(self);
                  const Matrix& y = tp.value_of(self);
                  Matrix ds = Matrix::Zero(tp.value(scores).rows(), 1);
                  for (std::size_t k = 0; k < first.size(); ++k) {
                    const auto kk = static_cast<Index>(k);
                    double d = g(kk, 0) * y(kk, 0) * (1.0 - y(kk, 0));
                    ds(first[k], 0) += d;
                    ds(second[k], 0) -= d;
                  }
                  tp.accumulate(scores, ds);
                });
}

inline Var softmax_rows(Var x) {
  Tape& t = *x.tape;
  const Matrix& xv = t.value(x);
  Matrix out(xv.rows(), xv.cols());
  for (Index r = 0; r < xv.rows(); ++r) {
    double m = xv.row(r).maxCoeff();
    out.row(r) = (xv.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return t.push(std::move(out), t.needs_grad(x), [x](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_of(self);
    const Matrix& y = tp.value_of(self);
    Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    Matrix dx = y.array() * (g.array().colwise() - dot.array());
    tp.accumulate(x, dx);
  });
}

inline Var concat_cols(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  require(av.rows() == bv.rows(), ErrorKind::usage, "concat row mismatch");
  Matrix out(av.rows(), av.cols() + bv.cols());
  out << av, bv;
  const Index split = av.cols();
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b), [a, b, split](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_of(self);
    if (tp.needs_grad(a)) tp.accumulate(a, Matrix(g.leftCols(split)));
    if (tp.needs_grad(b)) tp.accumulate(b, Matrix(g.rightCols(g.cols() - split)));
  });
}

inline Var slice_cols(Var x, Index begin, Index count) {
  Tape& t = *x.tape;
  const Matrix& xv = t.value(x);
  require(begin >= 0 && count >= 0 && begin + count <= xv.cols(), ErrorKind::usage, "slice out of range");
  Matrix out = xv.middleCols(begin, count);
  return t.push(std::move(out), t.needs_grad(x), [x, begin, count](Tape& tp, std::size_t self) {
    const Matrix& xv2 = tp.value(x);
    Matrix dx = Matrix::Zero(xv2.rows(), xv2.cols());
    dx.middleCols(begin, count) = tp.grad_of(self);
    tp.accumulate(x, dx);
  });
}

// Mean over rows of -log(max(p[row, target], 1e-12)); `probs` rows are distributions.
inline Var cross_entropy(Var probs, std::vector<int> targets) {
  Tape& t = *probs.tape;
  const Matrix& pv = t.value(probs);
  require(static_cast<Index>(targets.size()) == pv.rows(), ErrorKind::usage, "target count mismatch");
  require(pv.rows() > 0, ErrorKind::usage, "cross entropy over zero rows");
  double total = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    require(targets[r] >= 0 && targets[r] < pv.cols(), ErrorKind::data,
            "invalid target index " + std::to_string(targets[r]));
    total -= std::log(std::max(pv(static_cast<Index>(r), targets[r]), kLogClamp));
  }
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(targets.size());
  return t.push(std::move(out), t.needs_grad(probs),
                [probs, targets = std::move(targets)](Tape& tp, std::size_t self) {
                  const Matrix& p = tp.value(probs);
                  const double g = tp.grad_of(self)(0, 0) / static_cast<double>(targets.size());
                  Matrix dp = Matrix::Zero(p.rows(), p.cols());
                  for (std::size_t r = 0; r < targets.size(); ++r) {
                    double pr = p(static_cast<Index>(r), targets[r]);
                    if (pr > kLogClamp) dp(static_cast<Index>(r), targets[r]) = -g / pr;
                  }
                  tp.accumulate(probs, dp);
                });
}

}  // namespace edgesgg::ad
