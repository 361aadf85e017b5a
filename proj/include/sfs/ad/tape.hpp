#pragma once

#include <Eigen/Dense>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sfs/errors.hpp"

namespace sfs::ad {

using Mat = Eigen::MatrixXd;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Eager reverse-mode tape over dense double matrices. Values are computed on
// op creation, so data-dependent control flow (neighbor queries, subsampling)
// can inspect them before extending the graph; indices chosen that way are
// treated as constants by the backward pass, which is exact almost
// everywhere. A tape is built per optimization step and discarded.
//
// Nodes live in a deque so references returned by val() stay valid while
// further ops are recorded.
class Tape {
 public:
  Var constant(Mat value) { return push(std::move(value), false, nullptr); }

  Var leaf(Mat value) { return push(std::move(value), true, nullptr); }

  const Mat& val(Var v) const { return node(v).value; }

  // Gradient of the last backward() root with respect to v. Zero matrix when
  // the value never influenced the root.
  Mat grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  int size() const { return static_cast<int>(nodes_.size()); }

  // ---- elementwise / scalar ----

  Var add(Var a, Var b) {
    check_same_shape(a, b, "add");
    Mat y = val(a) + val(b);
    return binary(std::move(y), a, b, [](Tape& t, int self, int ia, int ib) {
      const Mat& g = t.nodes_[self].grad;
      if (t.nodes_[ia].requires_grad) t.gref(ia) += g;
      if (t.nodes_[ib].requires_grad) t.gref(ib) += g;
    });
  }

  Var sub(Var a, Var b) {
    check_same_shape(a, b, "sub");
    Mat y = val(a) - val(b);
    return binary(std::move(y), a, b, [](Tape& t, int self, int ia, int ib) {
      const Mat& g = t.nodes_[self].grad;
      if (t.nodes_[ia].requires_grad) t.gref(ia) += g;
      if (t.nodes_[ib].requires_grad) t.gref(ib) -= g;
    });
  }

  Var mul(Var a, Var b) {
    check_same_shape(a, b, "mul");
    Mat y = val(a).cwiseProduct(val(b));
    return binary(std::move(y), a, b, [](Tape& t, int self, int ia, int ib) {
      const Mat& g = t.nodes_[self].grad;
      if (t.nodes_[ia].requires_grad)
        t.gref(ia) += g.cwiseProduct(t.nodes_[ib].value);
      if (t.nodes_[ib].requires_grad)
        t.gref(ib) += g.cwiseProduct(t.nodes_[ia].value);
    });
  }

  Var div(Var a, Var b) {
    check_same_shape(a, b, "div");
    Mat y = val(a).cwiseQuotient(val(b));
    return binary(std::move(y), a, b, [](Tape& t, int self, int ia, int ib) {
      const Mat& g = t.nodes_[self].grad;
      const Mat& bv = t.nodes_[ib].value;
      if (t.nodes_[ia].requires_grad) t.gref(ia) += g.cwiseQuotient(bv);
      if (t.nodes_[ib].requires_grad)
        t.gref(ib) -= g.cwiseProduct(t.nodes_[ia].value)
                          .cwiseQuotient(bv.cwiseProduct(bv));
    });
  }

  Var scale(Var x, double s) {
    Mat y = val(x) * s;
    return unary(std::move(y), x, [s](Tape& t, int self, int ix) {
      if (t.nodes_[ix].requires_grad) t.gref(ix) += t.nodes_[self].grad * s;
    });
  }

  Var add_scalar(Var x, double c) {
    Mat y = val(x).array() + c;
    return unary(std::move(y), x, [](Tape& t, int self, int ix) {
      if (t.nodes_[ix].requires_grad) t.gref(ix) += t.nodes_[self].grad;
    });
  }

  Var relu(Var x) {
    Mat y = val(x).cwiseMax(0.0);
    return unary(std::move(y), x, [](Tape& t, int self, int ix) {
      if (!t.nodes_[ix].requires_grad) return;
      const Mat& g = t.nodes_[self].grad;
      const Mat& xv = t.nodes_[ix].value;
      t.gref(ix) += (xv.array() > 0.0).select(g, Mat::Zero(g.rows(), g.cols()));
    });
  }

  Var clamp_min(Var x, double c) {
    Mat y = val(x).cwiseMax(c);
    return unary(std::move(y), x, [c](Tape& t, int self, int ix) {
      if (!t.nodes_[ix].requires_grad) return;
      const Mat& g = t.nodes_[self].grad;
      const Mat& xv = t.nodes_[ix].value;
      t.gref(ix) += (xv.array() > c).select(g, Mat::Zero(g.rows(), g.cols()));
    });
  }

  // ---- dense layers ----

  // y = x * w + broadcast(b): x is N x I, w is I x O, b is 1 x O.
  Var linear(Var x, Var w, Var b) {
    const Mat& xv = val(x);
    const Mat& wv = val(w);
    const Mat& bv = val(b);
    if (xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols())
      throw ContractViolation("tape linear: dimension mismatch");
    Mat y = xv * wv;
    y.rowwise() += bv.row(0);
    const int ix = x.id, iw = w.id, ib = b.id;
    return push(std::move(y),
                node(x).requires_grad || node(w).requires_grad ||
                    node(b).requires_grad,
                [ix, iw, ib](Tape& t, int self) {
                  const Mat& g = t.nodes_[self].grad;
                  if (t.nodes_[ix].requires_grad)
                    t.gref(ix).noalias() += g * t.nodes_[iw].value.transpose();
                  if (t.nodes_[iw].requires_grad)
                    t.gref(iw).noalias() +=
                        t.nodes_[ix].value.transpose() * g;
                  if (t.nodes_[ib].requires_grad)
                    t.gref(ib) += g.colwise().sum();
                });
  }

  // ---- indexing / pooling ----

  Var gather_rows(Var x, std::vector<int> idx) {
    const Mat& xv = val(x);
    Mat y(static_cast<Eigen::Index>(idx.size()), xv.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= xv.rows())
        throw ContractViolation("tape gather_rows: index out of range");
      y.row(static_cast<Eigen::Index>(i)) = xv.row(idx[i]);
    }
    const int ix = x.id;
    return push(std::move(y), node(x).requires_grad,
                [ix, idx = std::move(idx)](Tape& t, int self) {
                  if (!t.nodes_[ix].requires_grad) return;
                  const Mat& g = t.nodes_[self].grad;
                  Mat& gx = t.gref(ix);
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    gx.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
                });
  }

  // Mean over each row group [offsets[m], offsets[m+1]) of x.
  Var pool_mean(Var x, std::vector<int> offsets) {
    const Mat& xv = val(x);
    check_offsets(offsets, static_cast<int>(xv.rows()), "pool_mean");
    const int m = static_cast<int>(offsets.size()) - 1;
    Mat y = Mat::Zero(m, xv.cols());
    for (int gi = 0; gi < m; ++gi) {
      const int lo = offsets[static_cast<std::size_t>(gi)];
      const int hi = offsets[static_cast<std::size_t>(gi) + 1];
      if (hi <= lo)
        throw ContractViolation("tape pool_mean: empty group");
      y.row(gi) = xv.middleRows(lo, hi - lo).colwise().mean();
    }
    const int ix = x.id;
    return push(std::move(y), node(x).requires_grad,
                [ix, offsets = std::move(offsets)](Tape& t, int self) {
                  if (!t.nodes_[ix].requires_grad) return;
                  const Mat& g = t.nodes_[self].grad;
                  Mat& gx = t.gref(ix);
                  for (int gi = 0; gi + 1 < static_cast<int>(offsets.size());
                       ++gi) {
                    const int lo = offsets[static_cast<std::size_t>(gi)];
                    const int hi = offsets[static_cast<std::size_t>(gi) + 1];
                    const double inv = 1.0 / static_cast<double>(hi - lo);
                    gx.middleRows(lo, hi - lo).rowwise() += g.row(gi) * inv;
                  }
                });
  }

  // Inverse of pool layout: repeat row m of x across its group's rows.
  Var expand_rows(Var x, std::vector<int> offsets) {
    const Mat& xv = val(x);
    const int m = static_cast<int>(offsets.size()) - 1;
    if (m != xv.rows())
      throw ContractViolation("tape expand_rows: group count mismatch");
    check_offsets(offsets, offsets.back(), "expand_rows");
    Mat y(offsets.back(), xv.cols());
    for (int gi = 0; gi < m; ++gi) {
      const int lo = offsets[static_cast<std::size_t>(gi)];
      const int hi = offsets[static_cast<std::size_t>(gi) + 1];
      y.middleRows(lo, hi - lo).rowwise() = xv.row(gi);
    }
    const int ix = x.id;
    return push(std::move(y), node(x).requires_grad,
                [ix, offsets = std::move(offsets)](Tape& t, int self) {
                  if (!t.nodes_[ix].requires_grad) return;
                  const Mat& g = t.nodes_[self].grad;
                  Mat& gx = t.gref(ix);
                  for (int gi = 0; gi + 1 < static_cast<int>(offsets.size());
                       ++gi) {
                    const int lo = offsets[static_cast<std::size_t>(gi)];
                    const int hi = offsets[static_cast<std::size_t>(gi) + 1];
                    gx.row(gi) += g.middleRows(lo, hi - lo).colwise().sum();
                  }
                });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty())
      throw ContractViolation("tape concat_cols: no inputs");
    const Eigen::Index rows = val(parts[0]).rows();
    Eigen::Index cols = 0;
    bool needs_grad = false;
    for (Var p : parts) {
      if (val(p).rows() != rows)
        throw ContractViolation("tape concat_cols: row mismatch");
      cols += val(p).cols();
      needs_grad = needs_grad || node(p).requires_grad;
    }
    Mat y(rows, cols);
    Eigen::Index at = 0;
    std::vector<int> ids;
    std::vector<Eigen::Index> widths;
    for (Var p : parts) {
      const Mat& pv = val(p);
      y.middleCols(at, pv.cols()) = pv;
      at += pv.cols();
      ids.push_back(p.id);
      widths.push_back(pv.cols());
    }
    return push(std::move(y), needs_grad,
                [ids = std::move(ids), widths = std::move(widths)](
                    Tape& t, int self) {
                  const Mat& g = t.nodes_[self].grad;
                  Eigen::Index at = 0;
                  for (std::size_t i = 0; i < ids.size(); ++i) {
                    if (t.nodes_[ids[i]].requires_grad)
                      t.gref(ids[i]) += g.middleCols(at, widths[i]);
                    at += widths[i];
                  }
                });
  }

  // ---- reductions / norms ----

  Var mean_rows(Var x) {
    const Mat& xv = val(x);
    Mat y = xv.colwise().mean();
    const int ix = x.id;
    const double inv = 1.0 / static_cast<double>(xv.rows());
    return push(std::move(y), node(x).requires_grad,
                [ix, inv](Tape& t, int self) {
                  if (!t.nodes_[ix].requires_grad) return;
                  const Mat& g = t.nodes_[self].grad;
                  t.gref(ix).rowwise() += g.row(0) * inv;
                });
  }

  // Row-wise Euclidean norm, N x C -> N x 1. Subgradient 0 at a zero row.
  Var row_norm(Var x) {
    const Mat& xv = val(x);
    Mat y = xv.rowwise().norm();
    const int ix = x.id;
    return push(std::move(y), node(x).requires_grad,
                [ix](Tape& t, int self) {
                  if (!t.nodes_[ix].requires_grad) return;
                  const Mat& g = t.nodes_[self].grad;
                  const Mat& xv = t.nodes_[ix].value;
                  const Mat& yv = t.nodes_[self].value;
                  Mat& gx = t.gref(ix);
                  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
                    const double n = yv(r, 0);
                    if (n > 0.0) gx.row(r) += (g(r, 0) / n) * xv.row(r);
                  }
                });
  }

  Var row_dot(Var a, Var b) {
    check_same_shape(a, b, "row_dot");
    Mat y = val(a).cwiseProduct(val(b)).rowwise().sum();
    return binary(std::move(y), a, b, [](Tape& t, int self, int ia, int ib) {
      const Mat& g = t.nodes_[self].grad;
      if (t.nodes_[ia].requires_grad)
        t.gref(ia) += (t.nodes_[ib].value.array().colwise() * g.col(0).array())
                          .matrix();
      if (t.nodes_[ib].requires_grad)
        t.gref(ib) += (t.nodes_[ia].value.array().colwise() * g.col(0).array())
                          .matrix();
    });
  }

  Var sum(Var x) {
    Mat y(1, 1);
    y(0, 0) = val(x).sum();
    const int ix = x.id;
    return push(std::move(y), node(x).requires_grad,
                [ix](Tape& t, int self) {
                  if (!t.nodes_[ix].requires_grad) return;
                  t.gref(ix).array() += t.nodes_[self].grad(0, 0);
                });
  }

  // Value passes through, gradient does not.
  Var stop_gradient(Var x) { return push(val(x), false, nullptr); }

  // ---- backward ----

  void backward(Var root) {
    Node& r = node_mut(root);
    if (r.value.rows() != 1 || r.value.cols() != 1)
      throw ContractViolation("tape backward: root must be a scalar");
    if (!r.requires_grad) return;
    gref(root.id).setConstant(1.0);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.requires_grad && n.back && n.grad.size() != 0) n.back(*this, i);
    }
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    std::function<void(Tape&, int)> back;
  };

  const Node& node(Var v) const {
    if (!v.valid() || v.id >= size())
      throw ContractViolation("tape: invalid var");
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  Node& node_mut(Var v) {
    return const_cast<Node&>(node(v));
  }

  Mat& gref(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  Var push(Mat value, bool requires_grad, std::function<void(Tape&, int)> back) {
    nodes_.push_back(Node{std::move(value), Mat(), requires_grad,
                          std::move(back)});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  template <typename F>
  Var unary(Mat y, Var x, F&& back) {
    const int ix = x.id;
    return push(std::move(y), node(x).requires_grad,
                [ix, back = std::forward<F>(back)](Tape& t, int self) {
                  back(t, self, ix);
                });
  }

  template <typename F>
  Var binary(Mat y, Var a, Var b, F&& back) {
    const int ia = a.id, ib = b.id;
    return push(std::move(y),
                node(a).requires_grad || node(b).requires_grad,
                [ia, ib, back = std::forward<F>(back)](Tape& t, int self) {
                  back(t, self, ia, ib);
                });
  }

  void check_same_shape(Var a, Var b, const char* op) const {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
      throw ContractViolation(std::string("tape ") + op + ": shape mismatch");
  }

  void check_offsets(const std::vector<int>& offsets, int total,
                     const char* op) const {
    if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != total)
      throw ContractViolation(std::string("tape ") + op + ": bad offsets");
    for (std::size_t i = 1; i < offsets.size(); ++i)
      if (offsets[i] < offsets[i - 1])
        throw ContractViolation(std::string("tape ") + op +
                                ": offsets not monotone");
  }

  std::deque<Node> nodes_;
};

}  // namespace sfs::ad
