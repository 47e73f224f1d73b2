#pragma once

// Reverse-mode differentiation over dense matrices. Values are recorded in
// creation order; backward() walks the list once in reverse.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hyperkkl/error.hpp"
#include "hyperkkl/param_store.hpp"

namespace hyperkkl {

class Tape {
 public:
  using Mat = Eigen::MatrixXd;

  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ---- leaves ---------------------------------------------------------------

  Var constant(Mat v) { return push(std::move(v), false, {}); }
  Var variable(Mat v) { return push(std::move(v), true, {}); }

  /// Leaf holding a copy of `store`'s slice; its gradient can be collected with
  /// `gradients_for(store)`.
  Var param(const ParamStore& store, const std::string& name) {
    const Slice& s = store.slice(name);
    Var v = variable(Mat(store.view(name)));
    bindings_.push_back({v.id, &store, s.offset, s.rows, s.cols});
    return v;
  }

  /// Trainable leaf over a contiguous row-major block of `store` that may span
  /// several slices (used for chunked head matrices).
  Var param_range(const ParamStore& store, std::size_t offset, Eigen::Index rows, Eigen::Index cols) {
    require(offset + static_cast<std::size_t>(rows * cols) <= store.size(), "param_range out of bounds");
    Var v = variable(Mat(Eigen::Map<const RowMat>(store.data().data() + offset, rows, cols)));
    bindings_.push_back({v.id, &store, offset, rows, cols});
    return v;
  }

  /// Same as param() but frozen: participates in the forward pass only.
  Var frozen(const ParamStore& store, const std::string& name) { return constant(Mat(store.view(name))); }

  const Mat& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  double scalar(Var v) const {
    const Mat& m = value(v);
    require(m.rows() == 1 && m.cols() == 1, "scalar() on a non 1x1 value");
    return m(0, 0);
  }
  /// Gradient after backward(); zero matrix if nothing flowed into `v`.
  Mat grad(Var v) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    return n.grad.size() ? n.grad : Mat::Zero(n.value.rows(), n.value.cols());
  }
  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // ---- elementwise ----------------------------------------------------------

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    return push(value(a) + value(b), any(a, b), [=, this](const Mat& g) {
      acc(a, g);
      acc(b, g);
    });
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    return push(value(a) - value(b), any(a, b), [=, this](const Mat& g) {
      acc(a, g);
      acc(b, -g);
    });
  }

  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    return push(value(a).cwiseProduct(value(b)), any(a, b), [=, this](const Mat& g) {
      if (rg(a)) acc(a, g.cwiseProduct(value(b)));
      if (rg(b)) acc(b, g.cwiseProduct(value(a)));
    });
  }

  Var scale(Var a, double c) {
    return push(c * value(a), rg(a), [=, this](const Mat& g) { acc(a, c * g); });
  }

  /// a (n x k) plus the 1 x k row `b` on every row.
  Var add_row(Var a, Var b) {
    require(value(b).rows() == 1 && value(b).cols() == value(a).cols(), "add_row: bias shape mismatch");
    Mat out = value(a);
    out.rowwise() += value(b).row(0);
    return push(std::move(out), any(a, b), [=, this](const Mat& g) {
      if (rg(a)) acc(a, g);
      if (rg(b)) acc(b, g.colwise().sum());
    });
  }

  Var tanh(Var a) {
    Mat out = value(a).array().tanh().matrix();
    const int id = static_cast<int>(nodes_.size());
    return push(std::move(out), rg(a), [=, this](const Mat& g) {
      const Mat& y = nodes_[static_cast<std::size_t>(id)].value;
      acc(a, (g.array() * (1.0 - y.array().square())).matrix());
    });
  }

  Var sigmoid(Var a) {
    Mat out = (1.0 / (1.0 + (-value(a).array()).exp())).matrix();
    const int id = static_cast<int>(nodes_.size());
    return push(std::move(out), rg(a), [=, this](const Mat& g) {
      const Mat& y = nodes_[static_cast<std::size_t>(id)].value;
      acc(a, (g.array() * y.array() * (1.0 - y.array())).matrix());
    });
  }

  /// Tangent of tanh: (1 - h^2) * hdot where h = tanh(a) is already recorded.
  Var tanh_jvp(Var h, Var hdot_in) {
    check_same(h, hdot_in, "tanh_jvp");
    const Mat& hv = value(h);
    Mat out = ((1.0 - hv.array().square()) * value(hdot_in).array()).matrix();
    return push(std::move(out), any(h, hdot_in), [=, this](const Mat& g) {
      const Mat& hv2 = value(h);
      if (rg(h)) acc(h, (-2.0 * g.array() * hv2.array() * value(hdot_in).array()).matrix());
      if (rg(hdot_in)) acc(hdot_in, (g.array() * (1.0 - hv2.array().square())).matrix());
    });
  }

  /// Multiplies row i by c[i] (c is data, not differentiated).
  Var scale_rows(Var a, const Eigen::VectorXd& c) {
    require(c.size() == value(a).rows(), "scale_rows: length mismatch");
    return push(c.asDiagonal() * value(a), rg(a), [=, this](const Mat& g) { acc(a, c.asDiagonal() * g); });
  }

  /// Multiplies column j by c[j] (c is data, not differentiated).
  Var scale_cols(Var a, const Eigen::VectorXd& c) {
    require(c.size() == value(a).cols(), "scale_cols: length mismatch");
    return push(value(a) * c.asDiagonal(), rg(a), [=, this](const Mat& g) { acc(a, g * c.asDiagonal()); });
  }

  // ---- products -------------------------------------------------------------

  Var matmul(Var a, Var b) {
    require(value(a).cols() == value(b).rows(), "matmul: inner dimension mismatch");
    return push(value(a) * value(b), any(a, b), [=, this](const Mat& g) {
      if (rg(a)) acc(a, g * value(b).transpose());
      if (rg(b)) acc(b, value(a).transpose() * g);
    });
  }

  /// a * b^T. With a = batch rows and b = a weight matrix this is an affine map.
  Var matmul_nt(Var a, Var b) {
    require(value(a).cols() == value(b).cols(), "matmul_nt: inner dimension mismatch");
    return push(value(a) * value(b).transpose(), any(a, b), [=, this](const Mat& g) {
      if (rg(a)) acc(a, g * value(b));
      if (rg(b)) acc(b, g.transpose() * value(a));
    });
  }

  /// Per-sample matrix-vector products. Column i of `dt` (P x n) holds sample
  /// i's flattened row-major weights; the block [offset, offset + rows*cols)
  /// is applied to row i of `x` (n x cols). Result is n x rows.
  Var batched_matvec(Var dt, Var x, std::size_t offset, Eigen::Index rows, Eigen::Index cols) {
    const Mat& d = value(dt);
    const Mat& xv = value(x);
    const auto n = xv.rows();
    require(d.cols() == n, "batched_matvec: batch size mismatch");
    require(xv.cols() == cols, "batched_matvec: input width mismatch");
    require(static_cast<Eigen::Index>(offset) + rows * cols <= d.rows(), "batched_matvec: block out of range");
    Mat out(n, rows);
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Map<const RowMat> w(d.col(i).data() + offset, rows, cols);
      out.row(i).noalias() = (w * xv.row(i).transpose()).transpose();
    }
    return push(std::move(out), any(dt, x), [=, this](const Mat& g) {
      const Mat& dv = value(dt);
      const Mat& xv2 = value(x);
      if (rg(dt)) {
        Mat& gd = slot(dt);
        for (Eigen::Index i = 0; i < n; ++i) {
          Eigen::Map<RowMat> gw(gd.col(i).data() + offset, rows, cols);
          gw.noalias() += g.row(i).transpose() * xv2.row(i);
        }
      }
      if (rg(x)) {
        Mat& gx = slot(x);
        for (Eigen::Index i = 0; i < n; ++i) {
          Eigen::Map<const RowMat> w(dv.col(i).data() + offset, rows, cols);
          gx.row(i).noalias() += (w.transpose() * g.row(i).transpose()).transpose();
        }
      }
    });
  }

  // ---- structure ------------------------------------------------------------

  Var slice_cols(Var a, Eigen::Index start, Eigen::Index n) {
    require(start >= 0 && start + n <= value(a).cols(), "slice_cols out of range");
    return push(value(a).middleCols(start, n), rg(a), [=, this](const Mat& g) {
      slot(a).middleCols(start, n) += g;
    });
  }

  Var slice_rows(Var a, Eigen::Index start, Eigen::Index n) {
    require(start >= 0 && start + n <= value(a).rows(), "slice_rows out of range");
    return push(value(a).middleRows(start, n), rg(a), [=, this](const Mat& g) {
      slot(a).middleRows(start, n) += g;
    });
  }

  Var concat_cols(Var a, Var b) {
    require(value(a).rows() == value(b).rows(), "concat_cols: row mismatch");
    const auto ca = value(a).cols(), cb = value(b).cols();
    Mat out(value(a).rows(), ca + cb);
    out << value(a), value(b);
    return push(std::move(out), any(a, b), [=, this](const Mat& g) {
      if (rg(a)) acc(a, g.leftCols(ca));
      if (rg(b)) acc(b, g.rightCols(cb));
    });
  }

  Var concat_rows(Var a, Var b) {
    require(value(a).cols() == value(b).cols(), "concat_rows: column mismatch");
    const auto ra = value(a).rows(), rb = value(b).rows();
    Mat out(ra + rb, value(a).cols());
    out << value(a), value(b);
    return push(std::move(out), any(a, b), [=, this](const Mat& g) {
      if (rg(a)) acc(a, g.topRows(ra));
      if (rg(b)) acc(b, g.bottomRows(rb));
    });
  }

  // ---- reductions -----------------------------------------------------------

  /// 1x1 sum of squared entries.
  Var sum_squares(Var a) {
    Mat out(1, 1);
    out(0, 0) = value(a).squaredNorm();
    return push(std::move(out), rg(a), [=, this](const Mat& g) { acc(a, (2.0 * g(0, 0)) * value(a)); });
  }

  Var sum(Var a) {
    Mat out(1, 1);
    out(0, 0) = value(a).sum();
    return push(std::move(out), rg(a), [=, this](const Mat& g) {
      acc(a, Mat::Constant(value(a).rows(), value(a).cols(), g(0, 0)));
    });
  }

  // ---- differentiation -------------------------------------------------------

  /// Accumulates d(out)/d(node) for every node; `out` must be 1x1.
  void backward(Var out) {
    require(value(out).size() == 1, "backward() needs a scalar output");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    slot(out).setOnes();
    for (int i = out.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
      n.backward(n.grad);
    }
  }

  /// Gradient with `source`'s layout; untouched slices are exactly zero.
  ParamStore gradients_for(const ParamStore& source) const {
    ParamStore g = source.zeros_like();
    for (const auto& b : bindings_) {
      if (b.store != &source) continue;
      const Node& n = nodes_[static_cast<std::size_t>(b.id)];
      if (n.grad.size() == 0) continue;
      Eigen::Map<RowMat>(g.data().data() + b.offset, b.rows, b.cols) += n.grad;
    }
    return g;
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    std::function<void(const Mat&)> backward;
  };
  struct Binding {
    int id;
    const ParamStore* store;
    std::size_t offset;
    Eigen::Index rows, cols;
  };

  Var push(Mat v, bool needs, std::function<void(const Mat&)> bw) {
    nodes_.push_back({std::move(v), Mat(), needs, needs ? std::move(bw) : nullptr});
    return {static_cast<int>(nodes_.size()) - 1};
  }

  bool rg(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }
  bool any(Var a, Var b) const { return rg(a) || rg(b); }

  Mat& slot(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  template <class Expr>
  void acc(Var v, const Expr& g) {
    if (!rg(v)) return;
    slot(v) += g;
  }

  void check_same(Var a, Var b, const char* op) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
      throw ContractViolation(std::string(op) + ": shape mismatch");
  }

  std::vector<Node> nodes_;
  std::vector<Binding> bindings_;
};

}  // namespace hyperkkl
