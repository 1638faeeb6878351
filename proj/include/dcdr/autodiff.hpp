#pragma once

/**
 * Minimal reverse-mode differentiation over dense Eigen matrices.
 *
 * A Graph records each operation eagerly (values are computed at call time)
 * together with a closure that pushes the output gradient back to the inputs.
 * Leaves bound to a Param accumulate into Param::grad when backward() runs.
 * Graphs built with record = false skip the closures entirely, which is what
 * inference uses.
 */

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dcdr/errors.hpp"

namespace dcdr::ad {

using Mat = Eigen::MatrixXd;

struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param() = default;
  Param(std::string n, Mat v) : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Graph;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}

  bool recording() const noexcept { return record_; }
  const Mat& value(Var v) const { return nodes_[v.id].value; }
  double scalar(Var v) const { return nodes_[v.id].value(0, 0); }
  const Mat& grad(Var v) const { return nodes_[v.id].grad; }

  Var constant(Mat m) { return push(std::move(m)); }

  Var param(Param& p) {
    Var out = push(p.value);
    if (record_) on_backward(out, [&p, out](Graph& g) { p.grad += g.nodes_[out.id].grad; });
    return out;
  }

  /// Rows of a parameter table (embedding lookup).
  Var lookup(Param& table, std::span<const int> rows) {
    Mat m(static_cast<Eigen::Index>(rows.size()), table.value.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = table.value.row(rows[i]);
    Var out = push(std::move(m));
    if (record_) {
      std::vector<int> idx(rows.begin(), rows.end());
      on_backward(out, [&table, out, idx = std::move(idx)](Graph& g) {
        const Mat& gr = g.nodes_[out.id].grad;
        for (std::size_t i = 0; i < idx.size(); ++i) table.grad.row(idx[i]) += gr.row(static_cast<Eigen::Index>(i));
      });
    }
    return out;
  }

  Var gather_rows(Var x, std::span<const int> rows) {
    const Mat& xv = value(x);
    Mat m(static_cast<Eigen::Index>(rows.size()), xv.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = xv.row(rows[i]);
    Var out = push(std::move(m));
    if (record_) {
      std::vector<int> idx(rows.begin(), rows.end());
      on_backward(out, [x, out, idx = std::move(idx)](Graph& g) {
        Mat& gx = g.grad_ref(x);
        const Mat& gr = g.nodes_[out.id].grad;
        for (std::size_t i = 0; i < idx.size(); ++i) gx.row(idx[i]) += gr.row(static_cast<Eigen::Index>(i));
      });
    }
    return out;
  }

  Var matmul(Var a, Var b) {
    Var out = push(value(a) * value(b));
    if (record_)
      on_backward(out, [a, b, out](Graph& g) {
        const Mat& go = g.nodes_[out.id].grad;
        g.grad_ref(a) += go * g.value(b).transpose();
        g.grad_ref(b) += g.value(a).transpose() * go;
      });
    return out;
  }

  /// a * b^T
  Var matmul_bt(Var a, Var b) {
    Var out = push(value(a) * value(b).transpose());
    if (record_)
      on_backward(out, [a, b, out](Graph& g) {
        const Mat& go = g.nodes_[out.id].grad;
        g.grad_ref(a) += go * g.value(b);
        g.grad_ref(b) += go.transpose() * g.value(a);
      });
    return out;
  }

  Var add(Var a, Var b) {
    Var out = push(value(a) + value(b));
    if (record_)
      on_backward(out, [a, b, out](Graph& g) {
        g.grad_ref(a) += g.nodes_[out.id].grad;
        g.grad_ref(b) += g.nodes_[out.id].grad;
      });
    return out;
  }

  /// a (n x m) plus a 1 x m row broadcast over every row.
  Var add_row(Var a, Var row) {
    Var out = push(value(a).rowwise() + value(row).row(0));
    if (record_)
      on_backward(out, [a, row, out](Graph& g) {
        const Mat& go = g.nodes_[out.id].grad;
        g.grad_ref(a) += go;
        g.grad_ref(row) += go.colwise().sum();
      });
    return out;
  }

  Var scale(Var a, double s) {
    Var out = push(value(a) * s);
    if (record_) on_backward(out, [a, s, out](Graph& g) { g.grad_ref(a) += g.nodes_[out.id].grad * s; });
    return out;
  }

  /// Matrix times a 1x1 variable.
  Var mul_scalar(Var a, Var s) {
    Var out = push(value(a) * scalar(s));
    if (record_)
      on_backward(out, [a, s, out](Graph& g) {
        const Mat& go = g.nodes_[out.id].grad;
        g.grad_ref(a) += go * g.scalar(s);
        g.grad_ref(s)(0, 0) += go.cwiseProduct(g.value(a)).sum();
      });
    return out;
  }

  Var exp(Var a) {
    Var out = push(value(a).array().exp().matrix());
    if (record_)
      on_backward(out, [a, out](Graph& g) {
        g.grad_ref(a) += g.nodes_[out.id].grad.cwiseProduct(g.value(out));
      });
    return out;
  }

  Var tanh(Var a) {
    Var out = push(value(a).array().tanh().matrix());
    if (record_)
      on_backward(out, [a, out](Graph& g) {
        const Mat& y = g.value(out);
        g.grad_ref(a) += g.nodes_[out.id].grad.cwiseProduct((1.0 - y.array().square()).matrix());
      });
    return out;
  }

  Var softmax_rows(Var a) {
    const Mat& x = value(a);
    Mat y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double mx = x.row(i).maxCoeff();
      y.row(i) = (x.row(i).array() - mx).exp();
      y.row(i) /= y.row(i).sum();
    }
    Var out = push(std::move(y));
    if (record_)
      on_backward(out, [a, out](Graph& g) {
        const Mat& y = g.value(out);
        const Mat& go = g.nodes_[out.id].grad;
        const Eigen::VectorXd dot = go.cwiseProduct(y).rowwise().sum();
        Mat gx = y.cwiseProduct(go);
        gx -= y.cwiseProduct(dot.replicate(1, y.cols()));
        g.grad_ref(a) += gx;
      });
    return out;
  }

  Var concat_cols(Var a, Var b) {
    const Mat& av = value(a);
    const Mat& bv = value(b);
    Mat m(av.rows(), av.cols() + bv.cols());
    m << av, bv;
    Var out = push(std::move(m));
    if (record_)
      on_backward(out, [a, b, out](Graph& g) {
        const Mat& go = g.nodes_[out.id].grad;
        const auto ac = g.value(a).cols();
        g.grad_ref(a) += go.leftCols(ac);
        g.grad_ref(b) += go.rightCols(go.cols() - ac);
      });
    return out;
  }

  /// Stack 1x1 scalars into an n x 1 column.
  Var stack(std::span<const Var> scalars) {
    Mat m(static_cast<Eigen::Index>(scalars.size()), 1);
    for (std::size_t i = 0; i < scalars.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = scalar(scalars[i]);
    Var out = push(std::move(m));
    if (record_) {
      std::vector<Var> in(scalars.begin(), scalars.end());
      on_backward(out, [out, in = std::move(in)](Graph& g) {
        const Mat& go = g.nodes_[out.id].grad;
        for (std::size_t i = 0; i < in.size(); ++i) g.grad_ref(in[i])(0, 0) += go(static_cast<Eigen::Index>(i), 0);
      });
    }
    return out;
  }

  /// Row-wise cosine similarity of two equally shaped matrices (n x 1).
  Var cosine_rows(Var a, Var b) {
    const Mat& av = value(a);
    const Mat& bv = value(b);
    const Eigen::Index n = av.rows();
    Eigen::VectorXd na(n), nb(n);
    Mat c(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      na(i) = std::max(av.row(i).norm(), kNormFloor);
      nb(i) = std::max(bv.row(i).norm(), kNormFloor);
      c(i, 0) = av.row(i).dot(bv.row(i)) / (na(i) * nb(i));
    }
    Var out = push(std::move(c));
    if (record_)
      on_backward(out, [a, b, out, na, nb](Graph& g) {
        const Mat& av = g.value(a);
        const Mat& bv = g.value(b);
        const Mat& cv = g.value(out);
        const Mat& go = g.nodes_[out.id].grad;
        Mat& ga = g.grad_ref(a);
        Mat& gb = g.grad_ref(b);
        for (Eigen::Index i = 0; i < av.rows(); ++i) {
          const double gi = go(i, 0), ci = cv(i, 0);
          ga.row(i) += gi * (bv.row(i) / (na(i) * nb(i)) - ci * av.row(i) / (na(i) * na(i)));
          gb.row(i) += gi * (av.row(i) / (na(i) * nb(i)) - ci * bv.row(i) / (nb(i) * nb(i)));
        }
      });
    return out;
  }

  Var mean(Var a) {
    const Mat& av = value(a);
    const double n = static_cast<double>(av.size());
    Var out = push(Mat::Constant(1, 1, av.sum() / n));
    if (record_)
      on_backward(out, [a, n, out](Graph& g) { g.grad_ref(a).array() += g.scalar_grad(out) / n; });
    return out;
  }

  Var sum(Var a) {
    Var out = push(Mat::Constant(1, 1, value(a).sum()));
    if (record_) on_backward(out, [a, out](Graph& g) { g.grad_ref(a).array() += g.scalar_grad(out); });
    return out;
  }

  /// log-softmax over all entries of a column.
  Var log_softmax(Var a) {
    const Mat& x = value(a);
    const double mx = x.maxCoeff();
    const double lse = mx + std::log((x.array() - mx).exp().sum());
    Var out = push((x.array() - lse).matrix());
    if (record_)
      on_backward(out, [a, out](Graph& g) {
        const Mat& go = g.nodes_[out.id].grad;
        const Mat p = g.value(out).array().exp().matrix();
        g.grad_ref(a) += go - p * go.sum();
      });
    return out;
  }

  /// KL(q || p) with p given as log-probabilities; 0 log 0 = 0.
  Var kl(std::span<const double> q, Var logp) {
    const Mat& lp = value(logp);
    if (static_cast<Eigen::Index>(q.size()) != lp.size()) throw InvalidArgument("kl: support size mismatch");
    double v = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i)
      if (q[i] > 0.0) v += q[i] * (std::log(q[i]) - lp(static_cast<Eigen::Index>(i), 0));
    Var out = push(Mat::Constant(1, 1, v));
    if (record_) {
      std::vector<double> qc(q.begin(), q.end());
      on_backward(out, [logp, out, qc = std::move(qc)](Graph& g) {
        const double go = g.scalar_grad(out);
        Mat& gl = g.grad_ref(logp);
        for (std::size_t i = 0; i < qc.size(); ++i) gl(static_cast<Eigen::Index>(i), 0) -= go * qc[i];
      });
    }
    return out;
  }

  /// Mean binary cross-entropy between sigmoid(logits) and {0,1} labels.
  Var bce_with_logits(Var logits, std::span<const int> labels) {
    const Mat& z = value(logits);
    if (static_cast<Eigen::Index>(labels.size()) != z.size()) throw InvalidArgument("bce: label count mismatch");
    const double n = static_cast<double>(labels.size());
    double v = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double x = z(i);
      // log(1 + e^{-|x|}) + max(x, 0) - x*y
      v += std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0) - x * labels[i];
    }
    Var out = push(Mat::Constant(1, 1, v / n));
    if (record_) {
      std::vector<int> y(labels.begin(), labels.end());
      on_backward(out, [logits, out, n, y = std::move(y)](Graph& g) {
        const double go = g.scalar_grad(out);
        const Mat& z = g.value(logits);
        Mat& gz = g.grad_ref(logits);
        for (Eigen::Index i = 0; i < z.size(); ++i) gz(i) += go * (1.0 / (1.0 + std::exp(-z(i))) - y[i]) / n;
      });
    }
    return out;
  }

  /// Average of several 1x1 scalars.
  Var average(std::span<const Var> scalars) {
    if (scalars.empty()) throw InvalidArgument("average of nothing");
    return scale(sum(stack(scalars)), 1.0 / static_cast<double>(scalars.size()));
  }

  /// Seeds d(out)/d(out) = 1 and runs every recorded closure in reverse.
  void backward(Var out) {
    if (!record_) throw InvalidArgument("backward on a non-recording graph");
    for (auto& n : nodes_) n.grad.setZero(n.value.rows(), n.value.cols());
    nodes_[out.id].grad.setOnes();
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i)
      if (nodes_[i].backward) nodes_[i].backward(*this);
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  static constexpr double kNormFloor = 1e-12;

  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Graph&)> backward;
  };

  Var push(Mat m) {
    nodes_.push_back(Node{std::move(m), Mat(), {}});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void on_backward(Var v, std::function<void(Graph&)> fn) { nodes_[v.id].backward = std::move(fn); }

  Mat& grad_ref(Var v) { return nodes_[v.id].grad; }
  double scalar_grad(Var v) const { return nodes_[v.id].grad(0, 0); }

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace dcdr::ad
