#pragma once

// Minimal reverse-mode tape over small row-major Eigen matrices. Only the
// operations the toy transformer needs are provided; every op records a
// closure that pushes gradients to its inputs.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

namespace sdls::detail {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
class Tape {
 public:
  using M = Mat<T>;

  /// Parameter leaf: value owned elsewhere, gradient accumulated into `grad`.
  int param(const M* value, M* grad) {
    Node n;
    n.ext = value;
    n.ext_grad = grad;
    nodes_.push_back(std::move(n));
    return last();
  }

  int constant(M value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return last();
  }

  const M& val(int i) const {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    return n.ext ? *n.ext : n.value;
  }

  M& grad(int i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.ext_grad) return *n.ext_grad;
    if (n.grad.size() == 0) {
      const M& v = val(i);
      n.grad = M::Zero(v.rows(), v.cols());
    }
    return n.grad;
  }

  int matmul(int a, int b) {
    int out = emit(val(a) * val(b));
    set_back(out, [a, b, out](Tape& t) {
      const M& g = t.grad(out);
      if (t.needs(a)) t.grad(a).noalias() += g * t.val(b).transpose();
      if (t.needs(b)) t.grad(b).noalias() += t.val(a).transpose() * g;
    });
    return out;
  }

  int add(int a, int b) {
    int out = emit(val(a) + val(b));
    set_back(out, [a, b, out](Tape& t) {
      const M& g = t.grad(out);
      if (t.needs(a)) t.grad(a) += g;
      if (t.needs(b)) t.grad(b) += g;
    });
    return out;
  }

  /// x (n×m) + bias (1×m) broadcast over rows.
  int add_bias(int x, int bias) {
    M y = val(x);
    y.rowwise() += val(bias).row(0);
    int out = emit(std::move(y));
    set_back(out, [x, bias, out](Tape& t) {
      const M& g = t.grad(out);
      if (t.needs(x)) t.grad(x) += g;
      if (t.needs(bias)) t.grad(bias).row(0) += g.colwise().sum();
    });
    return out;
  }

  int relu(int x) {
    int out = emit(val(x).cwiseMax(T(0)));
    set_back(out, [x, out](Tape& t) {
      const M& g = t.grad(out);
      t.grad(x) += (t.val(x).array() > T(0)).select(g, M::Zero(g.rows(), g.cols()));
    });
    return out;
  }

  int layer_norm(int x, int gain, int bias, T eps = T(1e-5)) {
    const M& xv = val(x);
    const auto rows = xv.rows();
    const auto cols = xv.cols();
    auto xhat = std::make_shared<M>(rows, cols);
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
    for (Eigen::Index r = 0; r < rows; ++r) {
      const T mean = xv.row(r).mean();
      const T var = (xv.row(r).array() - mean).square().mean();
      const T is = T(1) / std::sqrt(var + eps);
      (*inv_std)[static_cast<std::size_t>(r)] = is;
      xhat->row(r) = (xv.row(r).array() - mean) * is;
    }
    M y = xhat->array().rowwise() * val(gain).row(0).array();
    y.rowwise() += val(bias).row(0);
    int out = emit(std::move(y));
    set_back(out, [x, gain, bias, out, xhat, inv_std](Tape& t) {
      const M& g = t.grad(out);
      if (t.needs(gain)) t.grad(gain).row(0) += (g.array() * xhat->array()).colwise().sum().matrix();
      if (t.needs(bias)) t.grad(bias).row(0) += g.colwise().sum();
      if (!t.needs(x)) return;
      M& gx = t.grad(x);
      const auto gv = t.val(gain).row(0).array();
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const auto dxhat = (g.row(r).array() * gv).eval();
        const T m1 = dxhat.mean();
        const T m2 = (dxhat * xhat->row(r).array()).mean();
        gx.row(r).array() +=
            (dxhat - m1 - xhat->row(r).array() * m2) * (*inv_std)[static_cast<std::size_t>(r)];
      }
    });
    return out;
  }

  /// Row block of a stacked batch: queries [q0, q0+qn) attend keys [k0, k0+kn).
  struct Segment {
    Eigen::Index q0, qn, k0, kn;
  };

  /// Multi-head scaled dot-product attention over stacked sequences.
  /// q: n×d, k/v: s×d; each segment attends only within its own rows.
  int attention(int q, int k, int v, int heads, bool causal, std::vector<Segment> segments) {
    const M& qv = val(q);
    const M& kv = val(k);
    const M& vv = val(v);
    const auto d = qv.cols();
    const auto dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    auto probs = std::make_shared<std::vector<M>>();
    M out = M::Zero(qv.rows(), d);
    for (const Segment& sg : segments) {
      for (int h = 0; h < heads; ++h) {
        M scores = (qv.block(sg.q0, h * dh, sg.qn, dh) * kv.block(sg.k0, h * dh, sg.kn, dh).transpose()) * scale;
        for (Eigen::Index i = 0; i < sg.qn; ++i) {
          const Eigen::Index limit = causal ? std::min<Eigen::Index>(i + 1, sg.kn) : sg.kn;
          T mx = scores(i, 0);
          for (Eigen::Index j = 1; j < limit; ++j) mx = std::max(mx, scores(i, j));
          T sum = 0;
          for (Eigen::Index j = 0; j < sg.kn; ++j) {
            const T e = j < limit ? std::exp(scores(i, j) - mx) : T(0);
            scores(i, j) = e;
            sum += e;
          }
          scores.row(i) /= sum;
        }
        out.block(sg.q0, h * dh, sg.qn, dh).noalias() = scores * vv.block(sg.k0, h * dh, sg.kn, dh);
        probs->push_back(std::move(scores));
      }
    }
    int o = emit(std::move(out));
    set_back(o, [q, k, v, o, heads, dh, scale, probs, segments = std::move(segments)](Tape& t) {
      const M& g = t.grad(o);
      const M& qv2 = t.val(q);
      const M& kv2 = t.val(k);
      const M& vv2 = t.val(v);
      M dq = M::Zero(qv2.rows(), qv2.cols());
      M dk = M::Zero(kv2.rows(), kv2.cols());
      M dv = M::Zero(vv2.rows(), vv2.cols());
      std::size_t pi = 0;
      for (const Segment& sg : segments) {
        for (int h = 0; h < heads; ++h) {
          const M& p = (*probs)[pi++];
          const M go = g.block(sg.q0, h * dh, sg.qn, dh);
          dv.block(sg.k0, h * dh, sg.kn, dh).noalias() += p.transpose() * go;
          M dp = go * vv2.block(sg.k0, h * dh, sg.kn, dh).transpose();
          M ds = p.array() * (dp.colwise() - (dp.array() * p.array()).rowwise().sum().matrix()).array();
          ds *= scale;
          dq.block(sg.q0, h * dh, sg.qn, dh).noalias() += ds * kv2.block(sg.k0, h * dh, sg.kn, dh);
          dk.block(sg.k0, h * dh, sg.kn, dh).noalias() += ds.transpose() * qv2.block(sg.q0, h * dh, sg.qn, dh);
        }
      }
      if (t.needs(q)) t.grad(q) += dq;
      if (t.needs(k)) t.grad(k) += dk;
      if (t.needs(v)) t.grad(v) += dv;
    });
    return o;
  }

  int gather_rows(int table, std::vector<int> ids) {
    const M& tv = val(table);
    M out(static_cast<Eigen::Index>(ids.size()), tv.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
    int o = emit(std::move(out));
    set_back(o, [table, o, ids = std::move(ids)](Tape& t) {
      if (!t.needs(table)) return;
      const M& g = t.grad(o);
      M& gt = t.grad(table);
      for (std::size_t i = 0; i < ids.size(); ++i) gt.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
    });
    return o;
  }

  int leading_rows(int table, Eigen::Index count) {
    int o = emit(val(table).topRows(count));
    set_back(o, [table, o, count](Tape& t) {
      if (t.needs(table)) t.grad(table).topRows(count) += t.grad(o);
    });
    return o;
  }

  /// Mean token cross-entropy; returns a 1×1 node.
  int cross_entropy(int logits, std::vector<int> targets) {
    const M& lv = val(logits);
    auto probs = std::make_shared<M>(lv.rows(), lv.cols());
    T loss = 0;
    for (Eigen::Index r = 0; r < lv.rows(); ++r) {
      const T mx = lv.row(r).maxCoeff();
      const auto e = (lv.row(r).array() - mx).exp().eval();
      const T sum = e.sum();
      probs->row(r) = e / sum;
      loss -= lv(r, targets[static_cast<std::size_t>(r)]) - mx - std::log(sum);
    }
    const T n = static_cast<T>(lv.rows());
    M l(1, 1);
    l(0, 0) = loss / n;
    int o = emit(std::move(l));
    set_back(o, [logits, o, probs, n, targets = std::move(targets)](Tape& t) {
      const T g = t.grad(o)(0, 0);
      M d = *probs;
      for (std::size_t r = 0; r < targets.size(); ++r) d(static_cast<Eigen::Index>(r), targets[r]) -= T(1);
      t.grad(logits) += d * (g / n);
    });
    return o;
  }

  void backward(int loss) {
    grad(loss)(0, 0) = T(1);
    for (int i = last(); i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.back && (n.grad.size() != 0)) n.back(*this);
    }
  }

 private:
  struct Node {
    M value;
    M grad;
    const M* ext = nullptr;
    M* ext_grad = nullptr;
    std::function<void(Tape&)> back;
  };

  int last() const { return static_cast<int>(nodes_.size()) - 1; }

  int emit(M value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return last();
  }

  void set_back(int node, std::function<void(Tape&)> fn) {
    nodes_[static_cast<std::size_t>(node)].back = std::move(fn);
  }

  // Constants never need gradients; everything else (params, ops) does.
  bool needs(int i) const {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    return n.ext_grad != nullptr || n.back != nullptr;
  }

  std::vector<Node> nodes_;
};

}  // namespace sdls::detail
