#pragma once

// Reverse-mode autodiff over dense double matrices.
//
// A Tape owns a flat list of nodes created in forward order; backward() walks
// the list in reverse, so construction order is the topological order.
// Values are cheap handles. Parameters enter as leaves that accumulate their
// gradient into an external sink matrix, which keeps the tape disposable
// between optimization steps. Everything is FP64 and single-threaded; given
// identical inputs a graph replays bit-for-bit.

#include "tgpt/core.hpp"

#include <cassert>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

namespace tgpt::ad {

using tgpt::Mat;

class Tape;

struct Value {
  Tape* tape = nullptr;
  int idx = -1;
  bool valid() const { return tape != nullptr; }
  const Mat& val() const;
  Eigen::Index rows() const { return val().rows(); }
  Eigen::Index cols() const { return val().cols(); }
  double scalar() const { return val()(0, 0); }
};

// Attention mask contract shared by every transformer in the project.
// `window` counts tokens for local_causal and blocks for block_causal;
// window <= 0 means unbounded. `block` is the tokens-per-block granularity
// used by block_causal. `valid` optionally gives per-group valid prefixes;
// padded positions neither attend nor are attended. A padded query row is
// given self-attention only so its softmax row stays finite; downstream
// consumers must mask such rows out themselves.
struct MaskSpec {
  enum class Kind { full, causal, local_causal, block_causal };
  Kind kind = Kind::full;
  int window = 0;
  int block = 1;
  std::vector<int> valid;

  bool allowed(int g, int i, int j, int T) const {
    const int nv = valid.empty() ? T : valid[static_cast<size_t>(g)];
    if (i >= nv) return j == i;
    if (j >= nv) return false;
    switch (kind) {
      case Kind::full:
        return true;
      case Kind::causal:
        return j <= i;
      case Kind::local_causal: {
        if (j > i) return false;
        if (window <= 0) return true;
        return j >= i - window + 1;
      }
      case Kind::block_causal: {
        const int bi = i / block, bj = j / block;
        if (bj > bi) return false;
        if (window <= 0) return true;
        return bj >= bi - window + 1;
      }
    }
    return false;
  }
};

class Tape {
 public:
  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void clear() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

  const Mat& value(Value v) const { return nodes_[static_cast<size_t>(v.idx)].value; }
  const Mat& grad(Value v) const { return nodes_[static_cast<size_t>(v.idx)].grad; }

  // ---- leaves ----

  Value constant(Mat v) { return make(std::move(v), false, {}); }

  // Parameter leaf: copies the current value in, accumulates d/dparam into
  // *grad_sink on backward. If freeze_row0 is set the first row's gradient is
  // discarded (padding rows stay zero forever).
  Value param(const Mat& value, Mat* grad_sink, bool freeze_row0 = false) {
    Value out = make(value, true, {});
    node(out).back = [grad_sink, freeze_row0](Tape& t, int self) {
      Mat& g = t.nodes_[static_cast<size_t>(self)].grad;
      if (freeze_row0 && g.rows() > 0) g.row(0).setZero();
      if (grad_sink) *grad_sink += g;
    };
    return out;
  }

  // ---- arithmetic ----

  Value add(Value a, Value b) {
    check_same_shape(a, b);
    Value out = make(value(a) + value(b), needs(a) || needs(b), {});
    node(out).back = [ai = a.idx, bi = b.idx](Tape& t, int self) {
      const Mat& g = t.g(self);
      t.acc(ai, g);
      t.acc(bi, g);
    };
    return out;
  }

  Value sub(Value a, Value b) {
    check_same_shape(a, b);
    Value out = make(value(a) - value(b), needs(a) || needs(b), {});
    node(out).back = [ai = a.idx, bi = b.idx](Tape& t, int self) {
      const Mat& g = t.g(self);
      t.acc(ai, g);
      t.acc(bi, -g);
    };
    return out;
  }

  // Broadcast-add a 1 x d row vector to every row.
  Value add_rowvec(Value a, Value bias) {
    assert(value(bias).rows() == 1 && value(a).cols() == value(bias).cols());
    Value out = make(value(a).rowwise() + value(bias).row(0), needs(a) || needs(bias), {});
    node(out).back = [ai = a.idx, bi = bias.idx](Tape& t, int self) {
      const Mat& g = t.g(self);
      t.acc(ai, g);
      t.acc(bi, g.colwise().sum());
    };
    return out;
  }

  Value scale(Value a, double s) {
    Value out = make(value(a) * s, needs(a), {});
    node(out).back = [ai = a.idx, s](Tape& t, int self) { t.acc(ai, t.g(self) * s); };
    return out;
  }

  Value hadamard(Value a, Value b) {
    check_same_shape(a, b);
    Value out = make(value(a).cwiseProduct(value(b)), needs(a) || needs(b), {});
    node(out).back = [ai = a.idx, bi = b.idx](Tape& t, int self) {
      const Mat& g = t.g(self);
      t.acc(ai, g.cwiseProduct(t.v(bi)));
      t.acc(bi, g.cwiseProduct(t.v(ai)));
    };
    return out;
  }

  // ---- matrix products ----

  Value matmul(Value a, Value b) {
    assert(value(a).cols() == value(b).rows());
    Value out = make(value(a) * value(b), needs(a) || needs(b), {});
    node(out).back = [ai = a.idx, bi = b.idx](Tape& t, int self) {
      const Mat& g = t.g(self);
      t.acc(ai, g * t.v(bi).transpose());
      t.acc(bi, t.v(ai).transpose() * g);
    };
    return out;
  }

  // a * b^T
  Value matmul_nt(Value a, Value b) {
    assert(value(a).cols() == value(b).cols());
    Value out = make(value(a) * value(b).transpose(), needs(a) || needs(b), {});
    node(out).back = [ai = a.idx, bi = b.idx](Tape& t, int self) {
      const Mat& g = t.g(self);
      t.acc(ai, g * t.v(bi));
      t.acc(bi, g.transpose() * t.v(ai));
    };
    return out;
  }

  Value transpose(Value a) {
    Value out = make(value(a).transpose(), needs(a), {});
    node(out).back = [ai = a.idx](Tape& t, int self) { t.acc(ai, t.g(self).transpose()); };
    return out;
  }

  // ---- shape ----

  // Row-major reinterpret: row i of the result is the i-th chunk of the
  // row-concatenated input. Requires r * c == numel.
  Value reshape(Value a, Eigen::Index r, Eigen::Index c) {
    const Mat& va = value(a);
    if (r * c != va.size()) throw std::invalid_argument("reshape: element count mismatch");
    Mat v = Eigen::Map<const Mat>(va.data(), r, c);
    Value out = make(std::move(v), needs(a), {});
    node(out).back = [ai = a.idx](Tape& t, int self) {
      const Mat& g = t.g(self);
      const Mat& pv = t.v(ai);
      t.acc(ai, Mat(Eigen::Map<const Mat>(g.data(), pv.rows(), pv.cols())));
    };
    return out;
  }

  Value concat_rows(const std::vector<Value>& parts) {
    assert(!parts.empty());
    Eigen::Index rows = 0;
    const Eigen::Index cols = value(parts[0]).cols();
    bool ng = false;
    for (Value p : parts) {
      assert(value(p).cols() == cols);
      rows += value(p).rows();
      ng = ng || needs(p);
    }
    Mat v(rows, cols);
    Eigen::Index at = 0;
    std::vector<int> idxs;
    std::vector<Eigen::Index> sizes;
    for (Value p : parts) {
      const Mat& pv = value(p);
      v.middleRows(at, pv.rows()) = pv;
      at += pv.rows();
      idxs.push_back(p.idx);
      sizes.push_back(pv.rows());
    }
    Value out = make(std::move(v), ng, {});
    node(out).back = [idxs, sizes](Tape& t, int self) {
      const Mat& g = t.g(self);
      Eigen::Index at2 = 0;
      for (size_t i = 0; i < idxs.size(); ++i) {
        t.acc(idxs[i], g.middleRows(at2, sizes[i]));
        at2 += sizes[i];
      }
    };
    return out;
  }

  Value concat_cols(Value a, Value b) {
    assert(value(a).rows() == value(b).rows());
    Mat v(value(a).rows(), value(a).cols() + value(b).cols());
    v.leftCols(value(a).cols()) = value(a);
    v.rightCols(value(b).cols()) = value(b);
    Value out = make(std::move(v), needs(a) || needs(b), {});
    node(out).back = [ai = a.idx, bi = b.idx](Tape& t, int self) {
      const Mat& g = t.g(self);
      const Eigen::Index ca = t.v(ai).cols();
      t.acc(ai, g.leftCols(ca));
      t.acc(bi, g.rightCols(g.cols() - ca));
    };
    return out;
  }

  Value slice_rows(Value a, Eigen::Index r0, Eigen::Index n) {
    assert(r0 >= 0 && r0 + n <= value(a).rows());
    Value out = make(value(a).middleRows(r0, n), needs(a), {});
    node(out).back = [ai = a.idx, r0, n](Tape& t, int self) {
      if (!t.nodes_[static_cast<size_t>(ai)].needs_grad) return;
      t.nodes_[static_cast<size_t>(ai)].grad.middleRows(r0, n) += t.g(self);
    };
    return out;
  }

  // out.row(i) = a.row(indices[i]); scatter-add on backward.
  Value gather_rows(Value a, std::vector<int> indices) {
    const Mat& va = value(a);
    Mat v(static_cast<Eigen::Index>(indices.size()), va.cols());
    for (size_t i = 0; i < indices.size(); ++i) {
      assert(indices[i] >= 0 && indices[i] < va.rows());
      v.row(static_cast<Eigen::Index>(i)) = va.row(indices[i]);
    }
    Value out = make(std::move(v), needs(a), {});
    node(out).back = [ai = a.idx, indices = std::move(indices)](Tape& t, int self) {
      if (!t.nodes_[static_cast<size_t>(ai)].needs_grad) return;
      const Mat& g = t.g(self);
      Mat& pg = t.nodes_[static_cast<size_t>(ai)].grad;
      for (size_t i = 0; i < indices.size(); ++i)
        pg.row(indices[i]) += g.row(static_cast<Eigen::Index>(i));
    };
    return out;
  }

  // Mean of k gathered rows per output row (hashed embedding composition).
  // indices is row-major k x N: out.row(j) = mean_i a.row(indices[i*N + j]).
  Value gather_mean_rows(Value a, std::vector<int> indices, int k) {
    assert(k > 0 && indices.size() % static_cast<size_t>(k) == 0);
    const size_t n = indices.size() / static_cast<size_t>(k);
    const Mat& va = value(a);
    Mat v = Mat::Zero(static_cast<Eigen::Index>(n), va.cols());
    for (int i = 0; i < k; ++i)
      for (size_t j = 0; j < n; ++j)
        v.row(static_cast<Eigen::Index>(j)) += va.row(indices[static_cast<size_t>(i) * n + j]);
    v /= static_cast<double>(k);
    Value out = make(std::move(v), needs(a), {});
    node(out).back = [ai = a.idx, indices = std::move(indices), k, n](Tape& t, int self) {
      if (!t.nodes_[static_cast<size_t>(ai)].needs_grad) return;
      const Mat& g = t.g(self);
      Mat& pg = t.nodes_[static_cast<size_t>(ai)].grad;
      const double inv = 1.0 / static_cast<double>(k);
      for (int i = 0; i < k; ++i)
        for (size_t j = 0; j < n; ++j)
          pg.row(indices[static_cast<size_t>(i) * n + j]) +=
              inv * g.row(static_cast<Eigen::Index>(j));
    };
    return out;
  }

  // Interleave T per-field matrices (each N x d) into (N*T) x d token rows:
  // out.row(t*T + f) = fields[f].row(t). This is how a transaction's field
  // embeddings become one token group.
  Value interleave_rows(const std::vector<Value>& fields) {
    assert(!fields.empty());
    const Eigen::Index n = value(fields[0]).rows();
    const Eigen::Index d = value(fields[0]).cols();
    const int T = static_cast<int>(fields.size());
    bool ng = false;
    std::vector<int> idxs;
    for (Value f : fields) {
      assert(value(f).rows() == n && value(f).cols() == d);
      ng = ng || needs(f);
      idxs.push_back(f.idx);
    }
    Mat v(n * T, d);
    for (Eigen::Index t = 0; t < n; ++t)
      for (int f = 0; f < T; ++f) v.row(t * T + f) = value(fields[static_cast<size_t>(f)]).row(t);
    Value out = make(std::move(v), ng, {});
    node(out).back = [idxs, n, T](Tape& t, int self) {
      const Mat& g = t.g(self);
      for (int f = 0; f < T; ++f) {
        const int pi = idxs[static_cast<size_t>(f)];
        if (!t.nodes_[static_cast<size_t>(pi)].needs_grad) continue;
        Mat& pg = t.nodes_[static_cast<size_t>(pi)].grad;
        for (Eigen::Index r = 0; r < n; ++r) pg.row(r) += g.row(r * T + f);
      }
    };
    return out;
  }

  enum class Reduce { sum, avg, max };

  // Reduce each consecutive group of T rows to one row.
  Value group_reduce(Value a, int T, Reduce kind) {
    const Mat& va = value(a);
    assert(T > 0 && va.rows() % T == 0);
    const Eigen::Index G = va.rows() / T;
    Mat v(G, va.cols());
    std::vector<int> argmax;
    if (kind == Reduce::max) argmax.resize(static_cast<size_t>(G * va.cols()));
    for (Eigen::Index g = 0; g < G; ++g) {
      auto blk = va.middleRows(g * T, T);
      if (kind == Reduce::max) {
        for (Eigen::Index c = 0; c < va.cols(); ++c) {
          Eigen::Index r;
          v(g, c) = blk.col(c).maxCoeff(&r);
          argmax[static_cast<size_t>(g * va.cols() + c)] = static_cast<int>(r);
        }
      } else {
        v.row(g) = blk.colwise().sum();
        if (kind == Reduce::avg) v.row(g) /= static_cast<double>(T);
      }
    }
    Value out = make(std::move(v), needs(a), {});
    node(out).back = [ai = a.idx, T, kind, argmax = std::move(argmax)](Tape& t, int self) {
      if (!t.nodes_[static_cast<size_t>(ai)].needs_grad) return;
      const Mat& g = t.g(self);
      Mat& pg = t.nodes_[static_cast<size_t>(ai)].grad;
      const Eigen::Index C = g.cols();
      for (Eigen::Index gr = 0; gr < g.rows(); ++gr) {
        if (kind == Reduce::max) {
          for (Eigen::Index c = 0; c < C; ++c)
            pg(gr * T + argmax[static_cast<size_t>(gr * C + c)], c) += g(gr, c);
        } else {
          const double s = kind == Reduce::avg ? 1.0 / T : 1.0;
          for (int r = 0; r < T; ++r) pg.row(gr * T + r) += s * g.row(gr);
        }
      }
    };
    return out;
  }

  // Shared left factor applied per group: e is (G * group_rows) x d, s is
  // (p x group_rows); output group g is s * e_g, stacked to (G * p) x d.
  Value block_matmul(Value s, Value e, int group_rows) {
    const Mat& S = value(s);
    const Mat& E = value(e);
    assert(S.cols() == group_rows && E.rows() % group_rows == 0);
    const Eigen::Index G = E.rows() / group_rows;
    const Eigen::Index p = S.rows();
    Mat v(G * p, E.cols());
    for (Eigen::Index g = 0; g < G; ++g)
      v.middleRows(g * p, p) = S * E.middleRows(g * group_rows, group_rows);
    Value out = make(std::move(v), needs(s) || needs(e), {});
    node(out).back = [si = s.idx, ei = e.idx, group_rows, G, p](Tape& t, int self) {
      const Mat& g = t.g(self);
      const Mat& S = t.v(si);
      const Mat& E = t.v(ei);
      const bool ns = t.nodes_[static_cast<size_t>(si)].needs_grad;
      const bool ne = t.nodes_[static_cast<size_t>(ei)].needs_grad;
      Mat dS = ns ? Mat(Mat::Zero(S.rows(), S.cols())) : Mat();
      for (Eigen::Index gr = 0; gr < G; ++gr) {
        auto Gb = g.middleRows(gr * p, p);
        auto Eb = E.middleRows(gr * group_rows, group_rows);
        if (ns) dS += Gb * Eb.transpose();
        if (ne) t.nodes_[static_cast<size_t>(ei)].grad.middleRows(gr * group_rows, group_rows) +=
            S.transpose() * Gb;
      }
      if (ns) t.acc(si, dS);
    };
    return out;
  }

  // ---- elementwise nonlinearities ----

  Value tanh_(Value a) {
    Value out = make(value(a).array().tanh().matrix(), needs(a), {});
    node(out).back = [ai = a.idx, oi = out.idx](Tape& t, int self) {
      const Mat& y = t.v(oi);
      t.acc(ai, t.g(self).cwiseProduct((1.0 - y.array().square()).matrix()));
    };
    return out;
  }

  Value sigmoid(Value a) {
    Mat v = (1.0 / (1.0 + (-value(a).array()).exp())).matrix();
    Value out = make(std::move(v), needs(a), {});
    node(out).back = [ai = a.idx, oi = out.idx](Tape& t, int self) {
      const Mat& y = t.v(oi);
      t.acc(ai, t.g(self).cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
    };
    return out;
  }

  // Exact GELU, x * Phi(x).
  Value gelu(Value a) {
    const Mat& x = value(a);
    Mat v(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double xi = x.data()[i];
      v.data()[i] = 0.5 * xi * (1.0 + std::erf(xi / std::sqrt(2.0)));
    }
    Value out = make(std::move(v), needs(a), {});
    node(out).back = [ai = a.idx](Tape& t, int self) {
      const Mat& g = t.g(self);
      const Mat& x = t.v(ai);
      Mat d(x.rows(), x.cols());
      constexpr double inv_sqrt2 = 0.7071067811865475244;
      constexpr double inv_sqrt2pi = 0.3989422804014326779;
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double xi = x.data()[i];
        const double phi = 0.5 * (1.0 + std::erf(xi * inv_sqrt2));
        d.data()[i] = phi + xi * inv_sqrt2pi * std::exp(-0.5 * xi * xi);
      }
      t.acc(ai, g.cwiseProduct(d));
    };
    return out;
  }

  // ---- normalization ----

  Value softmax_rows(Value a) {
    const Mat& x = value(a);
    Mat v(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double m = x.row(r).maxCoeff();
      Eigen::ArrayXd e = (x.row(r).array() - m).exp();
      v.row(r) = (e / e.sum()).matrix();
    }
    Value out = make(std::move(v), needs(a), {});
    node(out).back = [ai = a.idx, oi = out.idx](Tape& t, int self) {
      const Mat& g = t.g(self);
      const Mat& p = t.v(oi);
      Mat d(p.rows(), p.cols());
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        const double dot = g.row(r).dot(p.row(r));
        d.row(r) = p.row(r).cwiseProduct(g.row(r) - Mat::Constant(1, p.cols(), dot));
      }
      t.acc(ai, d);
    };
    return out;
  }

  // Row-wise layer normalization with learnable scale/shift.
  Value layer_norm(Value a, Value gamma, Value beta, double eps = 1e-5) {
    const Mat& x = value(a);
    const Eigen::Index C = x.cols();
    assert(value(gamma).rows() == 1 && value(gamma).cols() == C);
    assert(value(beta).rows() == 1 && value(beta).cols() == C);
    Mat xhat(x.rows(), C);
    Vec inv_sigma(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double mu = x.row(r).mean();
      const double var = (x.row(r).array() - mu).square().mean();
      inv_sigma(r) = 1.0 / std::sqrt(var + eps);
      xhat.row(r) = (x.row(r).array() - mu).matrix() * inv_sigma(r);
    }
    Mat v = (xhat.array().rowwise() * value(gamma).row(0).array()).matrix().rowwise() +
            value(beta).row(0);
    Value out = make(std::move(v), needs(a) || needs(gamma) || needs(beta), {});
    node(out).back = [ai = a.idx, gi = gamma.idx, bi = beta.idx, xhat = std::move(xhat),
                      inv_sigma = std::move(inv_sigma)](Tape& t, int self) {
      const Mat& g = t.g(self);
      const Eigen::Index C2 = g.cols();
      t.acc(gi, (g.array() * xhat.array()).colwise().sum().matrix());
      t.acc(bi, g.colwise().sum());
      if (!t.nodes_[static_cast<size_t>(ai)].needs_grad) return;
      const Mat& gam = t.v(gi);
      Mat dx(g.rows(), C2);
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        Eigen::RowVectorXd dxh = g.row(r).cwiseProduct(gam.row(0));
        const double m1 = dxh.mean();
        const double m2 = dxh.cwiseProduct(xhat.row(r)).mean();
        dx.row(r) = inv_sigma(r) *
                    (dxh.array() - m1 - xhat.row(r).array() * m2).matrix();
      }
      t.acc(ai, dx);
    };
    return out;
  }

  // Column-wise batch normalization over rows. Statistics come from rows
  // marked valid (all rows when row_mask is empty); the affine transform is
  // applied to every row. In training mode running statistics are updated
  // in place; in inference mode they are used instead of batch statistics.
  Value batch_norm(Value a, Value gamma, Value beta, Mat* running_mean, Mat* running_var,
                   bool training, const std::vector<uint8_t>& row_mask = {},
                   double momentum = 0.1, double eps = 1e-5) {
    const Mat& x = value(a);
    const Eigen::Index R = x.rows(), C = x.cols();
    assert(row_mask.empty() || static_cast<Eigen::Index>(row_mask.size()) == R);
    Vec mu(C), var(C);
    double n_valid = 0;
    if (training) {
      mu.setZero();
      var.setZero();
      for (Eigen::Index r = 0; r < R; ++r) {
        if (!row_mask.empty() && !row_mask[static_cast<size_t>(r)]) continue;
        mu += x.row(r).transpose();
        n_valid += 1;
      }
      assert(n_valid > 0);
      mu /= n_valid;
      for (Eigen::Index r = 0; r < R; ++r) {
        if (!row_mask.empty() && !row_mask[static_cast<size_t>(r)]) continue;
        var += (x.row(r).transpose() - mu).cwiseAbs2();
      }
      var /= n_valid;
      if (running_mean)
        running_mean->row(0) = (1.0 - momentum) * running_mean->row(0) + momentum * mu.transpose();
      if (running_var)
        running_var->row(0) = (1.0 - momentum) * running_var->row(0) + momentum * var.transpose();
    } else {
      mu = running_mean ? Vec(running_mean->row(0).transpose()) : Vec::Zero(C);
      var = running_var ? Vec(running_var->row(0).transpose()) : Vec::Ones(C);
    }
    Vec inv_sigma = (var.array() + eps).rsqrt().matrix();
    Mat xhat = (x.rowwise() - mu.transpose()).array().rowwise() *
               inv_sigma.transpose().array();
    Mat v = (xhat.array().rowwise() * value(gamma).row(0).array()).matrix().rowwise() +
            value(beta).row(0);
    Value out = make(std::move(v), needs(a) || needs(gamma) || needs(beta), {});
    node(out).back = [ai = a.idx, gi = gamma.idx, bi = beta.idx, xhat = std::move(xhat),
                      inv_sigma = std::move(inv_sigma), training, row_mask,
                      n_valid](Tape& t, int self) {
      const Mat& g = t.g(self);
      t.acc(gi, (g.array() * xhat.array()).colwise().sum().matrix());
      t.acc(bi, g.colwise().sum());
      if (!t.nodes_[static_cast<size_t>(ai)].needs_grad) return;
      const Mat& gam = t.v(gi);
      Mat dxhat = g.array().rowwise() * gam.row(0).array();
      if (!training) {
        t.acc(ai, (dxhat.array().rowwise() * inv_sigma.transpose().array()).matrix());
        return;
      }
      // dvar and dmu gather contributions from every row (pads included,
      // since pads are transformed too), but only valid rows feed back the
      // statistics terms.
      const Eigen::Index C2 = g.cols();
      Eigen::RowVectorXd dvar_term = Eigen::RowVectorXd::Zero(C2);
      Eigen::RowVectorXd dmu = Eigen::RowVectorXd::Zero(C2);
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        dvar_term += dxhat.row(r).cwiseProduct(xhat.row(r));
        dmu -= dxhat.row(r);
      }
      // dvar expressed through xhat: d var = -1/2 * inv_sigma^3 * sum dxhat*(x-mu)
      //                                    = -1/2 * inv_sigma^2 * sum dxhat*xhat
      Eigen::RowVectorXd is = inv_sigma.transpose();
      Eigen::RowVectorXd dvar =
          -0.5 * dvar_term.cwiseProduct(is.cwiseProduct(is));
      dmu = dmu.cwiseProduct(is);
      Mat dx(g.rows(), C2);
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        dx.row(r) = dxhat.row(r).cwiseProduct(is);
        const bool is_valid = row_mask.empty() || row_mask[static_cast<size_t>(r)];
        if (is_valid) {
          // x - mu = xhat / inv_sigma
          dx.row(r) += (2.0 / n_valid) * dvar.cwiseProduct(
                           xhat.row(r).cwiseQuotient(is)) +
                       dmu / n_valid;
        }
      }
      t.acc(ai, dx);
    };
    return out;
  }

  // ---- attention ----

  // Fused grouped multi-head scaled dot-product self-attention.
  // q, k, v are (G * T) x d with G = rows / group_size consecutive groups;
  // the mask decides which within-group pairs may interact. Returns the
  // concatenated head outputs (no output projection).
  Value attention(Value q, Value k, Value v, int n_heads, int group_size,
                  const MaskSpec& mask) {
    const Mat& Q = value(q);
    const Mat& K = value(k);
    const Mat& V = value(v);
    const Eigen::Index R = Q.rows(), d = Q.cols();
    assert(K.rows() == R && V.rows() == R && K.cols() == d && V.cols() == d);
    assert(group_size > 0 && R % group_size == 0);
    assert(d % n_heads == 0);
    const int T = group_size;
    const Eigen::Index G = R / T;
    assert(mask.valid.empty() || static_cast<Eigen::Index>(mask.valid.size()) == G);
    const Eigen::Index dh = d / n_heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    constexpr double ninf = -std::numeric_limits<double>::infinity();

    Mat out(R, d);
    // The mask depends on the group only through its valid prefix, so one
    // boolean matrix per distinct prefix serves every group and head; fully
    // allowed groups skip masking altogether. Probabilities are cached for
    // the backward pass.
    std::vector<Mat> probs(static_cast<size_t>(G) * static_cast<size_t>(n_heads));
    using BoolMat = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;
    std::vector<std::pair<int, BoolMat>> allow_by_nv;
    for (Eigen::Index g = 0; g < G; ++g) {
      const int nv = mask.valid.empty() ? T : mask.valid[static_cast<size_t>(g)];
      const bool all_allowed = mask.kind == MaskSpec::Kind::full && nv == T;
      const BoolMat* allow = nullptr;
      if (!all_allowed) {
        for (const auto& e : allow_by_nv)
          if (e.first == nv) allow = &e.second;
        if (allow == nullptr) {
          BoolMat m(T, T);
          for (int i = 0; i < T; ++i)
            for (int j = 0; j < T; ++j) m(i, j) = mask.allowed(static_cast<int>(g), i, j, T);
          allow_by_nv.emplace_back(nv, std::move(m));
          allow = &allow_by_nv.back().second;
        }
      }
      for (int h = 0; h < n_heads; ++h) {
        auto Qb = Q.block(g * T, h * dh, T, dh);
        auto Kb = K.block(g * T, h * dh, T, dh);
        auto Vb = V.block(g * T, h * dh, T, dh);
        Mat S = (Qb * Kb.transpose()) * sc;
        if (allow != nullptr) S = allow->select(S, ninf);
        const Vec rowmax = S.rowwise().maxCoeff();
        Mat P = (S.colwise() - rowmax).array().exp().matrix();
        const Vec rowsum = P.rowwise().sum();
        P.array().colwise() /= rowsum.array();
        out.block(g * T, h * dh, T, dh) = P * Vb;
        probs[static_cast<size_t>(g) * static_cast<size_t>(n_heads) +
              static_cast<size_t>(h)] = std::move(P);
      }
    }
    Value res = make(std::move(out), needs(q) || needs(k) || needs(v), {});
    node(res).back = [qi = q.idx, ki = k.idx, vi = v.idx, n_heads, T, G, dh, sc,
                      probs = std::move(probs)](Tape& t, int self) {
      const Mat& g = t.g(self);
      const Mat& Q = t.v(qi);
      const Mat& K = t.v(ki);
      const Mat& V = t.v(vi);
      Mat dQ = Mat::Zero(Q.rows(), Q.cols());
      Mat dK = Mat::Zero(K.rows(), K.cols());
      Mat dV = Mat::Zero(V.rows(), V.cols());
      for (Eigen::Index gr = 0; gr < G; ++gr) {
        for (int h = 0; h < n_heads; ++h) {
          const Mat& P = probs[static_cast<size_t>(gr) * static_cast<size_t>(n_heads) +
                               static_cast<size_t>(h)];
          auto Gb = g.block(gr * T, h * dh, T, dh);
          auto Qb = Q.block(gr * T, h * dh, T, dh);
          auto Kb = K.block(gr * T, h * dh, T, dh);
          auto Vb = V.block(gr * T, h * dh, T, dh);
          dV.block(gr * T, h * dh, T, dh) += P.transpose() * Gb;
          Mat dP = Gb * Vb.transpose();
          Mat dS(T, T);
          for (int i = 0; i < T; ++i) {
            const double dot = dP.row(i).dot(P.row(i));
            dS.row(i) = P.row(i).cwiseProduct(dP.row(i) - Mat::Constant(1, T, dot));
          }
          dQ.block(gr * T, h * dh, T, dh) += (dS * Kb) * sc;
          dK.block(gr * T, h * dh, T, dh) += (dS.transpose() * Qb) * sc;
        }
      }
      t.acc(qi, dQ);
      t.acc(ki, dK);
      t.acc(vi, dV);
    };
    return res;
  }

  // ---- fused embedding helper ----

  // Per-feature affine lift of raw feature values: given values (N x F),
  // weight and bias (F x d), emits (N*F) x d where row (t*F + i) is
  // values(t, i) * W.row(i) + B.row(i).
  Value feature_embed(const Mat& values, Value W, Value B) {
    const Eigen::Index N = values.rows(), F = values.cols();
    assert(value(W).rows() == F && value(B).rows() == F);
    const Eigen::Index d = value(W).cols();
    Mat v(N * F, d);
    for (Eigen::Index t = 0; t < N; ++t)
      for (Eigen::Index i = 0; i < F; ++i)
        v.row(t * F + i) = values(t, i) * value(W).row(i) + value(B).row(i);
    Value out = make(std::move(v), needs(W) || needs(B), {});
    node(out).back = [wi = W.idx, bi = B.idx, values](Tape& t, int self) {
      const Mat& g = t.g(self);
      const Eigen::Index N2 = values.rows(), F2 = values.cols();
      Mat dW = Mat::Zero(F2, g.cols());
      Mat dB = Mat::Zero(F2, g.cols());
      for (Eigen::Index tt = 0; tt < N2; ++tt)
        for (Eigen::Index i = 0; i < F2; ++i) {
          dW.row(i) += values(tt, i) * g.row(tt * F2 + i);
          dB.row(i) += g.row(tt * F2 + i);
        }
      t.acc(wi, dW);
      t.acc(bi, dB);
    };
    return out;
  }

  // ---- dropout ----

  Value dropout(Value a, double rate, std::mt19937_64& rng, bool training) {
    if (!training || rate <= 0.0) return a;
    const Mat& x = value(a);
    std::bernoulli_distribution keep(1.0 - rate);
    Mat mask(x.rows(), x.cols());
    const double inv = 1.0 / (1.0 - rate);
    for (Eigen::Index i = 0; i < x.size(); ++i) mask.data()[i] = keep(rng) ? inv : 0.0;
    Value out = make(x.cwiseProduct(mask), needs(a), {});
    node(out).back = [ai = a.idx, mask = std::move(mask)](Tape& t, int self) {
      t.acc(ai, t.g(self).cwiseProduct(mask));
    };
    return out;
  }

  // ---- reductions and losses ----

  Value sum_all(Value a) {
    Value out = make(Mat::Constant(1, 1, value(a).sum()), needs(a), {});
    node(out).back = [ai = a.idx](Tape& t, int self) {
      const double g = t.g(self)(0, 0);
      const Mat& pv = t.v(ai);
      t.acc(ai, Mat::Constant(pv.rows(), pv.cols(), g));
    };
    return out;
  }

  Value mean_all(Value a) { return scale(sum_all(a), 1.0 / static_cast<double>(value(a).size())); }

  // Sum of squared entries; skip_row0 leaves padding rows out (weight decay
  // must not touch frozen padding rows).
  Value sum_square(Value a, bool skip_row0 = false) {
    const Mat& x = value(a);
    const Eigen::Index r0 = skip_row0 ? 1 : 0;
    double s = 0.0;
    for (Eigen::Index r = r0; r < x.rows(); ++r) s += x.row(r).squaredNorm();
    Value out = make(Mat::Constant(1, 1, s), needs(a), {});
    node(out).back = [ai = a.idx, r0](Tape& t, int self) {
      if (!t.nodes_[static_cast<size_t>(ai)].needs_grad) return;
      const double g = t.g(self)(0, 0);
      const Mat& pv = t.v(ai);
      Mat& pg = t.nodes_[static_cast<size_t>(ai)].grad;
      pg.middleRows(r0, pv.rows() - r0) += 2.0 * g * pv.middleRows(r0, pv.rows() - r0);
    };
    return out;
  }

  // weights[i] * scalars[i] summed into one 1x1 node.
  Value weighted_sum(const std::vector<Value>& scalars, const std::vector<double>& weights) {
    assert(scalars.size() == weights.size());
    double s = 0.0;
    bool ng = false;
    std::vector<int> idxs;
    for (size_t i = 0; i < scalars.size(); ++i) {
      assert(value(scalars[i]).size() == 1);
      s += weights[i] * scalars[i].scalar();
      ng = ng || needs(scalars[i]);
      idxs.push_back(scalars[i].idx);
    }
    Value out = make(Mat::Constant(1, 1, s), ng, {});
    node(out).back = [idxs, weights](Tape& t, int self) {
      const double g = t.g(self)(0, 0);
      for (size_t i = 0; i < idxs.size(); ++i)
        t.acc(idxs[i], Mat::Constant(1, 1, g * weights[i]));
    };
    return out;
  }

  // Mean softmax cross-entropy over valid rows. targets hold class indices;
  // rows with valid[r] == 0 contribute nothing.
  Value cross_entropy(Value logits, const std::vector<int>& targets,
                      const std::vector<uint8_t>& valid) {
    const Mat& L = value(logits);
    const Eigen::Index R = L.rows();
    assert(static_cast<Eigen::Index>(targets.size()) == R);
    assert(valid.empty() || static_cast<Eigen::Index>(valid.size()) == R);
    double n_valid = 0.0, loss = 0.0;
    Mat soft(R, L.cols());
    for (Eigen::Index r = 0; r < R; ++r) {
      if (!valid.empty() && !valid[static_cast<size_t>(r)]) {
        soft.row(r).setZero();
        continue;
      }
      assert(targets[static_cast<size_t>(r)] >= 0 &&
             targets[static_cast<size_t>(r)] < L.cols());
      const double m = L.row(r).maxCoeff();
      Eigen::ArrayXd e = (L.row(r).array() - m).exp();
      const double Z = e.sum();
      soft.row(r) = (e / Z).matrix();
      loss += std::log(Z) + m - L(r, targets[static_cast<size_t>(r)]);
      n_valid += 1.0;
    }
    assert(n_valid > 0);
    loss /= n_valid;
    Value out = make(Mat::Constant(1, 1, loss), needs(logits), {});
    node(out).back = [li = logits.idx, targets, valid, soft = std::move(soft),
                      n_valid](Tape& t, int self) {
      if (!t.nodes_[static_cast<size_t>(li)].needs_grad) return;
      const double g = t.g(self)(0, 0) / n_valid;
      Mat d = soft;
      for (Eigen::Index r = 0; r < d.rows(); ++r) {
        if (!valid.empty() && !valid[static_cast<size_t>(r)]) continue;
        d(r, targets[static_cast<size_t>(r)]) -= 1.0;
      }
      t.acc(li, d * g);
    };
    return out;
  }

  // Mean squared error between a column of predictions and targets, over
  // valid rows.
  Value squared_error(Value pred, const Vec& targets, const std::vector<uint8_t>& valid) {
    const Mat& p = value(pred);
    assert(p.cols() == 1 && p.rows() == targets.size());
    double n_valid = 0.0, loss = 0.0;
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      if (!valid.empty() && !valid[static_cast<size_t>(r)]) continue;
      const double d = p(r, 0) - targets(r);
      loss += d * d;
      n_valid += 1.0;
    }
    assert(n_valid > 0);
    loss /= n_valid;
    Value out = make(Mat::Constant(1, 1, loss), needs(pred), {});
    node(out).back = [pi = pred.idx, targets, valid, n_valid](Tape& t, int self) {
      if (!t.nodes_[static_cast<size_t>(pi)].needs_grad) return;
      const double g = t.g(self)(0, 0);
      const Mat& p = t.v(pi);
      Mat d = Mat::Zero(p.rows(), 1);
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        if (!valid.empty() && !valid[static_cast<size_t>(r)]) continue;
        d(r, 0) = 2.0 * (p(r, 0) - targets(r)) * g / n_valid;
      }
      t.acc(pi, d);
    };
    return out;
  }

  // Mean over groups of || E_g E_g^T - I ||_F^2 where E is (G*v) x d.
  Value orthogonality_penalty(Value e, int v_rows) {
    const Mat& E = value(e);
    assert(v_rows > 0 && E.rows() % v_rows == 0);
    const Eigen::Index G = E.rows() / v_rows;
    const Mat I = Mat::Identity(v_rows, v_rows);
    double s = 0.0;
    for (Eigen::Index g = 0; g < G; ++g) {
      auto Eb = E.middleRows(g * v_rows, v_rows);
      s += (Eb * Eb.transpose() - I).squaredNorm();
    }
    s /= static_cast<double>(G);
    Value out = make(Mat::Constant(1, 1, s), needs(e), {});
    node(out).back = [ei = e.idx, v_rows, G, I](Tape& t, int self) {
      if (!t.nodes_[static_cast<size_t>(ei)].needs_grad) return;
      const double g = t.g(self)(0, 0);
      const Mat& E = t.v(ei);
      Mat& pg = t.nodes_[static_cast<size_t>(ei)].grad;
      const double c = 4.0 * g / static_cast<double>(G);
      for (Eigen::Index gr = 0; gr < G; ++gr) {
        auto Eb = E.middleRows(gr * v_rows, v_rows);
        pg.middleRows(gr * v_rows, v_rows) += c * ((Eb * Eb.transpose() - I) * Eb);
      }
    };
    return out;
  }

  // ---- backward driver ----

  void backward(Value root) {
    assert(root.tape == this && value(root).size() == 1);
    const size_t n = static_cast<size_t>(root.idx) + 1;
    for (size_t i = 0; i < n; ++i) {
      Node& nd = nodes_[i];
      if (nd.needs_grad) nd.grad = Mat::Zero(nd.value.rows(), nd.value.cols());
    }
    nodes_[static_cast<size_t>(root.idx)].grad(0, 0) = 1.0;
    for (size_t i = n; i-- > 0;) {
      Node& nd = nodes_[i];
      if (nd.needs_grad && nd.back) nd.back(*this, static_cast<int>(i));
    }
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&, int)> back;
    bool needs_grad = false;
  };

  friend struct Value;

  std::vector<Node> nodes_;

  Node& node(Value v) { return nodes_[static_cast<size_t>(v.idx)]; }
  bool needs(Value v) const { return nodes_[static_cast<size_t>(v.idx)].needs_grad; }
  const Mat& v(int idx) const { return nodes_[static_cast<size_t>(idx)].value; }
  const Mat& g(int idx) const { return nodes_[static_cast<size_t>(idx)].grad; }

  void acc(int idx, const Mat& m) {
    Node& nd = nodes_[static_cast<size_t>(idx)];
    if (nd.needs_grad) nd.grad += m;
  }

  void check_same_shape(Value a, Value b) const {
    assert(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols());
    (void)a;
    (void)b;
  }

  Value make(Mat v, bool needs_grad, std::function<void(Tape&, int)> back) {
    Node nd;
    nd.value = std::move(v);
    nd.back = std::move(back);
    nd.needs_grad = needs_grad;
    nodes_.push_back(std::move(nd));
    return Value{this, static_cast<int>(nodes_.size() - 1)};
  }
};

inline const Mat& Value::val() const { return tape->value(*this); }

}  // namespace tgpt::ad
