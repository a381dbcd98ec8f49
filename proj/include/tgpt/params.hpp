#pragma once

// Named parameter storage shared by every module, plus the Adam optimizer.
//
// Trainable entries take part in optimization, weight decay (unless opted
// out) and parameter-count audits. Non-trainable entries are persistent
// state that still belongs in checkpoints (batch-norm running statistics).

#include "tgpt/core.hpp"
#include "tgpt/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace tgpt {

struct Param {
  std::string name;
  Mat value;
  Mat grad;
  bool trainable = true;
  bool decay = true;        // participates in the L2 weight-decay loss term
  bool freeze_row0 = false; // padding row: zero forever, zero gradient
};

struct ParamOpts {
  bool trainable = true;
  bool decay = true;
  bool freeze_row0 = false;
};

class ParamStore {
 public:
  Param& add(const std::string& name, Mat init, ParamOpts opts = {}) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    Param p;
    p.name = name;
    p.grad = Mat::Zero(init.rows(), init.cols());
    if (opts.freeze_row0 && init.rows() > 0) init.row(0).setZero();
    p.value = std::move(init);
    p.trainable = opts.trainable;
    p.decay = opts.decay;
    p.freeze_row0 = opts.freeze_row0;
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return params_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Param& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no such parameter: " + name);
    return params_[it->second];
  }
  const Param& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no such parameter: " + name);
    return params_[it->second];
  }

  // Put a parameter on a tape; its gradient lands back in Param::grad.
  ad::Value use(ad::Tape& t, const std::string& name) {
    Param& p = at(name);
    if (!p.trainable) return t.constant(p.value);
    return t.param(p.value, &p.grad, p.freeze_row0);
  }

  std::vector<Param>& all() { return params_; }
  const std::vector<Param>& all() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  // Number of trainable scalar coordinates (frozen padding rows excluded
  // from audits: they can never change).
  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
      if (!p.trainable) continue;
      std::size_t c = static_cast<std::size_t>(p.value.size());
      if (p.freeze_row0) c -= static_cast<std::size_t>(p.value.cols());
      n += c;
    }
    return n;
  }

  double grad_norm() const {
    double s = 0.0;
    for (const auto& p : params_)
      if (p.trainable) s += p.grad.squaredNorm();
    return std::sqrt(s);
  }

  void clip_grad_norm(double max_norm) {
    const double n = grad_norm();
    if (n > max_norm && n > 0.0) {
      const double s = max_norm / n;
      for (auto& p : params_)
        if (p.trainable) p.grad *= s;
    }
  }

 private:
  std::vector<Param> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Adam with bias correction. Weight decay is not applied here; it enters the
// loss explicitly so that a zero decay weight provably changes nothing.
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ParamStore& store) {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, t_);
    const double bc2 = 1.0 - std::pow(b2_, t_);
    for (auto& p : store.all()) {
      if (!p.trainable) continue;
      auto& st = m_[p.name];
      if (st.m.size() == 0) {
        st.m = Mat::Zero(p.value.rows(), p.value.cols());
        st.v = Mat::Zero(p.value.rows(), p.value.cols());
      }
      st.m = b1_ * st.m + (1.0 - b1_) * p.grad;
      st.v = b2_ * st.v + (1.0 - b2_) * p.grad.cwiseProduct(p.grad);
      Mat mhat = st.m / bc1;
      Mat vhat = st.v / bc2;
      p.value -= lr_ * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps_).matrix());
      if (p.freeze_row0 && p.value.rows() > 0) p.value.row(0).setZero();
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  struct Moments {
    Mat m, v;
  };
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::unordered_map<std::string, Moments> m_;
};

}  // namespace tgpt
