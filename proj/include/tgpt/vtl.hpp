#pragma once

// Virtual token layer: compresses a variable-size token set into a fixed
// number of virtual tokens through two channels.
//
//   linear:    E_lin = reshape(rowsoftmax(W) * E_in)
//   nonlinear: reshape(tanh(flatten(E_in) * W_nl + b_nl))
//   output:    E_lin + nonlinear
//
// The mixing matrix W is (n_mid x n_in) with n_mid = n_out * d_out / d_in,
// which must divide evenly; the n_mid mixed rows of width d_in are then
// reinterpreted contiguously (row-major) as n_out rows of width d_out. The
// softmax keeps every mixed row a convex combination of input tokens. tanh
// is the bounded sigmoidal-class activation on the nonlinear channel.
//
// The linear-channel output is returned separately so the orthogonality
// penalty || E_lin E_lin^T - I ||_F^2 (averaged over the batch) can be
// attached to it.

#include "tgpt/core.hpp"
#include "tgpt/params.hpp"
#include "tgpt/tape.hpp"

#include <string>

namespace tgpt::vtl {

struct VtlShape {
  int n_in = 0, d_in = 0, n_out = 0, d_out = 0;

  int n_mid() const { return n_out * d_out / d_in; }
  void validate() const;
};

class VirtualTokenLayer {
 public:
  VirtualTokenLayer() = default;
  VirtualTokenLayer(std::string prefix, VtlShape shape, ParamStore& store, std::mt19937_64& rng);

  struct Out {
    ad::Value tokens;  // (G * n_out) x d_out
    ad::Value linear;  // same shape; linear channel only, for the penalty
  };

  // e_in: (G * n_in) x d_in for G independent groups sharing the parameters.
  Out forward(ad::Tape& t, ParamStore& store, ad::Value e_in) const;

  const VtlShape& shape() const { return shape_; }
  const std::string& mix_name() const { return mix_name_; }

 private:
  std::string mix_name_, nlw_name_, nlb_name_;
  VtlShape shape_;
};

// Batch-averaged || E E^T - I_v ||_F^2 over groups of v rows.
inline ad::Value orthogonality_loss(ad::Tape& t, ad::Value e_lin, int v_rows) {
  return t.orthogonality_penalty(e_lin, v_rows);
}

}  // namespace tgpt::vtl
