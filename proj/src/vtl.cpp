#include "tgpt/vtl.hpp"

#include <stdexcept>

namespace tgpt::vtl {

void VtlShape::validate() const {
  if (n_in < 1 || d_in < 1 || n_out < 1 || d_out < 1)
    throw std::invalid_argument("vtl: all dimensions must be positive");
  if ((n_out * d_out) % d_in != 0)
    throw std::invalid_argument(
        "vtl: n_out*d_out must be a multiple of d_in (contiguous reshape plan)");
}

VirtualTokenLayer::VirtualTokenLayer(std::string prefix, VtlShape shape, ParamStore& store,
                                     std::mt19937_64& rng)
    : mix_name_(prefix + ".mix"),
      nlw_name_(prefix + ".nl.w"),
      nlb_name_(prefix + ".nl.b"),
      shape_(shape) {
  shape_.validate();
  store.add(mix_name_, randn(shape_.n_mid(), shape_.n_in, 0.5, rng));
  const int flat_in = shape_.n_in * shape_.d_in;
  const int flat_out = shape_.n_out * shape_.d_out;
  store.add(nlw_name_, randn(flat_in, flat_out, 1.0 / std::sqrt(double(flat_in)), rng));
  store.add(nlb_name_, Mat::Zero(1, flat_out));
}

VirtualTokenLayer::Out VirtualTokenLayer::forward(ad::Tape& t, ParamStore& store,
                                                  ad::Value e_in) const {
  const Eigen::Index rows = e_in.rows();
  if (e_in.cols() != shape_.d_in || rows % shape_.n_in != 0)
    throw std::invalid_argument("vtl: input must be (G*n_in) x d_in");
  const Eigen::Index G = rows / shape_.n_in;

  ad::Value mix = t.softmax_rows(store.use(t, mix_name_));
  ad::Value mid = t.block_matmul(mix, e_in, shape_.n_in);  // (G*n_mid) x d_in
  // Per-group contiguous reinterpretation: groups stay consecutive, so one
  // global reshape realizes the per-group (n_mid x d_in) -> (n_out x d_out).
  ad::Value linear = t.reshape(mid, G * shape_.n_out, shape_.d_out);

  ad::Value flat = t.reshape(e_in, G, shape_.n_in * shape_.d_in);
  ad::Value nl = t.tanh_(
      t.add_rowvec(t.matmul(flat, store.use(t, nlw_name_)), store.use(t, nlb_name_)));
  ad::Value nl_tokens = t.reshape(nl, G * shape_.n_out, shape_.d_out);

  Out out;
  out.linear = linear;
  out.tokens = t.add(linear, nl_tokens);
  return out;
}

}  // namespace tgpt::vtl
