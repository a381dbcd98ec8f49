#include "tgpt/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace tgpt::attn {

void BlockConfig::validate() const {
  if (d_model < 1 || n_layers < 0 || n_heads < 1)
    throw std::invalid_argument("block: bad dimensions");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("block: d_model must be divisible by n_heads");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("block: bad dropout rate");
}

Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> local_causal_mask(int L, int w) {
  if (L < 1) throw std::invalid_argument("mask: L must be positive");
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> m(L, L);
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j)
      m(i, j) = j <= i && (w <= 0 || j >= i - w + 1);
  return m;
}

long local_causal_allowed_count(int L, int w) {
  if (w <= 0 || w > L) w = L;
  return static_cast<long>(L) * w - static_cast<long>(w) * (w - 1) / 2;
}

namespace {
Mat sinusoidal_table(int max_pos, int d) {
  Mat pe = Mat::Zero(max_pos, d);
  for (int p = 0; p < max_pos; ++p)
    for (int i = 0; i < d; ++i) {
      const double angle = p / std::pow(10000.0, 2.0 * (i / 2) / d);
      pe(p, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}
}  // namespace

TransformerStack::TransformerStack(std::string prefix, BlockConfig cfg, int max_positions,
                                   ParamStore& store, std::mt19937_64& rng)
    : prefix_(std::move(prefix)), cfg_(cfg), max_pos_(max_positions) {
  cfg_.validate();
  if (max_pos_ < 1) throw std::invalid_argument("stack: max_positions must be positive");
  const int d = cfg_.d_model;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  ParamOpts no_decay{.trainable = true, .decay = false, .freeze_row0 = false};

  if (cfg_.positional == Positional::one_hot) {
    // One-hot position columns concatenated then projected back to d.
    store.add(prefix_ + ".pos.proj", randn(d + max_pos_, d, sd, rng));
  } else if (cfg_.positional == Positional::learned) {
    store.add(prefix_ + ".pos.table", randn(max_pos_, d, sd, rng));
  } else if (cfg_.positional == Positional::sinusoidal) {
    store.add(prefix_ + ".pos.table", sinusoidal_table(max_pos_, d),
              {.trainable = false, .decay = false, .freeze_row0 = false});
  }

  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string lp = prefix_ + ".l" + std::to_string(l);
    for (const char* nm : {".wq", ".wk", ".wv", ".wo"})
      store.add(lp + nm, randn(d, d, sd, rng));
    for (const char* nm : {".bq", ".bk", ".bv", ".bo"}) store.add(lp + nm, Mat::Zero(1, d));
    store.add(lp + ".ln1.g", Mat::Ones(1, d), no_decay);
    store.add(lp + ".ln1.b", Mat::Zero(1, d), no_decay);
    store.add(lp + ".ln2.g", Mat::Ones(1, d), no_decay);
    store.add(lp + ".ln2.b", Mat::Zero(1, d), no_decay);
    const int h = cfg_.hidden();
    store.add(lp + ".ff.w1", randn(d, h, sd, rng));
    store.add(lp + ".ff.b1", Mat::Zero(1, h));
    store.add(lp + ".ff.w2", randn(h, d, 1.0 / std::sqrt(static_cast<double>(h)), rng));
    store.add(lp + ".ff.b2", Mat::Zero(1, d));
  }
  store.add(prefix_ + ".lnf.g", Mat::Ones(1, d), no_decay);
  store.add(prefix_ + ".lnf.b", Mat::Zero(1, d), no_decay);
}

ad::Value TransformerStack::forward(ad::Tape& t, ParamStore& store, ad::Value x, int group_size,
                                    const ad::MaskSpec& mask, bool training,
                                    std::mt19937_64* drop_rng) const {
  if (x.cols() != cfg_.d_model) throw std::invalid_argument("stack: input width mismatch");
  if (group_size > max_pos_)
    throw std::invalid_argument("stack: group longer than configured max positions");
  const Eigen::Index R = x.rows();
  if (R % group_size != 0) throw std::invalid_argument("stack: rows not a multiple of group");

  if (cfg_.positional != Positional::none) {
    if (cfg_.positional == Positional::one_hot) {
      Mat oh = Mat::Zero(R, max_pos_);
      for (Eigen::Index r = 0; r < R; ++r) oh(r, r % group_size) = 1.0;
      x = t.matmul(t.concat_cols(x, t.constant(std::move(oh))),
                   store.use(t, prefix_ + ".pos.proj"));
    } else {
      std::vector<int> pos(static_cast<size_t>(R));
      for (Eigen::Index r = 0; r < R; ++r)
        pos[static_cast<size_t>(r)] = static_cast<int>(r % group_size);
      x = t.add(x, t.gather_rows(store.use(t, prefix_ + ".pos.table"), pos));
    }
  }

  auto maybe_drop = [&](ad::Value v) {
    if (training && cfg_.dropout > 0.0 && drop_rng) return t.dropout(v, cfg_.dropout, *drop_rng, true);
    return v;
  };

  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string lp = prefix_ + ".l" + std::to_string(l);
    ad::Value h = t.layer_norm(x, store.use(t, lp + ".ln1.g"), store.use(t, lp + ".ln1.b"));
    ad::Value q = t.add_rowvec(t.matmul(h, store.use(t, lp + ".wq")), store.use(t, lp + ".bq"));
    ad::Value k = t.add_rowvec(t.matmul(h, store.use(t, lp + ".wk")), store.use(t, lp + ".bk"));
    ad::Value v = t.add_rowvec(t.matmul(h, store.use(t, lp + ".wv")), store.use(t, lp + ".bv"));
    ad::Value att = t.attention(q, k, v, cfg_.n_heads, group_size, mask);
    att = t.add_rowvec(t.matmul(att, store.use(t, lp + ".wo")), store.use(t, lp + ".bo"));
    x = t.add(x, maybe_drop(att));

    ad::Value h2 = t.layer_norm(x, store.use(t, lp + ".ln2.g"), store.use(t, lp + ".ln2.b"));
    ad::Value ff = t.add_rowvec(t.matmul(h2, store.use(t, lp + ".ff.w1")),
                                store.use(t, lp + ".ff.b1"));
    ff = t.add_rowvec(t.matmul(t.gelu(ff), store.use(t, lp + ".ff.w2")),
                      store.use(t, lp + ".ff.b2"));
    x = t.add(x, maybe_drop(ff));
  }
  return t.layer_norm(x, store.use(t, prefix_ + ".lnf.g"), store.use(t, prefix_ + ".lnf.b"));
}

JunctionNorm::JunctionNorm(std::string prefix, int dim, Norm mode, ParamStore& store)
    : prefix_(std::move(prefix)), mode_(mode) {
  ParamOpts no_decay{.trainable = true, .decay = false, .freeze_row0 = false};
  store.add(prefix_ + ".g", Mat::Ones(1, dim), no_decay);
  store.add(prefix_ + ".b", Mat::Zero(1, dim), no_decay);
  if (mode_ == Norm::batch_style) {
    ParamOpts state{.trainable = false, .decay = false, .freeze_row0 = false};
    store.add(prefix_ + ".rm", Mat::Zero(1, dim), state);
    store.add(prefix_ + ".rv", Mat::Ones(1, dim), state);
  }
}

ad::Value JunctionNorm::apply(ad::Tape& t, ParamStore& store, ad::Value x, bool training,
                              const std::vector<uint8_t>& row_mask) const {
  ad::Value g = store.use(t, prefix_ + ".g");
  ad::Value b = store.use(t, prefix_ + ".b");
  if (mode_ == Norm::layer_style) return t.layer_norm(x, g, b);
  return t.batch_norm(x, g, b, &store.at(prefix_ + ".rm").value, &store.at(prefix_ + ".rv").value,
                      training, row_mask);
}

}  // namespace tgpt::attn
