#include "tgpt/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace tgpt::data {

namespace {
// 2023-01-02 00:00:00 UTC, a Monday. All synthetic histories start on a
// whole hour at or after this instant.
constexpr std::int64_t kBaseTs = 1672617600;
}  // namespace

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double sample_normal(std::mt19937_64& rng) {
  // Box-Muller; u1 is kept away from 0.
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double sample_exponential(double rate, std::mt19937_64& rng) {
  return -std::log(1.0 - uniform01(rng)) / rate;
}

int sample_categorical(const Vec& probs, std::mt19937_64& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (int i = 0; i < probs.size(); ++i) {
    acc += probs(i);
    if (u < acc) return i;
  }
  return static_cast<int>(probs.size()) - 1;
}

void SyntheticWorldSpec::validate() const {
  if (n_mcc < 2 || n_merchant < n_mcc || n_archetypes < 1)
    throw std::invalid_argument("world: need n_mcc >= 2, n_merchant >= n_mcc, archetypes >= 1");
  if (n_features < 1) throw std::invalid_argument("world: need at least one feature");
  if (anomaly_rule.feature_index < 0 || anomaly_rule.feature_index >= n_features)
    throw std::invalid_argument("world: anomaly rule feature index out of range");
  if (static_cast<int>(transition_matrices.size()) != n_archetypes)
    throw std::invalid_argument("world: one transition matrix per archetype required");
  for (const auto& T : transition_matrices) {
    if (T.rows() != n_mcc || T.cols() != n_mcc)
      throw std::invalid_argument("world: transition matrix must be n_mcc x n_mcc");
    for (int r = 0; r < n_mcc; ++r) {
      if (std::abs(T.row(r).sum() - 1.0) > 1e-9 || T.row(r).minCoeff() < 0.0)
        throw std::invalid_argument("world: transition rows must be distributions");
    }
  }
  if (!initial_distributions.empty()) {
    if (static_cast<int>(initial_distributions.size()) != n_archetypes)
      throw std::invalid_argument("world: one initial distribution per archetype");
    for (const auto& p : initial_distributions)
      if (p.size() != n_mcc || std::abs(p.sum() - 1.0) > 1e-9 || p.minCoeff() < 0.0)
        throw std::invalid_argument("world: initial distributions must be over MCCs");
  }
  if (amount_log_mu_sigma.rows() != n_mcc || amount_log_mu_sigma.cols() != 2)
    throw std::invalid_argument("world: amount params must be n_mcc x 2");
  for (int r = 0; r < n_mcc; ++r)
    if (amount_log_mu_sigma(r, 1) <= 0)
      throw std::invalid_argument("world: amount sigma must be positive");
  if (static_cast<int>(gap_rate_per_hour.size()) != n_archetypes)
    throw std::invalid_argument("world: one gap rate per archetype");
  for (double r : gap_rate_per_hour)
    if (r <= 0) throw std::invalid_argument("world: gap rates must be positive");
  if (latent_flip_prob < 0.0 || latent_flip_prob >= 0.5)
    throw std::invalid_argument("world: latent flip probability must be in [0, 0.5)");
}

SyntheticWorldSpec SyntheticWorldSpec::standard(int n_mcc, int n_merchant, int n_archetypes,
                                                int n_features, std::uint64_t seed) {
  SyntheticWorldSpec w;
  w.n_mcc = n_mcc;
  w.n_merchant = n_merchant;
  w.n_archetypes = n_archetypes;
  w.n_features = n_features;
  w.rng_seed = seed;

  const auto cluster_begin = [&](int a) { return a * n_mcc / n_archetypes; };
  for (int a = 0; a < n_archetypes; ++a) {
    const int lo = cluster_begin(a), hi = cluster_begin(a + 1);
    const int sz = hi - lo;
    Mat T = Mat::Constant(n_mcc, n_mcc, 0.0);
    for (int j = 0; j < n_mcc; ++j) {
      T.row(j).setConstant(0.10 / n_mcc);
      if (j >= lo && j < hi && sz > 0) {
        // In-cluster: mostly follow this archetype's cycle.
        const int nxt = lo + ((j - lo + 1) % sz);
        for (int c = lo; c < hi; ++c) T(j, c) += 0.15 / sz;
        T(j, nxt) += 0.75;
      } else if (sz > 0) {
        // Outside: jump into the archetype's home cluster.
        for (int c = lo; c < hi; ++c) T(j, c) += 0.90 / sz;
      } else {
        T.row(j).setConstant(1.0 / n_mcc);
      }
      T.row(j) /= T.row(j).sum();
    }
    w.transition_matrices.push_back(std::move(T));
    w.gap_rate_per_hour.push_back(1.0 / (6.0 * (a + 1)));
  }
  w.amount_log_mu_sigma = Mat(n_mcc, 2);
  for (int j = 0; j < n_mcc; ++j) {
    w.amount_log_mu_sigma(j, 0) = std::log(2000.0 + 137.0 * j);
    w.amount_log_mu_sigma(j, 1) = 0.5;
  }
  w.anomaly_rule = {0, 0.0};
  w.validate();
  return w;
}

namespace {

struct AccountDraws {
  int archetype;
  double latent;  // +1 or -1
};

AccountDraws account_head_draws(const SyntheticWorldSpec& spec, std::mt19937_64& rng) {
  AccountDraws d;
  d.archetype =
      std::min(spec.n_archetypes - 1, static_cast<int>(uniform01(rng) * spec.n_archetypes));
  d.latent = uniform01(rng) < 0.5 ? -1.0 : 1.0;
  return d;
}

std::vector<double> make_features(const SyntheticWorldSpec& spec, double latent_signed,
                                  double amount_cents, int mcc1, double gap_hours,
                                  std::mt19937_64& rng) {
  std::vector<double> f(static_cast<size_t>(spec.n_features), 0.0);
  // Coordinate 0 carries the account latent channel: large margin, noise
  // only through the generator's explicit sign flips.
  f[0] = 3.0 * latent_signed;
  if (spec.n_features > 1)
    f[1] = std::log1p(amount_cents) / 10.0 + spec.feature_noise * sample_normal(rng);
  if (spec.n_features > 2)
    f[2] = std::min(gap_hours, 100.0) / 100.0 + spec.feature_noise * sample_normal(rng);
  for (int k = 3; k < spec.n_features; ++k)
    f[static_cast<size_t>(k)] =
        0.5 * std::sin(0.37 * (k + 1) * mcc1) + spec.feature_noise * sample_normal(rng);
  return f;
}

}  // namespace

int account_archetype(const SyntheticWorldSpec& spec, std::int64_t account_id) {
  auto rng = make_rng(spec.rng_seed, static_cast<std::uint64_t>(account_id));
  return account_head_draws(spec, rng).archetype;
}

std::vector<TransactionSequence> generate_synthetic(const SyntheticWorldSpec& spec,
                                                    int n_accounts, int seq_len,
                                                    std::int64_t first_account_id) {
  spec.validate();
  const Vec uniform_init = Vec::Constant(spec.n_mcc, 1.0 / spec.n_mcc);
  // Merchants are partitioned into MCC-conditional pools over ids 1..n.
  const int pool = spec.n_merchant / spec.n_mcc;

  std::vector<TransactionSequence> out;
  out.reserve(static_cast<size_t>(n_accounts));
  for (int a = 0; a < n_accounts; ++a) {
    const std::int64_t account_id = first_account_id + a;
    auto rng = make_rng(spec.rng_seed, static_cast<std::uint64_t>(account_id));
    const AccountDraws head = account_head_draws(spec, rng);
    const Mat& T = spec.transition_matrices[static_cast<size_t>(head.archetype)];
    const Vec& init = spec.initial_distributions.empty()
                          ? uniform_init
                          : spec.initial_distributions[static_cast<size_t>(head.archetype)];
    const double rate = spec.gap_rate_per_hour[static_cast<size_t>(head.archetype)];

    TransactionSequence seq;
    seq.account_id = account_id;
    std::int64_t ts = kBaseTs + static_cast<std::int64_t>(uniform01(rng) * 720.0) * 3600;
    int mcc0 = -1;  // 0-based state
    for (int i = 0; i < seq_len; ++i) {
      double gap_hours = 0.0;
      if (i == 0) {
        mcc0 = sample_categorical(init, rng);
      } else {
        gap_hours = sample_exponential(rate, rng);
        ts += static_cast<std::int64_t>(std::llround(gap_hours * 3600.0));
        mcc0 = sample_categorical(T.row(mcc0).transpose(), rng);
      }
      const int mcc1 = mcc0 + 1;
      const int lo = mcc0 * pool + 1;
      const int hi = (mcc0 == spec.n_mcc - 1) ? spec.n_merchant : (mcc0 + 1) * pool;
      const int merchant = lo + static_cast<int>(uniform01(rng) * (hi - lo + 1));
      const double mu = spec.amount_log_mu_sigma(mcc0, 0);
      const double sg = spec.amount_log_mu_sigma(mcc0, 1);
      const double amount_cents =
          std::max(1.0, std::round(std::exp(mu + sg * sample_normal(rng))));
      const double flip = uniform01(rng) < spec.latent_flip_prob ? -1.0 : 1.0;

      Transaction t;
      t.timestamp = ts;
      t.entities["mcc"] = mcc1;
      t.entities["merchant"] = std::min(merchant, spec.n_merchant);
      t.metadata_numeric["amount"] = amount_cents;
      t.features = make_features(spec, head.latent * flip, amount_cents, mcc1, gap_hours, rng);
      t.label = t.features[static_cast<size_t>(spec.anomaly_rule.feature_index)] >
                        spec.anomaly_rule.threshold
                    ? 1
                    : 0;
      populate_time_fields(t, i == 0 ? std::nullopt
                                     : std::optional<std::int64_t>(seq.txns.back().timestamp));
      seq.txns.push_back(std::move(t));
    }
    out.push_back(std::move(seq));
  }
  return out;
}

Vec bayes_posterior(const SyntheticWorldSpec& spec,
                    const std::vector<int>& mcc_history_1based) {
  const int A = spec.n_archetypes;
  const Vec uniform_init = Vec::Constant(spec.n_mcc, 1.0 / spec.n_mcc);
  Vec logp = Vec::Zero(A);
  for (int a = 0; a < A; ++a) {
    const Mat& T = spec.transition_matrices[static_cast<size_t>(a)];
    const Vec& init = spec.initial_distributions.empty()
                          ? uniform_init
                          : spec.initial_distributions[static_cast<size_t>(a)];
    double lp = 0.0;
    for (size_t i = 0; i < mcc_history_1based.size(); ++i) {
      const int m = mcc_history_1based[i] - 1;
      if (m < 0 || m >= spec.n_mcc) throw std::invalid_argument("bayes: MCC out of range");
      const double p = i == 0 ? init(m) : T(mcc_history_1based[i - 1] - 1, m);
      lp += std::log(p);  // -inf for impossible transitions is intended
    }
    logp(a) = lp;
  }
  const double m = logp.maxCoeff();
  Vec post(A);
  for (int a = 0; a < A; ++a) post(a) = std::exp(logp(a) - m);
  return post / post.sum();
}

Vec bayes_oracle_next_mcc(const SyntheticWorldSpec& spec,
                          const std::vector<int>& mcc_history_1based) {
  if (mcc_history_1based.empty())
    throw std::invalid_argument("bayes: need at least one observed MCC");
  const Vec post = bayes_posterior(spec, mcc_history_1based);
  const int last = mcc_history_1based.back() - 1;
  Vec next = Vec::Zero(spec.n_mcc);
  for (int a = 0; a < spec.n_archetypes; ++a)
    next += post(a) * spec.transition_matrices[static_cast<size_t>(a)].row(last).transpose();
  return next;
}

}  // namespace tgpt::data
