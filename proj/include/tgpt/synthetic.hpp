#pragma once

// Synthetic transaction worlds with known ground truth.
//
// Each account draws an archetype uniformly at random; its MCC trajectory
// follows that archetype's Markov chain, amounts are log-normal conditioned
// on MCC, inter-transaction gaps are exponential per archetype, merchants
// come from an MCC-conditional pool, and features are a documented
// deterministic-plus-noise function of (amount, mcc, gap) plus an
// account-level latent channel. Labels are a deterministic threshold rule
// on one feature coordinate, so the optimal classifier is known exactly.
//
// All sampling is hand-rolled on top of mt19937_64 (inverse-CDF for
// categoricals, -log(u)/rate for exponentials, Box-Muller for normals), so
// datasets are bit-identical across standard libraries, not just runs.

#include "tgpt/core.hpp"
#include "tgpt/data.hpp"

#include <cstdint>
#include <vector>

namespace tgpt::data {

struct AnomalyRule {
  int feature_index = 0;
  double threshold = 0.0;  // label = 1 iff feature[feature_index] > threshold
};

struct SyntheticWorldSpec {
  int n_mcc = 50;
  int n_merchant = 500;
  int n_archetypes = 5;
  int n_features = 8;

  std::vector<Mat> transition_matrices;    // per archetype, n_mcc x n_mcc, rows sum to 1
  std::vector<Vec> initial_distributions;  // per archetype over MCCs; empty = uniform
  Mat amount_log_mu_sigma;                 // n_mcc x 2 log-normal params (of cents)
  std::vector<double> gap_rate_per_hour;   // per archetype exponential rate

  AnomalyRule anomaly_rule;     // applied to the feature vector
  double latent_flip_prob = 0.1;  // chance a transaction flips the account latent sign
  double feature_noise = 0.05;    // stddev of the additive noise on derived features

  std::uint64_t rng_seed = 0;

  void validate() const;  // throws std::invalid_argument

  // A world with per-archetype MCC clusters and in-cluster cycles: the next
  // MCC is strongly determined by (archetype, current MCC), which makes the
  // Bayes-optimal next-MCC accuracy high and far above the global-frequency
  // baseline.
  static SyntheticWorldSpec standard(int n_mcc, int n_merchant, int n_archetypes,
                                     int n_features, std::uint64_t seed);
};

// Generation. Each account uses its own RNG stream derived from
// (rng_seed, account_id); account order can never affect content.
// Sequences come back with time fields populated and labels set.
std::vector<TransactionSequence> generate_synthetic(const SyntheticWorldSpec& spec,
                                                    int n_accounts, int seq_len,
                                                    std::int64_t first_account_id = 0);

// Ground-truth archetype the generator picked for an account.
int account_archetype(const SyntheticWorldSpec& spec, std::int64_t account_id);

// Posterior over archetypes given an observed MCC history (1-based MCC ids
// as stored in transactions are accepted; internally 0-based).
Vec bayes_posterior(const SyntheticWorldSpec& spec, const std::vector<int>& mcc_history_1based);

// Bayes-optimal next-MCC distribution: posterior-weighted mixture of the
// archetype transition rows for the last observed MCC. Returns a length
// n_mcc probability vector indexed by 0-based MCC.
Vec bayes_oracle_next_mcc(const SyntheticWorldSpec& spec,
                          const std::vector<int>& mcc_history_1based);

// Portable primitive samplers (exposed for tests).
double uniform01(std::mt19937_64& rng);
double sample_normal(std::mt19937_64& rng);
double sample_exponential(double rate, std::mt19937_64& rng);
int sample_categorical(const Vec& probs, std::mt19937_64& rng);

}  // namespace tgpt::data
