#pragma once

// Flat tensor view of a set of equal-length windows, laid out so row
// (b * L + i) everywhere refers to window b, position i. Padded positions
// carry index 0 / value 0 and are excluded through the validity masks.

#include "tgpt/core.hpp"
#include "tgpt/data.hpp"

#include <vector>

namespace tgpt::model {

struct Batch {
  int B = 0, L = 0;
  std::vector<int> valid;  // per window: number of real transactions

  // Inputs in schema order.
  std::vector<std::vector<int>> cat;  // [n_cat][B*L]
  Mat num;                            // (B*L) x n_num raw values
  std::vector<std::vector<int>> ent;  // [n_ent][B*L]
  Mat features;                       // (B*L) x n_features
  std::vector<uint8_t> row_valid;     // row corresponds to a real transaction

  // Next-transaction targets for generative heads at position i (from
  // transaction i+1; valid only when that transaction is real).
  std::vector<int> next_mcc, next_merchant;  // raw entity ids
  Vec next_gap, next_amount;                 // raw values (hours / cents)
  Mat next_features;                         // (B*L) x n_features
  std::vector<uint8_t> next_valid;

  // Current-transaction labels.
  std::vector<int> label;             // -1 when absent
  std::vector<uint8_t> label_valid;

  Eigen::Index rows() const { return static_cast<Eigen::Index>(B) * L; }
};

Batch make_batch(const data::Schema& schema, const std::vector<data::Window>& windows,
                 size_t first = 0, size_t count = SIZE_MAX);

}  // namespace tgpt::model
