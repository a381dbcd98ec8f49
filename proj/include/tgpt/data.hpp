#pragma once

// Multi-modal temporal-tabular data model: field schemas, transactions,
// account sequences, timestamp-derived calendar fields and windowing.

#include "tgpt/core.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tgpt::data {

enum class FieldKind { categorical, numeric, entity };

// cardinality counts table rows including the reserved padding row 0, so a
// categorical field with raw values 1..12 has cardinality 13. is_signed only
// matters for numeric fields: it selects the sign-preserving log map.
struct FieldSchema {
  std::string name;
  FieldKind kind = FieldKind::numeric;
  int cardinality = 0;
  bool is_signed = false;
};

struct Schema {
  std::vector<FieldSchema> categorical;
  std::vector<FieldSchema> numeric;
  std::vector<FieldSchema> entities;
  int n_features = 0;

  // Token order of the per-transaction field stack: categorical fields,
  // then numeric, then entities. Feature tokens (if a variant uses them)
  // always come after these.
  int n_meta_tokens() const {
    return static_cast<int>(categorical.size() + numeric.size() + entities.size());
  }

  // Index of a field within the token stack; -1 if unknown.
  int token_index(const std::string& name) const;

  const FieldSchema* find(const std::string& name) const;

  void validate() const;  // throws std::invalid_argument

  // Default transaction schema: calendar fields as categoricals, amount /
  // time gap / year as numerics, MCC and merchant as entities.
  static Schema mmtt_default(int n_mcc, int n_merchant, int n_features);
};

struct Transaction {
  std::int64_t timestamp = 0;  // UTC seconds
  std::map<std::string, double> metadata_numeric;
  std::map<std::string, int> metadata_categorical;
  std::map<std::string, int> entities;
  std::vector<double> features;
  std::optional<int> label;
};

struct TransactionSequence {
  std::int64_t account_id = 0;
  std::vector<Transaction> txns;
};

// Calendar fields derived from a UTC timestamp. day_of_week uses 0=Monday;
// year counts years since 2000; time gaps are hours since the previous
// transaction (0 for the first of a sequence).
struct DerivedTimeFields {
  double time_gap = 0.0;
  int month = 0;
  int year = 0;
  int day_of_week = 0;
  int day_of_month = 0;
};

DerivedTimeFields derive_time_fields(std::int64_t ts_utc,
                                     std::optional<std::int64_t> prev_ts_utc);

// Writes the derived fields into the transaction's metadata maps. Stored
// day_of_week is shifted by +1 so that 0 stays reserved for padding.
void populate_time_fields(Transaction& txn, std::optional<std::int64_t> prev_ts_utc);

// Field-presence and range validation against a schema.
void validate_transaction(const Schema& schema, const Transaction& txn);
void validate_sequence(const Schema& schema, const TransactionSequence& seq);

// A fixed-length window over one account's history. Only real transactions
// are stored; positions valid()..length-1 are padding.
struct Window {
  std::int64_t account_id = 0;
  int start = 0;   // offset of txns[0] within the source sequence
  int length = 0;  // window size l
  std::vector<Transaction> txns;

  int valid() const { return static_cast<int>(txns.size()); }
  bool is_pad(int pos) const { return pos >= valid(); }
};

// Nonoverlapping windows of length l. A trailing remainder shorter than l
// but at least l_min becomes a padded window; shorter remainders are
// dropped. Each window's first time_gap is kept as derived on the full
// sequence, so windows after the first still see the gap to their
// predecessor transaction.
std::vector<Window> segment_sequences(const std::vector<TransactionSequence>& seqs, int l,
                                      int l_min);

}  // namespace tgpt::data
