#include "tgpt/data.hpp"

#include <algorithm>
#include <chrono>
#include <set>
#include <stdexcept>

namespace tgpt::data {

int Schema::token_index(const std::string& name) const {
  int i = 0;
  for (const auto& f : categorical) {
    if (f.name == name) return i;
    ++i;
  }
  for (const auto& f : numeric) {
    if (f.name == name) return i;
    ++i;
  }
  for (const auto& f : entities) {
    if (f.name == name) return i;
    ++i;
  }
  return -1;
}

const FieldSchema* Schema::find(const std::string& name) const {
  for (const auto& f : categorical)
    if (f.name == name) return &f;
  for (const auto& f : numeric)
    if (f.name == name) return &f;
  for (const auto& f : entities)
    if (f.name == name) return &f;
  return nullptr;
}

void Schema::validate() const {
  std::set<std::string> seen;
  auto check = [&](const FieldSchema& f, bool needs_card) {
    if (f.name.empty()) throw std::invalid_argument("schema: empty field name");
    if (!seen.insert(f.name).second)
      throw std::invalid_argument("schema: duplicate field " + f.name);
    if (needs_card && f.cardinality < 2)
      throw std::invalid_argument("schema: field " + f.name +
                                  " needs cardinality >= 2 (row 0 is padding)");
  };
  for (const auto& f : categorical) check(f, true);
  for (const auto& f : numeric) check(f, false);
  for (const auto& f : entities) check(f, true);
  if (n_features < 0) throw std::invalid_argument("schema: negative feature count");
}

Schema Schema::mmtt_default(int n_mcc, int n_merchant, int n_features) {
  Schema s;
  s.categorical = {
      {"month", FieldKind::categorical, 13, false},
      {"day_of_week", FieldKind::categorical, 8, false},  // stored 1..7, 0=pad
      {"day_of_month", FieldKind::categorical, 32, false},
  };
  s.numeric = {
      {"amount", FieldKind::numeric, 0, false},    // cents
      {"time_gap", FieldKind::numeric, 0, false},  // hours
      {"year", FieldKind::numeric, 0, false},      // years since 2000
  };
  s.entities = {
      {"mcc", FieldKind::entity, n_mcc + 1, false},
      {"merchant", FieldKind::entity, n_merchant + 1, false},
  };
  s.n_features = n_features;
  s.validate();
  return s;
}

DerivedTimeFields derive_time_fields(std::int64_t ts_utc,
                                     std::optional<std::int64_t> prev_ts_utc) {
  using namespace std::chrono;
  DerivedTimeFields out;
  out.time_gap = prev_ts_utc ? static_cast<double>(ts_utc - *prev_ts_utc) / 3600.0 : 0.0;
  const sys_days d = floor<days>(sys_seconds(seconds(ts_utc)));
  const year_month_day ymd(d);
  const weekday wd(d);
  out.month = static_cast<int>(unsigned(ymd.month()));
  out.day_of_month = static_cast<int>(unsigned(ymd.day()));
  out.year = static_cast<int>(ymd.year()) - 2000;
  out.day_of_week = static_cast<int>(wd.iso_encoding()) - 1;  // 0 = Monday
  return out;
}

void populate_time_fields(Transaction& txn, std::optional<std::int64_t> prev_ts_utc) {
  const DerivedTimeFields f = derive_time_fields(txn.timestamp, prev_ts_utc);
  txn.metadata_numeric["time_gap"] = f.time_gap;
  txn.metadata_numeric["year"] = static_cast<double>(f.year);
  txn.metadata_categorical["month"] = f.month;
  txn.metadata_categorical["day_of_week"] = f.day_of_week + 1;
  txn.metadata_categorical["day_of_month"] = f.day_of_month;
}

void validate_transaction(const Schema& schema, const Transaction& txn) {
  for (const auto& f : schema.categorical) {
    auto it = txn.metadata_categorical.find(f.name);
    if (it == txn.metadata_categorical.end())
      throw std::invalid_argument("transaction missing categorical field " + f.name);
    if (it->second < 0 || it->second >= f.cardinality)
      throw std::invalid_argument("categorical field " + f.name + " out of range");
  }
  if (txn.metadata_categorical.size() != schema.categorical.size())
    throw std::invalid_argument("transaction has unknown categorical fields");
  for (const auto& f : schema.numeric) {
    if (!txn.metadata_numeric.count(f.name))
      throw std::invalid_argument("transaction missing numeric field " + f.name);
  }
  if (txn.metadata_numeric.size() != schema.numeric.size())
    throw std::invalid_argument("transaction has unknown numeric fields");
  for (const auto& f : schema.entities) {
    auto it = txn.entities.find(f.name);
    if (it == txn.entities.end())
      throw std::invalid_argument("transaction missing entity field " + f.name);
    if (it->second < 0 || it->second >= f.cardinality)
      throw std::invalid_argument("entity field " + f.name + " index out of range");
  }
  if (txn.entities.size() != schema.entities.size())
    throw std::invalid_argument("transaction has unknown entity fields");
  if (static_cast<int>(txn.features.size()) != schema.n_features)
    throw std::invalid_argument("feature vector length mismatch");
}

void validate_sequence(const Schema& schema, const TransactionSequence& seq) {
  std::int64_t prev = std::numeric_limits<std::int64_t>::min();
  for (const auto& t : seq.txns) {
    if (t.timestamp < prev)
      throw std::invalid_argument("sequence timestamps must be non-decreasing");
    prev = t.timestamp;
    validate_transaction(schema, t);
  }
}

std::vector<Window> segment_sequences(const std::vector<TransactionSequence>& seqs, int l,
                                      int l_min) {
  if (l < 1 || l_min < 1 || l_min > l)
    throw std::invalid_argument("segmentation requires 1 <= l_min <= l");
  std::vector<Window> out;
  for (const auto& seq : seqs) {
    const int n = static_cast<int>(seq.txns.size());
    for (int at = 0; at < n; at += l) {
      const int take = std::min(l, n - at);
      if (take < l_min) break;  // short remainder dropped
      Window w;
      w.account_id = seq.account_id;
      w.start = at;
      w.length = l;
      w.txns.assign(seq.txns.begin() + at, seq.txns.begin() + at + take);
      out.push_back(std::move(w));
    }
  }
  return out;
}

}  // namespace tgpt::data
