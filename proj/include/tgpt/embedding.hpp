#pragma once

// Field embedders: categorical tables, numeric log-affine maps, hashed
// compositional entity tables and the per-feature linear lift.
//
// Row 0 of every lookup table is the padding row: zero-initialized, zero
// gradient, excluded from weight decay. Numeric fields embed as
// affine(log(x + eps)), or sign(x) * log1p(|x|) for fields declared signed.

#include "tgpt/core.hpp"
#include "tgpt/data.hpp"
#include "tgpt/params.hpp"
#include "tgpt/tape.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace tgpt::embed {

// Numeric preprocessing shared by embedding and generative targets.
inline double log_map(double x, bool is_signed) {
  if (is_signed) return x >= 0 ? std::log1p(x) : -std::log1p(-x);
  return std::log(x + kLogEps);
}

// ---------------------------------------------------------------------------
// Compositional (hashed) lookup tables
// ---------------------------------------------------------------------------

// k x (n+1) int matrix, entry (i, e) = murmur3(e; seed_i) mod m + 1 for real
// entities e in 1..n, and 0 in column 0. Frozen at construction; identical
// across processes because the hash is fully pinned.
Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> build_lookup_table(
    int n_entities, int m_rows, int k_hash, const std::vector<std::uint32_t>& seeds);

struct EntityEmbedderConfig {
  bool compositional = false;
  int m_rows = 0;   // hashed table rows (excluding padding row)
  int k_hash = 2;
  std::vector<std::uint32_t> seeds;  // defaults to 0..k-1 when empty
};

// One entity field (MCC, merchant, ...). Plain mode holds a (cardinality x d)
// table; compositional mode holds an (m+1 x d) table plus the frozen lookup,
// and every embedding is the mean of the k addressed rows.
class EntityEmbedder {
 public:
  EntityEmbedder() = default;
  EntityEmbedder(std::string prefix, const data::FieldSchema& field, int dim,
                 EntityEmbedderConfig cfg, ParamStore& store, std::mt19937_64& rng);

  // indices are raw entity ids (0 = padding). Returns (N x d).
  ad::Value embed(ad::Tape& t, ParamStore& store, const std::vector<int>& indices) const;

  // Tied prediction head: logits over real entities 1..n for each of the N
  // head rows, computed against this embedder's own table (zero private
  // parameters). Returns (N x n).
  ad::Value tied_logits(ad::Tape& t, ParamStore& store, ad::Value e_heads) const;

  // Composed per-entity rows, index 0..n (row 0 zero). Plain tables return a
  // copy of the table; compositional ones compose means on the fly.
  Mat materialize_rows(const ParamStore& store) const;

  bool compositional() const { return cfg_.compositional; }
  int n_entities() const { return n_; }
  int dim() const { return dim_; }
  const std::string& table_name() const { return table_name_; }
  std::size_t table_rows() const;

  // 1 - (m+1)/(n+1), the fraction of table parameters removed relative to a
  // plain table.
  double param_reduction() const;

 private:
  std::string table_name_;
  int n_ = 0;  // real entities (ids 1..n)
  int dim_ = 0;
  EntityEmbedderConfig cfg_;
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> lookup_;  // k x (n+1)
};

// ---------------------------------------------------------------------------
// Metadata embedder (categorical + numeric fields at width d)
// ---------------------------------------------------------------------------

class MetadataEmbedder {
 public:
  MetadataEmbedder() = default;
  MetadataEmbedder(std::string prefix, const data::Schema& schema, int dim, ParamStore& store,
                   std::mt19937_64& rng);

  // cat[i] / num column i follow schema order. Returns one (N x d) value per
  // field, categoricals first, then numerics (the schema token order).
  std::vector<ad::Value> field_values(ad::Tape& t, ParamStore& store,
                                      const std::vector<std::vector<int>>& cat,
                                      const Mat& num_raw) const;

  int dim() const { return dim_; }

 private:
  std::string prefix_;
  int dim_ = 0;
  std::vector<data::FieldSchema> cat_fields_;
  std::vector<data::FieldSchema> num_fields_;
};

// ---------------------------------------------------------------------------
// Feature embedder (|F| scalar channels -> |F| rows of width d)
// ---------------------------------------------------------------------------

class FeatureEmbedder {
 public:
  FeatureEmbedder() = default;
  FeatureEmbedder(std::string prefix, int n_features, int dim, bool shared, ParamStore& store,
                  std::mt19937_64& rng);

  // features: (N x |F|) raw values. Returns (N * |F|) x d token rows.
  ad::Value embed(ad::Tape& t, ParamStore& store, const Mat& features) const;

  int dim() const { return dim_; }
  int n_features() const { return nf_; }

 private:
  std::string prefix_;
  int nf_ = 0;
  int dim_ = 0;
  bool shared_ = false;
};

// ---------------------------------------------------------------------------
// External vectors
// ---------------------------------------------------------------------------

// JSON-lines {"index": i, "vector": [...]} rows overwriting table rows of a
// plain (non-compositional) entity table. Throws on dimension mismatch,
// index out of 1..n, or a compositional target.
void load_external_vectors(const std::string& path, const EntityEmbedder& embedder,
                           ParamStore& store);

// Companion export: writes composed rows 1..n in the same format.
void export_entity_vectors(const std::string& path, const EntityEmbedder& embedder,
                           const ParamStore& store);

}  // namespace tgpt::embed
