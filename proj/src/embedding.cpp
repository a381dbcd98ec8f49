#include "tgpt/embedding.hpp"

#include <json.hpp>

#include <fstream>
#include <stdexcept>

namespace tgpt::embed {

Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> build_lookup_table(
    int n_entities, int m_rows, int k_hash, const std::vector<std::uint32_t>& seeds) {
  // m >= n is allowed here (degenerate, useful for equivalence checks);
  // model configs that want compression enforce m < n at validation time.
  if (m_rows < 1 || k_hash < 1) throw std::invalid_argument("need m >= 1 and k >= 1");
  if (static_cast<int>(seeds.size()) != k_hash)
    throw std::invalid_argument("need one distinct seed per hash function");
  for (size_t i = 0; i < seeds.size(); ++i)
    for (size_t j = i + 1; j < seeds.size(); ++j)
      if (seeds[i] == seeds[j]) throw std::invalid_argument("hash seeds must be distinct");
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> lut(k_hash,
                                                                          n_entities + 1);
  for (int i = 0; i < k_hash; ++i) {
    lut(i, 0) = 0;  // padding id keeps addressing the frozen zero row
    for (int e = 1; e <= n_entities; ++e)
      lut(i, e) = static_cast<int>(murmur3_32(static_cast<std::uint32_t>(e), seeds[i]) %
                                   static_cast<std::uint32_t>(m_rows)) +
                  1;
  }
  return lut;
}

EntityEmbedder::EntityEmbedder(std::string prefix, const data::FieldSchema& field, int dim,
                               EntityEmbedderConfig cfg, ParamStore& store,
                               std::mt19937_64& rng)
    : table_name_(prefix + ".ent." + field.name),
      n_(field.cardinality - 1),
      dim_(dim),
      cfg_(std::move(cfg)) {
  if (field.kind != data::FieldKind::entity)
    throw std::invalid_argument("EntityEmbedder needs an entity field");
  std::size_t rows;
  if (cfg_.compositional) {
    if (cfg_.seeds.empty())
      for (int i = 0; i < cfg_.k_hash; ++i) cfg_.seeds.push_back(static_cast<std::uint32_t>(i));
    lookup_ = build_lookup_table(n_, cfg_.m_rows, cfg_.k_hash, cfg_.seeds);
    rows = static_cast<std::size_t>(cfg_.m_rows) + 1;
  } else {
    rows = static_cast<std::size_t>(n_) + 1;
  }
  Mat init = randn(static_cast<Eigen::Index>(rows), dim_, 1.0 / std::sqrt(double(dim_)), rng);
  store.add(table_name_, std::move(init), {.trainable = true, .decay = true, .freeze_row0 = true});
}

std::size_t EntityEmbedder::table_rows() const {
  return cfg_.compositional ? static_cast<std::size_t>(cfg_.m_rows) + 1
                            : static_cast<std::size_t>(n_) + 1;
}

double EntityEmbedder::param_reduction() const {
  if (!cfg_.compositional) return 0.0;
  return 1.0 - static_cast<double>(cfg_.m_rows + 1) / static_cast<double>(n_ + 1);
}

ad::Value EntityEmbedder::embed(ad::Tape& t, ParamStore& store,
                                const std::vector<int>& indices) const {
  for (int e : indices)
    if (e < 0 || e > n_) throw std::out_of_range("entity index out of range in " + table_name_);
  ad::Value table = store.use(t, table_name_);
  if (!cfg_.compositional) return t.gather_rows(table, indices);
  const size_t n = indices.size();
  std::vector<int> rows(static_cast<size_t>(cfg_.k_hash) * n);
  for (int i = 0; i < cfg_.k_hash; ++i)
    for (size_t j = 0; j < n; ++j)
      rows[static_cast<size_t>(i) * n + j] = lookup_(i, indices[j]);
  return t.gather_mean_rows(table, std::move(rows), cfg_.k_hash);
}

ad::Value EntityEmbedder::tied_logits(ad::Tape& t, ParamStore& store, ad::Value e_heads) const {
  ad::Value table = store.use(t, table_name_);
  if (!cfg_.compositional) {
    // logits = E_heads * rows(1..n)^T
    return t.matmul_nt(e_heads, t.slice_rows(table, 1, n_));
  }
  // z = table * E_heads^T is (m+1) x N; entity e's logit row gathers the
  // mean of its k addressed rows of z.
  ad::Value z = t.matmul_nt(table, e_heads);
  std::vector<int> rows(static_cast<size_t>(cfg_.k_hash) * static_cast<size_t>(n_));
  for (int i = 0; i < cfg_.k_hash; ++i)
    for (int e = 1; e <= n_; ++e)
      rows[static_cast<size_t>(i) * static_cast<size_t>(n_) + static_cast<size_t>(e - 1)] =
          lookup_(i, e);
  return t.transpose(t.gather_mean_rows(z, std::move(rows), cfg_.k_hash));
}

Mat EntityEmbedder::materialize_rows(const ParamStore& store) const {
  const Mat& table = store.at(table_name_).value;
  if (!cfg_.compositional) return table;
  Mat out = Mat::Zero(n_ + 1, dim_);
  for (int e = 1; e <= n_; ++e) {
    for (int i = 0; i < cfg_.k_hash; ++i) out.row(e) += table.row(lookup_(i, e));
    out.row(e) /= static_cast<double>(cfg_.k_hash);
  }
  return out;
}

MetadataEmbedder::MetadataEmbedder(std::string prefix, const data::Schema& schema, int dim,
                                   ParamStore& store, std::mt19937_64& rng)
    : prefix_(std::move(prefix)),
      dim_(dim),
      cat_fields_(schema.categorical),
      num_fields_(schema.numeric) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
  for (const auto& f : cat_fields_)
    store.add(prefix_ + ".cat." + f.name, randn(f.cardinality, dim, sd, rng),
              {.trainable = true, .decay = true, .freeze_row0 = true});
  for (const auto& f : num_fields_) {
    store.add(prefix_ + ".num." + f.name + ".w", randn(1, dim, sd, rng));
    store.add(prefix_ + ".num." + f.name + ".b", Mat::Zero(1, dim));
  }
}

std::vector<ad::Value> MetadataEmbedder::field_values(ad::Tape& t, ParamStore& store,
                                                      const std::vector<std::vector<int>>& cat,
                                                      const Mat& num_raw) const {
  if (cat.size() != cat_fields_.size())
    throw std::invalid_argument("categorical column count mismatch");
  if (num_raw.cols() != static_cast<Eigen::Index>(num_fields_.size()))
    throw std::invalid_argument("numeric column count mismatch");
  std::vector<ad::Value> out;
  for (size_t i = 0; i < cat_fields_.size(); ++i) {
    const auto& f = cat_fields_[i];
    for (int v : cat[i])
      if (v < 0 || v >= f.cardinality)
        throw std::out_of_range("categorical value out of range for " + f.name);
    out.push_back(t.gather_rows(store.use(t, prefix_ + ".cat." + f.name), cat[i]));
  }
  for (size_t i = 0; i < num_fields_.size(); ++i) {
    const auto& f = num_fields_[i];
    Mat x(num_raw.rows(), 1);
    for (Eigen::Index r = 0; r < num_raw.rows(); ++r) {
      const double v = num_raw(r, static_cast<Eigen::Index>(i));
      if (!f.is_signed && v < 0)
        throw std::invalid_argument("negative value in unsigned numeric field " + f.name);
      x(r, 0) = log_map(v, f.is_signed);
    }
    ad::Value row = t.matmul(t.constant(std::move(x)),
                             store.use(t, prefix_ + ".num." + f.name + ".w"));
    out.push_back(t.add_rowvec(row, store.use(t, prefix_ + ".num." + f.name + ".b")));
  }
  return out;
}

FeatureEmbedder::FeatureEmbedder(std::string prefix, int n_features, int dim, bool shared,
                                 ParamStore& store, std::mt19937_64& rng)
    : prefix_(std::move(prefix)), nf_(n_features), dim_(dim), shared_(shared) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
  const int rows = shared ? 1 : n_features;
  store.add(prefix_ + ".feat.w", randn(rows, dim, sd, rng));
  store.add(prefix_ + ".feat.b", Mat::Zero(rows, dim));
}

ad::Value FeatureEmbedder::embed(ad::Tape& t, ParamStore& store, const Mat& features) const {
  if (features.cols() != nf_) throw std::invalid_argument("feature count mismatch");
  ad::Value W = store.use(t, prefix_ + ".feat.w");
  ad::Value B = store.use(t, prefix_ + ".feat.b");
  if (shared_) {
    // Replicate the single row so each feature channel shares the same map;
    // gradients flow back through the gather.
    std::vector<int> zeros(static_cast<size_t>(nf_), 0);
    W = t.gather_rows(W, zeros);
    B = t.gather_rows(B, zeros);
  }
  return t.feature_embed(features, W, B);
}

void load_external_vectors(const std::string& path, const EntityEmbedder& embedder,
                           ParamStore& store) {
  if (embedder.compositional())
    throw std::invalid_argument(
        "external vectors target plain tables only; compositional rows are hash-shared");
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  Mat& table = store.at(embedder.table_name()).value;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto rec = nlohmann::json::parse(line);
    const int idx = rec.at("index").get<int>();
    const auto vec = rec.at("vector").get<std::vector<double>>();
    if (idx < 1 || idx > embedder.n_entities())
      throw std::out_of_range(path + ":" + std::to_string(lineno) + ": unknown entity index " +
                              std::to_string(idx));
    if (static_cast<int>(vec.size()) != embedder.dim())
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": vector dimension mismatch");
    for (int c = 0; c < embedder.dim(); ++c) table(idx, c) = vec[static_cast<size_t>(c)];
  }
}

void export_entity_vectors(const std::string& path, const EntityEmbedder& embedder,
                           const ParamStore& store) {
  const Mat rows = embedder.materialize_rows(store);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (int e = 1; e <= embedder.n_entities(); ++e) {
    nlohmann::ordered_json rec;
    rec["index"] = e;
    std::vector<double> v(static_cast<size_t>(embedder.dim()));
    for (int c = 0; c < embedder.dim(); ++c) v[static_cast<size_t>(c)] = rows(e, c);
    rec["vector"] = v;
    out << rec.dump() << '\n';
  }
}

}  // namespace tgpt::embed
