#include "tgpt/dataset_io.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tgpt::data {

namespace {
std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}
}  // namespace

std::uint64_t file_content_hash(const std::string& path) {
  return fnv1a64(read_file(path));
}

std::uint64_t save_sequences_jsonl(const std::string& path,
                                   const std::vector<TransactionSequence>& seqs) {
  std::ostringstream out;
  for (const auto& seq : seqs) {
    json rec;
    rec["account_id"] = seq.account_id;
    json txns = json::array();
    for (const auto& t : seq.txns) {
      json jt;
      jt["t"] = t.timestamp;
      jt["amount_cents"] = t.metadata_numeric.at("amount");
      jt["mcc"] = t.entities.at("mcc");
      jt["merchant"] = t.entities.at("merchant");
      jt["features"] = t.features;
      if (t.label) jt["label"] = *t.label;
      txns.push_back(std::move(jt));
    }
    rec["txns"] = std::move(txns);
    out << rec.dump() << '\n';
  }
  const std::string body = out.str();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << body;
  return fnv1a64(body);
}

std::vector<TransactionSequence> load_sequences_jsonl(const std::string& path,
                                                      const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<TransactionSequence> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
    }
    TransactionSequence seq;
    seq.account_id = rec.at("account_id").get<std::int64_t>();
    std::optional<std::int64_t> prev;
    for (const auto& jt : rec.at("txns")) {
      Transaction t;
      t.timestamp = jt.at("t").get<std::int64_t>();
      t.metadata_numeric["amount"] = jt.at("amount_cents").get<double>();
      t.entities["mcc"] = jt.at("mcc").get<int>();
      t.entities["merchant"] = jt.at("merchant").get<int>();
      t.features = jt.at("features").get<std::vector<double>>();
      if (jt.contains("label")) t.label = jt.at("label").get<int>();
      populate_time_fields(t, prev);
      prev = t.timestamp;
      seq.txns.push_back(std::move(t));
    }
    validate_sequence(schema, seq);
    out.push_back(std::move(seq));
  }
  return out;
}

json schema_to_json(const Schema& schema) {
  auto fields = [](const std::vector<FieldSchema>& fs) {
    json arr = json::array();
    for (const auto& f : fs) {
      json jf;
      jf["name"] = f.name;
      jf["cardinality"] = f.cardinality;
      jf["signed"] = f.is_signed;
      arr.push_back(std::move(jf));
    }
    return arr;
  };
  json j;
  j["version"] = 1;
  j["categorical"] = fields(schema.categorical);
  j["numeric"] = fields(schema.numeric);
  j["entities"] = fields(schema.entities);
  j["n_features"] = schema.n_features;
  return j;
}

Schema schema_from_json(const json& j) {
  if (j.at("version").get<int>() != 1) throw DataError("unsupported schema version");
  auto fields = [](const json& arr, FieldKind kind) {
    std::vector<FieldSchema> out;
    for (const auto& jf : arr) {
      FieldSchema f;
      f.name = jf.at("name").get<std::string>();
      f.kind = kind;
      f.cardinality = jf.at("cardinality").get<int>();
      f.is_signed = jf.value("signed", false);
      out.push_back(std::move(f));
    }
    return out;
  };
  Schema s;
  s.categorical = fields(j.at("categorical"), FieldKind::categorical);
  s.numeric = fields(j.at("numeric"), FieldKind::numeric);
  s.entities = fields(j.at("entities"), FieldKind::entity);
  s.n_features = j.at("n_features").get<int>();
  s.validate();
  return s;
}

void save_schema_sidecar(const std::string& path, const Schema& schema, const json& extra) {
  json j = schema_to_json(schema);
  if (!extra.is_null()) j["generator"] = extra;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << j.dump(2) << '\n';
}

Schema load_schema_sidecar(const std::string& path, json* extra) {
  json j = json::parse(read_file(path));
  if (extra && j.contains("generator")) *extra = j["generator"];
  return schema_from_json(j);
}

json world_to_json(const SyntheticWorldSpec& spec) {
  json j;
  j["n_mcc"] = spec.n_mcc;
  j["n_merchant"] = spec.n_merchant;
  j["n_archetypes"] = spec.n_archetypes;
  j["n_features"] = spec.n_features;
  j["rng_seed"] = spec.rng_seed;
  j["anomaly_rule"] = {{"feature_index", spec.anomaly_rule.feature_index},
                       {"threshold", spec.anomaly_rule.threshold}};
  j["latent_flip_prob"] = spec.latent_flip_prob;
  j["feature_noise"] = spec.feature_noise;
  auto mat = [](const Mat& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      rows.push_back(std::move(row));
    }
    return rows;
  };
  json ts = json::array();
  for (const auto& T : spec.transition_matrices) ts.push_back(mat(T));
  j["transition_matrices"] = std::move(ts);
  if (!spec.initial_distributions.empty()) {
    json is = json::array();
    for (const auto& p : spec.initial_distributions) {
      json row = json::array();
      for (Eigen::Index i = 0; i < p.size(); ++i) row.push_back(p(i));
      is.push_back(std::move(row));
    }
    j["initial_distributions"] = std::move(is);
  }
  j["amount_log_mu_sigma"] = mat(spec.amount_log_mu_sigma);
  j["gap_rate_per_hour"] = spec.gap_rate_per_hour;
  return j;
}

SyntheticWorldSpec world_from_json(const json& j) {
  SyntheticWorldSpec w;
  w.n_mcc = j.at("n_mcc").get<int>();
  w.n_merchant = j.at("n_merchant").get<int>();
  w.n_archetypes = j.at("n_archetypes").get<int>();
  w.n_features = j.at("n_features").get<int>();
  w.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  w.anomaly_rule.feature_index = j.at("anomaly_rule").at("feature_index").get<int>();
  w.anomaly_rule.threshold = j.at("anomaly_rule").at("threshold").get<double>();
  w.latent_flip_prob = j.value("latent_flip_prob", 0.1);
  w.feature_noise = j.value("feature_noise", 0.05);
  auto mat = [](const json& rows) {
    Mat m(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (size_t r = 0; r < rows.size(); ++r)
      for (size_t c = 0; c < rows[r].size(); ++c)
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c].get<double>();
    return m;
  };
  for (const auto& t : j.at("transition_matrices")) w.transition_matrices.push_back(mat(t));
  if (j.contains("initial_distributions")) {
    for (const auto& p : j.at("initial_distributions")) {
      Vec v(p.size());
      for (size_t i = 0; i < p.size(); ++i) v(static_cast<Eigen::Index>(i)) = p[i].get<double>();
      w.initial_distributions.push_back(std::move(v));
    }
  }
  w.amount_log_mu_sigma = mat(j.at("amount_log_mu_sigma"));
  w.gap_rate_per_hour = j.at("gap_rate_per_hour").get<std::vector<double>>();
  w.validate();
  return w;
}

}  // namespace tgpt::data
