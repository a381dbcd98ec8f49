#include "tgpt/batch.hpp"

#include <algorithm>
#include <stdexcept>

namespace tgpt::model {

Batch make_batch(const data::Schema& schema, const std::vector<data::Window>& windows,
                 size_t first, size_t count) {
  const size_t end = std::min(windows.size(), count == SIZE_MAX ? windows.size() : first + count);
  if (first >= end) throw std::invalid_argument("make_batch: empty window range");

  Batch b;
  b.B = static_cast<int>(end - first);
  b.L = windows[first].length;
  const Eigen::Index N = b.rows();
  const size_t n_cat = schema.categorical.size();
  const size_t n_num = schema.numeric.size();
  const size_t n_ent = schema.entities.size();

  b.cat.assign(n_cat, std::vector<int>(static_cast<size_t>(N), 0));
  b.num = Mat::Zero(N, static_cast<Eigen::Index>(n_num));
  b.ent.assign(n_ent, std::vector<int>(static_cast<size_t>(N), 0));
  b.features = Mat::Zero(N, schema.n_features);
  b.row_valid.assign(static_cast<size_t>(N), 0);
  b.next_mcc.assign(static_cast<size_t>(N), 0);
  b.next_merchant.assign(static_cast<size_t>(N), 0);
  b.next_gap = Vec::Zero(N);
  b.next_amount = Vec::Zero(N);
  b.next_features = Mat::Zero(N, schema.n_features);
  b.next_valid.assign(static_cast<size_t>(N), 0);
  b.label.assign(static_cast<size_t>(N), -1);
  b.label_valid.assign(static_cast<size_t>(N), 0);

  for (int wb = 0; wb < b.B; ++wb) {
    const data::Window& w = windows[first + static_cast<size_t>(wb)];
    if (w.length != b.L) throw std::invalid_argument("make_batch: mixed window lengths");
    b.valid.push_back(w.valid());
    for (int i = 0; i < w.valid(); ++i) {
      const Eigen::Index r = static_cast<Eigen::Index>(wb) * b.L + i;
      const data::Transaction& t = w.txns[static_cast<size_t>(i)];
      b.row_valid[static_cast<size_t>(r)] = 1;
      for (size_t c = 0; c < n_cat; ++c)
        b.cat[c][static_cast<size_t>(r)] =
            t.metadata_categorical.at(schema.categorical[c].name);
      for (size_t c = 0; c < n_num; ++c)
        b.num(r, static_cast<Eigen::Index>(c)) = t.metadata_numeric.at(schema.numeric[c].name);
      for (size_t c = 0; c < n_ent; ++c)
        b.ent[c][static_cast<size_t>(r)] = t.entities.at(schema.entities[c].name);
      for (int c = 0; c < schema.n_features; ++c)
        b.features(r, c) = t.features[static_cast<size_t>(c)];
      if (t.label) {
        b.label[static_cast<size_t>(r)] = *t.label;
        b.label_valid[static_cast<size_t>(r)] = 1;
      }
      if (i + 1 < w.valid()) {
        const data::Transaction& nx = w.txns[static_cast<size_t>(i) + 1];
        b.next_mcc[static_cast<size_t>(r)] = nx.entities.at("mcc");
        b.next_merchant[static_cast<size_t>(r)] = nx.entities.at("merchant");
        b.next_gap(r) = nx.metadata_numeric.at("time_gap");
        b.next_amount(r) = nx.metadata_numeric.at("amount");
        for (int c = 0; c < schema.n_features; ++c)
          b.next_features(r, c) = nx.features[static_cast<size_t>(c)];
        b.next_valid[static_cast<size_t>(r)] = 1;
      }
    }
  }
  return b;
}

}  // namespace tgpt::model
