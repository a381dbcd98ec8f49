#include "tgpt/checkpoint.hpp"

#include "tgpt/dataset_io.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <unordered_set>
#include <vector>

namespace tgpt::model {

using json = nlohmann::ordered_json;

namespace {
constexpr char kMagic[8] = {'T', 'G', 'P', 'T', 'C', 'K', 'P', '1'};
}

ModelBundle make_bundle(const ModelConfig& config, const data::Schema& schema) {
  ModelBundle b;
  b.schema = schema;
  b.model = std::make_unique<TgptModel>(config, schema);
  b.config = b.model->config();  // normalized form
  auto rng = make_rng(static_cast<std::uint64_t>(b.config.init_seed), 21);
  b.heads = obj::HeadSet(*b.model, rng);
  return b;
}

void save_checkpoint(const std::string& path, const ModelBundle& bundle) {
  const ParamStore& store = bundle.model->store();
  json tensors = json::array();
  std::size_t n_values = 0;
  for (const auto& p : store.all()) {
    tensors.push_back(json{{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
    n_values += static_cast<std::size_t>(p.value.size());
  }
  const json header{{"config", model_config_to_json(bundle.config)},
                    {"schema", data::schema_to_json(bundle.schema)},
                    {"tensors", tensors}};
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));

  std::vector<double> buf;
  buf.reserve(n_values);
  for (const auto& p : store.all())
    buf.insert(buf.end(), p.value.data(), p.value.data() + p.value.size());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(double)));
  if (!out) throw DataError("short write while saving checkpoint: " + path);
}

ModelBundle load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("not a checkpoint file: " + path);
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in) throw DataError("truncated checkpoint header: " + path);
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw DataError("truncated checkpoint header: " + path);

  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception& e) {
    throw DataError(std::string("bad checkpoint header: ") + e.what());
  }

  ModelBundle b = make_bundle(model_config_from_json(header.at("config")),
                              data::schema_from_json(header.at("schema")));
  ParamStore& store = b.model->store();

  const json& tensors = header.at("tensors");
  if (tensors.size() != store.all().size())
    throw DataError("checkpoint tensor count mismatch: file has " +
                    std::to_string(tensors.size()) + ", model has " +
                    std::to_string(store.all().size()));
  std::unordered_set<std::string> seen;
  for (const auto& t : tensors) {
    const std::string name = t.at("name").get<std::string>();
    if (!store.has(name)) throw DataError("checkpoint has unknown tensor: " + name);
    if (!seen.insert(name).second) throw DataError("checkpoint repeats tensor: " + name);
    Param& p = store.at(name);
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    if (rows != p.value.rows() || cols != p.value.cols())
      throw DataError("checkpoint tensor shape mismatch for " + name);
    in.read(reinterpret_cast<char*>(p.value.data()),
            static_cast<std::streamsize>(p.value.size() * sizeof(double)));
    if (!in) throw DataError("truncated checkpoint values: " + path);
  }
  return b;
}

}  // namespace tgpt::model
