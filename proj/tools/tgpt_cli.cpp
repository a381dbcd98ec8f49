// Config-driven command line for the transaction model family.
//
//   tgpt_cli <gen-data|train|eval|bench|export-embeddings> --config run.json
//
// One JSON config per run; unknown keys are rejected. Every command writes
// its artifacts plus a manifest.json carrying the config, the seeds and
// FNV-1a content hashes of inputs and outputs, so a run is reproducible
// from (config, seed) alone. Relative out_dir paths can be redirected with
// the TGPT_OUTPUT_ROOT environment variable.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
// failure during training.

#include "tgpt/checkpoint.hpp"
#include "tgpt/core.hpp"
#include "tgpt/dataset_io.hpp"
#include "tgpt/embedding.hpp"
#include "tgpt/flops.hpp"
#include "tgpt/model.hpp"
#include "tgpt/synthetic.hpp"
#include "tgpt/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace tgpt;

namespace {

json load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open config: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
}

fs::path resolve_out_dir(const json& cfg) {
  if (!cfg.contains("out_dir")) throw ConfigError("config needs an out_dir");
  fs::path dir = cfg.at("out_dir").get<std::string>();
  if (const char* root = std::getenv("TGPT_OUTPUT_ROOT"); root && *root && dir.is_relative())
    dir = fs::path(root) / dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string());
  return dir;
}

void write_manifest(const fs::path& out_dir, const std::string& command, const json& cfg,
                    std::uint64_t seed, const std::map<std::string, std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  json j;
  j["command"] = command;
  j["seed"] = seed;
  j["config"] = cfg;
  json in = json::object();
  for (const auto& [name, path] : inputs) in[name] = data::file_content_hash(path);
  j["input_hashes"] = std::move(in);
  json out = json::object();
  for (const auto& name : outputs) out[name] = data::file_content_hash((out_dir / name).string());
  j["output_hashes"] = std::move(out);
  std::ofstream f(out_dir / "manifest.json", std::ios::binary);
  if (!f) throw DataError("cannot write manifest in " + out_dir.string());
  f << j.dump(2) << '\n';
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw DataError("missing file: " + path);
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const json& cfg) {
  model::json_check_keys(cfg,
                         {"out_dir", "world", "world_standard", "n_train_accounts",
                          "n_test_accounts", "seq_len"},
                         "gen-data config");
  if (cfg.contains("world") == cfg.contains("world_standard"))
    throw ConfigError("gen-data needs exactly one of world / world_standard");

  data::SyntheticWorldSpec world;
  if (cfg.contains("world")) {
    world = data::world_from_json(cfg.at("world"));
  } else {
    const json& ws = cfg.at("world_standard");
    model::json_check_keys(ws, {"n_mcc", "n_merchant", "n_archetypes", "n_features", "seed"},
                           "world_standard");
    world = data::SyntheticWorldSpec::standard(
        ws.value("n_mcc", 50), ws.value("n_merchant", 500), ws.value("n_archetypes", 5),
        ws.value("n_features", 8), ws.value("seed", std::uint64_t{1}));
  }
  const int n_train = cfg.value("n_train_accounts", 0);
  const int n_test = cfg.value("n_test_accounts", 0);
  const int seq_len = cfg.value("seq_len", 8);
  if (n_train < 0 || n_test < 0 || seq_len < 1)
    throw ConfigError("gen-data: account counts must be >= 0 and seq_len >= 1");

  const fs::path out = resolve_out_dir(cfg);
  const auto train_seqs = data::generate_synthetic(world, n_train, seq_len, 0);
  const auto test_seqs = data::generate_synthetic(world, n_test, seq_len, n_train);
  const data::Schema schema =
      data::Schema::mmtt_default(world.n_mcc, world.n_merchant, world.n_features);

  data::save_sequences_jsonl((out / "train.jsonl").string(), train_seqs);
  data::save_sequences_jsonl((out / "test.jsonl").string(), test_seqs);
  data::save_schema_sidecar((out / "schema.json").string(), schema, data::world_to_json(world));
  write_manifest(out, "gen-data", cfg, world.rng_seed, {},
                 {"train.jsonl", "test.jsonl", "schema.json"});
  std::cout << "wrote " << n_train << " train / " << n_test << " test sequences to " << out
            << "\n";
  return 0;
}

int cmd_train(const json& cfg) {
  model::json_check_keys(
      cfg, {"out_dir", "data_dir", "model", "trainer", "min_window", "init_checkpoint"},
      "train config");
  if (!cfg.contains("data_dir")) throw ConfigError("train needs a data_dir");
  const fs::path data_dir = cfg.at("data_dir").get<std::string>();
  const int min_window = cfg.value("min_window", 2);

  require_file((data_dir / "schema.json").string());
  const data::Schema schema = data::load_schema_sidecar((data_dir / "schema.json").string());

  model::ModelBundle bundle;
  if (cfg.contains("init_checkpoint")) {
    const std::string ck = cfg.at("init_checkpoint").get<std::string>();
    require_file(ck);
    bundle = model::load_checkpoint(ck);
    if (cfg.contains("model") &&
        model::model_config_to_json(model::model_config_from_json(cfg.at("model"))
                                        .normalized(schema)) !=
            model::model_config_to_json(bundle.config))
      throw ConfigError("train: model section disagrees with init_checkpoint");
    if (data::schema_to_json(bundle.schema) != data::schema_to_json(schema))
      throw ConfigError("train: dataset schema disagrees with init_checkpoint");
  } else {
    if (!cfg.contains("model")) throw ConfigError("train needs a model section");
    bundle = model::make_bundle(model::model_config_from_json(cfg.at("model")), schema);
  }

  require_file((data_dir / "train.jsonl").string());
  const auto train_seqs =
      data::load_sequences_jsonl((data_dir / "train.jsonl").string(), schema);
  const auto train_windows =
      data::segment_sequences(train_seqs, bundle.config.max_len, min_window);
  std::vector<data::Window> eval_windows;
  const bool have_test = fs::exists(data_dir / "test.jsonl");
  if (have_test) {
    const auto test_seqs =
        data::load_sequences_jsonl((data_dir / "test.jsonl").string(), schema);
    eval_windows = data::segment_sequences(test_seqs, bundle.config.max_len, min_window);
  }

  train::TrainConfig tc = cfg.contains("trainer")
                              ? train::train_config_from_json(cfg.at("trainer"))
                              : train::TrainConfig{};
  const auto curves = train::train(*bundle.model, bundle.heads, tc, train_windows,
                                   have_test ? &eval_windows : nullptr);

  const fs::path out = resolve_out_dir(cfg);
  model::save_checkpoint((out / "checkpoint.bin").string(), bundle);
  json jc;
  jc["step_loss"] = curves.step_loss;
  json epochs = json::array();
  for (const auto& r : curves.epoch_reports) epochs.push_back(r.to_json());
  jc["epochs"] = std::move(epochs);
  write_json_file(out / "curves.json", jc);

  std::map<std::string, std::string> inputs{
      {"train.jsonl", (data_dir / "train.jsonl").string()},
      {"schema.json", (data_dir / "schema.json").string()}};
  if (have_test) inputs["test.jsonl"] = (data_dir / "test.jsonl").string();
  write_manifest(out, "train", cfg, tc.seed, inputs, {"checkpoint.bin", "curves.json"});
  std::cout << "trained " << curves.step_loss.size() << " steps; checkpoint in " << out << "\n";
  return 0;
}

int cmd_eval(const json& cfg) {
  model::json_check_keys(cfg, {"out_dir", "data", "checkpoint", "batch_size", "min_window", "loss"},
                         "eval config");
  if (!cfg.contains("data") || !cfg.contains("checkpoint"))
    throw ConfigError("eval needs data and checkpoint paths");
  const std::string data_path = cfg.at("data").get<std::string>();
  const std::string ck_path = cfg.at("checkpoint").get<std::string>();
  require_file(data_path);
  require_file(ck_path);

  model::ModelBundle bundle = model::load_checkpoint(ck_path);
  const auto seqs = data::load_sequences_jsonl(data_path, bundle.schema);
  const auto windows =
      data::segment_sequences(seqs, bundle.config.max_len, cfg.value("min_window", 2));
  const obj::LossWeights weights = cfg.contains("loss")
                                       ? obj::loss_weights_from_json(cfg.at("loss"))
                                       : obj::LossWeights{};
  const auto report = train::evaluate(*bundle.model, bundle.heads, weights, windows,
                                      cfg.value("batch_size", 64));

  const fs::path out = resolve_out_dir(cfg);
  write_json_file(out / "metrics.json", report.to_json());
  write_manifest(out, "eval", cfg, bundle.config.init_seed,
                 {{"data", data_path}, {"checkpoint", ck_path}}, {"metrics.json"});
  std::cout << "evaluated " << windows.size() << " windows; metrics in " << out << "\n";
  return 0;
}

int cmd_bench(const json& cfg) {
  model::json_check_keys(cfg,
                         {"out_dir", "regime", "repeats", "analytic_threshold",
                          "empirical_threshold", "sweep", "sweep_repeats"},
                         "bench config");
  const bench::ComplexityInput in = cfg.contains("regime")
                                        ? bench::ComplexityInput::from_json(cfg.at("regime"))
                                        : bench::ComplexityInput{};
  const int repeats = cfg.value("repeats", 20);
  const auto report = bench::verify_theorem1(in, repeats, cfg.value("analytic_threshold", 5.0),
                                             cfg.value("empirical_threshold", 3.0));

  const fs::path out = resolve_out_dir(cfg);
  const model::Variant variants[] = {model::Variant::tgpt_1d, model::Variant::tgpt_2d,
                                     model::Variant::tgpt_3d_mtf, model::Variant::tgpt_3d_fmt};
  json budgets = json::object();
  std::ostringstream csv;
  csv << "variant,feature_part,meta_part,temporal_part,total,median_ms\n";
  for (const auto v : variants) {
    const auto b = bench::flop_estimate(v, in);
    budgets[model::to_string(v)] = b.to_json();
    const double ms = repeats > 0 ? bench::time_forward_ms(v, in, repeats) : 0.0;
    csv << model::to_string(v) << ',' << b.feature_part << ',' << b.meta_part << ','
        << b.temporal_part << ',' << b.total << ',' << ms << '\n';
  }
  json jr;
  jr["efficiency_claim"] = report.to_json();
  jr["budgets"] = std::move(budgets);
  write_json_file(out / "report.json", jr);
  {
    std::ofstream f(out / "budgets.csv", std::ios::binary);
    if (!f) throw DataError("cannot write budgets.csv");
    f << csv.str();
  }

  std::vector<std::string> outputs{"report.json", "budgets.csv"};
  if (cfg.contains("sweep")) {
    const int sweep_repeats = cfg.value("sweep_repeats", 5);
    std::ofstream f(out / "sweep.tsv", std::ios::binary);
    if (!f) throw DataError("cannot write sweep.tsv");
    f << "n_features\td_m\td_f\td_tr\tv_f\tv_t\tw\to_2d\to_fmt\tms_2d\tms_fmt\n";
    for (const auto& row : cfg.at("sweep")) {
      const auto si = bench::ComplexityInput::from_json(row);
      const double o2 = bench::flop_estimate(model::Variant::tgpt_2d, si).total;
      const double of = bench::flop_estimate(model::Variant::tgpt_3d_fmt, si).total;
      const double m2 =
          sweep_repeats > 0
              ? bench::time_forward_ms(model::Variant::tgpt_2d, si, sweep_repeats)
              : 0.0;
      const double mf =
          sweep_repeats > 0
              ? bench::time_forward_ms(model::Variant::tgpt_3d_fmt, si, sweep_repeats)
              : 0.0;
      f << si.n_features << '\t' << si.d_m << '\t' << si.d_f << '\t' << si.d_tr << '\t' << si.v_f
        << '\t' << si.v_t << '\t' << si.w << '\t' << o2 << '\t' << of << '\t' << m2 << '\t' << mf
        << '\n';
    }
    outputs.push_back("sweep.tsv");
  }
  write_manifest(out, "bench", cfg, 0, {}, outputs);
  std::cout << (report.pass ? "efficiency claim holds" : "efficiency claim FAILED")
            << "; analytic ratio " << report.analytic_ratio << "; report in " << out << "\n";
  return 0;
}

int cmd_export_embeddings(const json& cfg) {
  model::json_check_keys(cfg, {"out_dir", "checkpoint", "entity"}, "export-embeddings config");
  if (!cfg.contains("checkpoint") || !cfg.contains("entity"))
    throw ConfigError("export-embeddings needs checkpoint and entity");
  const std::string ck_path = cfg.at("checkpoint").get<std::string>();
  require_file(ck_path);
  model::ModelBundle bundle = model::load_checkpoint(ck_path);
  const std::string name = cfg.at("entity").get<std::string>();

  const fs::path out = resolve_out_dir(cfg);
  const auto& emb = bundle.model->entity(name);
  embed::export_entity_vectors((out / "vectors.jsonl").string(), emb, bundle.model->store());
  write_manifest(out, "export-embeddings", cfg, bundle.config.init_seed,
                 {{"checkpoint", ck_path}}, {"vectors.jsonl"});
  std::cout << "exported " << emb.n_entities() << ' ' << name << " vectors to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"transaction sequence models: data generation, training, evaluation, benchmarks"};
  app.require_subcommand(1);
  std::string config_path;
  std::string chosen;
  for (const auto& name :
       {"gen-data", "train", "eval", "bench", "export-embeddings"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON run config")->required();
    sub->callback([&chosen, name] { chosen = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const json cfg = load_config(config_path);
    if (chosen == "gen-data") return cmd_gen_data(cfg);
    if (chosen == "train") return cmd_train(cfg);
    if (chosen == "eval") return cmd_eval(cfg);
    if (chosen == "bench") return cmd_bench(cfg);
    return cmd_export_embeddings(cfg);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::out_of_range& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
