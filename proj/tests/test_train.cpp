#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tgpt/checkpoint.hpp"
#include "tgpt/synthetic.hpp"
#include "tgpt/train.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

using namespace tgpt;
using json = nlohmann::ordered_json;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("tgpt_train_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

model::ModelConfig small_cfg(model::Variant v = model::Variant::tgpt_2d) {
  model::ModelConfig c;
  c.variant = v;
  c.d_m = 4;
  c.d_f = 2;
  c.d_tr = 16;
  c.v_t = 4;
  c.k_last = 2;
  c.window = 4;
  c.max_len = 4;
  c.n_classes = 2;
  c.init_seed = 7;
  return c;
}

std::vector<data::Window> small_windows(int n_accounts, int seq_len, int l) {
  const auto world = data::SyntheticWorldSpec::standard(10, 20, 2, 3, 3);
  return data::segment_sequences(data::generate_synthetic(world, n_accounts, seq_len), l, 1);
}

// Independent rank oracle: order ids by (logit descending, index ascending)
// and locate the true index.
bool hit_by_sorting(const Eigen::RowVectorXd& logits, int true_index, int k) {
  std::vector<int> ids(static_cast<size_t>(logits.size()));
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    if (logits(a) != logits(b)) return logits(a) > logits(b);
    return a < b;
  });
  const auto pos = std::find(ids.begin(), ids.end(), true_index) - ids.begin();
  return pos < k;
}

}  // namespace

TEST_CASE("hit_at_k matches an exhaustive sorting oracle, ties included") {
  auto rng = make_rng(99, 0);
  std::uniform_int_distribution<int> level(0, 2);  // coarse grid forces ties
  std::uniform_int_distribution<int> csize(2, 9);
  for (int trial = 0; trial < 200; ++trial) {
    const int c = csize(rng);
    Eigen::RowVectorXd logits(c);
    for (int j = 0; j < c; ++j) logits(j) = level(rng) * 0.5;
    for (int truth = 0; truth < c; ++truth)
      for (int k = 1; k <= c; ++k)
        CHECK(train::hit_at_k(logits, truth, k) == hit_by_sorting(logits, truth, k));
    CHECK(train::hit_at_k(logits, 0, c));  // k = C always hits
  }
  Eigen::RowVectorXd v(4);
  v << 0.0, 3.0, 3.0, 1.0;
  CHECK(train::hit_at_k(v, 1, 1));        // first of the tied maxima
  CHECK_FALSE(train::hit_at_k(v, 2, 1));  // second of the tied maxima
  CHECK(train::hit_at_k(v, 2, 2));
  CHECK_FALSE(train::hit_at_k(v, 0, 3));
  CHECK(train::hit_at_k(v, 0, 4));
}

TEST_CASE("evaluate is invariant to batch size") {
  auto bundle = model::make_bundle(small_cfg(), data::Schema::mmtt_default(10, 20, 3));
  const auto windows = small_windows(6, 7, 4);
  const obj::LossWeights w;
  const auto one = train::evaluate(*bundle.model, bundle.heads, w, windows, 1);
  const auto all = train::evaluate(*bundle.model, bundle.heads, w, windows, 64);
  CHECK(one.n_gen == all.n_gen);
  CHECK(one.n_cls == all.n_cls);
  CHECK(one.n_gen == static_cast<long>(windows.size()));
  CHECK(one.recall1_mcc == doctest::Approx(all.recall1_mcc).epsilon(1e-12));
  CHECK(one.recall5_mcc == doctest::Approx(all.recall5_mcc).epsilon(1e-12));
  CHECK(one.recall1_merchant == doctest::Approx(all.recall1_merchant).epsilon(1e-12));
  CHECK(one.recall5_merchant == doctest::Approx(all.recall5_merchant).epsilon(1e-12));
  CHECK(one.gap_mae_log == doctest::Approx(all.gap_mae_log).epsilon(1e-12));
  CHECK(one.gap_mse_log == doctest::Approx(all.gap_mse_log).epsilon(1e-12));
  CHECK(one.amount_mae_raw == doctest::Approx(all.amount_mae_raw).epsilon(1e-12));
  CHECK(one.cls_accuracy == doctest::Approx(all.cls_accuracy).epsilon(1e-12));
  CHECK(all.recall5_mcc >= all.recall1_mcc);
  CHECK(all.recall5_merchant >= all.recall1_merchant);
  CHECK(all.recall1_mcc >= 0.0);
  CHECK(all.recall1_mcc <= 1.0);
  CHECK(all.cls_accuracy >= 0.0);
  CHECK(all.cls_accuracy <= 1.0);

  const json j = all.to_json();
  CHECK(j.contains("recall1_mcc"));
  CHECK(j.at("gap").contains("mae_log"));
  CHECK(j.at("amount").contains("mse_raw"));
  CHECK(j.at("loss").contains("total"));
  CHECK(j.at("n_gen").get<long>() == all.n_gen);
}

TEST_CASE("training reduces the evaluation loss") {
  auto bundle = model::make_bundle(small_cfg(), data::Schema::mmtt_default(10, 20, 3));
  const auto windows = small_windows(12, 7, 4);
  train::TrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 8;
  tc.lr = 2e-2;
  tc.seed = 5;

  const auto before =
      train::evaluate(*bundle.model, bundle.heads, tc.weights, windows, tc.batch_size);
  const auto curves = train::train(*bundle.model, bundle.heads, tc, windows, &windows);
  const size_t steps_per_epoch = (windows.size() + 7) / 8;
  CHECK(curves.step_loss.size() == steps_per_epoch * 6);
  CHECK(curves.epoch_reports.size() == 6);

  const auto& after = curves.epoch_reports.back();
  CHECK(after.losses.total < before.losses.total);
  CHECK(after.losses.num < before.losses.num);
  CHECK(after.losses.cat < before.losses.cat);

  const double first = std::accumulate(curves.step_loss.begin(), curves.step_loss.begin() + 3, 0.0);
  const double last = std::accumulate(curves.step_loss.end() - 3, curves.step_loss.end(), 0.0);
  CHECK(last < first);
}

TEST_CASE("training is deterministic and zero epochs is a no-op") {
  const auto schema = data::Schema::mmtt_default(10, 20, 3);
  const auto windows = small_windows(6, 7, 4);
  train::TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 8;
  tc.lr = 1e-2;

  SUBCASE("identical seeds give bit-identical curves and parameters") {
    auto b1 = model::make_bundle(small_cfg(), schema);
    auto b2 = model::make_bundle(small_cfg(), schema);
    const auto c1 = train::train(*b1.model, b1.heads, tc, windows, nullptr);
    const auto c2 = train::train(*b2.model, b2.heads, tc, windows, nullptr);
    REQUIRE(c1.step_loss.size() == c2.step_loss.size());
    for (size_t i = 0; i < c1.step_loss.size(); ++i) CHECK(c1.step_loss[i] == c2.step_loss[i]);
    for (const auto& p : b1.model->store().all())
      CHECK(p.value == b2.model->store().at(p.name).value);
  }
  SUBCASE("zero epochs leaves every tensor untouched") {
    auto b = model::make_bundle(small_cfg(), schema);
    std::vector<Mat> snap;
    for (const auto& p : b.model->store().all()) snap.push_back(p.value);
    train::TrainConfig none = tc;
    none.epochs = 0;
    const auto curves = train::train(*b.model, b.heads, none, windows, nullptr);
    CHECK(curves.step_loss.empty());
    CHECK(curves.epoch_reports.empty());
    size_t i = 0;
    for (const auto& p : b.model->store().all()) CHECK(p.value == snap[i++]);
  }
  SUBCASE("empty window list is rejected") {
    auto b = model::make_bundle(small_cfg(), schema);
    CHECK_THROWS_AS((void)train::train(*b.model, b.heads, tc, {}, nullptr),
                    std::invalid_argument);
  }
  SUBCASE("a non-finite loss raises a numeric error") {
    auto b = model::make_bundle(small_cfg(), schema);
    b.model->store().at("head.gap.b").value(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS((void)train::train(*b.model, b.heads, tc, windows, nullptr), NumericError);
  }
}

TEST_CASE("train config JSON round trip and validation") {
  train::TrainConfig c;
  c.epochs = 3;
  c.lr = 5e-4;
  c.clip_norm = 0.0;
  c.shuffle = false;
  c.weights.orth = 0.25;
  const json j = train::train_config_to_json(c);
  const train::TrainConfig c2 = train::train_config_from_json(j);
  CHECK(train::train_config_to_json(c2) == j);
  CHECK(c2.epochs == 3);
  CHECK(c2.weights.orth == 0.25);

  CHECK_THROWS_AS((void)train::train_config_from_json(json{{"lr", 0.0}}), std::invalid_argument);
  CHECK_THROWS_AS((void)train::train_config_from_json(json{{"momentum", 0.9}}),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)train::train_config_from_json(json{{"loss", json{{"num", -1.0}}}}),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)train::train_config_from_json(json{{"batch_size", 0}}),
                  std::invalid_argument);
}

TEST_CASE("gradient_check: quadratic loss to near machine precision") {
  ParamStore store;
  auto rng = make_rng(4, 0);
  store.add("q.w", randn(2, 3, 1.0, rng));
  auto eval = [&](bool with_grad) {
    ad::Tape t;
    const ad::Value loss = t.sum_square(store.use(t, "q.w"));
    if (with_grad) t.backward(loss);
    return loss.scalar();
  };
  auto probe_rng = make_rng(4, 1);
  const auto gc = train::gradient_check(store, eval, 12, 1e-6, probe_rng);
  CHECK(gc.max_rel_err < 1e-8);
  CHECK_FALSE(gc.worst.empty());
}

TEST_CASE("gradient_check: full model loss with orthogonality and decay") {
  model::ModelConfig cfg = small_cfg(model::Variant::tgpt_3d_fmt);
  cfg.d_tr = 8;
  cfg.v_f = 2;
  cfg.v_t = 2;
  cfg.window = 2;
  cfg.max_len = 3;
  cfg.init_seed = 9;
  auto bundle = model::make_bundle(cfg, data::Schema::mmtt_default(10, 20, 3));
  const auto windows = small_windows(2, 5, 3);
  const model::Batch b = model::make_batch(bundle.schema, windows);
  obj::LossWeights w;
  w.decay = 1e-3;  // large enough that decay gradients register against fd noise
  auto eval = [&](bool with_grad) {
    ad::Tape t;
    const model::Forward f = bundle.model->forward(t, b, /*training=*/false);
    const obj::HeadOutputs h = bundle.heads.apply(t, f);
    const obj::LossResult r = obj::compute_losses(t, bundle.model->store(), h, f, b, w);
    if (with_grad) t.backward(r.total);
    return r.parts.total;
  };
  // Step 4e-5 keeps central-difference rounding noise (~eps*|loss|/step)
  // well under the smallest gradients probed here (~2e-6); truncation error
  // at this step is still orders below the tolerance.
  auto probe_rng = make_rng(9, 2);
  const auto gc = train::gradient_check(bundle.model->store(), eval, 60, 4e-5, probe_rng);
  INFO("worst coordinate: ", gc.worst);
  CHECK(gc.max_rel_err < 1e-4);
}

TEST_CASE("checkpoint round trip restores the exact model") {
  TempDir dir;
  const auto schema = data::Schema::mmtt_default(10, 20, 3);
  auto bundle = model::make_bundle(small_cfg(), schema);
  const auto windows = small_windows(6, 7, 4);
  train::TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 8;
  (void)train::train(*bundle.model, bundle.heads, tc, windows, nullptr);

  const std::string path = dir.file("model.ckpt");
  model::save_checkpoint(path, bundle);
  auto loaded = model::load_checkpoint(path);

  SUBCASE("every tensor is bit-identical, running statistics included") {
    const auto& a = bundle.model->store().all();
    const auto& b = loaded.model->store().all();
    REQUIRE(a.size() == b.size());
    bool saw_running_stat = false;
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].name == b[i].name);
      CHECK(a[i].value == b[i].value);
      saw_running_stat |= !a[i].trainable;
    }
    CHECK(saw_running_stat);
    CHECK(model::model_config_to_json(loaded.config) ==
          model::model_config_to_json(bundle.config));
  }
  SUBCASE("forward outputs and evaluation metrics are reproduced exactly") {
    const model::Batch b = model::make_batch(schema, windows, 0, 4);
    ad::Tape t;
    const Mat gen1 = bundle.model->forward(t, b, false).gen.val();
    const Mat gen2 = loaded.model->forward(t, b, false).gen.val();
    CHECK(gen1 == gen2);
    const auto r1 = train::evaluate(*bundle.model, bundle.heads, tc.weights, windows, 8);
    const auto r2 = train::evaluate(*loaded.model, loaded.heads, tc.weights, windows, 8);
    CHECK(r1.to_json() == r2.to_json());
  }
  SUBCASE("corrupt or missing files are data errors") {
    CHECK_THROWS_AS((void)model::load_checkpoint(dir.file("absent.ckpt")), DataError);
    std::ofstream bad(dir.file("bad.ckpt"), std::ios::binary);
    bad << "NOTACKPTxxxxxxxxxxxxxxxx";
    bad.close();
    CHECK_THROWS_AS((void)model::load_checkpoint(dir.file("bad.ckpt")), DataError);
  }
}
