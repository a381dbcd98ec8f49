#pragma once

// Training loop, evaluation metrics and the finite-difference gradient
// checker. Everything here is deterministic given the seeds: data order,
// dropout and initialization all come from named streams, and execution is
// serial.
//
// Evaluation scores each window once, at the transition into its last real
// transaction: generative metrics read the row predicting that transaction,
// classification reads the row whose label entry is that transaction's
// label. Numeric errors are reported both in log space (the training
// objective) and in the raw unit after inverting the log map.

#include "tgpt/batch.hpp"
#include "tgpt/core.hpp"
#include "tgpt/data.hpp"
#include "tgpt/model.hpp"
#include "tgpt/objectives.hpp"

#include <json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace tgpt::train {

// rank(true) counts strictly-better logits plus equal logits at lower
// indices, so ties break toward the smaller index. Hit iff rank < k.
bool hit_at_k(const Eigen::Ref<const Eigen::RowVectorXd>& logits, int true_index, int k);

struct MetricReport {
  double recall1_mcc = 0, recall5_mcc = 0;
  double recall1_merchant = 0, recall5_merchant = 0;
  double gap_mae_log = 0, gap_mse_log = 0, gap_mae_raw = 0, gap_mse_raw = 0;
  double amount_mae_log = 0, amount_mse_log = 0, amount_mae_raw = 0, amount_mse_raw = 0;
  double cls_accuracy = 0;
  long n_gen = 0, n_cls = 0;
  obj::LossParts losses;  // averaged over evaluation batches

  nlohmann::ordered_json to_json() const;
};

struct Bundle;  // forward declaration (checkpoint.hpp)

MetricReport evaluate(model::TgptModel& m, const obj::HeadSet& heads, const obj::LossWeights& w,
                      const std::vector<data::Window>& windows, int batch_size);

struct TrainConfig {
  int epochs = 1;
  int batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double clip_norm = 1.0;  // global gradient-norm ceiling; <= 0 disables
  obj::LossWeights weights;
  std::uint64_t seed = 1;  // batch order
  bool shuffle = true;
  std::function<void(int step, const obj::LossParts&)> on_step;  // optional

  void validate() const;
};

nlohmann::ordered_json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::ordered_json& j);

struct TrainCurves {
  std::vector<double> step_loss;
  std::vector<MetricReport> epoch_reports;
};

// Throws NumericError when the loss stops being finite.
TrainCurves train(model::TgptModel& m, obj::HeadSet& heads, const TrainConfig& tc,
                  const std::vector<data::Window>& train_windows,
                  const std::vector<data::Window>* eval_windows);

// Central finite differences on `probes` random trainable coordinates
// (frozen padding rows excluded). eval(true) must rebuild the loss, run
// backward into the store's gradients and return the loss; eval(false)
// returns the loss only. Coordinates where analytic and numeric derivative
// are both below `tiny` are compared absolutely.
struct GradCheck {
  double max_rel_err = 0;
  double max_abs_err = 0;
  std::string worst;  // "name[r,c]"
};

GradCheck gradient_check(ParamStore& store, const std::function<double(bool)>& eval, int probes,
                         double h, std::mt19937_64& rng, double tiny = 1e-6);

}  // namespace tgpt::train
