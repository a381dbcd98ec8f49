#pragma once

// Prediction heads and the composite training loss.
//
// Generative targets are the four fields time_gap, amount, mcc and merchant
// of the following transaction. Numeric heads predict in log space against
// log(y + eps); categorical heads are softmax cross-entropy. The merchant
// head is tied to the merchant embedding table by default: a trunk affine
// matches the head width to the table width and the logits stage itself owns
// no parameters. The composite loss is
//
//   w_num * L_num + w_cat * L_cat + w_cls * L_cls
//     + w_decay * L_decay + w_orth * (L_orth_feature + L_orth_transaction)
//
// where absent parts (no classifier, no virtual token layers, no valid
// rows) contribute exactly zero.

#include "tgpt/batch.hpp"
#include "tgpt/core.hpp"
#include "tgpt/model.hpp"
#include "tgpt/params.hpp"
#include "tgpt/tape.hpp"

#include <json.hpp>

#include <string>

namespace tgpt::obj {

struct LossWeights {
  double num = 1.0;
  double cat = 1.0;
  double cls = 1.0;
  double decay = 1e-6;
  double orth = 1e-3;
  double eps = kLogEps;  // numeric target offset, shared with the embedders

  void validate() const;
};

nlohmann::ordered_json loss_weights_to_json(const LossWeights& w);
LossWeights loss_weights_from_json(const nlohmann::ordered_json& j);

struct HeadOutputs {
  ad::Value gap, amount;    // N x 1 log-space predictions
  ad::Value mcc, merchant;  // N x C logits over real entity ids 1..C
  ad::Value cls;            // N x n_classes (only when the model classifies)
  bool has_cls = false;
};

class HeadSet {
 public:
  HeadSet() = default;
  // Adds head parameters to the model's store; the model must outlive the
  // head set (both normally live in a ModelBundle).
  HeadSet(model::TgptModel& m, std::mt19937_64& rng);

  HeadOutputs apply(ad::Tape& t, const model::Forward& f) const;

  bool tied() const { return tied_; }
  // Parameters a dedicated merchant logits matrix would add: n * d where d
  // is the tied table's embedding width.
  std::size_t untied_extra_params() const;

 private:
  model::TgptModel* model_ = nullptr;
  int n_mcc_ = 0, n_merchant_ = 0;
  bool tied_ = true;
};

struct LossParts {
  double num = 0, cat = 0, cls = 0, decay = 0, orth = 0, total = 0;
  double gap = 0, amount = 0, mcc = 0, merchant = 0;
  long n_gen = 0, n_cls = 0;
};

struct LossResult {
  ad::Value total;  // 1x1, differentiable
  LossParts parts;
};

LossResult compute_losses(ad::Tape& t, ParamStore& store, const HeadOutputs& h,
                          const model::Forward& f, const model::Batch& b,
                          const LossWeights& w);

}  // namespace tgpt::obj
