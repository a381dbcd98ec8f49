#include "tgpt/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace tgpt::train {

using json = nlohmann::ordered_json;

bool hit_at_k(const Eigen::Ref<const Eigen::RowVectorXd>& logits, int true_index, int k) {
  const double lt = logits(true_index);
  int rank = 0;
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    if (logits(j) > lt) ++rank;
    else if (logits(j) == lt && j < true_index) ++rank;
  }
  return rank < k;
}

json MetricReport::to_json() const {
  json j;
  j["recall1_mcc"] = recall1_mcc;
  j["recall5_mcc"] = recall5_mcc;
  j["recall1_merchant"] = recall1_merchant;
  j["recall5_merchant"] = recall5_merchant;
  j["gap"] = json{{"mae_log", gap_mae_log},
                  {"mse_log", gap_mse_log},
                  {"mae_raw", gap_mae_raw},
                  {"mse_raw", gap_mse_raw}};
  j["amount"] = json{{"mae_log", amount_mae_log},
                     {"mse_log", amount_mse_log},
                     {"mae_raw", amount_mae_raw},
                     {"mse_raw", amount_mse_raw}};
  j["cls_accuracy"] = cls_accuracy;
  j["n_gen"] = n_gen;
  j["n_cls"] = n_cls;
  j["loss"] = json{{"total", losses.total}, {"num", losses.num},     {"cat", losses.cat},
                   {"cls", losses.cls},     {"decay", losses.decay}, {"orth", losses.orth}};
  return j;
}

MetricReport evaluate(model::TgptModel& m, const obj::HeadSet& heads, const obj::LossWeights& w,
                      const std::vector<data::Window>& windows, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("evaluate: batch_size must be positive");
  MetricReport rep;
  long n_batches = 0;
  const double eps = w.eps;

  for (size_t first = 0; first < windows.size(); first += static_cast<size_t>(batch_size)) {
    const size_t count = std::min(windows.size() - first, static_cast<size_t>(batch_size));
    model::Batch b = model::make_batch(m.schema(), windows, first, count);
    ad::Tape t;
    model::Forward f = m.forward(t, b, /*training=*/false);
    obj::HeadOutputs h = heads.apply(t, f);
    obj::LossResult lr = obj::compute_losses(t, m.store(), h, f, b, w);
    ++n_batches;
    rep.losses.num += lr.parts.num;
    rep.losses.cat += lr.parts.cat;
    rep.losses.cls += lr.parts.cls;
    rep.losses.decay += lr.parts.decay;
    rep.losses.orth += lr.parts.orth;
    rep.losses.total += lr.parts.total;

    for (int wb = 0; wb < b.B; ++wb) {
      const Eigen::Index gr = model::TgptModel::eval_gen_row(b, wb);
      if (gr >= 0 && f.gen_valid[static_cast<size_t>(gr)]) {
        ++rep.n_gen;
        const int mcc_true = b.next_mcc[static_cast<size_t>(gr)] - 1;
        const int mer_true = b.next_merchant[static_cast<size_t>(gr)] - 1;
        rep.recall1_mcc += hit_at_k(h.mcc.val().row(gr), mcc_true, 1);
        rep.recall5_mcc += hit_at_k(h.mcc.val().row(gr), mcc_true, 5);
        rep.recall1_merchant += hit_at_k(h.merchant.val().row(gr), mer_true, 1);
        rep.recall5_merchant += hit_at_k(h.merchant.val().row(gr), mer_true, 5);

        const double gp = h.gap.val()(gr, 0), ap = h.amount.val()(gr, 0);
        const double gt = std::log(b.next_gap(gr) + eps), at = std::log(b.next_amount(gr) + eps);
        rep.gap_mae_log += std::abs(gp - gt);
        rep.gap_mse_log += (gp - gt) * (gp - gt);
        rep.amount_mae_log += std::abs(ap - at);
        rep.amount_mse_log += (ap - at) * (ap - at);
        const double graw = std::max(0.0, std::exp(gp) - eps);
        const double araw = std::max(0.0, std::exp(ap) - eps);
        rep.gap_mae_raw += std::abs(graw - b.next_gap(gr));
        rep.gap_mse_raw += (graw - b.next_gap(gr)) * (graw - b.next_gap(gr));
        rep.amount_mae_raw += std::abs(araw - b.next_amount(gr));
        rep.amount_mse_raw += (araw - b.next_amount(gr)) * (araw - b.next_amount(gr));
      }
      if (f.has_cls) {
        const Eigen::Index cr = m.eval_cls_row(b, wb);
        if (cr >= 0 && f.cls_valid[static_cast<size_t>(cr)]) {
          ++rep.n_cls;
          Eigen::Index pred;
          h.cls.val().row(cr).maxCoeff(&pred);  // first maximum: lowest index
          rep.cls_accuracy += pred == f.cls_label[static_cast<size_t>(cr)];
        }
      }
    }
  }

  if (rep.n_gen > 0) {
    const double ng = static_cast<double>(rep.n_gen);
    rep.recall1_mcc /= ng;
    rep.recall5_mcc /= ng;
    rep.recall1_merchant /= ng;
    rep.recall5_merchant /= ng;
    rep.gap_mae_log /= ng;
    rep.gap_mse_log /= ng;
    rep.gap_mae_raw /= ng;
    rep.gap_mse_raw /= ng;
    rep.amount_mae_log /= ng;
    rep.amount_mse_log /= ng;
    rep.amount_mae_raw /= ng;
    rep.amount_mse_raw /= ng;
  }
  if (rep.n_cls > 0) rep.cls_accuracy /= static_cast<double>(rep.n_cls);
  if (n_batches > 0) {
    rep.losses.num /= n_batches;
    rep.losses.cat /= n_batches;
    rep.losses.cls /= n_batches;
    rep.losses.decay /= n_batches;
    rep.losses.orth /= n_batches;
    rep.losses.total /= n_batches;
  }
  return rep;
}

void TrainConfig::validate() const {
  if (epochs < 0 || batch_size < 1) throw std::invalid_argument("train: bad epochs/batch_size");
  if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
  weights.validate();
}

json train_config_to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"clip_norm", c.clip_norm},
              {"seed", c.seed},
              {"shuffle", c.shuffle},
              {"loss", obj::loss_weights_to_json(c.weights)}};
}

TrainConfig train_config_from_json(const json& j) {
  model::json_check_keys(j, {"epochs", "batch_size", "lr", "beta1", "beta2", "adam_eps",
                             "clip_norm", "seed", "shuffle", "loss"},
                         "train config");
  TrainConfig c;
  if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
  if (j.contains("lr")) c.lr = j.at("lr").get<double>();
  if (j.contains("beta1")) c.beta1 = j.at("beta1").get<double>();
  if (j.contains("beta2")) c.beta2 = j.at("beta2").get<double>();
  if (j.contains("adam_eps")) c.adam_eps = j.at("adam_eps").get<double>();
  if (j.contains("clip_norm")) c.clip_norm = j.at("clip_norm").get<double>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("shuffle")) c.shuffle = j.at("shuffle").get<bool>();
  if (j.contains("loss")) c.weights = obj::loss_weights_from_json(j.at("loss"));
  c.validate();
  return c;
}

TrainCurves train(model::TgptModel& m, obj::HeadSet& heads, const TrainConfig& tc,
                  const std::vector<data::Window>& train_windows,
                  const std::vector<data::Window>* eval_windows) {
  tc.validate();
  if (train_windows.empty()) throw std::invalid_argument("train: no windows");

  TrainCurves curves;
  Adam opt(tc.lr, tc.beta1, tc.beta2, tc.adam_eps);
  auto order_rng = make_rng(tc.seed, 3);
  std::vector<size_t> order(train_windows.size());
  std::iota(order.begin(), order.end(), 0);

  int step = 0;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    if (tc.shuffle) std::shuffle(order.begin(), order.end(), order_rng);
    for (size_t first = 0; first < order.size(); first += static_cast<size_t>(tc.batch_size)) {
      const size_t count = std::min(order.size() - first, static_cast<size_t>(tc.batch_size));
      std::vector<data::Window> batch_windows;
      batch_windows.reserve(count);
      for (size_t i = 0; i < count; ++i)
        batch_windows.push_back(train_windows[order[first + i]]);
      model::Batch b = model::make_batch(m.schema(), batch_windows);

      m.store().zero_grad();
      ad::Tape t;
      model::Forward f = m.forward(t, b, /*training=*/true);
      obj::HeadOutputs h = heads.apply(t, f);
      obj::LossResult lr = obj::compute_losses(t, m.store(), h, f, b, tc.weights);
      if (!std::isfinite(lr.parts.total)) {
        std::ostringstream msg;
        msg << "training diverged at step " << step << ": loss=" << lr.parts.total
            << " (num=" << lr.parts.num << " cat=" << lr.parts.cat << " cls=" << lr.parts.cls
            << ")";
        throw NumericError(msg.str());
      }
      t.backward(lr.total);
      if (tc.clip_norm > 0.0) m.store().clip_grad_norm(tc.clip_norm);
      opt.step(m.store());

      curves.step_loss.push_back(lr.parts.total);
      if (tc.on_step) tc.on_step(step, lr.parts);
      ++step;
    }
    const std::vector<data::Window>& ev = eval_windows ? *eval_windows : train_windows;
    curves.epoch_reports.push_back(evaluate(m, heads, tc.weights, ev, tc.batch_size));
  }
  return curves;
}

GradCheck gradient_check(ParamStore& store, const std::function<double(bool)>& eval, int probes,
                         double h, std::mt19937_64& rng, double tiny) {
  store.zero_grad();
  eval(true);

  // Snapshot analytic gradients and enumerate probeable coordinates.
  struct Coord {
    Param* p;
    Eigen::Index r, c;
  };
  std::vector<Param*> trainable;
  std::vector<std::size_t> sizes;  // probeable coords per param
  std::size_t total = 0;
  for (auto& p : store.all()) {
    if (!p.trainable) continue;
    std::size_t n = static_cast<std::size_t>(p.value.size());
    if (p.freeze_row0) n -= static_cast<std::size_t>(p.value.cols());
    if (n == 0) continue;
    trainable.push_back(&p);
    sizes.push_back(n);
    total += n;
  }
  if (total == 0) throw std::invalid_argument("gradient_check: nothing trainable");
  std::vector<Mat> grads;
  grads.reserve(trainable.size());
  for (Param* p : trainable) grads.push_back(p->grad);

  GradCheck out;
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  for (int probe = 0; probe < probes; ++probe) {
    std::size_t flat = pick(rng);
    std::size_t pi = 0;
    while (flat >= sizes[pi]) flat -= sizes[pi++];
    Param& p = *trainable[pi];
    // Coordinates skip the frozen padding row (row 0) when present.
    const Eigen::Index cols = p.value.cols();
    const Eigen::Index r = static_cast<Eigen::Index>(flat) / cols + (p.freeze_row0 ? 1 : 0);
    const Eigen::Index c = static_cast<Eigen::Index>(flat) % cols;

    const double theta = p.value(r, c);
    const double step = h * std::max(1.0, std::abs(theta));
    p.value(r, c) = theta + step;
    const double up = eval(false);
    p.value(r, c) = theta - step;
    const double down = eval(false);
    p.value(r, c) = theta;

    const double fd = (up - down) / (2.0 * step);
    const double an = grads[pi](r, c);
    const double abs_err = std::abs(an - fd);
    const double scale = std::max(std::abs(an), std::abs(fd));
    const double rel = scale < tiny ? abs_err : abs_err / scale;
    out.max_abs_err = std::max(out.max_abs_err, abs_err);
    if (rel > out.max_rel_err) {
      out.max_rel_err = rel;
      std::ostringstream w;
      w << p.name << "[" << r << "," << c << "]";
      out.worst = w.str();
    }
  }
  return out;
}

}  // namespace tgpt::train
