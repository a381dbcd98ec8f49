#include "tgpt/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace tgpt::obj {

using ad::Tape;
using ad::Value;
using json = nlohmann::ordered_json;

void LossWeights::validate() const {
  for (double v : {num, cat, cls, decay, orth})
    if (!(v >= 0.0) || !std::isfinite(v))
      throw std::invalid_argument("loss weights must be finite and nonnegative");
  if (!(eps > 0.0)) throw std::invalid_argument("loss eps must be positive");
}

json loss_weights_to_json(const LossWeights& w) {
  return json{{"num", w.num},     {"cat", w.cat},   {"cls", w.cls},
              {"decay", w.decay}, {"orth", w.orth}, {"eps", w.eps}};
}

LossWeights loss_weights_from_json(const json& j) {
  model::json_check_keys(j, {"num", "cat", "cls", "decay", "orth", "eps"}, "loss weights");
  LossWeights w;
  if (j.contains("num")) w.num = j.at("num").get<double>();
  if (j.contains("cat")) w.cat = j.at("cat").get<double>();
  if (j.contains("cls")) w.cls = j.at("cls").get<double>();
  if (j.contains("decay")) w.decay = j.at("decay").get<double>();
  if (j.contains("orth")) w.orth = j.at("orth").get<double>();
  if (j.contains("eps")) w.eps = j.at("eps").get<double>();
  w.validate();
  return w;
}

namespace {

Value affine(Tape& t, ParamStore& store, Value x, const std::string& prefix) {
  return t.add_rowvec(t.matmul(x, store.use(t, prefix + ".w")), store.use(t, prefix + ".b"));
}

void add_affine(ParamStore& store, const std::string& prefix, int in, int out,
                std::mt19937_64& rng) {
  store.add(prefix + ".w", randn(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng));
  store.add(prefix + ".b", Mat::Zero(1, out));
}

}  // namespace

HeadSet::HeadSet(model::TgptModel& m, std::mt19937_64& rng) : model_(&m) {
  const model::ModelConfig& cfg = m.config();
  const data::Schema& s = m.schema();
  const int hw = cfg.head_width();
  n_mcc_ = m.entity("mcc").n_entities();
  n_merchant_ = m.entity("merchant").n_entities();
  tied_ = cfg.tie_merchant_head;

  ParamStore& store = m.store();
  add_affine(store, "head.gap", hw, 1, rng);
  add_affine(store, "head.amount", hw, 1, rng);
  add_affine(store, "head.mcc", hw, n_mcc_, rng);
  // Dimension-matching trunk for the merchant logits; present whether or
  // not the logits stage is tied, so tying removes exactly the dedicated
  // n x d logits matrix.
  add_affine(store, "head.merchant.adapter", hw, cfg.d_m, rng);
  if (!tied_)
    store.add("head.merchant.w",
              randn(n_merchant_, cfg.d_m, 1.0 / std::sqrt(static_cast<double>(cfg.d_m)), rng));
  if (cfg.has_classifier()) add_affine(store, "head.cls", cfg.cls_width(s), cfg.n_classes, rng);
}

std::size_t HeadSet::untied_extra_params() const {
  return static_cast<std::size_t>(n_merchant_) * static_cast<std::size_t>(model_->config().d_m);
}

HeadOutputs HeadSet::apply(Tape& t, const model::Forward& f) const {
  if (model_ == nullptr) throw std::logic_error("HeadSet used before construction");
  ParamStore& store = model_->store();
  HeadOutputs out;
  out.gap = affine(t, store, f.gen, "head.gap");
  out.amount = affine(t, store, f.gen, "head.amount");
  out.mcc = affine(t, store, f.gen, "head.mcc");
  Value adapted = affine(t, store, f.gen, "head.merchant.adapter");
  out.merchant = tied_ ? model_->entity("merchant").tied_logits(t, store, adapted)
                       : t.matmul_nt(adapted, store.use(t, "head.merchant.w"));
  out.has_cls = f.has_cls;
  if (f.has_cls) out.cls = affine(t, store, f.cls, "head.cls");
  return out;
}

LossResult compute_losses(Tape& t, ParamStore& store, const HeadOutputs& h,
                          const model::Forward& f, const model::Batch& b,
                          const LossWeights& w) {
  w.validate();
  const Eigen::Index N = b.rows();
  LossResult res;
  Value zero = t.constant(Mat::Zero(1, 1));

  long n_gen = 0, n_cls = 0;
  for (uint8_t v : f.gen_valid) n_gen += v;
  for (uint8_t v : f.cls_valid) n_cls += v;
  res.parts.n_gen = n_gen;
  res.parts.n_cls = n_cls;

  Value l_num = zero, l_cat = zero;
  Value l_gap = zero, l_amount = zero, l_mcc = zero, l_merch = zero;
  if (n_gen > 0) {
    Vec gap_t(N), amount_t(N);
    std::vector<int> mcc_t(static_cast<size_t>(N), 0), merch_t(static_cast<size_t>(N), 0);
    for (Eigen::Index r = 0; r < N; ++r) {
      if (!f.gen_valid[static_cast<size_t>(r)]) {
        gap_t(r) = 0;
        amount_t(r) = 0;
        continue;
      }
      const double gy = b.next_gap(r), ay = b.next_amount(r);
      if (gy < 0 || ay < 0)
        throw std::invalid_argument("numeric generative targets must be nonnegative");
      gap_t(r) = std::log(gy + w.eps);
      amount_t(r) = std::log(ay + w.eps);
      mcc_t[static_cast<size_t>(r)] = b.next_mcc[static_cast<size_t>(r)] - 1;
      merch_t[static_cast<size_t>(r)] = b.next_merchant[static_cast<size_t>(r)] - 1;
    }
    l_gap = t.squared_error(h.gap, gap_t, f.gen_valid);
    l_amount = t.squared_error(h.amount, amount_t, f.gen_valid);
    l_num = t.add(l_gap, l_amount);
    l_mcc = t.cross_entropy(h.mcc, mcc_t, f.gen_valid);
    l_merch = t.cross_entropy(h.merchant, merch_t, f.gen_valid);
    l_cat = t.add(l_mcc, l_merch);
  }

  Value l_cls = zero;
  if (h.has_cls && n_cls > 0) l_cls = t.cross_entropy(h.cls, f.cls_label, f.cls_valid);

  Value l_decay = zero;
  {
    std::vector<Value> terms;
    std::vector<double> ones;
    for (const auto& p : store.all()) {
      if (!p.trainable || !p.decay) continue;
      terms.push_back(t.sum_square(store.use(t, p.name), p.freeze_row0));
      ones.push_back(1.0);
    }
    if (!terms.empty()) l_decay = t.weighted_sum(terms, ones);
  }

  Value l_orth = f.has_orth ? t.add(f.orth_f, f.orth_tr) : zero;

  res.total = t.weighted_sum({l_num, l_cat, l_cls, l_decay, l_orth},
                             {w.num, w.cat, w.cls, w.decay, w.orth});
  res.parts.num = l_num.scalar();
  res.parts.cat = l_cat.scalar();
  res.parts.cls = l_cls.scalar();
  res.parts.decay = l_decay.scalar();
  res.parts.orth = l_orth.scalar();
  res.parts.gap = l_gap.scalar();
  res.parts.amount = l_amount.scalar();
  res.parts.mcc = l_mcc.scalar();
  res.parts.merchant = l_merch.scalar();
  res.parts.total = res.total.scalar();
  return res;
}

}  // namespace tgpt::obj
