#include "tgpt/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace tgpt::model {

using ad::Tape;
using ad::Value;
using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// enum <-> string
// ---------------------------------------------------------------------------

std::string to_string(Variant v) {
  switch (v) {
    case Variant::tgpt_1d: return "tgpt_1d";
    case Variant::tgpt_2d: return "tgpt_2d";
    case Variant::tgpt_3d_mtf: return "tgpt_3d_mtf";
    case Variant::tgpt_3d_fmt: return "tgpt_3d_fmt";
  }
  return "?";
}

std::string to_string(Integrate s) {
  switch (s) {
    case Integrate::concat: return "concat";
    case Integrate::mlp_compress: return "mlp_compress";
    case Integrate::pool_sum: return "pool_sum";
    case Integrate::pool_avg: return "pool_avg";
    case Integrate::pool_max: return "pool_max";
    case Integrate::select_pool: return "select_pool";
    case Integrate::select_concat: return "select_concat";
  }
  return "?";
}

std::string to_string(MtfMode m) {
  return m == MtfMode::segments ? "segments" : "mlp_scaling";
}

std::string to_string(attn::Norm n) {
  return n == attn::Norm::batch_style ? "batch_style" : "layer_style";
}

std::string to_string(attn::Positional p) {
  switch (p) {
    case attn::Positional::none: return "none";
    case attn::Positional::one_hot: return "one_hot";
    case attn::Positional::sinusoidal: return "sinusoidal";
    case attn::Positional::learned: return "learned";
  }
  return "?";
}

namespace {
[[noreturn]] void bad_enum(const std::string& what, const std::string& s) {
  throw std::invalid_argument("unknown " + what + ": '" + s + "'");
}
}  // namespace

Variant variant_from_string(const std::string& s) {
  for (Variant v : {Variant::tgpt_1d, Variant::tgpt_2d, Variant::tgpt_3d_mtf,
                    Variant::tgpt_3d_fmt})
    if (to_string(v) == s) return v;
  bad_enum("variant", s);
}

Integrate integrate_from_string(const std::string& s) {
  for (Integrate i : {Integrate::concat, Integrate::mlp_compress, Integrate::pool_sum,
                      Integrate::pool_avg, Integrate::pool_max, Integrate::select_pool,
                      Integrate::select_concat})
    if (to_string(i) == s) return i;
  bad_enum("integrate strategy", s);
}

MtfMode mtf_mode_from_string(const std::string& s) {
  for (MtfMode m : {MtfMode::segments, MtfMode::mlp_scaling})
    if (to_string(m) == s) return m;
  bad_enum("mtf mode", s);
}

attn::Norm norm_from_string(const std::string& s) {
  for (attn::Norm n : {attn::Norm::batch_style, attn::Norm::layer_style})
    if (to_string(n) == s) return n;
  bad_enum("normalization mode", s);
}

attn::Positional positional_from_string(const std::string& s) {
  for (attn::Positional p : {attn::Positional::none, attn::Positional::one_hot,
                             attn::Positional::sinusoidal, attn::Positional::learned})
    if (to_string(p) == s) return p;
  bad_enum("positional mode", s);
}

// ---------------------------------------------------------------------------
// ModelConfig
// ---------------------------------------------------------------------------

int ModelConfig::n_field_tokens(const data::Schema& s) const {
  int n = s.n_meta_tokens();
  if ((variant == Variant::tgpt_1d || variant == Variant::tgpt_2d) && use_features)
    n += s.n_features;
  return n;
}

int ModelConfig::head_width() const {
  return variant == Variant::tgpt_3d_fmt ? k_last * d_token() : d_tr;
}

int ModelConfig::cls_width(const data::Schema& s) const {
  switch (variant) {
    case Variant::tgpt_1d:
    case Variant::tgpt_2d:
      return d_tr;
    case Variant::tgpt_3d_mtf: {
      const int chunks = mtf_mode == MtfMode::segments ? d_tr / d_f : 1;
      const int nf = use_features ? s.n_features : 0;
      return (nf + chunks) * d_f;
    }
    case Variant::tgpt_3d_fmt:
      return k_last * d_token();
  }
  return 0;
}

ModelConfig ModelConfig::normalized(const data::Schema& s) const {
  ModelConfig c = *this;
  c.meta_block.d_model = c.d_m;
  c.feat_block.d_model = c.d_f;
  c.temporal_block.d_model = c.d_token();
  if (c.selected_fields.empty() &&
      (c.integrate == Integrate::select_pool || c.integrate == Integrate::select_concat)) {
    for (const char* name : {"amount", "time_gap", "mcc", "merchant"}) {
      const int idx = s.token_index(name);
      if (idx < 0)
        throw std::invalid_argument(std::string("cannot default selected fields: schema has no '") +
                                    name + "' field");
      c.selected_fields.push_back(idx);
    }
  }
  return c;
}

void ModelConfig::validate(const data::Schema& s) const {
  if (d_m < 1 || d_f < 1 || d_tr < 1) throw std::invalid_argument("model: bad embedding widths");
  if (window < 1 || max_len < 1) throw std::invalid_argument("model: bad window / max_len");
  if (n_classes < 0 || n_classes == 1)
    throw std::invalid_argument("model: n_classes must be 0 or >= 2");

  const bool fmt = variant == Variant::tgpt_3d_fmt;
  const bool mtf = variant == Variant::tgpt_3d_mtf;
  if (fmt) {
    if (v_f < 1 || v_t < 1 || k_last < 1) throw std::invalid_argument("fmt: bad token counts");
    if (d_tr % v_t != 0) throw std::invalid_argument("fmt: d_tr must be divisible by v_t");
    if (k_last > v_t) throw std::invalid_argument("fmt: k_last cannot exceed v_t");
    if (!use_features || s.n_features < 1)
      throw std::invalid_argument("fmt: requires feature channels");
  }
  if (mtf && mtf_mode == MtfMode::segments && d_tr % d_f != 0)
    throw std::invalid_argument("mtf segments: d_tr must be divisible by d_f");
  if (mtf && has_classifier() && !use_features)
    throw std::invalid_argument("mtf: the classification path requires use_features");

  // Integrate checks apply where the strategy runs: 2d over all field
  // tokens, mtf over the metadata tokens.
  if (variant == Variant::tgpt_2d || mtf) {
    const int T = mtf ? s.n_meta_tokens() : n_field_tokens(s);
    const bool sel =
        integrate == Integrate::select_pool || integrate == Integrate::select_concat;
    if (sel && selected_fields.empty())
      throw std::invalid_argument("integrate select_*: selected_fields required");
    for (int i : selected_fields)
      if (i < 0 || i >= T) throw std::invalid_argument("integrate: selected field out of range");
    if (integrate == Integrate::concat && T * d_m != d_tr)
      throw std::invalid_argument("integrate concat: token_count * d_m must equal d_tr");
    if (integrate == Integrate::select_concat &&
        static_cast<int>(selected_fields.size()) * d_m != d_tr)
      throw std::invalid_argument("integrate select_concat: |selected| * d_m must equal d_tr");
  }

  if ((variant == Variant::tgpt_2d || mtf || fmt) && meta_block.d_model != d_m)
    throw std::invalid_argument("meta block d_model must equal d_m");
  if ((mtf || fmt) && feat_block.d_model != d_f)
    throw std::invalid_argument("feature block d_model must equal d_f");
  if (temporal_block.d_model != d_token())
    throw std::invalid_argument("temporal block d_model must equal the temporal token width");
  if (variant == Variant::tgpt_2d || mtf || fmt) meta_block.validate();
  if (mtf || fmt) feat_block.validate();
  temporal_block.validate();

  for (const auto& f : s.entities) {
    const embed::EntityEmbedderConfig& tc =
        f.name == "merchant" ? merchant_table : mcc_table;
    if (tc.compositional && tc.m_rows >= f.cardinality - 1)
      throw std::invalid_argument("compositional table for '" + f.name +
                                  "' must be smaller than the entity count");
  }
}

// ---------------------------------------------------------------------------
// JSON round trip
// ---------------------------------------------------------------------------

void json_check_keys(const json& j, std::initializer_list<const char*> allowed,
                     const std::string& context) {
  if (!j.is_object()) throw std::invalid_argument(context + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw std::invalid_argument("unknown key '" + it.key() + "' in " + context);
  }
}

namespace {

json block_to_json(const attn::BlockConfig& b) {
  return json{{"d_model", b.d_model},       {"n_layers", b.n_layers},
              {"n_heads", b.n_heads},       {"mlp_hidden", b.mlp_hidden},
              {"positional", to_string(b.positional)}, {"norm", to_string(b.norm)},
              {"dropout", b.dropout}};
}

attn::BlockConfig block_from_json(const json& j, attn::BlockConfig b, const std::string& ctx) {
  json_check_keys(j, {"d_model", "n_layers", "n_heads", "mlp_hidden", "positional", "norm",
                      "dropout"},
                  ctx);
  if (j.contains("d_model")) b.d_model = j.at("d_model").get<int>();
  if (j.contains("n_layers")) b.n_layers = j.at("n_layers").get<int>();
  if (j.contains("n_heads")) b.n_heads = j.at("n_heads").get<int>();
  if (j.contains("mlp_hidden")) b.mlp_hidden = j.at("mlp_hidden").get<int>();
  if (j.contains("positional")) b.positional = positional_from_string(j.at("positional"));
  if (j.contains("norm")) b.norm = norm_from_string(j.at("norm"));
  if (j.contains("dropout")) b.dropout = j.at("dropout").get<double>();
  return b;
}

json table_to_json(const embed::EntityEmbedderConfig& c) {
  return json{{"compositional", c.compositional},
              {"m_rows", c.m_rows},
              {"k_hash", c.k_hash},
              {"seeds", c.seeds}};
}

embed::EntityEmbedderConfig table_from_json(const json& j, const std::string& ctx) {
  json_check_keys(j, {"compositional", "m_rows", "k_hash", "seeds"}, ctx);
  embed::EntityEmbedderConfig c;
  if (j.contains("compositional")) c.compositional = j.at("compositional").get<bool>();
  if (j.contains("m_rows")) c.m_rows = j.at("m_rows").get<int>();
  if (j.contains("k_hash")) c.k_hash = j.at("k_hash").get<int>();
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint32_t>>();
  return c;
}

}  // namespace

json model_config_to_json(const ModelConfig& c) {
  json j;
  j["variant"] = to_string(c.variant);
  j["d_m"] = c.d_m;
  j["d_f"] = c.d_f;
  j["d_tr"] = c.d_tr;
  j["v_f"] = c.v_f;
  j["v_t"] = c.v_t;
  j["k_last"] = c.k_last;
  j["window"] = c.window;
  j["max_len"] = c.max_len;
  j["use_features"] = c.use_features;
  j["integrate"] = to_string(c.integrate);
  j["selected_fields"] = c.selected_fields;
  j["mtf_mode"] = to_string(c.mtf_mode);
  j["shared_feature_affine"] = c.shared_feature_affine;
  j["tie_merchant_head"] = c.tie_merchant_head;
  j["meta_block"] = block_to_json(c.meta_block);
  j["feat_block"] = block_to_json(c.feat_block);
  j["temporal_block"] = block_to_json(c.temporal_block);
  j["mcc_table"] = table_to_json(c.mcc_table);
  j["merchant_table"] = table_to_json(c.merchant_table);
  j["n_classes"] = c.n_classes;
  j["init_seed"] = c.init_seed;
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  json_check_keys(j, {"variant", "d_m", "d_f", "d_tr", "v_f", "v_t", "k_last", "window",
                      "max_len", "use_features", "integrate", "selected_fields", "mtf_mode",
                      "shared_feature_affine", "tie_merchant_head", "meta_block", "feat_block",
                      "temporal_block", "mcc_table", "merchant_table", "n_classes", "init_seed"},
                  "model config");
  ModelConfig c;
  if (j.contains("variant")) c.variant = variant_from_string(j.at("variant"));
  if (j.contains("d_m")) c.d_m = j.at("d_m").get<int>();
  if (j.contains("d_f")) c.d_f = j.at("d_f").get<int>();
  if (j.contains("d_tr")) c.d_tr = j.at("d_tr").get<int>();
  if (j.contains("v_f")) c.v_f = j.at("v_f").get<int>();
  if (j.contains("v_t")) c.v_t = j.at("v_t").get<int>();
  if (j.contains("k_last")) c.k_last = j.at("k_last").get<int>();
  if (j.contains("window")) c.window = j.at("window").get<int>();
  if (j.contains("max_len")) c.max_len = j.at("max_len").get<int>();
  if (j.contains("use_features")) c.use_features = j.at("use_features").get<bool>();
  if (j.contains("integrate")) c.integrate = integrate_from_string(j.at("integrate"));
  if (j.contains("selected_fields"))
    c.selected_fields = j.at("selected_fields").get<std::vector<int>>();
  if (j.contains("mtf_mode")) c.mtf_mode = mtf_mode_from_string(j.at("mtf_mode"));
  if (j.contains("shared_feature_affine"))
    c.shared_feature_affine = j.at("shared_feature_affine").get<bool>();
  if (j.contains("tie_merchant_head"))
    c.tie_merchant_head = j.at("tie_merchant_head").get<bool>();
  if (j.contains("meta_block"))
    c.meta_block = block_from_json(j.at("meta_block"), c.meta_block, "meta_block");
  if (j.contains("feat_block"))
    c.feat_block = block_from_json(j.at("feat_block"), c.feat_block, "feat_block");
  if (j.contains("temporal_block"))
    c.temporal_block =
        block_from_json(j.at("temporal_block"), c.temporal_block, "temporal_block");
  if (j.contains("mcc_table")) c.mcc_table = table_from_json(j.at("mcc_table"), "mcc_table");
  if (j.contains("merchant_table"))
    c.merchant_table = table_from_json(j.at("merchant_table"), "merchant_table");
  if (j.contains("n_classes")) c.n_classes = j.at("n_classes").get<int>();
  if (j.contains("init_seed")) c.init_seed = j.at("init_seed").get<std::uint64_t>();
  return c;
}

// ---------------------------------------------------------------------------
// TgptModel
// ---------------------------------------------------------------------------

namespace {

Value affine(Tape& t, ParamStore& store, Value x, const std::string& prefix) {
  return t.add_rowvec(t.matmul(x, store.use(t, prefix + ".w")), store.use(t, prefix + ".b"));
}

void add_affine(ParamStore& store, const std::string& prefix, int in, int out,
                std::mt19937_64& rng) {
  store.add(prefix + ".w", randn(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng));
  store.add(prefix + ".b", Mat::Zero(1, out));
}

// Merge two group-major token tensors (N groups of Ta and Tb rows) into one
// with N groups of Ta+Tb rows, a-tokens first.
Value group_join(Tape& t, Value a, int Ta, Value b, int Tb, Eigen::Index N) {
  Value base = t.concat_rows({a, b});
  std::vector<int> idx(static_cast<size_t>(N) * (Ta + Tb));
  size_t p = 0;
  for (Eigen::Index r = 0; r < N; ++r) {
    for (int j = 0; j < Ta; ++j) idx[p++] = static_cast<int>(r * Ta + j);
    for (int j = 0; j < Tb; ++j) idx[p++] = static_cast<int>(N * Ta + r * Tb + j);
  }
  return t.gather_rows(base, std::move(idx));
}

std::vector<uint8_t> expand_mask(const std::vector<uint8_t>& rows, int T) {
  std::vector<uint8_t> m(rows.size() * static_cast<size_t>(T));
  for (size_t r = 0; r < rows.size(); ++r)
    for (int j = 0; j < T; ++j) m[r * static_cast<size_t>(T) + static_cast<size_t>(j)] = rows[r];
  return m;
}

}  // namespace

TgptModel::TgptModel(ModelConfig cfg, data::Schema schema)
    : cfg_(cfg.normalized(schema)), schema_(std::move(schema)) {
  schema_.validate();
  cfg_.validate(schema_);
  t_meta_ = schema_.n_meta_tokens();

  auto rng = make_rng(cfg_.init_seed, 7);
  drop_rng_ = make_rng(cfg_.init_seed, 1013);

  const int nf = schema_.n_features;
  const Variant v = cfg_.variant;
  const bool fmt = v == Variant::tgpt_3d_fmt;
  const bool mtf = v == Variant::tgpt_3d_mtf;

  meta_emb_ = embed::MetadataEmbedder("emb", schema_, cfg_.d_m, store_, rng);
  for (const auto& f : schema_.entities) {
    const embed::EntityEmbedderConfig tc =
        f.name == "merchant" ? cfg_.merchant_table : cfg_.mcc_table;
    ent_embs_.emplace_back("emb", f, cfg_.d_m, tc, store_, rng);
  }

  if ((v == Variant::tgpt_1d || v == Variant::tgpt_2d) && cfg_.use_features && nf > 0)
    feat_wide_ = embed::FeatureEmbedder("featw", nf, cfg_.d_m, cfg_.shared_feature_affine,
                                        store_, rng);
  const bool narrow_feats = fmt || (mtf && cfg_.has_classifier() && nf > 0);
  if (narrow_feats)
    feat_narrow_ = embed::FeatureEmbedder("featn", nf, cfg_.d_f, cfg_.shared_feature_affine,
                                          store_, rng);

  const int t_all = cfg_.n_field_tokens(schema_);
  switch (v) {
    case Variant::tgpt_1d:
      add_affine(store_, "tr1d", t_all * cfg_.d_m, cfg_.d_tr, rng);
      break;
    case Variant::tgpt_2d:
      meta_stack_ = attn::TransformerStack("meta", cfg_.meta_block, t_all, store_, rng);
      jn_meta_ = attn::JunctionNorm("jn.meta", cfg_.d_m, cfg_.meta_block.norm, store_);
      break;
    case Variant::tgpt_3d_mtf: {
      meta_stack_ = attn::TransformerStack("meta", cfg_.meta_block, t_meta_, store_, rng);
      jn_meta_ = attn::JunctionNorm("jn.meta", cfg_.d_m, cfg_.meta_block.norm, store_);
      if (cfg_.has_classifier()) {
        const int chunks = cfg_.mtf_mode == MtfMode::segments ? cfg_.d_tr / cfg_.d_f : 1;
        feat_stack_ = attn::TransformerStack("feat", cfg_.feat_block,
                                             (cfg_.use_features ? nf : 0) + chunks, store_, rng);
        jn_feat_ = attn::JunctionNorm("jn.feat", cfg_.d_f, cfg_.feat_block.norm, store_);
        if (cfg_.mtf_mode == MtfMode::mlp_scaling)
          add_affine(store_, "mtf.scale", cfg_.d_tr, cfg_.d_f, rng);
      }
      break;
    }
    case Variant::tgpt_3d_fmt: {
      feat_stack_ = attn::TransformerStack("feat", cfg_.feat_block, nf, store_, rng);
      jn_feat_ = attn::JunctionNorm("jn.feat", cfg_.d_f, cfg_.feat_block.norm, store_);
      vtl_f_ = vtl::VirtualTokenLayer("vtl.f", {nf, cfg_.d_f, cfg_.v_f, cfg_.d_m}, store_, rng);
      meta_stack_ = attn::TransformerStack("meta", cfg_.meta_block, t_meta_ + cfg_.v_f, store_,
                                           rng);
      jn_meta_ = attn::JunctionNorm("jn.meta", cfg_.d_m, cfg_.meta_block.norm, store_);
      vtl_tr_ = vtl::VirtualTokenLayer(
          "vtl.tr", {t_meta_ + cfg_.v_f, cfg_.d_m, cfg_.v_t, cfg_.d_token()}, store_, rng);
      break;
    }
  }

  // Integrate parameters (2d and mtf only).
  if (v == Variant::tgpt_2d || mtf) {
    const int T = mtf ? t_meta_ : t_all;
    switch (cfg_.integrate) {
      case Integrate::mlp_compress:
        add_affine(store_, "integ", T * cfg_.d_m, cfg_.d_tr, rng);
        break;
      case Integrate::pool_sum:
      case Integrate::pool_avg:
      case Integrate::pool_max:
      case Integrate::select_pool:
        if (cfg_.d_tr != cfg_.d_m) add_affine(store_, "integ", cfg_.d_m, cfg_.d_tr, rng);
        break;
      default:
        break;  // concat / select_concat carry no parameters
    }
  }

  const int t_max_pos = fmt ? cfg_.max_len * cfg_.v_t : cfg_.max_len;
  temporal_stack_ =
      attn::TransformerStack("temporal", cfg_.temporal_block, t_max_pos, store_, rng);
  jn_temporal_ =
      attn::JunctionNorm("jn.temporal", cfg_.d_token(), cfg_.temporal_block.norm, store_);
}

const embed::EntityEmbedder& TgptModel::entity(const std::string& name) const {
  for (size_t i = 0; i < schema_.entities.size(); ++i)
    if (schema_.entities[i].name == name) return ent_embs_[i];
  throw std::out_of_range("no such entity field: " + name);
}

Eigen::Index TgptModel::eval_gen_row(const Batch& b, int wb) {
  if (b.valid[static_cast<size_t>(wb)] < 2) return -1;
  return static_cast<Eigen::Index>(wb) * b.L + b.valid[static_cast<size_t>(wb)] - 2;
}

Eigen::Index TgptModel::eval_cls_row(const Batch& b, int wb) const {
  const int nv = b.valid[static_cast<size_t>(wb)];
  if (cfg_.variant == Variant::tgpt_3d_fmt)
    return nv < 1 ? -1 : static_cast<Eigen::Index>(wb) * b.L + nv - 1;
  return nv < 2 ? -1 : static_cast<Eigen::Index>(wb) * b.L + nv - 2;
}

Value TgptModel::field_tokens(Tape& t, const Batch& b, bool with_features) {
  std::vector<Value> vals = meta_emb_.field_values(t, store_, b.cat, b.num);
  for (size_t i = 0; i < ent_embs_.size(); ++i)
    vals.push_back(ent_embs_[i].embed(t, store_, b.ent[i]));
  Value tokens = t.interleave_rows(vals);  // (N * t_meta_) x d_m
  if (with_features && schema_.n_features > 0) {
    Value ftok = feat_wide_.embed(t, store_, b.features);  // (N * nf) x d_m
    tokens = group_join(t, tokens, t_meta_, ftok, schema_.n_features, b.rows());
  }
  return tokens;
}

Value TgptModel::integrate(Tape& t, Value tokens, int T, Eigen::Index N) {
  const int d = cfg_.d_m;
  switch (cfg_.integrate) {
    case Integrate::concat:
      return t.reshape(tokens, N, static_cast<Eigen::Index>(T) * d);
    case Integrate::mlp_compress:
      return affine(t, store_, t.reshape(tokens, N, static_cast<Eigen::Index>(T) * d), "integ");
    case Integrate::pool_sum:
    case Integrate::pool_avg:
    case Integrate::pool_max: {
      const auto kind = cfg_.integrate == Integrate::pool_sum   ? Tape::Reduce::sum
                        : cfg_.integrate == Integrate::pool_avg ? Tape::Reduce::avg
                                                                : Tape::Reduce::max;
      Value x = t.group_reduce(tokens, T, kind);
      return cfg_.d_tr != d ? affine(t, store_, x, "integ") : x;
    }
    case Integrate::select_pool:
    case Integrate::select_concat: {
      const auto& sel = cfg_.selected_fields;
      const int S = static_cast<int>(sel.size());
      std::vector<int> idx(static_cast<size_t>(N) * static_cast<size_t>(S));
      size_t p = 0;
      for (Eigen::Index r = 0; r < N; ++r)
        for (int j = 0; j < S; ++j) idx[p++] = static_cast<int>(r * T + sel[static_cast<size_t>(j)]);
      Value x = t.gather_rows(tokens, std::move(idx));
      if (cfg_.integrate == Integrate::select_concat)
        return t.reshape(x, N, static_cast<Eigen::Index>(S) * d);
      Value pooled = t.group_reduce(x, S, Tape::Reduce::avg);
      return cfg_.d_tr != d ? affine(t, store_, pooled, "integ") : pooled;
    }
  }
  throw std::logic_error("unreachable integrate strategy");
}

Value TgptModel::run_temporal(Tape& t, const Batch& b, Value x, bool training) {
  const bool fmt = cfg_.variant == Variant::tgpt_3d_fmt;
  const int per = fmt ? cfg_.v_t : 1;
  ad::MaskSpec ms;
  ms.kind = fmt ? ad::MaskSpec::Kind::block_causal : ad::MaskSpec::Kind::local_causal;
  ms.window = cfg_.window;
  ms.block = per;
  ms.valid.reserve(static_cast<size_t>(b.B));
  for (int nv : b.valid) ms.valid.push_back(nv * per);
  const std::vector<uint8_t> mask = per == 1 ? b.row_valid : expand_mask(b.row_valid, per);
  Value in = jn_temporal_.apply(t, store_, x, training, mask);
  return temporal_stack_.forward(t, store_, in, b.L * per, ms, training, &drop_rng_);
}

Forward TgptModel::forward(Tape& t, const Batch& b, bool training) {
  if (b.L > cfg_.max_len)
    throw std::invalid_argument("batch windows longer than the model's max_len");
  if (b.cat.size() != schema_.categorical.size() || b.ent.size() != schema_.entities.size() ||
      b.num.cols() != static_cast<Eigen::Index>(schema_.numeric.size()) ||
      b.features.cols() != schema_.n_features)
    throw std::invalid_argument("batch does not match the model schema");

  const Eigen::Index N = b.rows();
  Forward out;
  out.gen_valid = b.next_valid;
  out.has_cls = cfg_.has_classifier();

  switch (cfg_.variant) {
    case Variant::tgpt_1d: {
      Value tokens = field_tokens(t, b, cfg_.use_features);
      const int T = cfg_.n_field_tokens(schema_);
      Value flat = t.reshape(tokens, N, static_cast<Eigen::Index>(T) * cfg_.d_m);
      Value trans = affine(t, store_, flat, "tr1d");
      out.temporal = run_temporal(t, b, trans, training);
      out.gen = out.temporal;
      out.cls = out.temporal;
      break;
    }
    case Variant::tgpt_2d: {
      Value tokens = field_tokens(t, b, cfg_.use_features);
      const int T = cfg_.n_field_tokens(schema_);
      Value normed = jn_meta_.apply(t, store_, tokens, training, expand_mask(b.row_valid, T));
      Value enc = meta_stack_.forward(t, store_, normed, T, ad::MaskSpec{}, training, &drop_rng_);
      Value trans = integrate(t, enc, T, N);
      out.temporal = run_temporal(t, b, trans, training);
      out.gen = out.temporal;
      out.cls = out.temporal;
      break;
    }
    case Variant::tgpt_3d_mtf: {
      Value tokens = field_tokens(t, b, /*with_features=*/false);
      Value normed =
          jn_meta_.apply(t, store_, tokens, training, expand_mask(b.row_valid, t_meta_));
      Value enc =
          meta_stack_.forward(t, store_, normed, t_meta_, ad::MaskSpec{}, training, &drop_rng_);
      Value trans = integrate(t, enc, t_meta_, N);
      out.temporal = run_temporal(t, b, trans, training);
      out.gen = out.temporal;
      if (out.has_cls) {
        // Fuse the history encoding with the scored transaction's features.
        const int chunks = cfg_.mtf_mode == MtfMode::segments ? cfg_.d_tr / cfg_.d_f : 1;
        Value hist = cfg_.mtf_mode == MtfMode::segments
                         ? t.reshape(out.temporal, N * chunks, cfg_.d_f)
                         : affine(t, store_, out.temporal, "mtf.scale");
        Value in = hist;
        int T = chunks;
        const int nf = cfg_.use_features ? schema_.n_features : 0;
        if (nf > 0) {
          Value ftok = feat_narrow_.embed(t, store_, b.next_features);
          in = group_join(t, ftok, nf, hist, chunks, N);
          T = nf + chunks;
        }
        Value normed_f = jn_feat_.apply(t, store_, in, training, expand_mask(b.next_valid, T));
        Value enc_f =
            feat_stack_.forward(t, store_, normed_f, T, ad::MaskSpec{}, training, &drop_rng_);
        out.cls = t.reshape(enc_f, N, static_cast<Eigen::Index>(T) * cfg_.d_f);
      }
      break;
    }
    case Variant::tgpt_3d_fmt: {
      const int nf = schema_.n_features;
      Value ftok = feat_narrow_.embed(t, store_, b.features);
      Value fin = jn_feat_.apply(t, store_, ftok, training, expand_mask(b.row_valid, nf));
      Value fenc =
          feat_stack_.forward(t, store_, fin, nf, ad::MaskSpec{}, training, &drop_rng_);
      vtl::VirtualTokenLayer::Out vf = vtl_f_.forward(t, store_, fenc);
      out.orth_f = vtl::orthogonality_loss(t, vf.linear, cfg_.v_f);

      Value mtok = field_tokens(t, b, /*with_features=*/false);
      Value joined = group_join(t, mtok, t_meta_, vf.tokens, cfg_.v_f, N);
      const int T = t_meta_ + cfg_.v_f;
      Value min = jn_meta_.apply(t, store_, joined, training, expand_mask(b.row_valid, T));
      Value menc = meta_stack_.forward(t, store_, min, T, ad::MaskSpec{}, training, &drop_rng_);
      vtl::VirtualTokenLayer::Out vt = vtl_tr_.forward(t, store_, menc);
      out.orth_tr = vtl::orthogonality_loss(t, vt.linear, cfg_.v_t);
      out.has_orth = true;

      out.temporal = run_temporal(t, b, vt.tokens, training);  // (N * v_t) x d_token

      // Head input: the last k_last temporal outputs of each transaction's
      // token block, concatenated.
      std::vector<int> hidx(static_cast<size_t>(N) * static_cast<size_t>(cfg_.k_last));
      size_t p = 0;
      for (Eigen::Index r = 0; r < N; ++r)
        for (int j = 0; j < cfg_.k_last; ++j)
          hidx[p++] = static_cast<int>(r * cfg_.v_t + cfg_.v_t - cfg_.k_last + j);
      Value picked = t.gather_rows(out.temporal, std::move(hidx));
      out.gen = t.reshape(picked, N, static_cast<Eigen::Index>(cfg_.k_last) * cfg_.d_token());
      out.cls = out.gen;
      break;
    }
  }

  // Label alignment: fmt rows score their own transaction (its tokens are
  // visible to the block); the other variants score the next one.
  out.cls_valid.assign(static_cast<size_t>(N), 0);
  out.cls_label.assign(static_cast<size_t>(N), 0);
  if (out.has_cls) {
    if (cfg_.variant == Variant::tgpt_3d_fmt) {
      for (Eigen::Index r = 0; r < N; ++r)
        if (b.row_valid[static_cast<size_t>(r)] && b.label_valid[static_cast<size_t>(r)]) {
          out.cls_valid[static_cast<size_t>(r)] = 1;
          out.cls_label[static_cast<size_t>(r)] = b.label[static_cast<size_t>(r)];
        }
    } else {
      for (Eigen::Index r = 0; r + 1 < N; ++r)
        if (b.next_valid[static_cast<size_t>(r)] && b.label_valid[static_cast<size_t>(r) + 1]) {
          out.cls_valid[static_cast<size_t>(r)] = 1;
          out.cls_label[static_cast<size_t>(r)] = b.label[static_cast<size_t>(r) + 1];
        }
    }
  }
  return out;
}

}  // namespace tgpt::model
