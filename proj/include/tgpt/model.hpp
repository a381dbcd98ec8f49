#pragma once

// The four model variants, wired from the shared building blocks:
//
//   tgpt_1d      affine map over the concatenated field embeddings, then the
//                temporal decoder.
//   tgpt_2d      per-transaction field-set encoder over metadata, entities
//                and (optionally) feature tokens, an Integrate step down to
//                d_tr, then the temporal decoder.
//   tgpt_3d_mtf  history encoded from metadata only (field-set encoder +
//                Integrate + temporal decoder); the classification path fuses
//                the temporal output with the scored transaction's feature
//                embeddings through the feature encoder.
//   tgpt_3d_fmt  feature encoder -> virtual feature tokens -> field-set
//                encoder -> virtual transaction tokens; each transaction
//                becomes v_t temporal tokens and the decoder runs over
//                v_t * L tokens with transaction-granular causal masking.

#include "tgpt/attention.hpp"
#include "tgpt/batch.hpp"
#include "tgpt/data.hpp"
#include "tgpt/embedding.hpp"
#include "tgpt/params.hpp"
#include "tgpt/tape.hpp"
#include "tgpt/vtl.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace tgpt::model {

enum class Variant { tgpt_1d, tgpt_2d, tgpt_3d_mtf, tgpt_3d_fmt };
enum class Integrate {
  concat,
  mlp_compress,
  pool_sum,
  pool_avg,
  pool_max,
  select_pool,
  select_concat
};
enum class MtfMode { segments, mlp_scaling };

std::string to_string(Variant v);
std::string to_string(Integrate s);
std::string to_string(MtfMode m);
std::string to_string(attn::Norm n);
std::string to_string(attn::Positional p);
Variant variant_from_string(const std::string& s);
Integrate integrate_from_string(const std::string& s);
MtfMode mtf_mode_from_string(const std::string& s);
attn::Norm norm_from_string(const std::string& s);
attn::Positional positional_from_string(const std::string& s);

struct ModelConfig {
  Variant variant = Variant::tgpt_2d;

  int d_m = 16;   // metadata / entity embedding width
  int d_f = 8;    // feature embedding width
  int d_tr = 64;  // transaction embedding width entering the temporal decoder
  int v_f = 4;    // virtual feature tokens (fmt)
  int v_t = 4;    // virtual transaction tokens per transaction (fmt)
  int k_last = 2; // temporal outputs concatenated into the fmt head input
  int window = 8; // local attention window, counted in transactions
  int max_len = 8;  // longest window length the model accepts

  bool use_features = true;
  Integrate integrate = Integrate::select_concat;
  // Token indices (schema token order) used by the select_* strategies.
  // Empty means "fill with the defaults" in normalized(): the four generated
  // fields amount, time_gap, mcc, merchant.
  std::vector<int> selected_fields;
  MtfMode mtf_mode = MtfMode::segments;
  bool shared_feature_affine = false;  // one affine for all feature channels
  bool tie_merchant_head = true;

  // d_model fields are derived (normalized() fills them); positional
  // defaults: one-hot inside a transaction, learned over time steps.
  attn::BlockConfig meta_block{0, 1, 1, 0, attn::Positional::one_hot};
  attn::BlockConfig feat_block{0, 1, 1, 0, attn::Positional::one_hot};
  attn::BlockConfig temporal_block{0, 1, 1, 0, attn::Positional::learned};

  embed::EntityEmbedderConfig mcc_table;       // plain by default
  embed::EntityEmbedderConfig merchant_table;  // compositional option lives here

  int n_classes = 2;  // downstream label classes; 0 disables the classifier
  std::uint64_t init_seed = 1;

  // Width of one temporal token.
  int d_token() const { return variant == Variant::tgpt_3d_fmt ? d_tr / v_t : d_tr; }
  // Tokens entering the field-set encoder (2d counts feature tokens).
  int n_field_tokens(const data::Schema& s) const;
  // Width of the generative-head input.
  int head_width() const;
  // Width of the classifier input.
  int cls_width(const data::Schema& s) const;
  bool has_classifier() const { return n_classes > 0; }

  // Fills derived values (block d_models, positional defaults, selected
  // fields) so a sparse hand-written config becomes fully explicit.
  ModelConfig normalized(const data::Schema& s) const;
  void validate(const data::Schema& s) const;
};

nlohmann::ordered_json model_config_to_json(const ModelConfig& c);
// Strict: unknown keys are rejected. Values absent from the JSON keep the
// defaults above.
ModelConfig model_config_from_json(const nlohmann::ordered_json& j);

// Rejects keys outside the allowed set (strict config parsing).
void json_check_keys(const nlohmann::ordered_json& j,
                     std::initializer_list<const char*> allowed, const std::string& context);

// One forward pass over a batch of equal-length windows. All row-indexed
// members use row r = b * L + i for window b, position i.
struct Forward {
  ad::Value temporal;  // raw temporal-stack output rows
  ad::Value gen;       // (B*L) x head_width, input to the generative heads
  ad::Value cls;       // (B*L) x cls_width, input to the classifier
  ad::Value orth_f, orth_tr;  // 1x1 orthogonality penalties (fmt only)
  bool has_cls = false;
  bool has_orth = false;

  // gen row r predicts transaction i+1 of window b.
  std::vector<uint8_t> gen_valid;
  // cls row r scores cls_label[r] (alignment is variant-specific: fmt scores
  // the row's own transaction, the others score transaction i+1).
  std::vector<uint8_t> cls_valid;
  std::vector<int> cls_label;
};

class TgptModel {
 public:
  TgptModel(ModelConfig cfg, data::Schema schema);

  Forward forward(ad::Tape& t, const Batch& b, bool training);

  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  const ModelConfig& config() const { return cfg_; }
  const data::Schema& schema() const { return schema_; }
  const embed::EntityEmbedder& entity(const std::string& name) const;

  // Row index (into gen / cls) used when scoring window b at evaluation
  // time: the transition into the last real transaction for gen, and the
  // row whose cls entry labels that transaction.
  static Eigen::Index eval_gen_row(const Batch& b, int wb);
  Eigen::Index eval_cls_row(const Batch& b, int wb) const;

 private:
  ad::Value field_tokens(ad::Tape& t, const Batch& b, bool with_features);
  ad::Value integrate(ad::Tape& t, ad::Value tokens, int T, Eigen::Index N);
  ad::Value run_temporal(ad::Tape& t, const Batch& b, ad::Value x, bool training);

  ModelConfig cfg_;
  data::Schema schema_;
  ParamStore store_;

  embed::MetadataEmbedder meta_emb_;
  std::vector<embed::EntityEmbedder> ent_embs_;
  embed::FeatureEmbedder feat_wide_;    // feature tokens at d_m (1d / 2d)
  embed::FeatureEmbedder feat_narrow_;  // feature tokens at d_f (mtf / fmt)
  attn::TransformerStack meta_stack_, feat_stack_, temporal_stack_;
  attn::JunctionNorm jn_meta_, jn_feat_, jn_temporal_;
  vtl::VirtualTokenLayer vtl_f_, vtl_tr_;
  std::mt19937_64 drop_rng_;
  int t_meta_ = 0;  // categorical + numeric + entity token count
};

}  // namespace tgpt::model
