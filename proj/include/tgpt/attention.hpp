#pragma once

// Transformer building blocks shared by the field-set encoders and the
// temporal decoder: pre-norm residual blocks, masking helpers, positional
// encodings and the junction normalization applied where embeddings enter a
// transformer.

#include "tgpt/core.hpp"
#include "tgpt/params.hpp"
#include "tgpt/tape.hpp"

#include <string>
#include <vector>

namespace tgpt::attn {

enum class Norm { batch_style, layer_style };
enum class Positional { none, one_hot, sinusoidal, learned };

struct BlockConfig {
  int d_model = 0;
  int n_layers = 1;
  int n_heads = 1;
  int mlp_hidden = 0;  // 0 picks 2 * d_model
  Positional positional = Positional::none;
  Norm norm = Norm::batch_style;  // junction normalization at the stack input
  double dropout = 0.0;

  int hidden() const { return mlp_hidden > 0 ? mlp_hidden : 2 * d_model; }
  void validate() const;
};

// Local causal mask over L positions: i attends j iff max(0, i-w+1) <= j <= i
// (the window includes the current position). w <= 0 means unbounded causal.
Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> local_causal_mask(int L, int w);

// Number of allowed (i, j) pairs in the mask: L*w - w*(w-1)/2 when w <= L.
long local_causal_allowed_count(int L, int w);

// Pre-LN transformer stack. The same class serves encoders and decoders; the
// mask passed to forward decides bidirectional vs causal behavior. Positions
// are counted within each group.
class TransformerStack {
 public:
  TransformerStack() = default;
  TransformerStack(std::string prefix, BlockConfig cfg, int max_positions, ParamStore& store,
                   std::mt19937_64& rng);

  ad::Value forward(ad::Tape& t, ParamStore& store, ad::Value x, int group_size,
                    const ad::MaskSpec& mask, bool training = false,
                    std::mt19937_64* drop_rng = nullptr) const;

  const BlockConfig& config() const { return cfg_; }
  int max_positions() const { return max_pos_; }

 private:
  std::string prefix_;
  BlockConfig cfg_;
  int max_pos_ = 0;
};

// Normalization at an embedding -> transformer junction; batch-style keeps
// running statistics (inference uses them), layer-style is stateless.
class JunctionNorm {
 public:
  JunctionNorm() = default;
  JunctionNorm(std::string prefix, int dim, Norm mode, ParamStore& store);

  // row_mask marks rows that belong to real (non-padding) transactions;
  // batch statistics are computed over those rows only.
  ad::Value apply(ad::Tape& t, ParamStore& store, ad::Value x, bool training,
                  const std::vector<uint8_t>& row_mask = {}) const;

  Norm mode() const { return mode_; }

 private:
  std::string prefix_;
  Norm mode_ = Norm::batch_style;
};

}  // namespace tgpt::attn
