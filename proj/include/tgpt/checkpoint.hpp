#pragma once

// A model, its prediction heads and everything needed to rebuild them:
// config + schema + every parameter tensor (including non-trainable
// running statistics). Optimizer moments are deliberately not part of a
// checkpoint; resuming restarts Adam.

#include "tgpt/data.hpp"
#include "tgpt/model.hpp"
#include "tgpt/objectives.hpp"

#include <memory>
#include <string>

namespace tgpt::model {

struct ModelBundle {
  ModelConfig config;
  data::Schema schema;
  std::unique_ptr<TgptModel> model;  // heap so HeadSet's back-pointer survives moves
  obj::HeadSet heads;
};

// Builds the model and heads from scratch (deterministic given
// config.init_seed).
ModelBundle make_bundle(const ModelConfig& config, const data::Schema& schema);

// Binary format: magic "TGPTCKP1", u64 header length, JSON header
// {config, schema, tensors: [{name, rows, cols}...]}, then the tensor
// values as row-major little-endian doubles in header order.
void save_checkpoint(const std::string& path, const ModelBundle& bundle);

// Rebuilds the bundle from the stored config/schema, then overwrites every
// parameter. The stored tensor set must match the rebuilt one exactly.
ModelBundle load_checkpoint(const std::string& path);

}  // namespace tgpt::model
