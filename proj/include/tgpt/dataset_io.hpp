#pragma once

// Dataset persistence: one JSON object per line per account sequence, with a
// sidecar schema file and a manifest carrying the generation seed and
// content hashes so any run can be traced back to its inputs.

#include "tgpt/data.hpp"
#include "tgpt/synthetic.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace tgpt::data {

using json = nlohmann::ordered_json;

// Lines contain raw facts only (timestamp, amount, ids, features, label);
// calendar fields are re-derived on load so file and model can never
// disagree about them. Returns the FNV-1a 64 content hash of the file.
std::uint64_t save_sequences_jsonl(const std::string& path,
                                   const std::vector<TransactionSequence>& seqs);

// Load and validate against the sidecar schema. Derives time fields.
std::vector<TransactionSequence> load_sequences_jsonl(const std::string& path,
                                                      const Schema& schema);

json schema_to_json(const Schema& schema);
Schema schema_from_json(const json& j);

void save_schema_sidecar(const std::string& path, const Schema& schema, const json& extra);
Schema load_schema_sidecar(const std::string& path, json* extra = nullptr);

std::uint64_t file_content_hash(const std::string& path);

json world_to_json(const SyntheticWorldSpec& spec);
SyntheticWorldSpec world_from_json(const json& j);

}  // namespace tgpt::data
