#pragma once

// Model checkpoint: a JSON document with fixed field order
//
//   {
//     "format": "fedua-checkpoint",
//     "version": 1,
//     "config": {"embedding_length": .., "input_length": .., "layers": [{"kind": .., ...}, ...]},
//     "layers": [
//       {"index": 0, "kind": "conv1d", "tensors": [{"shape": [..], "data": [..]}, ...]},
//       ...
//     ]
//   }
//
// Every double is written as its shortest round-trip decimal, so
// save -> load reproduces parameters bit for bit.

#include <filesystem>
#include <string>

#include "json.hpp"

#include "fedua/nn/model.hpp"

namespace fedua::nn {

nlohmann::json config_to_json(const ModelConfig& config);
/// Accepts {"preset": "table1"|"desk", "input_length", "embedding_length"} or
/// an explicit {"input_length", "embedding_length", "layers": [...]}.
ModelConfig config_from_json(const nlohmann::json& j);

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

std::string checkpoint_to_string(const ModelConfig& config, const ModelParams& params);
Checkpoint checkpoint_from_string(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ModelParams& params);
/// Throws ParseError for malformed or inconsistent documents.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fedua::nn
