#pragma once

#include <string>

#include <json.hpp>

#include "macnet/model.hpp"

namespace macnet {

// Checkpoint container, format version 1:
//   magic "MACCKPT\n" | u32 version | u64 header_len | header JSON |
//   per-parameter float64 little-endian payload in header order.
// Byte-stable for identical contents; truncation or shape drift is refused
// with the failing byte offset.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

nlohmann::json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::json& j);

}  // namespace macnet
