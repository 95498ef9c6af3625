#pragma once

// TGCK checkpoint layout (little-endian):
//   "TGCK" | u16 version=1 | u32 config_len | config JSON (UTF-8)
//   | u32 array_count | per array: u16 name_len | name | u16 rank
//   | rank x u32 extents | extent-product x float64
// Arrays appear in build order.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tango/networks.hpp"
#include <json.hpp>

namespace tango::nets {

inline constexpr std::uint16_t kCheckpointVersion = 1;

nlohmann::json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::json& j);

std::vector<std::uint8_t> encode_checkpoint(const Model& model);
Model decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace tango::nets
