#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "network.hpp"

namespace despeck::net {

// Binary checkpoint container; layout documented in docs/checkpoint.md.
inline constexpr char kCheckpointMagic[8] = {'D', 'S', 'N', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Model<float>& model);
Model<float> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Model<float>& model, const std::filesystem::path& path);
Model<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace despeck::net
