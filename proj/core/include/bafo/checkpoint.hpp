#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace bafo {

struct CvaeModel;

inline constexpr char kCheckpointMagic[4] = {'B', 'A', 'F', 'O'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Canonical serialization: magic, version, config block, layer specs, then
// length-prefixed named parameter blobs as little-endian 32-bit floats in
// sorted name order. Serializing the same model twice yields identical bytes.
std::vector<std::uint8_t> serialize_model(const CvaeModel& model);
CvaeModel deserialize_model(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const CvaeModel& model, const std::filesystem::path& path);
CvaeModel load_checkpoint(const std::filesystem::path& path);

}  // namespace bafo
