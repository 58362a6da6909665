#pragma once

// Minimal SHA-256, used to fingerprint checkpoints so records can verify
// they are revealed by the model that produced them.

#include <array>
#include <cstdint>
#include <vector>

namespace bafo {

std::array<std::uint8_t, 32> sha256(const std::uint8_t* data, std::size_t len);
std::array<std::uint8_t, 32> sha256(const std::vector<std::uint8_t>& data);

}  // namespace bafo
