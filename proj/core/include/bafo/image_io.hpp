#pragma once

#include <filesystem>

#include "bafo/tensor.hpp"

namespace bafo {

// Reads a PNG, ASCII PPM (P3) or JPEG file into a [3,H,W] tensor with values
// in [0,1]. The format is sniffed from the file content, not the extension.
// Throws CodecError for unsupported or corrupt files, IoError when the file
// cannot be opened.
Tensor image_read(const std::filesystem::path& path);

// Writes a [3,H,W] tensor (values clamped to [0,1]) as 8-bit RGB. The format
// follows the extension: .png or .ppm. Round-tripping loses at most one
// quantization step (1/255) per channel.
void image_write(const std::filesystem::path& path, const Tensor& image);

}  // namespace bafo
