#pragma once

#include <filesystem>

#include "multipod/data.hpp"

namespace multipod {

/// Binary (P6) 8-bit RGB PPM. Values are clamped to [0, 1] and rounded.
void write_ppm(const Image& img, const std::filesystem::path& path);
/// Reads P6 with maxval <= 255; pixels are scaled to [0, 1].
Image read_ppm(const std::filesystem::path& path);

}  // namespace multipod
