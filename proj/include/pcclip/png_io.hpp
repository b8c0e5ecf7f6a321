#pragma once

#include <filesystem>

#include "pcclip/image.hpp"

namespace pcclip {

// Reads 8-bit gray, gray+alpha, RGB or RGBA PNGs (palette and 16-bit are
// expanded/stripped). Values are scaled to [0,1]; channel count is preserved.
Image read_png(const std::filesystem::path& file);

// Writes 1, 2, 3 or 4 channel images as 8-bit PNG, value * 255 rounded.
void write_png(const std::filesystem::path& file, const Image& image);

}  // namespace pcclip
