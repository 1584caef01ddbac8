#pragma once

#include <filesystem>

#include "odgs/types.hpp"

namespace odgs {

/// Reads an 8-bit PNG into linear [0,1] floats (value / 255). Grayscale
/// and paletted files are expanded to RGB; alpha is dropped.
ErpImage<float> read_png(const std::filesystem::path& path);

/// Writes as 8-bit RGB, rounding clamp(v, 0, 1) * 255.
void write_png(const ErpImage<float>& image, const std::filesystem::path& path);

}  // namespace odgs
