#pragma once

#include <filesystem>

#include "vsearch/image.hpp"

namespace vsearch {

/// 8-bit RGB PNG, no ancillary chunks (output bytes depend only on pixels).
void write_png(const std::filesystem::path& path, const Image& img);

/// Reads any 8-bit PNG and converts it to RGB (alpha dropped, gray expanded).
Image read_png(const std::filesystem::path& path);

}  // namespace vsearch
