#pragma once

#include <string>

#include "riskcause/scene.hpp"

namespace riskcause {

/// 8-bit RGB PNG read/write via libpng. Throws IoError on any failure.
void write_png(const std::string& path, const Image& image);
Image read_png(const std::string& path);

}  // namespace riskcause
