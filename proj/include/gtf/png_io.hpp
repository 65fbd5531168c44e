#pragma once

// Thin wrappers over libpng's simplified API. Everything on disk is 8-bit
// grayscale, row-major, top-left origin.

#include <cstdint>
#include <string>
#include <vector>

#include "gtf/errors.hpp"

namespace gtf {

struct GrayImage {
    std::int64_t height = 0, width = 0;
    std::vector<std::uint8_t> pixels; // height * width
};

GrayImage read_png_gray8(const std::string& path);
void write_png_gray8(const std::string& path, const GrayImage& img);

} // namespace gtf
