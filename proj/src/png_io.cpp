#include "gtf/png_io.hpp"

#include <png.h>

#include <cstring>

namespace gtf {

GrayImage read_png_gray8(const std::string& path) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw DataError("cannot read PNG '" + path + "': " + img.message);
    img.format = PNG_FORMAT_GRAY;
    GrayImage out;
    out.height = img.height;
    out.width = img.width;
    out.pixels.resize(static_cast<size_t>(out.height) * static_cast<size_t>(out.width));
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw DataError("cannot decode PNG '" + path + "': " + msg);
    }
    return out;
}

void write_png_gray8(const std::string& path, const GrayImage& img) {
    if (img.height <= 0 || img.width <= 0 ||
        img.pixels.size() != static_cast<size_t>(img.height) * static_cast<size_t>(img.width))
        throw DataError("malformed image buffer for PNG '" + path + "'");
    png_image out;
    std::memset(&out, 0, sizeof out);
    out.version = PNG_IMAGE_VERSION;
    out.height = static_cast<png_uint_32>(img.height);
    out.width = static_cast<png_uint_32>(img.width);
    out.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&out, path.c_str(), 0, img.pixels.data(), 0, nullptr))
        throw DataError("cannot write PNG '" + path + "': " + std::string(out.message));
}

} // namespace gtf
