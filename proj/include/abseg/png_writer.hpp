#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace abseg::png {

// Minimal RGB8 PNG encoder (zlib deflate, fixed settings, no ancillary
// chunks) so identical pixels always serialize to identical bytes.
struct Image {
    int64_t width = 0;
    int64_t height = 0;
    std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel

    uint8_t* pixel(int64_t x, int64_t y) { return rgb.data() + 3 * (y * width + x); }
    const uint8_t* pixel(int64_t x, int64_t y) const { return rgb.data() + 3 * (y * width + x); }
};

Image make_image(int64_t width, int64_t height);
void write_png(const Image& img, const std::string& path);

}  // namespace abseg::png
