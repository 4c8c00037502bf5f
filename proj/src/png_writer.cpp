#include "abseg/png_writer.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace abseg::png {

Image make_image(int64_t width, int64_t height) {
    if (width < 1 || height < 1) throw std::invalid_argument("make_image: degenerate size");
    Image img;
    img.width = width;
    img.height = height;
    img.rgb.assign(static_cast<size_t>(3 * width * height), 0);
    return img;
}

namespace {

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& payload) {
    put_u32_be(out, static_cast<uint32_t>(payload.size()));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const uint32_t crc =
        static_cast<uint32_t>(crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start)));
    put_u32_be(out, crc);
}

}  // namespace

void write_png(const Image& img, const std::string& path) {
    if (img.rgb.size() != static_cast<size_t>(3 * img.width * img.height))
        throw std::invalid_argument("write_png: pixel buffer size mismatch");

    // Filter type 0 per scanline.
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>((3 * img.width + 1) * img.height));
    for (int64_t y = 0; y < img.height; ++y) {
        raw.push_back(0);
        const uint8_t* row = img.rgb.data() + 3 * y * img.width;
        raw.insert(raw.end(), row, row + 3 * img.width);
    }

    uLongf comp_bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> compressed(comp_bound);
    if (compress2(compressed.data(), &comp_bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("write_png: deflate failed");
    compressed.resize(comp_bound);

    std::vector<uint8_t> out;
    const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    out.insert(out.end(), sig, sig + 8);

    std::vector<uint8_t> ihdr;
    put_u32_be(ihdr, static_cast<uint32_t>(img.width));
    put_u32_be(ihdr, static_cast<uint32_t>(img.height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type RGB
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // interlace
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", compressed);
    put_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("write_png: cannot open " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("write_png: short write to " + path);
}

}  // namespace abseg::png
