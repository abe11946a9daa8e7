#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace geoscene {

/// 8-bit RGB raster, row-major, origin top-left
struct Image {
    int h = 0;
    int w = 0;
    std::vector<uint8_t> data; // h*w*3

    Image() = default;
    Image(int height, int width) : h(height), w(width), data(size_t(height) * width * 3, 0) {}

    uint8_t* px(int y, int x) { return data.data() + (size_t(y) * w + x) * 3; }
    const uint8_t* px(int y, int x) const { return data.data() + (size_t(y) * w + x) * 3; }

    bool operator==(const Image& o) const {
        return h == o.h && w == o.w && data == o.data;
    }
};

void save_png(const std::filesystem::path& path, const Image& img);
Image load_png(const std::filesystem::path& path);

/// 8-bit grayscale PGM (P5)
void save_pgm(const std::filesystem::path& path, const std::vector<uint8_t>& gray,
              int h, int w);
std::vector<uint8_t> load_pgm(const std::filesystem::path& path, int& h, int& w);

} // namespace geoscene
