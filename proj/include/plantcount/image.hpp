#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plantcount/grid.hpp"

namespace plantcount {

// 8-bit RGB raster, row-major (y, x, c).
struct Image {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> data;  // height * width * 3

    Image() = default;
    Image(int h, int w) : height(h), width(w), data(size_t(h) * w * 3, 0) {}

    uint8_t& at(int y, int x, int c) { return data[(size_t(y) * width + x) * 3 + c]; }
    uint8_t at(int y, int x, int c) const { return data[(size_t(y) * width + x) * 3 + c]; }
};

// PNG, 8-bit RGB, non-interlaced.
void write_png_rgb(const std::string& path, const Image& img);

// Reads 8-bit gray / RGB / RGBA (gray and alpha converted to plain RGB).
Image read_png(const std::string& path);

// 16-bit grayscale PNG. Values are scaled linearly: pixel = round(v / scale_max
// * 65535), clamped to [0, 65535]; scale_max is recorded in a tEXt chunk
// ("countmap_max") so the map is recoverable.
void write_png_gray16(const std::string& path, int height, int width,
                      const std::vector<double>& values, double scale_max);

// Model input: channels scaled to [0, 1].
FeatureGrid image_to_grid(const Image& img);
Image grid_to_image(const FeatureGrid& grid);  // clamps to [0,1] then quantizes

// Reflection padding on right/bottom up to the next multiple of `multiple`.
Image pad_reflect(const Image& img, int multiple);

// Bilinear resize to the given dims.
Image resize_bilinear(const Image& img, int out_h, int out_w);

} // namespace plantcount
