#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "roma/errors.hpp"

namespace roma {

// H x W x C raster, row-major, channel-interleaved, values in [0, 1].
// Pixel provenance is 8-bit: readers and writers quantize to u8 levels.
struct ImageBuffer {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 3;
    std::vector<double> data;

    ImageBuffer() = default;
    ImageBuffer(std::size_t h, std::size_t w, std::size_t c = 3, double fill = 0.0)
        : height(h), width(w), channels(c), data(h * w * c, fill) {}

    double& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * channels + c]; }
    double at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * width + x) * channels + c]; }

    // Throws ContractError when any value falls outside [0, 1].
    void validate_range(const char* what) const;
};

// Reads an 8-bit image by extension (.png or .ppm); grayscale and palette
// PNGs are expanded to RGB.
ImageBuffer load_image(const std::string& path);
ImageBuffer load_png(const std::string& path);
ImageBuffer load_ppm(const std::string& path);

void save_png(const ImageBuffer& img, const std::string& path);
void save_ppm(const ImageBuffer& img, const std::string& path);

// u8 <-> [0,1] conversion used everywhere an image crosses a byte boundary.
inline double u8_to_unit(std::uint8_t v) { return static_cast<double>(v) / 255.0; }
std::uint8_t unit_to_u8(double v);

}  // namespace roma
