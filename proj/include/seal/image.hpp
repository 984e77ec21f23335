#pragma once

#include <string>
#include <vector>

namespace seal {

/// Interleaved H x W x C image with intensities in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, int c) : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, 0.0) {}

    double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

    bool operator==(const Image&) const = default;
};

/// Writes an 8-bit PNG (gray for 1 channel, RGB for 3). Values are clamped and rounded.
void write_png(const std::string& path, const Image& image);

/// Reads an 8-bit PNG and converts to `channels` (1 = luma, 3 = RGB).
Image read_png(const std::string& path, int channels);

/// Bilinear resize, sample positions at pixel centres.
Image resize_bilinear(const Image& image, int height, int width);

}  // namespace seal
