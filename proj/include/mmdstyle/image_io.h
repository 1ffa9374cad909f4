#pragma once

#include "mmdstyle/tensor.h"

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace mmdstyle {

/// 8-bit RGB, row-major, interleaved.
struct RgbImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;

    RgbImage() = default;
    RgbImage(std::size_t w, std::size_t h);

    std::uint8_t* pixel(std::size_t x, std::size_t y) { return &pixels[3 * (y * width + x)]; }
    const std::uint8_t* pixel(std::size_t x, std::size_t y) const {
        return &pixels[3 * (y * width + x)];
    }

    friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// Caffe-lineage VGG channel means, in B, G, R order.
inline constexpr std::array<double, 3> kBgrMeans = {103.939, 116.779, 123.68};

/// (1,3,H,W) in B,G,R channel order with the channel means subtracted.
Tensor4 preprocess(const RgbImage& img);

/// Inverse of preprocess; adds the means back, clamps to [0,255] and rounds
/// half away from zero.
RgbImage postprocess(const Tensor4& t);

/// Bilinear resampling with half-pixel centers and edge clamping.
RgbImage resize_bilinear(const RgbImage& img, std::size_t width, std::size_t height);

/// Reads gray/RGB/RGBA/palette PNGs; alpha is dropped.
RgbImage read_png(const std::filesystem::path& path);
void write_png(const RgbImage& img, const std::filesystem::path& path);

}  // namespace mmdstyle
