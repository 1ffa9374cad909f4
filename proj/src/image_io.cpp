#include "mmdstyle/image_io.h"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mmdstyle {

RgbImage::RgbImage(std::size_t w, std::size_t h) : width(w), height(h), pixels(3 * w * h, 0) {
    if (w == 0 || h == 0) throw std::invalid_argument("RgbImage: width and height must be >= 1");
}

Tensor4 preprocess(const RgbImage& img) {
    Tensor4 t({1, 3, img.height, img.width});
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            const auto* p = img.pixel(x, y);
            // channel c of the tensor is BGR; pixel is RGB
            for (std::size_t c = 0; c < 3; ++c) {
                t.at(0, c, y, x) = static_cast<double>(p[2 - c]) - kBgrMeans[c];
            }
        }
    }
    return t;
}

RgbImage postprocess(const Tensor4& t) {
    const Shape& s = t.shape();
    if (s.batch != 1 || s.channels != 3) {
        throw ShapeError("postprocess: expected (1,3,H,W), got " + s.str());
    }
    RgbImage img(s.width, s.height);
    for (std::size_t y = 0; y < s.height; ++y) {
        for (std::size_t x = 0; x < s.width; ++x) {
            auto* p = img.pixel(x, y);
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = std::clamp(t.at(0, c, y, x) + kBgrMeans[c], 0.0, 255.0);
                p[2 - c] = static_cast<std::uint8_t>(std::round(v));
            }
        }
    }
    return img;
}

RgbImage resize_bilinear(const RgbImage& img, std::size_t width, std::size_t height) {
    if (width == 0 || height == 0) throw std::invalid_argument("resize: size must be >= 1");
    if (width == img.width && height == img.height) return img;
    RgbImage out(width, height);
    const double sx = static_cast<double>(img.width) / static_cast<double>(width);
    const double sy = static_cast<double>(img.height) / static_cast<double>(height);
    auto sample_axis = [](double pos, std::size_t size, std::size_t& i0, std::size_t& i1,
                          double& frac) {
        pos = std::clamp(pos, 0.0, static_cast<double>(size - 1));
        i0 = static_cast<std::size_t>(std::floor(pos));
        i1 = std::min(i0 + 1, size - 1);
        frac = pos - static_cast<double>(i0);
    };
    for (std::size_t y = 0; y < height; ++y) {
        std::size_t y0, y1;
        double fy;
        sample_axis((static_cast<double>(y) + 0.5) * sy - 0.5, img.height, y0, y1, fy);
        for (std::size_t x = 0; x < width; ++x) {
            std::size_t x0, x1;
            double fx;
            sample_axis((static_cast<double>(x) + 0.5) * sx - 0.5, img.width, x0, x1, fx);
            for (std::size_t c = 0; c < 3; ++c) {
                const double top = (1 - fx) * img.pixel(x0, y0)[c] + fx * img.pixel(x1, y0)[c];
                const double bottom = (1 - fx) * img.pixel(x0, y1)[c] + fx * img.pixel(x1, y1)[c];
                const double v = (1 - fy) * top + fy * bottom;
                out.pixel(x, y)[c] = static_cast<std::uint8_t>(std::round(std::clamp(v, 0.0, 255.0)));
            }
        }
    }
    return out;
}

RgbImage read_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw std::runtime_error("png: " + path.string() + ": " + image.message);
    }
    // Read with alpha so it can be dropped rather than composited.
    image.format = PNG_FORMAT_RGBA;
    std::vector<std::uint8_t> rgba(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, rgba.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw std::runtime_error("png: " + path.string() + ": " + msg);
    }
    RgbImage img(image.width, image.height);
    for (std::size_t i = 0; i < img.width * img.height; ++i) {
        std::copy_n(&rgba[4 * i], 3, &img.pixels[3 * i]);
    }
    return img;
}

void write_png(const RgbImage& img, const std::filesystem::path& path) {
    if (img.width == 0 || img.pixels.size() != 3 * img.width * img.height) {
        throw std::invalid_argument("write_png: malformed image");
    }
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
        throw std::runtime_error("png: cannot write " + path.string() + ": " + image.message);
    }
}

}  // namespace mmdstyle
