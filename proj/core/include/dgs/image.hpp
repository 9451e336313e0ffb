#pragma once

#include <filesystem>
#include <vector>

#include "dgs/types.hpp"

namespace dgs {

/// Row-major RGB image with channels interleaved, values nominally in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, double fill = 0.0) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
    double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    Vec3 pixel(std::size_t i) const { return {data[3 * i], data[3 * i + 1], data[3 * i + 2]}; }
    void set_pixel(std::size_t i, const Vec3& v) {
        data[3 * i] = v.x();
        data[3 * i + 1] = v.y();
        data[3 * i + 2] = v.z();
    }
};

/// Binary P6, 8-bit, value round(255 * clamp(v, 0, 1)).
void write_image(const std::filesystem::path& path, const Image& img);
/// Throws IoError if the file cannot be opened and MalformedHeader on a bad
/// or truncated file.
Image read_image(const std::filesystem::path& path);

/// -10 log10(MSE) over all channels; +infinity when the images are equal.
double psnr(const Image& a, const Image& b);

/// round(255 v) / 255 per channel after clamping to [0, 1]; the values a
/// write/read round trip produces.
Image quantize_8bit(const Image& img);

/// Mean local SSIM of the luma channels (0.299, 0.587, 0.114) with an 11x11
/// Gaussian window (sigma 1.5), C1 = 0.01², C2 = 0.03². Near the border the
/// window is truncated to the image and renormalized.
double ssim(const Image& a, const Image& b);

/// ssim(a, b) and d ssim / d a, written as an RGB image.
double ssim_with_grad(const Image& a, const Image& b, Image& grad_a);

/// Mean absolute difference over all channels.
double l1_distance(const Image& a, const Image& b);

void require_same_shape(const Image& a, const Image& b);

} // namespace dgs
