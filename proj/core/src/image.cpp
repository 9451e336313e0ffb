#include "dgs/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>

#include "dgs/error.hpp"

namespace dgs {

namespace {

constexpr int kRadius = 5;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;
constexpr std::array<double, 3> kLuma{0.299, 0.587, 0.114};

std::array<double, 2 * kRadius + 1> window_taps() {
    std::array<double, 2 * kRadius + 1> w{};
    for (int i = -kRadius; i <= kRadius; ++i) {
        w[i + kRadius] = std::exp(-0.5 * i * i / (kSigma * kSigma));
    }
    return w;
}

/// Unnormalized separable window sum, truncated at the image border.
std::vector<double> blur(const std::vector<double>& src, int w, int h) {
    static const auto taps = window_taps();
    std::vector<double> tmp(src.size(), 0.0);
    std::vector<double> out(src.size(), 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int d = -kRadius; d <= kRadius; ++d) {
                const int xx = x + d;
                if (xx >= 0 && xx < w) {
                    s += taps[d + kRadius] * src[y * w + xx];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int d = -kRadius; d <= kRadius; ++d) {
                const int yy = y + d;
                if (yy >= 0 && yy < h) {
                    s += taps[d + kRadius] * tmp[yy * w + x];
                }
            }
            out[y * w + x] = s;
        }
    }
    return out;
}

std::vector<double> luma(const Image& img) {
    std::vector<double> y(img.pixel_count());
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = kLuma[0] * img.data[3 * i] + kLuma[1] * img.data[3 * i + 1] + kLuma[2] * img.data[3 * i + 2];
    }
    return y;
}

double ssim_impl(const Image& a, const Image& b, Image* grad_a) {
    require_same_shape(a, b);
    const int w = a.width;
    const int h = a.height;
    const std::size_t n = a.pixel_count();
    if (n == 0) {
        return 1.0;
    }
    const std::vector<double> x = luma(a);
    const std::vector<double> y = luma(b);
    std::vector<double> xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const std::vector<double> norm = blur(std::vector<double>(n, 1.0), w, h);
    const std::vector<double> bx = blur(x, w, h);
    const std::vector<double> by = blur(y, w, h);
    const std::vector<double> bxx = blur(xx, w, h);
    const std::vector<double> byy = blur(yy, w, h);
    const std::vector<double> bxy = blur(xy, w, h);

    std::vector<double> d_mx, d_exx, d_exy;
    if (grad_a) {
        d_mx.resize(n);
        d_exx.resize(n);
        d_exy.resize(n);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double mx = bx[i] / norm[i];
        const double my = by[i] / norm[i];
        const double vx = bxx[i] / norm[i] - mx * mx;
        const double vy = byy[i] / norm[i] - my * my;
        const double cxy = bxy[i] / norm[i] - mx * my;
        const double a1 = 2.0 * mx * my + kC1;
        const double a2 = 2.0 * cxy + kC2;
        const double b1 = mx * mx + my * my + kC1;
        const double b2 = vx + vy + kC2;
        const double s = (a1 * a2) / (b1 * b2);
        total += s;
        if (grad_a) {
            const double ds_dmu = s * (2.0 * my / a1 - 2.0 * mx / b1);
            const double ds_dvx = -s / b2;
            const double ds_dcxy = 2.0 * s / a2;
            d_mx[i] = (ds_dmu - 2.0 * mx * ds_dvx - my * ds_dcxy) / norm[i];
            d_exx[i] = ds_dvx / norm[i];
            d_exy[i] = ds_dcxy / norm[i];
        }
    }
    if (grad_a) {
        const std::vector<double> g_m = blur(d_mx, w, h);
        const std::vector<double> g_xx = blur(d_exx, w, h);
        const std::vector<double> g_xy = blur(d_exy, w, h);
        *grad_a = Image(w, h);
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double gy = (g_m[i] + 2.0 * x[i] * g_xx[i] + y[i] * g_xy[i]) * inv_n;
            for (int c = 0; c < 3; ++c) {
                grad_a->data[3 * i + c] = gy * kLuma[c];
            }
        }
    }
    return total / static_cast<double>(n);
}

void skip_ws_and_comments(std::istream& in) {
    while (true) {
        const int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (c == ' ' || c == '\n' || c == '\r' || c == '\t') {
            in.get();
        } else {
            return;
        }
    }
}

int read_header_int(std::istream& in) {
    skip_ws_and_comments(in);
    int v = -1;
    if (!(in >> v) || v < 0) {
        throw MalformedHeader("PPM header: expected a non-negative integer");
    }
    return v;
}

} // namespace

void require_same_shape(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height || a.data.size() != b.data.size()) {
        throw ShapeMismatch("image shapes differ: " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                            " vs " + std::to_string(b.width) + "x" + std::to_string(b.height));
    }
}

void write_image(const std::filesystem::path& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    std::vector<unsigned char> bytes(img.data.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        bytes[i] = static_cast<unsigned char>(std::lround(255.0 * std::clamp(img.data[i], 0.0, 1.0)));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

Image read_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (in.gcount() != 2 || magic[0] != 'P' || magic[1] != '6') {
        throw MalformedHeader("'" + path.string() + "' is not a binary PPM");
    }
    const int w = read_header_int(in);
    const int h = read_header_int(in);
    const int maxval = read_header_int(in);
    if (maxval != 255) {
        throw MalformedHeader("only 8-bit PPM is supported");
    }
    if (in.get() == std::char_traits<char>::eof()) {
        throw MalformedHeader("PPM header truncated");
    }
    Image img(w, h);
    std::vector<unsigned char> bytes(img.data.size());
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
        throw MalformedHeader("'" + path.string() + "' is truncated");
    }
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        img.data[i] = bytes[i] / 255.0;
    }
    return img;
}

double psnr(const Image& a, const Image& b) {
    require_same_shape(a, b);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        sum += d * d;
    }
    const double mse = a.data.empty() ? 0.0 : sum / static_cast<double>(a.data.size());
    if (mse == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return -10.0 * std::log10(mse);
}

Image quantize_8bit(const Image& img) {
    Image out = img;
    for (double& v : out.data) {
        v = static_cast<double>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))) / 255.0;
    }
    return out;
}

double ssim(const Image& a, const Image& b) { return ssim_impl(a, b, nullptr); }

double ssim_with_grad(const Image& a, const Image& b, Image& grad_a) { return ssim_impl(a, b, &grad_a); }

double l1_distance(const Image& a, const Image& b) {
    require_same_shape(a, b);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        sum += std::abs(a.data[i] - b.data[i]);
    }
    return a.data.empty() ? 0.0 : sum / static_cast<double>(a.data.size());
}

} // namespace dgs
