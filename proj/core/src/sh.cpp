#include "dgs/sh.hpp"

#include <array>
#include <stdexcept>

#include "dgs/model.hpp"

namespace dgs {

namespace {

constexpr double kC1 = 0.4886025119029199;
constexpr std::array<double, 5> kC2 = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                       -1.0925484305920792, 0.5462742152960396};
constexpr std::array<double, 7> kC3 = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                                       0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                                       -0.5900435899266435};

} // namespace

void sh_basis(int degree, const Vec3& dir, std::span<double> out, std::span<double> jac) {
    if (degree < 0 || degree > kMaxShDegree) {
        throw std::invalid_argument("sh_basis: degree must be in [0, 3]");
    }
    const double x = dir.x(), y = dir.y(), z = dir.z();
    const bool want_jac = !jac.empty();
    auto set = [&](int i, double v, double dx, double dy, double dz) {
        out[static_cast<std::size_t>(i)] = v;
        if (want_jac) {
            jac[static_cast<std::size_t>(3 * i)] = dx;
            jac[static_cast<std::size_t>(3 * i + 1)] = dy;
            jac[static_cast<std::size_t>(3 * i + 2)] = dz;
        }
    };
    set(0, kShC0, 0.0, 0.0, 0.0);
    if (degree < 1) {
        return;
    }
    set(1, -kC1 * y, 0.0, -kC1, 0.0);
    set(2, kC1 * z, 0.0, 0.0, kC1);
    set(3, -kC1 * x, -kC1, 0.0, 0.0);
    if (degree < 2) {
        return;
    }
    const double xx = x * x, yy = y * y, zz = z * z;
    set(4, kC2[0] * x * y, kC2[0] * y, kC2[0] * x, 0.0);
    set(5, kC2[1] * y * z, 0.0, kC2[1] * z, kC2[1] * y);
    set(6, kC2[2] * (2.0 * zz - xx - yy), -2.0 * kC2[2] * x, -2.0 * kC2[2] * y, 4.0 * kC2[2] * z);
    set(7, kC2[3] * x * z, kC2[3] * z, 0.0, kC2[3] * x);
    set(8, kC2[4] * (xx - yy), 2.0 * kC2[4] * x, -2.0 * kC2[4] * y, 0.0);
    if (degree < 3) {
        return;
    }
    set(9, kC3[0] * y * (3.0 * xx - yy), 6.0 * kC3[0] * x * y, kC3[0] * (3.0 * xx - 3.0 * yy), 0.0);
    set(10, kC3[1] * x * y * z, kC3[1] * y * z, kC3[1] * x * z, kC3[1] * x * y);
    set(11, kC3[2] * y * (4.0 * zz - xx - yy), -2.0 * kC3[2] * x * y, kC3[2] * (4.0 * zz - xx - 3.0 * yy),
        8.0 * kC3[2] * y * z);
    set(12, kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy), -6.0 * kC3[3] * x * z, -6.0 * kC3[3] * y * z,
        kC3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy));
    set(13, kC3[4] * x * (4.0 * zz - xx - yy), kC3[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * kC3[4] * x * y,
        8.0 * kC3[4] * x * z);
    set(14, kC3[5] * z * (xx - yy), 2.0 * kC3[5] * x * z, -2.0 * kC3[5] * y * z, kC3[5] * (xx - yy));
    set(15, kC3[6] * x * (xx - 3.0 * yy), kC3[6] * (3.0 * xx - 3.0 * yy), -6.0 * kC3[6] * x * y, 0.0);
}

Vec3 sh_color(int degree, std::span<const double> coeffs, const Vec3& dir) {
    std::array<double, 16> basis{};
    const int n = sh_coeff_count(degree);
    sh_basis(degree, dir, std::span<double>(basis.data(), static_cast<std::size_t>(n)));
    Vec3 c = Vec3::Zero();
    for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < 3; ++ch) {
            c[ch] += basis[static_cast<std::size_t>(i)] * coeffs[static_cast<std::size_t>(3 * i + ch)];
        }
    }
    return (c.array() + 0.5).max(0.0);
}

Vec3 sh_color_vjp(int degree, std::span<const double> coeffs, const Vec3& dir, const Vec3& grad_color,
                  std::span<double> grad_coeffs) {
    std::array<double, 16> basis{};
    std::array<double, 48> jac{};
    const int n = sh_coeff_count(degree);
    sh_basis(degree, dir, std::span<double>(basis.data(), static_cast<std::size_t>(n)),
             std::span<double>(jac.data(), static_cast<std::size_t>(3 * n)));
    Vec3 raw = Vec3::Zero();
    for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < 3; ++ch) {
            raw[ch] += basis[static_cast<std::size_t>(i)] * coeffs[static_cast<std::size_t>(3 * i + ch)];
        }
    }
    Vec3 g = grad_color;
    for (int ch = 0; ch < 3; ++ch) {
        if (raw[ch] + 0.5 < 0.0) {
            g[ch] = 0.0;
        }
    }
    Vec3 g_dir = Vec3::Zero();
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int ch = 0; ch < 3; ++ch) {
            const auto idx = static_cast<std::size_t>(3 * i + ch);
            grad_coeffs[idx] += basis[static_cast<std::size_t>(i)] * g[ch];
            s += coeffs[idx] * g[ch];
        }
        for (int c = 0; c < 3; ++c) {
            g_dir[c] += s * jac[static_cast<std::size_t>(3 * i + c)];
        }
    }
    return g_dir;
}

} // namespace dgs
