#pragma once

#include <span>

#include "dgs/types.hpp"

namespace dgs {

inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr int kMaxShDegree = 3;

inline double rgb_to_sh_dc(double rgb) { return (rgb - 0.5) / kShC0; }
inline double sh_dc_to_rgb(double dc) { return kShC0 * dc + 0.5; }

/// Real spherical-harmonic basis up to `degree` at unit direction `dir`,
/// written into `out` (size (degree+1)²). `jacobian`, if given, receives
/// d(basis_i)/d(dir) as rows of 3.
void sh_basis(int degree, const Vec3& dir, std::span<double> out, std::span<double> jacobian = {});

/// View-dependent color max(0, sum_i basis_i * coeff_i + 0.5).
Vec3 sh_color(int degree, std::span<const double> coeffs, const Vec3& dir);

/// Reverse pass of sh_color: accumulates dL/dcoeffs and returns dL/ddir.
Vec3 sh_color_vjp(int degree, std::span<const double> coeffs, const Vec3& dir, const Vec3& grad_color,
                  std::span<double> grad_coeffs);

} // namespace dgs
