#pragma once

#include <vector>

#include "dgs/image.hpp"

namespace dgs {

/// (1 - lambda_ssim) * L1 + lambda_ssim * (1 - SSIM).
double photometric_loss(const Image& rendered, const Image& target, double lambda_ssim = 0.2);

/// Same value; adds scale * d(loss)/d(rendered) to `grad` (one Vec3 per pixel).
double photometric_loss_with_grad(const Image& rendered, const Image& target, double lambda_ssim, double scale,
                                  std::vector<Vec3>& grad);

} // namespace dgs
