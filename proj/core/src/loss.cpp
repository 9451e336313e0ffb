#include "dgs/loss.hpp"

namespace dgs {

double photometric_loss(const Image& rendered, const Image& target, double lambda_ssim) {
    const double l1 = l1_distance(rendered, target);
    if (lambda_ssim == 0.0) {
        return l1;
    }
    return (1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - ssim(rendered, target));
}

double photometric_loss_with_grad(const Image& rendered, const Image& target, double lambda_ssim, double scale,
                                  std::vector<Vec3>& grad) {
    require_same_shape(rendered, target);
    const std::size_t n = rendered.pixel_count();
    grad.resize(n, Vec3::Zero());
    const double l1 = l1_distance(rendered, target);
    double s = 1.0;
    Image g_ssim;
    if (lambda_ssim != 0.0) {
        s = ssim_with_grad(rendered, target, g_ssim);
    }
    const double c_l1 = scale * (1.0 - lambda_ssim) / static_cast<double>(rendered.data.size());
    for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) {
            const double d = rendered.data[3 * i + c] - target.data[3 * i + c];
            const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            double g = c_l1 * sign;
            if (lambda_ssim != 0.0) {
                g -= scale * lambda_ssim * g_ssim.data[3 * i + c];
            }
            grad[i][c] += g;
        }
    }
    if (lambda_ssim == 0.0) {
        return l1;
    }
    return (1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - s);
}

} // namespace dgs
