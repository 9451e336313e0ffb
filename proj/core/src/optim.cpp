#include "dgs/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dgs/error.hpp"
#include "dgs/image.hpp"
#include "dgs/loss.hpp"
#include "dgs/rng.hpp"

namespace dgs {

LearningRates default_learning_rates() {
    LearningRates lr{};
    lr[static_cast<std::size_t>(ParamClass::SurfelCenter)] = 5e-4;
    lr[static_cast<std::size_t>(ParamClass::SurfelRotation)] = 2e-3;
    lr[static_cast<std::size_t>(ParamClass::SurfelScale)] = 5e-3;
    lr[static_cast<std::size_t>(ParamClass::SurfelOpacity)] = 2e-2;
    lr[static_cast<std::size_t>(ParamClass::SurfelColor)] = 1e-2;
    lr[static_cast<std::size_t>(ParamClass::RefineRotation)] = 1e-3;
    lr[static_cast<std::size_t>(ParamClass::RefineScale)] = 2e-4;
    lr[static_cast<std::size_t>(ParamClass::BoneCenter)] = 1e-3;
    lr[static_cast<std::size_t>(ParamClass::BoneRotation)] = 1e-3;
    lr[static_cast<std::size_t>(ParamClass::BoneLogPrecision)] = 1e-2;
    lr[static_cast<std::size_t>(ParamClass::Latent)] = 1e-3;
    lr[static_cast<std::size_t>(ParamClass::MlpWeights)] = 3e-4;
    return lr;
}

LossReport evaluate_objective(const ModelState& model, const Camera& camera, double t, const Image& target,
                              const LossWeights& weights, ModelState* grad) {
    const WarpEvaluation warp = evaluate_warp(model, t);
    RenderOptions opts;
    opts.keep_trace = true;
    const RenderOutput base = render_with_warp(model, camera, warp, Branch::Base, opts);

    LossReport report;
    PixelGradients pg_base;
    report.photo_base = grad ? photometric_loss_with_grad(base.color, target, weights.lambda_ssim, 1.0, pg_base.color)
                             : photometric_loss(base.color, target, weights.lambda_ssim);
    report.normal = normal_loss(base);

    std::optional<RenderOutput> refined;
    PixelGradients pg_ref;
    if (weights.refined_weight != 0.0) {
        refined = render_with_warp(model, camera, warp, Branch::Refined, opts);
        report.photo_refined =
            grad ? photometric_loss_with_grad(refined->color, target, weights.lambda_ssim, weights.refined_weight,
                                              pg_ref.color)
                 : photometric_loss(refined->color, target, weights.lambda_ssim);
    }
    report.photometric = report.photo_base + weights.refined_weight * report.photo_refined;
    report.total = report.photometric + weights.lambda_normal * report.normal;
    if (!std::isfinite(report.total)) {
        std::ostringstream msg;
        msg << "non-finite loss at t=" << t << " (base " << report.photo_base << ", refined " << report.photo_refined
            << ", normal " << report.normal << ")";
        throw NonFiniteLoss(msg.str());
    }
    if (!grad) {
        return report;
    }

    normal_loss_backward(base, camera, weights.lambda_normal, pg_base);
    std::vector<Mat3> g_rot;
    std::vector<Vec3> g_trans;
    render_backward(model, camera, warp, base, pg_base, *grad, g_rot, g_trans);
    if (refined) {
        render_backward(model, camera, warp, *refined, pg_ref, *grad, g_rot, g_trans);
    }
    warp_backward(model, warp, g_rot, g_trans, *grad);
    return report;
}

Adam::Adam(const ModelState& like, double beta1, double beta2, double eps)
    : m_(like.zeros_like()), v_(like.zeros_like()), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ModelState& model, ModelState& grad, const LearningRates& lr) {
    ++steps_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    auto params = param_blocks(model);
    auto grads = param_blocks(grad);
    auto ms = param_blocks(m_);
    auto vs = param_blocks(v_);
    if (params.size() != grads.size() || params.size() != ms.size() || params.size() != vs.size()) {
        throw ShapeMismatch("Adam: gradient or moment buffers do not match the model");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const ParamBlock& p = params[i];
        if (grads[i].size != p.size || ms[i].size != p.size) {
            throw ShapeMismatch("Adam: block size mismatch");
        }
        const double rate = lr[static_cast<std::size_t>(p.cls)];
        for (std::size_t j = 0; j < p.size; ++j) {
            const double g = grads[i].data[j];
            double& m = ms[i].data[j];
            double& v = vs[i].data[j];
            m = beta1_ * m + (1.0 - beta1_) * g;
            v = beta2_ * v + (1.0 - beta2_) * g * g;
            p.data[j] -= rate * (m / c1) / (std::sqrt(v / c2) + eps_);
        }
    }
}

void Adam::select_surfels(std::span<const std::size_t> keep) {
    dgs::select_surfels(m_, keep);
    dgs::select_surfels(v_, keep);
}

LossReport train_step(ModelState& model, Adam& adam, const Frame& frame, const TrainConfig& config,
                      double lambda_normal) {
    ModelState grad = model.zeros_like();
    const LossWeights weights{config.lambda_ssim, config.refined_weight, lambda_normal};
    const LossReport report = evaluate_objective(model, frame.camera, frame.t, frame.image, weights, &grad);
    adam.step(model, grad, config.learning_rates);
    return report;
}

void interpolate_latents(ModelState& model, std::span<const int> trained) {
    std::vector<int> keys(trained.begin(), trained.end());
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    if (keys.empty()) {
        return;
    }
    for (Bone& b : model.bones) {
        const int frames = static_cast<int>(b.latents.rows());
        for (int f = 0; f < frames; ++f) {
            const auto hi = std::lower_bound(keys.begin(), keys.end(), f);
            if (hi != keys.end() && *hi == f) {
                continue;
            }
            if (hi == keys.begin()) {
                if (*hi < frames) {
                    b.latents.row(f) = b.latents.row(*hi);
                }
                continue;
            }
            const int f0 = *(hi - 1);
            if (hi == keys.end() || *hi >= frames) {
                b.latents.row(f) = b.latents.row(f0);
                continue;
            }
            const int f1 = *hi;
            const double a = static_cast<double>(f - f0) / static_cast<double>(f1 - f0);
            b.latents.row(f) = (1.0 - a) * b.latents.row(f0) + a * b.latents.row(f1);
        }
    }
}

std::vector<FrameScore> evaluate_frames(const ModelState& model, const Dataset& data) {
    std::vector<FrameScore> scores;
    for (int i : data.split.val) {
        const Frame& f = data.frames.at(static_cast<std::size_t>(i));
        const Image img = quantize_8bit(render(model, f.camera, f.t, model.config.eval_branch).color);
        scores.push_back({i, psnr(img, f.image), ssim(img, f.image)});
    }
    return scores;
}

double validation_psnr(const ModelState& model, const Dataset& data) {
    const std::vector<FrameScore> scores = evaluate_frames(model, data);
    if (scores.empty()) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    double sum = 0.0;
    for (const FrameScore& s : scores) {
        sum += s.psnr;
    }
    return sum / static_cast<double>(scores.size());
}

namespace {

std::string csv_real(double v) {
    if (std::isnan(v)) {
        return "";
    }
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    std::ostringstream s;
    s.precision(10);
    s << v;
    return s.str();
}

} // namespace

FitResult fit(ModelState model, const Dataset& data, const TrainConfig& config, std::ostream* log) {
    FitResult result;
    if (config.iterations <= 0) {
        result.best_val_psnr = validation_psnr(model, data);
        result.model = std::move(model);
        return result;
    }
    if (data.split.train.empty()) {
        throw std::invalid_argument("fit: the dataset has no training frames");
    }
    if (log) {
        *log << "iteration,photometric,normal,total,val_psnr\n";
    }
    Adam adam(model);
    Rng rng(config.seed ^ 0x5eedf17ULL);
    std::vector<int> order;
    std::size_t cursor = 0;
    const double warmup_iters = std::max(1.0, config.normal_warmup * config.iterations);
    result.best_val_psnr = -std::numeric_limits<double>::infinity();
    bool have_best = false;

    for (int it = 1; it <= config.iterations; ++it) {
        if (cursor == order.size()) {
            order = data.split.train;
            for (std::size_t i = order.size(); i > 1; --i) {
                std::swap(order[i - 1], order[rng.index(i)]);
            }
            cursor = 0;
        }
        const Frame& frame = data.frames.at(static_cast<std::size_t>(order[cursor++]));
        const double ramp = config.normal_warmup > 0.0 ? std::min(1.0, it / warmup_iters) : 1.0;
        LogRow row;
        row.iteration = it;
        row.loss = train_step(model, adam, frame, config, config.lambda_normal * ramp);
        row.val_psnr = std::numeric_limits<double>::quiet_NaN();

        if (config.prune_interval > 0 && it % config.prune_interval == 0) {
            const auto keep = prune_surfels(model, config.prune_threshold);
            adam.select_surfels(keep);
        }
        const bool validate = it == config.iterations || (config.val_interval > 0 && it % config.val_interval == 0);
        if (validate) {
            ModelState candidate = model;
            interpolate_latents(candidate, data.split.train);
            row.val_psnr = validation_psnr(candidate, data);
            const bool better = !std::isnan(row.val_psnr) && row.val_psnr > result.best_val_psnr;
            if (!have_best || better || (std::isnan(row.val_psnr) && it == config.iterations)) {
                result.best_val_psnr = row.val_psnr;
                result.best_iteration = it;
                result.model = std::move(candidate);
                have_best = true;
            }
        }
        if (log) {
            *log << it << ',' << csv_real(row.loss.photometric) << ',' << csv_real(row.loss.normal) << ','
                 << csv_real(row.loss.total) << ',' << csv_real(row.val_psnr) << '\n';
        }
        result.log.push_back(row);
    }
    return result;
}

} // namespace dgs
