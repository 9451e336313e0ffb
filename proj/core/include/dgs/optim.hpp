#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <ostream>
#include <vector>

#include "dgs/dataset.hpp"
#include "dgs/model.hpp"
#include "dgs/render.hpp"

namespace dgs {

using LearningRates = std::array<double, kParamClassCount>;

LearningRates default_learning_rates();

struct TrainConfig {
    int iterations = 2000;
    LearningRates learning_rates = default_learning_rates();
    double lambda_normal = 0.05;
    /// Fraction of the run over which lambda_normal ramps up linearly.
    double normal_warmup = 0.1;
    double lambda_ssim = 0.2;
    /// Weight of the refined branch's photometric term; 0 disables the branch.
    double refined_weight = 1.0;
    double prune_threshold = 0.005;
    int prune_interval = 500;
    int val_interval = 250;
    std::uint64_t seed = 0;
};

struct LossReport {
    double photometric = 0.0; // photo_base + refined_weight * photo_refined
    double photo_base = 0.0;
    double photo_refined = 0.0;
    double normal = 0.0;
    double total = 0.0;
};

/// Loss weights for one evaluation of the training objective.
struct LossWeights {
    double lambda_ssim = 0.2;
    double refined_weight = 1.0;
    double lambda_normal = 0.05;
};

/// Evaluates the objective for one frame and, if `grad` is given (a
/// zeros_like buffer), accumulates its gradient.
LossReport evaluate_objective(const ModelState& model, const Camera& camera, double t, const Image& target,
                              const LossWeights& weights, ModelState* grad);

/// Bias-corrected Adam with one learning rate per parameter class. Moments
/// are kept in model-shaped buffers so they stay aligned under pruning.
class Adam {
public:
    explicit Adam(const ModelState& like, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(ModelState& model, ModelState& grad, const LearningRates& lr);
    void select_surfels(std::span<const std::size_t> keep);
    long steps() const { return steps_; }

private:
    ModelState m_;
    ModelState v_;
    double beta1_;
    double beta2_;
    double eps_;
    long steps_ = 0;
};

/// One optimizer step on one frame. Throws NonFiniteLoss.
LossReport train_step(ModelState& model, Adam& adam, const Frame& frame, const TrainConfig& config,
                      double lambda_normal);

/// Latent rows of frames not in `trained` are replaced by linear
/// interpolation between the nearest trained frames (or copied from the
/// nearest one at the ends).
void interpolate_latents(ModelState& model, std::span<const int> trained);

struct LogRow {
    int iteration = 0;
    LossReport loss;
    double val_psnr = 0.0; // NaN when not evaluated at this iteration
};

struct FitResult {
    ModelState model;
    std::vector<LogRow> log;
    double best_val_psnr = 0.0;
    int best_iteration = 0;
};

struct FrameScore {
    int frame = 0;
    double psnr = 0.0;
    double ssim = 0.0;
};

/// PSNR and SSIM of the model's evaluation branch on every held-out frame.
/// Renders are quantized to 8 bits first, like the stored frames.
std::vector<FrameScore> evaluate_frames(const ModelState& model, const Dataset& data);

/// Mean held-out PSNR (NaN without held-out frames).
double validation_psnr(const ModelState& model, const Dataset& data);

/// Runs train_step over seeded shuffles of the training frames, prunes
/// periodically and returns the model with the best validation PSNR.
/// If `log` is given, writes CSV rows iteration,photometric,normal,total,val_psnr.
FitResult fit(ModelState model, const Dataset& data, const TrainConfig& config, std::ostream* log = nullptr);

} // namespace dgs
