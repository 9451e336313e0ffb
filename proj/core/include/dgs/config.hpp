#pragma once

#include <filesystem>
#include <ostream>
#include <string>

#include "dgs/init.hpp"
#include "dgs/optim.hpp"

namespace dgs {

/// Everything `fit` needs besides the data.
struct FitSettings {
    TrainConfig train;
    InitOptions init;
};

/// JSON object; every key is optional:
///   iterations, lambda_normal, normal_warmup, lambda_ssim, refined_weight,
///   prune_threshold, prune_interval, val_interval, seed,
///   learning_rates: {<class name>: value, ...},
///   bone_count, latent_dim, pos_freqs, time_freqs, hidden_layers,
///   hidden_width, sh_degree, warp_frozen, pca_normals, latent_scale,
///   background: [r, g, b].
/// Throws ParseError.
FitSettings fit_settings_from_json(const std::string& text);
FitSettings load_fit_settings(const std::filesystem::path& path);

struct Ablations {
    bool no_normal_reg = false; // lambda_normal = 0
    bool no_refine = false;     // refined branch neither trained nor evaluated
    bool no_init = false;       // random bone centers
};

void apply_ablations(FitSettings& settings, const Ablations& ablations);

/// Sets both the training and the initialization seed.
void set_seed(FitSettings& settings, std::uint64_t seed);

/// initialize_model followed by fit. A refined_weight of 0 also switches
/// evaluation to the base branch.
FitResult run_fit(const Dataset& data, const FitSettings& settings, std::ostream* log = nullptr);

} // namespace dgs
