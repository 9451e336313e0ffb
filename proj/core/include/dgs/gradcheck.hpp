#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

#include "dgs/optim.hpp"

namespace dgs {

enum class GradcheckSceneKind { Tiny, Small };

GradcheckSceneKind gradcheck_scene_from_string(std::string_view s);

/// A small fully specified training problem: 8x8 image, random target,
/// non-identity warp field, rank-3 refinement terms.
struct GradcheckScene {
    ModelState model;
    Camera camera;
    Image target;
    double t = 0.0;
    LossWeights weights;
};

/// Tiny: 6 surfels, 2 bones. Small: 20 surfels, 3 bones. Candidate scenes
/// are redrawn until no pixel sits within a margin of a non-smooth point of
/// the objective (cutoff, alpha threshold, depth tie, filter switch, L1 kink).
GradcheckScene make_gradcheck_scene(GradcheckSceneKind kind, std::uint64_t seed = 1);

/// |a - b| / max(1e-8, |a| + |b|).
double gradcheck_relative_error(double analytic, double numeric);

struct GradcheckReport {
    std::array<double, kParamClassCount> max_error{};
    std::array<std::size_t, kParamClassCount> count{};

    double worst() const;
};

/// Central differences with step h for every scalar of the selected class
/// (all classes when empty).
GradcheckReport gradcheck(const GradcheckScene& scene, double h = 1e-4,
                          std::optional<ParamClass> only = std::nullopt);

} // namespace dgs
