#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "dgs/geom.hpp"
#include "dgs/mlp.hpp"
#include "dgs/types.hpp"

namespace dgs {

enum class Branch { Base, Refined };

std::string_view to_string(Branch b);
Branch branch_from_string(std::string_view s);

/// Smallest scale a refined primitive axis may take.
inline constexpr double kMinRefinedScale = 1e-6;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// Static-state Gaussian surfel plus its refinement terms. Rotation
/// quaternions are stored raw and normalized on use; scales are stored as
/// logarithms and opacity as a logit.
struct Surfel {
    Vec3 center = Vec3::Zero();
    Vec4 rotation{1.0, 0.0, 0.0, 0.0};
    Vec2 log_scale = Vec2::Zero();
    double opacity_logit = 0.0;
    std::vector<double> sh; // coefficient-major, 3 channels per coefficient
    Vec4 refine_rotation{1.0, 0.0, 0.0, 0.0};
    Vec3 refine_scale = Vec3::Zero();

    Mat3 frame() const { return quat_to_rotmat(rotation); }
    Vec3 tangent_u() const { return frame().col(0); }
    Vec3 tangent_v() const { return frame().col(1); }
    Vec3 normal() const { return frame().col(2); }
    Vec2 scale() const { return log_scale.array().exp(); }
    double opacity() const { return sigmoid(opacity_logit); }
    /// (s_u, s_v, 0) + refine_scale, clamped from below.
    Vec3 refined_scale() const;
};

/// Gaussian-ellipsoid bone with per-frame latent codes (one row per frame).
struct Bone {
    Vec3 center = Vec3::Zero();
    Vec4 rotation{1.0, 0.0, 0.0, 0.0};
    Vec3 log_precision = Vec3::Zero();
    RowMatX latents;

    Mat3 frame() const { return quat_to_rotmat(rotation); }
    Vec3 precision() const { return log_precision.array().exp(); }
};

/// Keyframed per-bone motion. Used for ground-truth models whose bone
/// motion is known analytically instead of produced by the MLP.
struct BoneTrack {
    std::vector<std::vector<DualQuaternion>> frames; // [frame][bone], unit

    /// Unit dual quaternion of `bone` at normalized time t, linearly
    /// interpolated between keyframes and renormalized.
    DualQuaternion at(std::size_t bone, double t) const;
};

struct ModelConfig {
    int sh_degree = 2;
    int bone_count = 25;
    int frame_count = 1;
    MlpShape mlp{};
    double lowpass_sigma = 0.7;
    Vec3 background = Vec3::Zero();
    Branch eval_branch = Branch::Refined;
    /// When set the warp is the identity and the field is never evaluated.
    bool warp_frozen = false;
};

struct ModelState {
    ModelConfig config;
    std::vector<Surfel> surfels;
    std::vector<Bone> bones;
    WarpFieldMLP mlp;
    std::optional<BoneTrack> track;

    /// Same shapes with every parameter zero; used for gradients and
    /// optimizer moments. The track is not copied.
    ModelState zeros_like() const;
};

/// P*(u) = p* + s_u t_u u + s_v t_v v.
Vec3 surfel_point(const Surfel& s, const Vec2& u);

enum class ParamClass {
    SurfelCenter,
    SurfelRotation,
    SurfelScale,
    SurfelOpacity,
    SurfelColor,
    RefineRotation,
    RefineScale,
    BoneCenter,
    BoneRotation,
    BoneLogPrecision,
    Latent,
    MlpWeights,
};

inline constexpr std::size_t kParamClassCount = 12;

std::string_view to_string(ParamClass c);

struct ParamBlock {
    ParamClass cls;
    double* data;
    std::size_t size;
};

/// Every trainable scalar of the model, grouped in a fixed order. Two models
/// with the same shapes produce aligned block lists.
std::vector<ParamBlock> param_blocks(ModelState& m);

/// Lloyd k-means (k-means++ seeding) over the points. Bones get identity
/// rotation and per-axis precision 1 / (cluster std² + 1e-4). Latents are
/// left empty. Throws InsufficientPoints if |points| < count.
std::vector<Bone> init_bones_kmeans(std::span<const Vec3> points, int count, std::uint64_t seed);

/// Bones at uniformly random positions inside the bounding box of the
/// points, all sharing the precision implied by the global spread.
std::vector<Bone> init_bones_random(std::span<const Vec3> points, int count, std::uint64_t seed);

/// Gives every bone `frames` latent rows of size `dim`. All frames of a bone
/// start from the same N(0, scale²) draw.
void init_latents(std::vector<Bone>& bones, int frames, int dim, std::uint64_t seed, double scale = 0.1);

/// Surfels centered at the points with their normal along `normals`, scale
/// equal to the mean distance to the 3 nearest neighbours, opacity 0.5 and
/// DC color from `colors`. Throws InsufficientPoints if fewer than 4 points.
std::vector<Surfel> init_surfels_from_points(std::span<const Vec3> points, std::span<const Vec3> normals,
                                             std::span<const Vec3> colors, int sh_degree);

/// PCA normals over the k nearest neighbours, oriented toward `viewpoint`.
std::vector<Vec3> estimate_normals(std::span<const Vec3> points, const Vec3& viewpoint, int k = 8);

/// Removes surfels with opacity below the threshold; returns the kept indices.
std::vector<std::size_t> prune_surfels(ModelState& m, double min_opacity);

/// Keeps only the surfels listed (same order) in a parallel structure.
void select_surfels(ModelState& m, std::span<const std::size_t> keep);

} // namespace dgs
