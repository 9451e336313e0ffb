#pragma once

#include <span>
#include <vector>

#include "dgs/geom.hpp"
#include "dgs/model.hpp"

namespace dgs {

/// Bone in the warped state: (V_b^t | c_b^t).
struct BoneState {
    Vec3 center = Vec3::Zero();
    Mat3 rotation = Mat3::Identity();
};

struct WarpSample {
    SE3Transform transform;
    VecX weights;
    std::vector<SE3Transform> bone_transforms;
};

/// Warped-state geometry of one primitive.
struct WarpedSurfel {
    Vec3 center = Vec3::Zero();
    Mat3 rotation = Mat3::Identity();
    Vec3 scale = Vec3::Zero();
    /// True for rank-2 surfels (third scale exactly zero or at the clamp floor).
    bool planar = true;
};

/// Frame index -> t in [0, 1].
double normalized_time(int frame, int frame_count);

/// Latent of a bone at normalized time t: the frame's own row at integer
/// frames, linear interpolation between neighbouring rows otherwise.
VecX latent_at(const Bone& bone, double t);
/// Accumulates the gradient of latent_at into `grad_latents`.
void latent_at_vjp(RowMatX& grad_latents, double t, const VecX& grad);

/// J_b^t = R(MLP(latent; encode(x, t))), returned as a unit dual quaternion.
DualQuaternion bone_transform(const WarpFieldMLP& mlp, const VecX& latent, const Vec3& x, double t);

/// Applies J to a bone's static frame: c^t = R c* + T, V^t = R V*.
BoneState transform_bone(const SE3Transform& j, const Vec3& center, const Mat3& rotation);

/// Warped bone states at time t, each bone's field queried at its own static center.
std::vector<BoneState> bones_at_time(const ModelState& model, double t);

/// softmax(-m_b / 2) with m_b = (x - c_b)ᵀ V_bᵀ Λ_b V_b (x - c_b).
VecX skinning_weights(const Vec3& x, std::span<const BoneState> bones, std::span<const Vec3> precision);

WarpSample point_warp(const ModelState& model, const Vec3& x, double t);

/// Base: (R̃p* + T̃, R̃R*, diag(s_u, s_v, 0)).
/// Refined: same center, R̃ ΔR R*, clamp(S* + ΔS*).
WarpedSurfel warp_surfel(const Surfel& s, const SE3Transform& j, Branch branch);

/// Field evaluated for every surfel of a model at one time, with the
/// intermediates the reverse pass needs.
struct WarpEvaluation {
    double t = 0.0;
    enum class Mode { Identity, Track, Field } mode = Mode::Identity;
    std::vector<VecX> latents;            // per bone (Field mode)
    std::vector<BoneState> bones;         // warped bone states
    std::vector<DualQuaternion> bone_dq;  // unit J_b at the bone's own center
    std::vector<Vec8> bone_raw;           // pre-normalization field output
    RowMatX weights;                      // K x B
    std::vector<Vec8> point_raw;          // K*B, row-major by surfel
    std::vector<std::size_t> pivot;       // K
    std::vector<Vec8> blend;              // K, weighted sum before normalization
    std::vector<SE3Transform> transforms; // K
};

WarpEvaluation evaluate_warp(const ModelState& model, double t);

/// Reverse pass: given dL/dR̃ and dL/dT̃ per surfel, accumulates gradients
/// for surfel centers, bones, latents and MLP weights into `grad`.
void warp_backward(const ModelState& model, const WarpEvaluation& eval, std::span<const Mat3> grad_rotation,
                   std::span<const Vec3> grad_translation, ModelState& grad);

} // namespace dgs
