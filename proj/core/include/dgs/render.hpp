#pragma once

#include <optional>
#include <span>
#include <vector>

#include "dgs/image.hpp"
#include "dgs/model.hpp"
#include "dgs/warp.hpp"

namespace dgs {

/// Pinhole camera. Pixel (i, j) has its center at (i + 0.5, j + 0.5).
struct Camera {
    int width = 1;
    int height = 1;
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.5;
    double cy = 0.5;
    SE3Transform world_to_camera;

    Vec3 center() const { return -(world_to_camera.rotation.transpose() * world_to_camera.translation); }
    /// World-space direction through image point (px, py). Not unit length:
    /// its camera-space z component is 1, so ray parameters are depths.
    Vec3 direction(double px, double py) const;
    Vec3 to_camera(const Vec3& world) const { return world_to_camera.apply(world); }
    void validate() const;
};

struct Ray {
    Vec3 origin = Vec3::Zero();
    Vec3 direction = Vec3::UnitZ();
};

/// A warped primitive ready for rasterization (world space).
struct Primitive {
    Vec3 center = Vec3::Zero();
    Mat3 rotation = Mat3::Identity(); // columns: tangent u, tangent v, normal
    Vec3 scale = Vec3::Zero();
    bool planar = true;
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
};

struct IntersectionRecord {
    std::size_t index = 0;
    Vec2 u = Vec2::Zero();
    double depth = 0.0;
    double gaussian = 0.0;
    double weight = 0.0;            // omega, set by composite
    Vec3 normal = Vec3::UnitZ();    // oriented toward the camera
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
    double transmittance = 1.0;     // before this record, set by composite
    bool object_term = true;        // object Gaussian won the low-pass max
};

inline constexpr double kGaussianCutoff = 1e-4;
inline constexpr double kMinTransmittance = 1e-4;
inline constexpr double kParallelEps = 1e-9;
inline constexpr double kNormalAlpha = 0.5;

double gaussian_weight(const Vec2& u);

/// max(g_object, exp(-|dpx|² / (2 sigma²))).
double low_pass(double g_object, const Vec2& dpx, double sigma = 0.7);

/// Object-space intersection without the screen-space filter. Returns
/// nothing for parallel rays, hits behind the origin, or weights under the
/// cutoff.
std::optional<IntersectionRecord> ray_surfel_intersect(const Ray& ray, const Primitive& prim);

struct CompositeResult {
    Vec3 color = Vec3::Zero();
    double alpha = 0.0;
    double depth = 0.0;
    Vec3 normal = Vec3::Zero();
    std::size_t used = 0; // records consumed before termination
    double transmittance = 1.0;
};

/// Front-to-back compositing over depth-sorted records. Fills each used
/// record's weight and transmittance.
CompositeResult composite(std::span<IntersectionRecord> records, const Vec3& background);

struct RenderOptions {
    bool keep_trace = false;
};

struct RenderOutput {
    int width = 0;
    int height = 0;
    Image color;
    std::vector<double> alpha;
    std::vector<double> depth;
    std::vector<Vec3> rendered_normal;
    std::vector<Vec3> surface_normal;
    std::vector<unsigned char> normal_valid;

    // Kept when RenderOptions::keep_trace is set.
    Branch branch = Branch::Refined;
    std::vector<Primitive> primitives;
    std::vector<WarpedSurfel> warped;
    std::vector<std::vector<IntersectionRecord>> records; // per pixel, composited prefix only
};

/// Warped primitives of every surfel for a given warp.
std::vector<Primitive> build_primitives(const ModelState& model, const WarpEvaluation& warp, const Camera& camera,
                                        Branch branch, std::vector<WarpedSurfel>* warped = nullptr);

RenderOutput render(const ModelState& model, const Camera& camera, double t, Branch branch,
                    const RenderOptions& options = {});
RenderOutput render_with_warp(const ModelState& model, const Camera& camera, const WarpEvaluation& warp,
                              Branch branch, const RenderOptions& options = {});

/// Back-projects depth and takes central differences. Pixels whose own or
/// 4-neighbour alpha is below 0.5 (or that lack a neighbour) get a zero
/// normal and valid = 0. Normals face the camera.
void surface_normal_from_depth(std::span<const double> depth, std::span<const double> alpha, const Camera& camera,
                               std::vector<Vec3>& normal, std::vector<unsigned char>& valid);

/// Mean over all pixels of sum_k omega_k (1 - n_k . N); invalid pixels add 0.
/// Needs a trace.
double normal_loss(const RenderOutput& out);

/// Per-pixel upstream gradients. Empty vectors mean zero.
struct PixelGradients {
    std::vector<Vec3> color;
    std::vector<double> alpha;
    std::vector<double> depth;
    /// Coefficient of sum_k omega_k (1 - n_k . N) at each pixel.
    std::vector<double> normal_weight;
};

/// Adds scale * d(normal_loss) to `grad`: the per-record part goes into
/// normal_weight and the surface-normal part into depth.
void normal_loss_backward(const RenderOutput& out, const Camera& camera, double scale, PixelGradients& grad);

/// Reverse pass of render_with_warp. Gradients for static surfel parameters
/// go into `grad`; gradients w.r.t. each surfel's warp rotation and
/// translation are added to grad_rotation / grad_translation (sized K).
void render_backward(const ModelState& model, const Camera& camera, const WarpEvaluation& warp,
                     const RenderOutput& out, const PixelGradients& pixel_grad, ModelState& grad,
                     std::vector<Mat3>& grad_rotation, std::vector<Vec3>& grad_translation);

} // namespace dgs
