#pragma once

#include <cstdint>

#include "dgs/dataset.hpp"
#include "dgs/model.hpp"

namespace dgs {

struct InitOptions {
    int bone_count = 4;
    MlpShape mlp{16, 4, 2, 2, 64};
    int sh_degree = 1;
    /// Orient surfels along PCA normals of the point cloud instead of
    /// facing the first camera.
    bool pca_normals = false;
    /// Bones at random positions instead of k-means centers.
    bool random_bones = false;
    /// Static scene: no bones and an identity warp.
    bool warp_frozen = false;
    double latent_scale = 0.1;
    Vec3 background = Vec3::Zero();
    std::uint64_t seed = 0;
};

/// Fresh model for a dataset: surfels centered on the point cloud and
/// facing the first camera (or along PCA normals), bones from the points, per-frame latents and an MLP whose
/// output decodes to the identity motion.
ModelState initialize_model(const Dataset& data, const InitOptions& options);

} // namespace dgs
