#include "dgs/init.hpp"

#include <stdexcept>

namespace dgs {

ModelState initialize_model(const Dataset& data, const InitOptions& options) {
    if (data.frames.empty()) {
        throw std::invalid_argument("initialize_model: the dataset has no frames");
    }
    ModelState m;
    m.config.sh_degree = options.sh_degree;
    m.config.frame_count = data.frame_count();
    m.config.mlp = options.mlp;
    m.config.background = options.background;
    m.config.warp_frozen = options.warp_frozen;

    const Vec3 viewpoint = data.frames.front().camera.center();
    std::vector<Vec3> normals;
    if (options.pca_normals) {
        normals = estimate_normals(data.points, viewpoint);
    } else {
        normals.reserve(data.points.size());
        for (const Vec3& p : data.points) {
            const Vec3 d = viewpoint - p;
            normals.push_back(d.norm() > 0.0 ? Vec3(d.normalized()) : Vec3::UnitZ());
        }
    }
    m.surfels = init_surfels_from_points(data.points, normals, data.point_colors, options.sh_degree);

    if (!options.warp_frozen && options.bone_count > 0) {
        m.bones = options.random_bones ? init_bones_random(data.points, options.bone_count, options.seed)
                                       : init_bones_kmeans(data.points, options.bone_count, options.seed);
        init_latents(m.bones, m.config.frame_count, options.mlp.latent_dim, options.seed + 1, options.latent_scale);
        m.mlp = WarpFieldMLP(options.mlp, options.seed + 2);
    }
    m.config.bone_count = static_cast<int>(m.bones.size());
    return m;
}

} // namespace dgs
