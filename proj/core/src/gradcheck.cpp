#include "dgs/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "dgs/rng.hpp"
#include "dgs/sh.hpp"

namespace dgs {

namespace {

Vec4 random_small_rotation(Rng& rng, double max_angle) {
    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    return UnitQuaternion::axis_angle(axis, rng.uniform(-max_angle, max_angle)).vec();
}

Vec4 random_rotation(Rng& rng) {
    return Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized();
}

ModelState draw_scene(GradcheckSceneKind kind, Rng& rng) {
    const bool tiny = kind == GradcheckSceneKind::Tiny;
    const int surfels = tiny ? 6 : 20;
    const int bones = tiny ? 2 : 3;
    const int frames = 3;

    ModelState m;
    m.config.sh_degree = 2;
    m.config.bone_count = bones;
    m.config.frame_count = frames;
    m.config.mlp = MlpShape{4, 2, 1, 2, 8};
    m.config.background = Vec3(0.1, 0.2, 0.3);
    m.mlp = WarpFieldMLP(m.config.mlp, rng.next());
    DenseLayer& last = m.mlp.layers().back();
    for (Eigen::Index i = 0; i < last.weight.size(); ++i) {
        last.weight.data()[i] = rng.uniform(-0.05, 0.05);
    }
    for (Eigen::Index i = 0; i < last.bias.size(); ++i) {
        last.bias[i] = rng.uniform(-0.05, 0.05);
    }

    // Depth layers grow geometrically and sizes scale with depth, so every
    // surfel covers the whole 8x8 view and depth order never changes.
    const double ratio = tiny ? 1.3 : 1.12;
    const int coeffs = 3 * sh_coeff_count(m.config.sh_degree);
    for (int k = 0; k < surfels; ++k) {
        Surfel s;
        const double depth = 2.0 * std::pow(ratio, k);
        s.center = Vec3(depth * rng.uniform(-0.2, 0.2), depth * rng.uniform(-0.2, 0.2), depth);
        const Vec4 spin = UnitQuaternion::axis_angle(Vec3::UnitZ(), rng.uniform(0.0, 6.283185307179586)).vec();
        s.rotation = quat_mul(random_small_rotation(rng, 0.07), spin);
        s.log_scale = Vec2(std::log(depth * rng.uniform(0.35, 0.5)), std::log(depth * rng.uniform(0.35, 0.5)));
        s.opacity_logit = logit(rng.uniform(tiny ? 0.25 : 0.08, tiny ? 0.5 : 0.2));
        s.sh.resize(static_cast<std::size_t>(coeffs));
        for (int i = 0; i < coeffs; ++i) {
            s.sh[static_cast<std::size_t>(i)] = i < 3 ? rng.uniform(-1.0, 1.0) : rng.uniform(-0.3, 0.3);
        }
        s.refine_rotation = random_small_rotation(rng, 0.05);
        const Vec2 sc = s.scale();
        s.refine_scale = Vec3(sc.x() * rng.uniform(-0.05, 0.05), sc.y() * rng.uniform(-0.05, 0.05),
                              sc.x() * rng.uniform(0.02, 0.08));
        m.surfels.push_back(std::move(s));
    }
    for (int b = 0; b < bones; ++b) {
        Bone bone;
        bone.center = Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(2.0, tiny ? 7.0 : 18.0));
        bone.rotation = random_rotation(rng);
        bone.log_precision = Vec3(rng.uniform(-2.5, -1.0), rng.uniform(-2.5, -1.0), rng.uniform(-2.5, -1.0));
        bone.latents.resize(frames, m.config.mlp.latent_dim);
        for (Eigen::Index i = 0; i < bone.latents.size(); ++i) {
            bone.latents.data()[i] = 0.5 * rng.normal();
        }
        m.bones.push_back(std::move(bone));
    }
    return m;
}

/// True when every pixel is a safe distance away from the objective's
/// non-smooth points.
bool scene_is_smooth(const GradcheckScene& s) {
    const WarpEvaluation warp = evaluate_warp(s.model, s.t);
    RenderOptions opts;
    opts.keep_trace = true;
    std::size_t valid = 0;
    for (Branch branch : {Branch::Base, Branch::Refined}) {
        const RenderOutput out = render_with_warp(s.model, s.camera, warp, branch, opts);
        for (std::size_t p = 0; p < out.records.size(); ++p) {
            const double a = out.alpha[p];
            if (std::abs(a - kNormalAlpha) < 0.05) {
                return false;
            }
            const auto& recs = out.records[p];
            double t = 1.0;
            for (std::size_t i = 0; i < recs.size(); ++i) {
                const IntersectionRecord& r = recs[i];
                if (r.gaussian < 10.0 * kGaussianCutoff || !r.object_term) {
                    return false;
                }
                if (r.color.minCoeff() < 1e-3) {
                    return false;
                }
                if (i > 0 && recs[i].depth - recs[i - 1].depth < 1e-2) {
                    return false;
                }
                t *= 1.0 - r.opacity * r.gaussian;
            }
            if (t < 10.0 * kMinTransmittance) {
                return false;
            }
            for (int c = 0; c < 3; ++c) {
                if (std::abs(out.color.data[3 * p + c] - s.target.data[3 * p + c]) < 1e-3) {
                    return false;
                }
            }
            if (branch == Branch::Base && out.normal_valid[p]) {
                ++valid;
            }
        }
    }
    return valid >= 4;
}

} // namespace

GradcheckSceneKind gradcheck_scene_from_string(std::string_view s) {
    if (s == "tiny") {
        return GradcheckSceneKind::Tiny;
    }
    if (s == "small") {
        return GradcheckSceneKind::Small;
    }
    throw std::invalid_argument("unknown gradcheck scene '" + std::string(s) + "' (expected tiny or small)");
}

GradcheckScene make_gradcheck_scene(GradcheckSceneKind kind, std::uint64_t seed) {
    Rng rng(seed);
    for (int attempt = 0; attempt < 1000; ++attempt) {
        GradcheckScene s;
        s.model = draw_scene(kind, rng);
        s.camera.width = 8;
        s.camera.height = 8;
        s.camera.fx = 8.0;
        s.camera.fy = 8.0;
        s.camera.cx = 4.0;
        s.camera.cy = 4.0;
        s.t = 0.3;
        s.weights = LossWeights{0.2, 1.0, 0.3};
        s.target = Image(8, 8);
        for (double& v : s.target.data) {
            v = rng.uniform();
        }
        if (scene_is_smooth(s)) {
            return s;
        }
    }
    throw std::runtime_error("make_gradcheck_scene: no smooth scene found");
}

double gradcheck_relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

double GradcheckReport::worst() const { return *std::max_element(max_error.begin(), max_error.end()); }

GradcheckReport gradcheck(const GradcheckScene& scene, double h, std::optional<ParamClass> only) {
    ModelState grad = scene.model.zeros_like();
    evaluate_objective(scene.model, scene.camera, scene.t, scene.target, scene.weights, &grad);

    ModelState probe = scene.model;
    auto params = param_blocks(probe);
    auto grads = param_blocks(grad);
    GradcheckReport report;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const ParamBlock& p = params[i];
        if (only && p.cls != *only) {
            continue;
        }
        const auto c = static_cast<std::size_t>(p.cls);
        for (std::size_t j = 0; j < p.size; ++j) {
            const double saved = p.data[j];
            p.data[j] = saved + h;
            const double up = evaluate_objective(probe, scene.camera, scene.t, scene.target, scene.weights, nullptr).total;
            p.data[j] = saved - h;
            const double down =
                evaluate_objective(probe, scene.camera, scene.t, scene.target, scene.weights, nullptr).total;
            p.data[j] = saved;
            const double numeric = (up - down) / (2.0 * h);
            report.max_error[c] = std::max(report.max_error[c], gradcheck_relative_error(grads[i].data[j], numeric));
            ++report.count[c];
        }
    }
    return report;
}

} // namespace dgs
