#include "dgs/model.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "dgs/error.hpp"
#include "dgs/rng.hpp"
#include "dgs/sh.hpp"

namespace dgs {

std::string_view to_string(Branch b) { return b == Branch::Base ? "base" : "refined"; }

Branch branch_from_string(std::string_view s) {
    if (s == "base") {
        return Branch::Base;
    }
    if (s == "refined") {
        return Branch::Refined;
    }
    throw std::invalid_argument("unknown branch '" + std::string(s) + "'");
}

std::string_view to_string(ParamClass c) {
    switch (c) {
    case ParamClass::SurfelCenter: return "surfel_center";
    case ParamClass::SurfelRotation: return "surfel_rotation";
    case ParamClass::SurfelScale: return "surfel_scale";
    case ParamClass::SurfelOpacity: return "surfel_opacity";
    case ParamClass::SurfelColor: return "surfel_sh";
    case ParamClass::RefineRotation: return "refine_rotation";
    case ParamClass::RefineScale: return "refine_scale";
    case ParamClass::BoneCenter: return "bone_center";
    case ParamClass::BoneRotation: return "bone_rotation";
    case ParamClass::BoneLogPrecision: return "bone_log_precision";
    case ParamClass::Latent: return "latent";
    case ParamClass::MlpWeights: return "mlp_weights";
    }
    return "unknown";
}

Vec3 Surfel::refined_scale() const {
    const Vec2 s = scale();
    Vec3 out(s.x() + refine_scale.x(), s.y() + refine_scale.y(), 0.0 + refine_scale.z());
    return out.cwiseMax(kMinRefinedScale);
}

DualQuaternion BoneTrack::at(std::size_t bone, double t) const {
    if (frames.empty()) {
        return {};
    }
    if (frames.size() == 1) {
        return frames.front().at(bone);
    }
    const double f = std::clamp(t, 0.0, 1.0) * static_cast<double>(frames.size() - 1);
    const double nearest = std::round(f);
    if (std::abs(f - nearest) < 1e-9) {
        return frames.at(static_cast<std::size_t>(nearest)).at(bone);
    }
    const auto i0 = static_cast<std::size_t>(std::floor(f));
    const double a = f - static_cast<double>(i0);
    const DualQuaternion& q0 = frames[i0].at(bone);
    DualQuaternion q1 = frames[i0 + 1].at(bone);
    if (q0.real.dot(q1.real) < 0.0) {
        q1.real = -q1.real;
        q1.dual = -q1.dual;
    }
    return normalize_dualquat({(1.0 - a) * q0.real + a * q1.real, (1.0 - a) * q0.dual + a * q1.dual});
}

ModelState ModelState::zeros_like() const {
    ModelState out;
    out.config = config;
    out.surfels.resize(surfels.size());
    for (std::size_t k = 0; k < surfels.size(); ++k) {
        Surfel& s = out.surfels[k];
        s.rotation.setZero();
        s.refine_rotation.setZero();
        s.sh.assign(surfels[k].sh.size(), 0.0);
    }
    out.bones.resize(bones.size());
    for (std::size_t b = 0; b < bones.size(); ++b) {
        out.bones[b].rotation.setZero();
        out.bones[b].latents = RowMatX::Zero(bones[b].latents.rows(), bones[b].latents.cols());
    }
    out.mlp = mlp.zeros_like();
    return out;
}

Vec3 surfel_point(const Surfel& s, const Vec2& u) {
    const Mat3 r = s.frame();
    const Vec2 sc = s.scale();
    return s.center + sc.x() * r.col(0) * u.x() + sc.y() * r.col(1) * u.y();
}

std::vector<ParamBlock> param_blocks(ModelState& m) {
    std::vector<ParamBlock> out;
    out.reserve(m.surfels.size() * 7 + m.bones.size() * 4 + m.mlp.layers().size() * 2);
    for (Surfel& s : m.surfels) {
        out.push_back({ParamClass::SurfelCenter, s.center.data(), 3});
        out.push_back({ParamClass::SurfelRotation, s.rotation.data(), 4});
        out.push_back({ParamClass::SurfelScale, s.log_scale.data(), 2});
        out.push_back({ParamClass::SurfelOpacity, &s.opacity_logit, 1});
        out.push_back({ParamClass::SurfelColor, s.sh.data(), s.sh.size()});
        out.push_back({ParamClass::RefineRotation, s.refine_rotation.data(), 4});
        out.push_back({ParamClass::RefineScale, s.refine_scale.data(), 3});
    }
    for (Bone& b : m.bones) {
        out.push_back({ParamClass::BoneCenter, b.center.data(), 3});
        out.push_back({ParamClass::BoneRotation, b.rotation.data(), 4});
        out.push_back({ParamClass::BoneLogPrecision, b.log_precision.data(), 3});
        out.push_back({ParamClass::Latent, b.latents.data(), static_cast<std::size_t>(b.latents.size())});
    }
    for (DenseLayer& l : m.mlp.layers()) {
        out.push_back({ParamClass::MlpWeights, l.weight.data(), static_cast<std::size_t>(l.weight.size())});
        out.push_back({ParamClass::MlpWeights, l.bias.data(), static_cast<std::size_t>(l.bias.size())});
    }
    return out;
}

namespace {

Vec3 axis_precision(std::span<const Vec3> pts) {
    Vec3 mean = Vec3::Zero();
    for (const Vec3& p : pts) {
        mean += p;
    }
    mean /= static_cast<double>(pts.size());
    Vec3 var = Vec3::Zero();
    for (const Vec3& p : pts) {
        var += (p - mean).cwiseAbs2();
    }
    var /= static_cast<double>(pts.size());
    return (var.array() + 1e-4).inverse();
}

/// Indices of the k nearest other points, nearest first.
std::vector<std::size_t> nearest(std::span<const Vec3> points, std::size_t i, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> d;
    d.reserve(points.size());
    for (std::size_t j = 0; j < points.size(); ++j) {
        if (j != i) {
            d.emplace_back((points[j] - points[i]).squaredNorm(), j);
        }
    }
    k = std::min(k, d.size());
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    std::vector<std::size_t> out(k);
    for (std::size_t j = 0; j < k; ++j) {
        out[j] = d[j].second;
    }
    return out;
}

} // namespace

std::vector<Bone> init_bones_kmeans(std::span<const Vec3> points, int count, std::uint64_t seed) {
    if (count < 1 || points.size() < static_cast<std::size_t>(count)) {
        throw InsufficientPoints("init_bones_kmeans: fewer points than bones");
    }
    const std::size_t n = points.size();
    const auto k = static_cast<std::size_t>(count);
    Rng rng(seed);

    // k-means++ seeding
    std::vector<Vec3> centers;
    centers.push_back(points[rng.index(n)]);
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    while (centers.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            dist[i] = std::min(dist[i], (points[i] - centers.back()).squaredNorm());
            total += dist[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            double r = rng.uniform() * total;
            for (pick = 0; pick + 1 < n; ++pick) {
                r -= dist[pick];
                if (r < 0.0) {
                    break;
                }
            }
        } else {
            pick = rng.index(n);
        }
        centers.push_back(points[pick]);
    }

    std::vector<std::size_t> assign(n, k);
    for (int iter = 0; iter < 300; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double d = (points[i] - centers[c]).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        std::vector<Vec3> sum(k, Vec3::Zero());
        std::vector<std::size_t> cnt(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            sum[assign[i]] += points[i];
            ++cnt[assign[i]];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (cnt[c] > 0) {
                centers[c] = sum[c] / static_cast<double>(cnt[c]);
                continue;
            }
            // Empty cluster: move it to the point farthest from its center.
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = (points[i] - centers[assign[i]]).squaredNorm();
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            centers[c] = points[far];
            assign[far] = c;
            changed = true;
        }
        if (!changed) {
            break;
        }
    }

    std::vector<Bone> bones(k);
    for (std::size_t c = 0; c < k; ++c) {
        std::vector<Vec3> members;
        for (std::size_t i = 0; i < n; ++i) {
            if (assign[i] == c) {
                members.push_back(points[i]);
            }
        }
        bones[c].center = centers[c];
        bones[c].log_precision = axis_precision(members).array().log();
    }
    return bones;
}

std::vector<Bone> init_bones_random(std::span<const Vec3> points, int count, std::uint64_t seed) {
    if (count < 1 || points.empty()) {
        throw InsufficientPoints("init_bones_random: no points");
    }
    Vec3 lo = points[0];
    Vec3 hi = points[0];
    for (const Vec3& p : points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const Vec3 log_prec = axis_precision(points).array().log();
    Rng rng(seed);
    std::vector<Bone> bones(static_cast<std::size_t>(count));
    for (Bone& b : bones) {
        for (int c = 0; c < 3; ++c) {
            b.center[c] = rng.uniform(lo[c], hi[c]);
        }
        b.log_precision = log_prec;
    }
    return bones;
}

void init_latents(std::vector<Bone>& bones, int frames, int dim, std::uint64_t seed, double scale) {
    Rng rng(seed);
    for (Bone& b : bones) {
        VecX code(dim);
        for (int i = 0; i < dim; ++i) {
            code[i] = scale * rng.normal();
        }
        b.latents.resize(frames, dim);
        for (int f = 0; f < frames; ++f) {
            b.latents.row(f) = code.transpose();
        }
    }
}

std::vector<Surfel> init_surfels_from_points(std::span<const Vec3> points, std::span<const Vec3> normals,
                                             std::span<const Vec3> colors, int sh_degree) {
    if (points.size() != normals.size() || points.size() != colors.size()) {
        throw std::invalid_argument("init_surfels_from_points: points, normals and colors differ in length");
    }
    if (points.size() < 4) {
        throw InsufficientPoints("init_surfels_from_points: need at least 4 points");
    }
    const int coeffs = sh_coeff_count(sh_degree);
    std::vector<Surfel> out(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        Surfel& s = out[i];
        s.center = points[i];
        s.rotation = quat_from_z_to(normals[i]).vec();
        double mean_d = 0.0;
        for (std::size_t j : nearest(points, i, 3)) {
            mean_d += (points[j] - points[i]).norm();
        }
        mean_d /= 3.0;
        s.log_scale = Vec2::Constant(std::log(mean_d));
        s.opacity_logit = 0.0;
        s.sh.assign(static_cast<std::size_t>(3 * coeffs), 0.0);
        for (int c = 0; c < 3; ++c) {
            s.sh[static_cast<std::size_t>(c)] = rgb_to_sh_dc(colors[i][c]);
        }
    }
    return out;
}

std::vector<Vec3> estimate_normals(std::span<const Vec3> points, const Vec3& viewpoint, int k) {
    std::vector<Vec3> out(points.size(), Vec3::UnitZ());
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto nb = nearest(points, i, static_cast<std::size_t>(k));
        Vec3 mean = points[i];
        for (std::size_t j : nb) {
            mean += points[j];
        }
        mean /= static_cast<double>(nb.size() + 1);
        Mat3 cov = (points[i] - mean) * (points[i] - mean).transpose();
        for (std::size_t j : nb) {
            cov += (points[j] - mean) * (points[j] - mean).transpose();
        }
        Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
        Vec3 n = eig.eigenvectors().col(0).normalized();
        if (n.dot(viewpoint - points[i]) < 0.0) {
            n = -n;
        }
        out[i] = n;
    }
    return out;
}

void select_surfels(ModelState& m, std::span<const std::size_t> keep) {
    std::vector<Surfel> kept;
    kept.reserve(keep.size());
    for (std::size_t k : keep) {
        kept.push_back(std::move(m.surfels[k]));
    }
    m.surfels = std::move(kept);
}

std::vector<std::size_t> prune_surfels(ModelState& m, double min_opacity) {
    std::vector<std::size_t> keep;
    for (std::size_t k = 0; k < m.surfels.size(); ++k) {
        if (!(m.surfels[k].opacity() < min_opacity)) {
            keep.push_back(k);
        }
    }
    select_surfels(m, keep);
    return keep;
}

} // namespace dgs
