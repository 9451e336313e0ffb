#include "dgs/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "dgs/checkpoint.hpp"
#include "dgs/error.hpp"
#include "dgs/rng.hpp"
#include "dgs/sh.hpp"
#include "dgs/warp.hpp"

namespace dgs {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kGtOpacity = 0.92;
constexpr double kGtScaleOverSpacing = 0.7;

// Bar: x in [-1, 1], square cross-section.
constexpr double kBarHalfLength = 1.0;
constexpr double kBarHalfWidth = 0.18;
constexpr double kBlobRadius = 0.35;
constexpr double kBlobOffset = 0.6;
constexpr double kSphereRadius = 0.8;

Vec3 texture(const Vec3& p) {
    return Vec3(0.5 + 0.3 * std::sin(4.0 * p.x() + 0.5), 0.5 + 0.3 * std::sin(3.0 * p.y() + 2.0 * p.x() + 1.0),
                0.5 + 0.3 * std::cos(3.0 * p.z() - 2.0 * p.x()));
}

Surfel make_surfel(const Vec3& center, const Vec3& normal, double spacing) {
    Surfel s;
    s.center = center;
    s.rotation = quat_from_z_to(normal).vec();
    s.log_scale = Vec2::Constant(std::log(kGtScaleOverSpacing * spacing));
    s.opacity_logit = logit(kGtOpacity);
    const Vec3 c = texture(center);
    s.sh = {rgb_to_sh_dc(c.x()), rgb_to_sh_dc(c.y()), rgb_to_sh_dc(c.z())};
    return s;
}

/// Cell-centered grid on one face of an axis-aligned box.
void add_face(std::vector<Surfel>& out, const Vec3& half, int axis, double sign, double spacing) {
    const int a = (axis + 1) % 3;
    const int b = (axis + 2) % 3;
    const int na = std::max(1, static_cast<int>(std::ceil(2.0 * half[a] / spacing)));
    const int nb = std::max(1, static_cast<int>(std::ceil(2.0 * half[b] / spacing)));
    Vec3 normal = Vec3::Zero();
    normal[axis] = sign;
    for (int i = 0; i < na; ++i) {
        for (int j = 0; j < nb; ++j) {
            Vec3 p;
            p[axis] = sign * half[axis];
            p[a] = -half[a] + (i + 0.5) * 2.0 * half[a] / na;
            p[b] = -half[b] + (j + 0.5) * 2.0 * half[b] / nb;
            out.push_back(make_surfel(p, normal, spacing));
        }
    }
}

/// Fibonacci lattice with roughly `spacing` between neighbours.
void add_sphere(std::vector<Surfel>& out, const Vec3& center, double radius, double spacing) {
    const int n = std::max(8, static_cast<int>(std::ceil(4.0 * std::numbers::pi * radius * radius / (spacing * spacing))));
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        const double y = 1.0 - 2.0 * (i + 0.5) / n;
        const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
        const Vec3 dir(r * std::cos(golden * i), y, r * std::sin(golden * i));
        out.push_back(make_surfel(center + radius * dir, dir, spacing));
    }
}

Bone make_bone(const Vec3& center, const Vec3& precision) {
    Bone b;
    b.center = center;
    b.log_precision = precision.array().log();
    return b;
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& value) {
    if (j.contains(key)) {
        value = j.at(key).get<T>();
    }
}

} // namespace

std::string_view to_string(SceneKind k) {
    switch (k) {
    case SceneKind::BendingBar:
        return "bending-bar";
    case SceneKind::TwoBlob:
        return "two-blob";
    case SceneKind::OrbitingStatic:
        return "orbiting-static";
    }
    return "?";
}

SceneKind scene_kind_from_string(std::string_view s) {
    for (SceneKind k : {SceneKind::BendingBar, SceneKind::TwoBlob, SceneKind::OrbitingStatic}) {
        if (s == to_string(k)) {
            return k;
        }
    }
    throw std::invalid_argument("unknown scene kind '" + std::string(s) + "'");
}

void SynthSpec::validate() const {
    if (frames < 8) {
        throw std::invalid_argument("synth: frame count must be at least 8");
    }
    if (width <= 0 || height <= 0 || focal <= 0.0 || orbit_radius <= 0.0 || spacing <= 0.0) {
        throw std::invalid_argument("synth: sizes, focal length, orbit radius and spacing must be positive");
    }
    if (point_noise < 0.0) {
        throw std::invalid_argument("synth: point noise must be non-negative");
    }
    const double limit = kind == SceneKind::BendingBar ? 60.0 : kind == SceneKind::TwoBlob ? 0.5 : 1e300;
    if (std::abs(amplitude) > limit) {
        throw std::invalid_argument("synth: amplitude would move the object out of view");
    }
}

SynthSpec default_synth_spec(SceneKind kind) {
    SynthSpec s;
    s.kind = kind;
    switch (kind) {
    case SceneKind::BendingBar:
        break;
    case SceneKind::TwoBlob:
        s.amplitude = 0.3;
        break;
    case SceneKind::OrbitingStatic:
        s.frames = 96;
        s.orbit_sweep_deg = 360.0;
        s.orbit_start_deg = 0.0;
        s.orbit_elevation_deg = 20.0;
        s.amplitude = 0.0;
        s.spacing = 0.08;
        break;
    }
    return s;
}

SynthSpec synth_spec_from_json(const std::string& text) {
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        if (!j.is_object()) {
            throw ParseError("synth spec must be a JSON object");
        }
        SynthSpec s = default_synth_spec(scene_kind_from_string(j.value("kind", std::string("bending-bar"))));
        read_opt(j, "frames", s.frames);
        read_opt(j, "width", s.width);
        read_opt(j, "height", s.height);
        read_opt(j, "focal", s.focal);
        read_opt(j, "orbit_radius", s.orbit_radius);
        read_opt(j, "orbit_elevation_deg", s.orbit_elevation_deg);
        read_opt(j, "orbit_start_deg", s.orbit_start_deg);
        read_opt(j, "orbit_sweep_deg", s.orbit_sweep_deg);
        read_opt(j, "amplitude", s.amplitude);
        read_opt(j, "spacing", s.spacing);
        read_opt(j, "point_noise", s.point_noise);
        read_opt(j, "seed", s.seed);
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("synth spec: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ParseError(std::string("synth spec: ") + e.what());
    }
}

SynthSpec load_synth_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    std::ostringstream text;
    text << in.rdbuf();
    return synth_spec_from_json(text.str());
}

Camera synth_camera(const SynthSpec& spec, int frame) {
    const bool closed = spec.orbit_sweep_deg >= 360.0;
    const double steps = closed ? spec.frames : std::max(1, spec.frames - 1);
    const double az = (spec.orbit_start_deg + spec.orbit_sweep_deg * frame / steps) * kDeg;
    const double el = spec.orbit_elevation_deg * kDeg;
    const Vec3 eye = spec.orbit_radius * Vec3(std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az));
    const Vec3 forward = (-eye).normalized();
    const Vec3 right = forward.cross(Vec3::UnitY()).normalized();
    const Vec3 down = forward.cross(right);

    Camera cam;
    cam.width = spec.width;
    cam.height = spec.height;
    cam.fx = spec.focal * spec.width;
    cam.fy = cam.fx;
    cam.cx = 0.5 * spec.width;
    cam.cy = 0.5 * spec.height;
    cam.world_to_camera.rotation.row(0) = right.transpose();
    cam.world_to_camera.rotation.row(1) = down.transpose();
    cam.world_to_camera.rotation.row(2) = forward.transpose();
    cam.world_to_camera.translation = -(cam.world_to_camera.rotation * eye);
    return cam;
}

ModelState synth_ground_truth(const SynthSpec& spec) {
    spec.validate();
    ModelState m;
    m.config.sh_degree = 0;
    m.config.frame_count = spec.frames;
    m.config.background = Vec3::Zero();

    std::vector<std::vector<SE3Transform>> motion(static_cast<std::size_t>(spec.frames));
    switch (spec.kind) {
    case SceneKind::BendingBar: {
        const Vec3 half(kBarHalfLength, kBarHalfWidth, kBarHalfWidth);
        for (int axis = 0; axis < 3; ++axis) {
            add_face(m.surfels, half, axis, 1.0, spec.spacing);
            add_face(m.surfels, half, axis, -1.0, spec.spacing);
        }
        m.bones.push_back(make_bone(Vec3(-0.5, 0.0, 0.0), Vec3(25.0, 1.0, 1.0)));
        m.bones.push_back(make_bone(Vec3(0.5, 0.0, 0.0), Vec3(25.0, 1.0, 1.0)));
        // The right half hinges about the z axis through the origin.
        for (int f = 0; f < spec.frames; ++f) {
            const double theta = spec.amplitude * kDeg * std::sin(2.0 * std::numbers::pi * normalized_time(f, spec.frames));
            SE3Transform hinge;
            hinge.rotation = quat_to_rotmat(UnitQuaternion::axis_angle(Vec3::UnitZ(), theta));
            motion[static_cast<std::size_t>(f)] = {SE3Transform::identity(), hinge};
        }
        break;
    }
    case SceneKind::TwoBlob: {
        add_sphere(m.surfels, Vec3(-kBlobOffset, 0.0, 0.0), kBlobRadius, spec.spacing);
        add_sphere(m.surfels, Vec3(kBlobOffset, 0.0, 0.0), kBlobRadius, spec.spacing);
        m.bones.push_back(make_bone(Vec3(-kBlobOffset, 0.0, 0.0), Vec3(25.0, 1.0, 1.0)));
        m.bones.push_back(make_bone(Vec3(kBlobOffset, 0.0, 0.0), Vec3(25.0, 1.0, 1.0)));
        for (int f = 0; f < spec.frames; ++f) {
            const double dy = spec.amplitude * std::sin(2.0 * std::numbers::pi * normalized_time(f, spec.frames));
            SE3Transform up;
            SE3Transform down;
            up.translation = Vec3(0.0, dy, 0.0);
            down.translation = Vec3(0.0, -dy, 0.0);
            motion[static_cast<std::size_t>(f)] = {up, down};
        }
        break;
    }
    case SceneKind::OrbitingStatic:
        add_sphere(m.surfels, Vec3::Zero(), kSphereRadius, spec.spacing);
        m.config.warp_frozen = true;
        break;
    }

    m.config.bone_count = static_cast<int>(m.bones.size());
    if (!m.bones.empty()) {
        BoneTrack track;
        for (const auto& frame : motion) {
            std::vector<DualQuaternion> dq;
            for (const SE3Transform& j : frame) {
                dq.push_back(se3_to_dualquat(j));
            }
            track.frames.push_back(std::move(dq));
        }
        m.track = std::move(track);
    }
    return m;
}

SynthResult synth_generate(const SynthSpec& spec) {
    SynthResult r;
    r.ground_truth = synth_ground_truth(spec);
    Dataset& d = r.dataset;
    for (int f = 0; f < spec.frames; ++f) {
        Frame frame;
        frame.index = f;
        frame.t = normalized_time(f, spec.frames);
        frame.camera = synth_camera(spec, f);
        frame.image = render(r.ground_truth, frame.camera, frame.t, Branch::Refined).color;
        d.frames.push_back(std::move(frame));
    }
    d.split = split_frames(spec.frames);

    Rng rng(spec.seed);
    // One surface sample per grid cell, jittered within the cell, so the
    // cloud does not coincide with the ground-truth surfels.
    for (const Surfel& s : r.ground_truth.surfels) {
        const Mat3 frame = s.frame();
        const Vec3 on_surface = s.center + 0.5 * spec.spacing * (rng.uniform(-1.0, 1.0) * frame.col(0) +
                                                                 rng.uniform(-1.0, 1.0) * frame.col(1));
        d.points.push_back(on_surface + spec.point_noise * Vec3(rng.normal(), rng.normal(), rng.normal()));
        d.point_colors.push_back(texture(on_surface));
    }
    return r;
}

void write_synth(const std::filesystem::path& dir, const SynthResult& result) {
    save_dataset(dir, result.dataset);
    save_checkpoint(result.ground_truth, dir / kGroundTruthFile);
}

} // namespace dgs
