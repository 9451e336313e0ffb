#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "dgs/dataset.hpp"
#include "dgs/model.hpp"

namespace dgs {

enum class SceneKind { BendingBar, TwoBlob, OrbitingStatic };

std::string_view to_string(SceneKind k);
SceneKind scene_kind_from_string(std::string_view s);

struct SynthSpec {
    SceneKind kind = SceneKind::BendingBar;
    int frames = 32;
    int width = 64;
    int height = 64;
    /// Focal length in units of the image width.
    double focal = 1.2;
    double orbit_radius = 3.5;
    double orbit_elevation_deg = 25.0;
    double orbit_start_deg = -20.0;
    /// Azimuth covered by the whole sequence; 360 closes the loop.
    double orbit_sweep_deg = 40.0;
    /// Hinge angle in degrees (bending-bar) or vertical travel (two-blob).
    double amplitude = 30.0;
    /// Spacing of the ground-truth surfel grid.
    double spacing = 0.06;
    /// Standard deviation of the noise added to the initialization points.
    double point_noise = 0.003;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument for T < 8, a non-positive size or an
    /// amplitude that would move the object out of view.
    void validate() const;
};

/// Defaults per scene kind; the orbiting-static scene is 96 frames around a
/// full circle.
SynthSpec default_synth_spec(SceneKind kind);

/// JSON object with any subset of: kind, frames, width, height, focal,
/// orbit_radius, orbit_elevation_deg, orbit_start_deg, orbit_sweep_deg,
/// amplitude, spacing, point_noise, seed. Missing keys take the kind's
/// defaults. Throws ParseError.
SynthSpec synth_spec_from_json(const std::string& text);
SynthSpec load_synth_spec(const std::filesystem::path& path);

/// Camera of frame i looking at the origin.
Camera synth_camera(const SynthSpec& spec, int frame);

/// Known surfels and bones with analytic per-frame bone motion.
ModelState synth_ground_truth(const SynthSpec& spec);

struct SynthResult {
    Dataset dataset;
    ModelState ground_truth;
};

/// Renders every frame of the ground truth (refined branch, which equals
/// the base branch for flat surfels). Deterministic per seed.
SynthResult synth_generate(const SynthSpec& spec);

/// Dataset directory plus gt.json.
void write_synth(const std::filesystem::path& dir, const SynthResult& result);

inline constexpr const char* kGroundTruthFile = "gt.json";

} // namespace dgs
