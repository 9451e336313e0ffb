#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "dgs/image.hpp"
#include "dgs/render.hpp"

namespace dgs {

struct Split {
    std::vector<int> train;
    std::vector<int> val;
};

/// Every fourth frame trains; the frame midway between two consecutive
/// training frames is held out.
Split split_frames(int frame_count);

struct Frame {
    int index = 0;
    double t = 0.0;
    Camera camera;
    Image image;
};

struct Dataset {
    std::vector<Frame> frames;
    Split split;
    /// Initialization cloud: surface samples and their colors.
    std::vector<Vec3> points;
    std::vector<Vec3> point_colors;

    int frame_count() const { return static_cast<int>(frames.size()); }
};

/// Directory layout: frames/%04d.ppm, cameras.txt, split.txt, points.txt.
void save_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& dir);

/// "W H fx fy cx cy" followed by the 12 row-major [R|t] world-to-camera values.
Camera read_camera_file(const std::filesystem::path& path);
void write_camera_file(const std::filesystem::path& path, const Camera& camera);

} // namespace dgs
