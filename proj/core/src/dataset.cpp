#include "dgs/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "dgs/error.hpp"

namespace dgs {

namespace {

std::string frame_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d.ppm", i);
    return buf;
}

void write_extrinsics(std::ostream& out, const SE3Transform& t) {
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            out << ' ' << t.rotation(r, c);
        }
        out << ' ' << t.translation[r];
    }
}

SE3Transform read_extrinsics(std::istream& in) {
    SE3Transform t;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            in >> t.rotation(r, c);
        }
        in >> t.translation[r];
    }
    return t;
}

std::ifstream open_in(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) {
        throw IoError("cannot open '" + p.string() + "'");
    }
    return in;
}

std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream out(p);
    if (!out) {
        throw IoError("cannot open '" + p.string() + "' for writing");
    }
    out << std::setprecision(17);
    return out;
}

} // namespace

Split split_frames(int frame_count) {
    Split s;
    for (int i = 0; i < frame_count; i += 4) {
        s.train.push_back(i);
        if (i + 4 < frame_count) {
            s.val.push_back(i + 2);
        }
    }
    return s;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& data) {
    std::filesystem::create_directories(dir / "frames");
    auto cams = open_out(dir / "cameras.txt");
    for (const Frame& f : data.frames) {
        write_image(dir / "frames" / frame_name(f.index), f.image);
        const Camera& c = f.camera;
        cams << f.t << ' ' << c.fx << ' ' << c.fy << ' ' << c.cx << ' ' << c.cy;
        write_extrinsics(cams, c.world_to_camera);
        cams << '\n';
    }
    auto split = open_out(dir / "split.txt");
    split << "train";
    for (int i : data.split.train) {
        split << ' ' << i;
    }
    split << "\nval";
    for (int i : data.split.val) {
        split << ' ' << i;
    }
    split << '\n';
    auto pts = open_out(dir / "points.txt");
    for (std::size_t i = 0; i < data.points.size(); ++i) {
        const Vec3& p = data.points[i];
        const Vec3 c = i < data.point_colors.size() ? data.point_colors[i] : Vec3::Constant(0.5);
        pts << p.x() << ' ' << p.y() << ' ' << p.z() << ' ' << c.x() << ' ' << c.y() << ' ' << c.z() << '\n';
    }
}

Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset data;
    auto cams = open_in(dir / "cameras.txt");
    std::string line;
    int index = 0;
    while (std::getline(cams, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        std::istringstream ls(line);
        Frame f;
        f.index = index++;
        ls >> f.t >> f.camera.fx >> f.camera.fy >> f.camera.cx >> f.camera.cy;
        f.camera.world_to_camera = read_extrinsics(ls);
        if (!ls) {
            throw ParseError("cameras.txt line " + std::to_string(index) + ": expected 17 numbers");
        }
        f.image = read_image(dir / "frames" / frame_name(f.index));
        f.camera.width = f.image.width;
        f.camera.height = f.image.height;
        data.frames.push_back(std::move(f));
    }

    auto split = open_in(dir / "split.txt");
    while (std::getline(split, line)) {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        std::vector<int>* dst = key == "train" ? &data.split.train : key == "val" ? &data.split.val : nullptr;
        if (!dst) {
            if (!key.empty()) {
                throw ParseError("split.txt: unknown key '" + key + "'");
            }
            continue;
        }
        int i = 0;
        while (ls >> i) {
            if (i < 0 || i >= data.frame_count()) {
                throw ParseError("split.txt: frame index out of range");
            }
            dst->push_back(i);
        }
    }

    if (std::filesystem::exists(dir / "points.txt")) {
        auto pts = open_in(dir / "points.txt");
        while (std::getline(pts, line)) {
            std::istringstream ls(line);
            Vec3 p, c;
            if (ls >> p.x() >> p.y() >> p.z()) {
                if (!(ls >> c.x() >> c.y() >> c.z())) {
                    c = Vec3::Constant(0.5);
                }
                data.points.push_back(p);
                data.point_colors.push_back(c);
            }
        }
    }
    return data;
}

Camera read_camera_file(const std::filesystem::path& path) {
    auto in = open_in(path);
    Camera c;
    in >> c.width >> c.height >> c.fx >> c.fy >> c.cx >> c.cy;
    c.world_to_camera = read_extrinsics(in);
    if (!in) {
        throw ParseError("camera file '" + path.string() + "': expected W H fx fy cx cy and 12 extrinsics");
    }
    c.validate();
    return c;
}

void write_camera_file(const std::filesystem::path& path, const Camera& c) {
    auto out = open_out(path);
    out << c.width << ' ' << c.height << ' ' << c.fx << ' ' << c.fy << ' ' << c.cx << ' ' << c.cy;
    write_extrinsics(out, c.world_to_camera);
    out << '\n';
}

} // namespace dgs
