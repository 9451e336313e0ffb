#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "dgs/dataset.hpp"
#include "dgs/synth.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int status = -1;
    std::string out;
};

RunResult run(const std::string& args) {
    const std::string cmd = std::string("\"") + DGS_EXE + "\" " + args + " 2>&1";
    RunResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) {
        return r;
    }
    std::array<char, 4096> buf{};
    std::size_t n = 0;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) {
        r.out.append(buf.data(), n);
    }
    const int raw = pclose(pipe);
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    return r;
}

fs::path work_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "dgs_test_cli" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// A small bending-bar dataset written through the CLI.
fs::path small_bar(const fs::path& dir) {
    const fs::path spec = dir / "spec.json";
    std::ofstream(spec) << R"({"kind": "bending-bar", "frames": 8, "width": 16, "height": 16, "spacing": 0.15})";
    const RunResult r = run("synth --spec \"" + spec.string() + "\" --out \"" + (dir / "data").string() + "\"");
    EXPECT_EQ(r.status, 0) << r.out;
    return dir / "data";
}

} // namespace

TEST(Cli, UsageErrorsExitNonzero) {
    EXPECT_NE(run("").status, 0);
    EXPECT_NE(run("frobnicate").status, 0);
    EXPECT_NE(run("fit --data").status, 0);
    EXPECT_NE(run("render --ckpt a --camera b --time 2 --out c").status, 0);
    const RunResult missing = run("eval --ckpt /nonexistent/ckpt.json --data /nonexistent");
    EXPECT_EQ(missing.status, 1);
    EXPECT_NE(missing.out.find("error"), std::string::npos);
}

TEST(Cli, GradcheckTiny) {
    const RunResult r = run("gradcheck --scene tiny");
    EXPECT_EQ(r.status, 0) << r.out;
    std::istringstream in(r.out);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "class,max_rel_error,params");
    int rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto c1 = line.find(',');
        const auto c2 = line.rfind(',');
        ASSERT_NE(c1, c2) << line;
        EXPECT_LT(std::stod(line.substr(c1 + 1, c2 - c1 - 1)), 1e-4) << line;
        EXPECT_GT(std::stoul(line.substr(c2 + 1)), 0u) << line;
        ++rows;
    }
    EXPECT_EQ(rows, 12);
}

TEST(Cli, EvalGroundTruthIsInfinite) {
    const fs::path dir = work_dir("eval");
    const fs::path data = small_bar(dir);
    const RunResult r = run("eval --ckpt \"" + (data / dgs::kGroundTruthFile).string() + "\" --data \"" +
                            data.string() + "\"");
    ASSERT_EQ(r.status, 0) << r.out;
    std::istringstream in(r.out);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "frame,psnr,ssim");
    int rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        EXPECT_NE(line.find(",inf,1.000000"), std::string::npos) << line;
        ++rows;
    }
    EXPECT_EQ(rows, static_cast<int>(dgs::split_frames(8).val.size()) + 1);
    EXPECT_NE(r.out.find("mean,inf"), std::string::npos);
}

TEST(Cli, FitIsDeterministicAndRenders) {
    const fs::path dir = work_dir("fit");
    const fs::path data = small_bar(dir);
    const fs::path config = dir / "config.json";
    std::ofstream(config) << R"({"iterations": 4, "val_interval": 2, "bone_count": 2, "latent_dim": 4,
                                 "hidden_layers": 1, "hidden_width": 8})";
    const std::string base = "fit --data \"" + data.string() + "\" --config \"" + config.string() + "\" --seed 3";
    const RunResult a = run(base + " --out \"" + (dir / "a.json").string() + "\" --log \"" +
                            (dir / "log.csv").string() + "\"");
    ASSERT_EQ(a.status, 0) << a.out;
    const RunResult b = run(base + " --out \"" + (dir / "b.json").string() + "\"");
    ASSERT_EQ(b.status, 0) << b.out;
    EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));
    EXPECT_EQ(slurp(dir / "log.csv").substr(0, 44), "iteration,photometric,normal,total,val_psnr\n");

    const RunResult ab = run(base + " --no-refine --no-init --no-normal-reg --out \"" + (dir / "c.json").string() + "\"");
    ASSERT_EQ(ab.status, 0) << ab.out;
    EXPECT_NE(slurp(dir / "a.json"), slurp(dir / "c.json"));

    const dgs::Dataset d = dgs::load_dataset(data);
    dgs::write_camera_file(dir / "cam.txt", d.frames[2].camera);
    const RunResult r = run("render --ckpt \"" + (dir / "a.json").string() + "\" --camera \"" +
                            (dir / "cam.txt").string() + "\" --time 0.25 --branch base --out \"" +
                            (dir / "view.ppm").string() + "\"");
    ASSERT_EQ(r.status, 0) << r.out;
    for (const char* suffix : {"_color.ppm", "_depth.ppm", "_normal.ppm"}) {
        EXPECT_TRUE(fs::exists(dir / (std::string("view") + suffix))) << suffix;
    }
}
