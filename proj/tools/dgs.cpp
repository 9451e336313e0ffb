// dgs: synthetic data generation, fitting, rendering and evaluation.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>

#include <CLI11.hpp>

#include "dgs/checkpoint.hpp"
#include "dgs/config.hpp"
#include "dgs/dataset.hpp"
#include "dgs/error.hpp"
#include "dgs/gradcheck.hpp"
#include "dgs/image.hpp"
#include "dgs/render.hpp"
#include "dgs/synth.hpp"

namespace fs = std::filesystem;

namespace {

std::string fmt_real(double v) {
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

int cmd_synth(const fs::path& spec_path, const fs::path& out) {
    const dgs::SynthSpec spec = dgs::load_synth_spec(spec_path);
    const dgs::SynthResult r = dgs::synth_generate(spec);
    dgs::write_synth(out, r);
    std::cout << "wrote " << r.dataset.frames.size() << " frames of " << dgs::to_string(spec.kind) << " to "
              << out.string() << '\n';
    return 0;
}

struct FitArgs {
    fs::path data;
    fs::path out;
    fs::path config;
    fs::path log;
    std::int64_t seed = -1;
    dgs::Ablations ablations;
};

int cmd_fit(const FitArgs& a) {
    dgs::FitSettings settings = a.config.empty() ? dgs::FitSettings{} : dgs::load_fit_settings(a.config);
    if (a.seed >= 0) {
        dgs::set_seed(settings, static_cast<std::uint64_t>(a.seed));
    }
    dgs::apply_ablations(settings, a.ablations);
    const dgs::Dataset data = dgs::load_dataset(a.data);
    std::ofstream log_file;
    if (!a.log.empty()) {
        log_file.open(a.log);
        if (!log_file) {
            throw dgs::IoError("cannot open '" + a.log.string() + "' for writing");
        }
    }
    const dgs::FitResult r = dgs::run_fit(data, settings, a.log.empty() ? nullptr : &log_file);
    dgs::save_checkpoint(r.model, a.out);
    std::cout << "best val psnr " << fmt_real(r.best_val_psnr) << " at iteration " << r.best_iteration << ", "
              << r.model.surfels.size() << " surfels\n";
    return 0;
}

dgs::Image depth_image(const dgs::RenderOutput& out) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < out.depth.size(); ++i) {
        if (out.alpha[i] > 0.0) {
            lo = std::min(lo, out.depth[i]);
            hi = std::max(hi, out.depth[i]);
        }
    }
    dgs::Image img(out.width, out.height);
    const double span = hi > lo ? hi - lo : 1.0;
    for (std::size_t i = 0; i < out.depth.size(); ++i) {
        const double v = out.alpha[i] > 0.0 ? 1.0 - (out.depth[i] - lo) / span : 0.0;
        img.set_pixel(i, dgs::Vec3::Constant(v));
    }
    return img;
}

dgs::Image normal_image(const dgs::RenderOutput& out) {
    dgs::Image img(out.width, out.height);
    for (std::size_t i = 0; i < out.rendered_normal.size(); ++i) {
        const dgs::Vec3& n = out.rendered_normal[i];
        img.set_pixel(i, n.isZero() ? dgs::Vec3::Zero() : dgs::Vec3((0.5 * n.array() + 0.5).matrix()));
    }
    return img;
}

int cmd_render(const fs::path& ckpt, const fs::path& camera_path, double t, const std::string& branch,
               const fs::path& out) {
    const dgs::ModelState model = dgs::load_checkpoint(ckpt);
    const dgs::Camera camera = dgs::read_camera_file(camera_path);
    const dgs::RenderOutput r = dgs::render(model, camera, t, dgs::branch_from_string(branch));
    fs::path stem = out;
    if (stem.extension() == ".ppm") {
        stem.replace_extension();
    }
    const auto with_suffix = [&](const char* s) { return fs::path(stem.string() + s + ".ppm"); };
    dgs::write_image(with_suffix("_color"), r.color);
    dgs::write_image(with_suffix("_depth"), depth_image(r));
    dgs::write_image(with_suffix("_normal"), normal_image(r));
    return 0;
}

int cmd_eval(const fs::path& ckpt, const fs::path& data_dir) {
    const dgs::ModelState model = dgs::load_checkpoint(ckpt);
    const dgs::Dataset data = dgs::load_dataset(data_dir);
    std::cout << "frame,psnr,ssim\n";
    double sum_psnr = 0.0;
    double sum_ssim = 0.0;
    const std::vector<dgs::FrameScore> scores = dgs::evaluate_frames(model, data);
    for (const dgs::FrameScore& s : scores) {
        sum_psnr += s.psnr;
        sum_ssim += s.ssim;
        std::cout << s.frame << ',' << fmt_real(s.psnr) << ',' << fmt_real(s.ssim) << '\n';
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, scores.size()));
    std::cout << "mean," << fmt_real(sum_psnr / n) << ',' << fmt_real(sum_ssim / n) << '\n';
    return 0;
}

int cmd_gradcheck(const std::string& scene_name, std::uint64_t seed, double step) {
    const dgs::GradcheckScene scene = dgs::make_gradcheck_scene(dgs::gradcheck_scene_from_string(scene_name), seed);
    const dgs::GradcheckReport report = dgs::gradcheck(scene, step);
    std::cout << "class,max_rel_error,params\n";
    bool ok = true;
    for (std::size_t c = 0; c < dgs::kParamClassCount; ++c) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3e", report.max_error[c]);
        std::cout << dgs::to_string(static_cast<dgs::ParamClass>(c)) << ',' << buf << ',' << report.count[c] << '\n';
        ok = ok && report.count[c] > 0 && report.max_error[c] < 1e-4;
    }
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dynamic Gaussian surfels: synthesize, fit, render and evaluate"};
    app.require_subcommand(1);

    fs::path synth_spec, synth_out;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with ground truth");
    synth->add_option("--spec", synth_spec, "Scene description (JSON)")->required();
    synth->add_option("--out", synth_out, "Output directory")->required();

    FitArgs fa;
    auto* fitc = app.add_subcommand("fit", "Train a model on a dataset");
    fitc->add_option("--data", fa.data, "Dataset directory")->required();
    fitc->add_option("--out", fa.out, "Output checkpoint")->required();
    fitc->add_option("--config", fa.config, "Training configuration (JSON)");
    fitc->add_option("--seed", fa.seed, "Seed for initialization and frame order")->check(CLI::NonNegativeNumber);
    fitc->add_option("--log", fa.log, "Write the training log as CSV");
    fitc->add_flag("--no-normal-reg", fa.ablations.no_normal_reg, "Disable the normal consistency term");
    fitc->add_flag("--no-refine", fa.ablations.no_refine, "Disable the refined branch");
    fitc->add_flag("--no-init", fa.ablations.no_init, "Random bone initialization");

    fs::path r_ckpt, r_camera, r_out;
    double r_time = 0.0;
    std::string r_branch = "refined";
    auto* renderc = app.add_subcommand("render", "Render color, depth and normal images");
    renderc->add_option("--ckpt", r_ckpt, "Checkpoint")->required();
    renderc->add_option("--camera", r_camera, "Camera file")->required();
    renderc->add_option("--time", r_time, "Normalized time in [0, 1]")->required()->check(CLI::Range(0.0, 1.0));
    renderc->add_option("--branch", r_branch, "base or refined")->check(CLI::IsMember({"base", "refined"}));
    renderc->add_option("--out", r_out, "Output prefix")->required();

    fs::path e_ckpt, e_data;
    auto* evalc = app.add_subcommand("eval", "PSNR and SSIM on held-out frames");
    evalc->add_option("--ckpt", e_ckpt, "Checkpoint")->required();
    evalc->add_option("--data", e_data, "Dataset directory")->required();

    std::string g_scene = "tiny";
    std::uint64_t g_seed = 1;
    double g_step = 1e-4;
    auto* gradc = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
    gradc->add_option("--scene", g_scene, "tiny or small")->check(CLI::IsMember({"tiny", "small"}));
    gradc->add_option("--seed", g_seed, "Scene seed");
    gradc->add_option("--step", g_step, "Finite-difference step")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "dgs: " << e.what() << '\n';
        return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
    }

    try {
        if (*synth) {
            return cmd_synth(synth_spec, synth_out);
        }
        if (*fitc) {
            return cmd_fit(fa);
        }
        if (*renderc) {
            return cmd_render(r_ckpt, r_camera, r_time, r_branch, r_out);
        }
        if (*evalc) {
            return cmd_eval(e_ckpt, e_data);
        }
        if (*gradc) {
            return cmd_gradcheck(g_scene, g_seed, g_step);
        }
    } catch (const std::exception& e) {
        std::cerr << "dgs: error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
