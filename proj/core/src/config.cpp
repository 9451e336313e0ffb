#include "dgs/config.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dgs/error.hpp"

namespace dgs {

namespace {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& value) {
    if (j.contains(key)) {
        value = j.at(key).get<T>();
    }
}

} // namespace

FitSettings fit_settings_from_json(const std::string& text) {
    FitSettings s;
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        if (!j.is_object()) {
            throw ParseError("fit config must be a JSON object");
        }
        TrainConfig& t = s.train;
        read_opt(j, "iterations", t.iterations);
        read_opt(j, "lambda_normal", t.lambda_normal);
        read_opt(j, "normal_warmup", t.normal_warmup);
        read_opt(j, "lambda_ssim", t.lambda_ssim);
        read_opt(j, "refined_weight", t.refined_weight);
        read_opt(j, "prune_threshold", t.prune_threshold);
        read_opt(j, "prune_interval", t.prune_interval);
        read_opt(j, "val_interval", t.val_interval);
        read_opt(j, "seed", t.seed);
        s.init.seed = t.seed;
        if (j.contains("learning_rates")) {
            for (const auto& [name, value] : j.at("learning_rates").items()) {
                bool found = false;
                for (std::size_t c = 0; c < kParamClassCount; ++c) {
                    if (name == to_string(static_cast<ParamClass>(c))) {
                        t.learning_rates[c] = value.get<double>();
                        found = true;
                    }
                }
                if (!found) {
                    throw ParseError("fit config: unknown parameter class '" + name + "'");
                }
            }
        }
        InitOptions& i = s.init;
        read_opt(j, "bone_count", i.bone_count);
        read_opt(j, "latent_dim", i.mlp.latent_dim);
        read_opt(j, "pos_freqs", i.mlp.pos_freqs);
        read_opt(j, "time_freqs", i.mlp.time_freqs);
        read_opt(j, "hidden_layers", i.mlp.hidden_layers);
        read_opt(j, "hidden_width", i.mlp.hidden_width);
        read_opt(j, "sh_degree", i.sh_degree);
        read_opt(j, "warp_frozen", i.warp_frozen);
        read_opt(j, "pca_normals", i.pca_normals);
        read_opt(j, "latent_scale", i.latent_scale);
        if (j.contains("background")) {
            const auto bg = j.at("background").get<std::vector<double>>();
            if (bg.size() != 3) {
                throw ParseError("fit config: background needs 3 values");
            }
            i.background = Vec3(bg[0], bg[1], bg[2]);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("fit config: ") + e.what());
    }
    return s;
}

FitSettings load_fit_settings(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    std::ostringstream text;
    text << in.rdbuf();
    return fit_settings_from_json(text.str());
}

void apply_ablations(FitSettings& settings, const Ablations& ablations) {
    if (ablations.no_normal_reg) {
        settings.train.lambda_normal = 0.0;
    }
    if (ablations.no_refine) {
        settings.train.refined_weight = 0.0;
    }
    if (ablations.no_init) {
        settings.init.random_bones = true;
    }
}

void set_seed(FitSettings& settings, std::uint64_t seed) {
    settings.train.seed = seed;
    settings.init.seed = seed;
}

FitResult run_fit(const Dataset& data, const FitSettings& settings, std::ostream* log) {
    ModelState model = initialize_model(data, settings.init);
    if (settings.train.refined_weight == 0.0) {
        model.config.eval_branch = Branch::Base;
    }
    return fit(std::move(model), data, settings.train, log);
}

} // namespace dgs
