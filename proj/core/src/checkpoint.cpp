#include "dgs/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dgs/error.hpp"

namespace dgs {

namespace {

using nlohmann::json;

class Writer {
public:
    std::string str() const { return out_.str(); }

    void raw(const std::string& s) { out_ << s; }

    void real(double v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out_ << buf;
    }

    /// {"type": "f64", "shape": [...], "data": [...]}
    void array(std::initializer_list<std::size_t> shape, const std::vector<double>& data) {
        out_ << "{\"type\": \"f64\", \"shape\": [";
        bool first = true;
        for (std::size_t s : shape) {
            out_ << (first ? "" : ", ") << s;
            first = false;
        }
        out_ << "], \"data\": [";
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (i) {
                out_ << (i % 8 == 0 ? ",\n    " : ", ");
            }
            real(data[i]);
        }
        out_ << "]}";
    }

private:
    std::ostringstream out_;
};

template <class V>
void append(std::vector<double>& dst, const V& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        dst.push_back(v[i]);
    }
}

std::vector<double> typed(const json& node, std::size_t expected, const char* what) {
    if (!node.is_object() || node.value("type", "") != "f64" || !node.contains("data")) {
        throw ParseError(std::string("checkpoint: '") + what + "' is not a typed f64 array");
    }
    std::vector<double> data = node.at("data").get<std::vector<double>>();
    if (data.size() != expected) {
        throw ParseError(std::string("checkpoint: '") + what + "' has " + std::to_string(data.size()) +
                         " values, expected " + std::to_string(expected));
    }
    return data;
}

} // namespace

std::string checkpoint_to_string(const ModelState& m) {
    const std::size_t nk = m.surfels.size();
    const std::size_t nb = m.bones.size();
    const int coeffs = 3 * sh_coeff_count(m.config.sh_degree);
    const MlpShape& s = m.mlp.empty() ? m.config.mlp : m.mlp.shape();
    const auto latent_rows = nb ? static_cast<std::size_t>(m.bones[0].latents.rows()) : 0;
    const auto latent_cols = nb ? static_cast<std::size_t>(m.bones[0].latents.cols()) : 0;

    Writer w;
    w.raw("{\n\"version\": \"");
    w.raw(kCheckpointVersion);
    w.raw("\",\n\"config\": {");
    w.raw("\"sh_degree\": " + std::to_string(m.config.sh_degree));
    w.raw(", \"bone_count\": " + std::to_string(m.config.bone_count));
    w.raw(", \"frame_count\": " + std::to_string(m.config.frame_count));
    w.raw(", \"mlp\": {\"latent_dim\": " + std::to_string(s.latent_dim) +
          ", \"pos_freqs\": " + std::to_string(s.pos_freqs) + ", \"time_freqs\": " + std::to_string(s.time_freqs) +
          ", \"hidden_layers\": " + std::to_string(s.hidden_layers) +
          ", \"hidden_width\": " + std::to_string(s.hidden_width) + "}");
    w.raw(", \"lowpass_sigma\": ");
    w.real(m.config.lowpass_sigma);
    w.raw(", \"background\": [");
    for (int c = 0; c < 3; ++c) {
        if (c) {
            w.raw(", ");
        }
        w.real(m.config.background[c]);
    }
    w.raw("], \"eval_branch\": \"" + std::string(to_string(m.config.eval_branch)) + "\"");
    w.raw(std::string(", \"warp_frozen\": ") + (m.config.warp_frozen ? "true" : "false") + "},\n");

    std::vector<double> center, rot, scale, opac, sh, drot, dscale;
    for (const Surfel& x : m.surfels) {
        append(center, x.center);
        append(rot, x.rotation);
        append(scale, x.log_scale);
        opac.push_back(x.opacity_logit);
        if (x.sh.size() != static_cast<std::size_t>(coeffs)) {
            throw ShapeMismatch("checkpoint: surfel color size does not match the SH degree");
        }
        sh.insert(sh.end(), x.sh.begin(), x.sh.end());
        append(drot, x.refine_rotation);
        append(dscale, x.refine_scale);
    }
    w.raw("\"surfels\": {\"count\": " + std::to_string(nk) + ",\n  \"center\": ");
    w.array({nk, 3}, center);
    w.raw(",\n  \"rotation\": ");
    w.array({nk, 4}, rot);
    w.raw(",\n  \"log_scale\": ");
    w.array({nk, 2}, scale);
    w.raw(",\n  \"opacity_logit\": ");
    w.array({nk}, opac);
    w.raw(",\n  \"sh\": ");
    w.array({nk, static_cast<std::size_t>(coeffs)}, sh);
    w.raw(",\n  \"refine_rotation\": ");
    w.array({nk, 4}, drot);
    w.raw(",\n  \"refine_scale\": ");
    w.array({nk, 3}, dscale);
    w.raw("},\n");

    std::vector<double> bc, br, bp, lat;
    for (const Bone& b : m.bones) {
        append(bc, b.center);
        append(br, b.rotation);
        append(bp, b.log_precision);
        if (static_cast<std::size_t>(b.latents.rows()) != latent_rows ||
            static_cast<std::size_t>(b.latents.cols()) != latent_cols) {
            throw ShapeMismatch("checkpoint: bones disagree on latent shape");
        }
        for (Eigen::Index i = 0; i < b.latents.size(); ++i) {
            lat.push_back(b.latents.data()[i]);
        }
    }
    w.raw("\"bones\": {\"count\": " + std::to_string(nb) + ",\n  \"center\": ");
    w.array({nb, 3}, bc);
    w.raw(",\n  \"rotation\": ");
    w.array({nb, 4}, br);
    w.raw(",\n  \"log_precision\": ");
    w.array({nb, 3}, bp);
    w.raw(",\n  \"latents\": ");
    w.array({nb, latent_rows, latent_cols}, lat);
    w.raw("},\n");

    w.raw("\"mlp\": {\"layers\": [");
    const auto& layers = m.mlp.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const DenseLayer& layer = layers[l];
        std::vector<double> wt(layer.weight.data(), layer.weight.data() + layer.weight.size());
        std::vector<double> bs(layer.bias.data(), layer.bias.data() + layer.bias.size());
        w.raw(l ? ",\n  {\"weight\": " : "\n  {\"weight\": ");
        w.array({static_cast<std::size_t>(layer.weight.rows()), static_cast<std::size_t>(layer.weight.cols())}, wt);
        w.raw(", \"bias\": ");
        w.array({static_cast<std::size_t>(layer.bias.size())}, bs);
        w.raw("}");
    }
    w.raw("],\n  \"offset\": ");
    const Vec8& off = m.mlp.output_offset();
    w.array({8}, std::vector<double>(off.data(), off.data() + 8));
    w.raw("},\n");

    w.raw("\"track\": ");
    if (m.track) {
        const std::size_t nf = m.track->frames.size();
        const std::size_t tb = nf ? m.track->frames[0].size() : 0;
        std::vector<double> data;
        for (const auto& frame : m.track->frames) {
            if (frame.size() != tb) {
                throw ShapeMismatch("checkpoint: ragged bone track");
            }
            for (const DualQuaternion& q : frame) {
                append(data, q.to_vec8());
            }
        }
        w.array({nf, tb, 8}, data);
    } else {
        w.raw("null");
    }
    w.raw("\n}\n");
    return w.str();
}

ModelState checkpoint_from_string(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("checkpoint is not valid JSON: ") + e.what());
    }
    try {
        if (!doc.is_object() || !doc.contains("version")) {
            throw ParseError("checkpoint has no version field");
        }
        const std::string version = doc.at("version").get<std::string>();
        if (version != kCheckpointVersion) {
            throw VersionMismatch("checkpoint version '" + version + "' is not " + kCheckpointVersion);
        }
        ModelState m;
        const json& cfg = doc.at("config");
        m.config.sh_degree = cfg.at("sh_degree").get<int>();
        m.config.bone_count = cfg.at("bone_count").get<int>();
        m.config.frame_count = cfg.at("frame_count").get<int>();
        const json& ms = cfg.at("mlp");
        m.config.mlp.latent_dim = ms.at("latent_dim").get<int>();
        m.config.mlp.pos_freqs = ms.at("pos_freqs").get<int>();
        m.config.mlp.time_freqs = ms.at("time_freqs").get<int>();
        m.config.mlp.hidden_layers = ms.at("hidden_layers").get<int>();
        m.config.mlp.hidden_width = ms.at("hidden_width").get<int>();
        m.config.lowpass_sigma = cfg.at("lowpass_sigma").get<double>();
        const auto bg = cfg.at("background").get<std::vector<double>>();
        if (bg.size() != 3) {
            throw ParseError("checkpoint: background must have 3 values");
        }
        m.config.background = Vec3(bg[0], bg[1], bg[2]);
        m.config.eval_branch = branch_from_string(cfg.at("eval_branch").get<std::string>());
        m.config.warp_frozen = cfg.at("warp_frozen").get<bool>();
        if (m.config.sh_degree < 0 || m.config.sh_degree > 3) {
            throw ParseError("checkpoint: unsupported SH degree");
        }

        const json& sj = doc.at("surfels");
        const auto nk = sj.at("count").get<std::size_t>();
        const auto coeffs = static_cast<std::size_t>(3 * sh_coeff_count(m.config.sh_degree));
        const auto center = typed(sj.at("center"), 3 * nk, "surfels.center");
        const auto rot = typed(sj.at("rotation"), 4 * nk, "surfels.rotation");
        const auto scale = typed(sj.at("log_scale"), 2 * nk, "surfels.log_scale");
        const auto opac = typed(sj.at("opacity_logit"), nk, "surfels.opacity_logit");
        const auto sh = typed(sj.at("sh"), coeffs * nk, "surfels.sh");
        const auto drot = typed(sj.at("refine_rotation"), 4 * nk, "surfels.refine_rotation");
        const auto dscale = typed(sj.at("refine_scale"), 3 * nk, "surfels.refine_scale");
        m.surfels.resize(nk);
        for (std::size_t k = 0; k < nk; ++k) {
            Surfel& s = m.surfels[k];
            s.center = Vec3(center[3 * k], center[3 * k + 1], center[3 * k + 2]);
            s.rotation = Vec4(rot[4 * k], rot[4 * k + 1], rot[4 * k + 2], rot[4 * k + 3]);
            s.log_scale = Vec2(scale[2 * k], scale[2 * k + 1]);
            s.opacity_logit = opac[k];
            s.sh.assign(sh.begin() + static_cast<std::ptrdiff_t>(coeffs * k),
                        sh.begin() + static_cast<std::ptrdiff_t>(coeffs * (k + 1)));
            s.refine_rotation = Vec4(drot[4 * k], drot[4 * k + 1], drot[4 * k + 2], drot[4 * k + 3]);
            s.refine_scale = Vec3(dscale[3 * k], dscale[3 * k + 1], dscale[3 * k + 2]);
        }

        const json& bj = doc.at("bones");
        const auto nb = bj.at("count").get<std::size_t>();
        const auto lshape = bj.at("latents").at("shape").get<std::vector<std::size_t>>();
        if (lshape.size() != 3 || lshape[0] != nb) {
            throw ParseError("checkpoint: bones.latents must have shape [bones, frames, dim]");
        }
        const auto bc = typed(bj.at("center"), 3 * nb, "bones.center");
        const auto br = typed(bj.at("rotation"), 4 * nb, "bones.rotation");
        const auto bp = typed(bj.at("log_precision"), 3 * nb, "bones.log_precision");
        const std::size_t per = lshape[1] * lshape[2];
        const auto lat = typed(bj.at("latents"), nb * per, "bones.latents");
        m.bones.resize(nb);
        for (std::size_t b = 0; b < nb; ++b) {
            Bone& bone = m.bones[b];
            bone.center = Vec3(bc[3 * b], bc[3 * b + 1], bc[3 * b + 2]);
            bone.rotation = Vec4(br[4 * b], br[4 * b + 1], br[4 * b + 2], br[4 * b + 3]);
            bone.log_precision = Vec3(bp[3 * b], bp[3 * b + 1], bp[3 * b + 2]);
            bone.latents.resize(static_cast<Eigen::Index>(lshape[1]), static_cast<Eigen::Index>(lshape[2]));
            std::copy(lat.begin() + static_cast<std::ptrdiff_t>(per * b),
                      lat.begin() + static_cast<std::ptrdiff_t>(per * (b + 1)), bone.latents.data());
        }

        const json& mj = doc.at("mlp");
        std::vector<DenseLayer> layers;
        for (const json& lj : mj.at("layers")) {
            const auto shape = lj.at("weight").at("shape").get<std::vector<std::size_t>>();
            if (shape.size() != 2) {
                throw ParseError("checkpoint: mlp weight must be 2-D");
            }
            DenseLayer layer;
            layer.weight.resize(static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1]));
            const auto wt = typed(lj.at("weight"), shape[0] * shape[1], "mlp.weight");
            std::copy(wt.begin(), wt.end(), layer.weight.data());
            const auto bs = typed(lj.at("bias"), shape[0], "mlp.bias");
            layer.bias = Eigen::Map<const VecX>(bs.data(), static_cast<Eigen::Index>(bs.size()));
            layers.push_back(std::move(layer));
        }
        const auto off = typed(mj.at("offset"), 8, "mlp.offset");
        if (!layers.empty()) {
            m.mlp = make_mlp_from_parts(m.config.mlp, std::move(layers), Eigen::Map<const Vec8>(off.data()));
        }

        const json& tj = doc.at("track");
        if (!tj.is_null()) {
            const auto shape = tj.at("shape").get<std::vector<std::size_t>>();
            if (shape.size() != 3 || shape[2] != 8) {
                throw ParseError("checkpoint: track must have shape [frames, bones, 8]");
            }
            const auto data = typed(tj, shape[0] * shape[1] * 8, "track");
            BoneTrack track;
            track.frames.resize(shape[0]);
            for (std::size_t f = 0; f < shape[0]; ++f) {
                for (std::size_t b = 0; b < shape[1]; ++b) {
                    track.frames[f].push_back(
                        DualQuaternion::from_vec8(Eigen::Map<const Vec8>(data.data() + 8 * (f * shape[1] + b))));
                }
            }
            m.track = std::move(track);
        }
        return m;
    } catch (const json::exception& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
}

void save_checkpoint(const ModelState& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    out << checkpoint_to_string(model);
    if (!out) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

ModelState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return checkpoint_from_string(ss.str());
}

} // namespace dgs
