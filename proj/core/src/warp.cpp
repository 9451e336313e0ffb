#include "dgs/warp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dgs/parallel.hpp"

namespace dgs {

namespace {

constexpr std::size_t kChunk = 128;

/// (frame index, fraction) with snapping to integer frames.
std::pair<Eigen::Index, double> time_slot(double t, Eigen::Index frames) {
    if (frames <= 1) {
        return {0, 0.0};
    }
    const double f = std::clamp(t, 0.0, 1.0) * static_cast<double>(frames - 1);
    const double nearest = std::round(f);
    if (std::abs(f - nearest) < 1e-9) {
        return {static_cast<Eigen::Index>(nearest), 0.0};
    }
    const auto i0 = static_cast<Eigen::Index>(std::floor(f));
    return {i0, f - static_cast<double>(i0)};
}

Vec8 unit_of(const Vec8& raw) { return normalize_dualquat(DualQuaternion::from_vec8(raw)).to_vec8(); }

RowMatX encode_rows(std::span<const Vec3> xs, double t, const MlpShape& shape) {
    RowMatX enc(static_cast<Eigen::Index>(xs.size()), shape.encoding_dim());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        enc.row(static_cast<Eigen::Index>(i)) = encode_inputs(xs[i], t, shape.pos_freqs, shape.time_freqs).transpose();
    }
    return enc;
}

VecX softmax_neg_half(const VecX& m) {
    const VecX logits = -0.5 * m;
    const double mx = logits.maxCoeff();
    VecX w = (logits.array() - mx).exp();
    return w / w.sum();
}

} // namespace

double normalized_time(int frame, int frame_count) {
    if (frame_count <= 1) {
        return 0.0;
    }
    return static_cast<double>(frame) / static_cast<double>(frame_count - 1);
}

VecX latent_at(const Bone& bone, double t) {
    const auto [i0, a] = time_slot(t, bone.latents.rows());
    if (a == 0.0) {
        return bone.latents.row(i0).transpose();
    }
    return ((1.0 - a) * bone.latents.row(i0) + a * bone.latents.row(i0 + 1)).transpose();
}

void latent_at_vjp(RowMatX& grad_latents, double t, const VecX& grad) {
    const auto [i0, a] = time_slot(t, grad_latents.rows());
    if (a == 0.0) {
        grad_latents.row(i0) += grad.transpose();
        return;
    }
    grad_latents.row(i0) += (1.0 - a) * grad.transpose();
    grad_latents.row(i0 + 1) += a * grad.transpose();
}

DualQuaternion bone_transform(const WarpFieldMLP& mlp, const VecX& latent, const Vec3& x, double t) {
    const MlpShape& s = mlp.shape();
    const Vec8 raw = mlp.forward(latent, encode_inputs(x, t, s.pos_freqs, s.time_freqs));
    return normalize_dualquat(DualQuaternion::from_vec8(raw));
}

BoneState transform_bone(const SE3Transform& j, const Vec3& center, const Mat3& rotation) {
    return {j.rotation * center + j.translation, j.rotation * rotation};
}

std::vector<BoneState> bones_at_time(const ModelState& model, double t) {
    return evaluate_warp(model, t).bones;
}

VecX skinning_weights(const Vec3& x, std::span<const BoneState> bones, std::span<const Vec3> precision) {
    if (bones.empty() || bones.size() != precision.size()) {
        throw std::invalid_argument("skinning_weights: need one precision per bone and at least one bone");
    }
    VecX m(static_cast<Eigen::Index>(bones.size()));
    for (std::size_t b = 0; b < bones.size(); ++b) {
        const Vec3 y = bones[b].rotation * (x - bones[b].center);
        m[static_cast<Eigen::Index>(b)] = y.dot(precision[b].cwiseProduct(y));
    }
    return softmax_neg_half(m);
}

WarpSample point_warp(const ModelState& model, const Vec3& x, double t) {
    WarpSample out;
    const std::size_t nb = model.bones.size();
    if (model.config.warp_frozen || nb == 0) {
        out.weights = VecX::Ones(std::max<std::size_t>(nb, 1)) / static_cast<double>(std::max<std::size_t>(nb, 1));
        out.bone_transforms.assign(nb, SE3Transform::identity());
        return out;
    }
    ModelState bones_only;
    bones_only.config = model.config;
    bones_only.bones = model.bones;
    bones_only.track = model.track;
    bones_only.mlp = model.mlp;
    const WarpEvaluation bones_eval = evaluate_warp(bones_only, t);
    std::vector<Vec3> precision(nb);
    for (std::size_t b = 0; b < nb; ++b) {
        precision[b] = model.bones[b].precision();
    }
    out.weights = skinning_weights(x, bones_eval.bones, precision);
    std::vector<DualQuaternion> dqs(nb);
    out.bone_transforms.resize(nb);
    for (std::size_t b = 0; b < nb; ++b) {
        if (model.track) {
            dqs[b] = model.track->at(b, t);
        } else {
            dqs[b] = bone_transform(model.mlp, bones_eval.latents[b], x, t);
        }
        out.bone_transforms[b] = unit_dualquat_to_se3(dqs[b]);
    }
    out.transform = dqb_blend(std::span<const double>(out.weights.data(), nb), dqs);
    return out;
}

WarpedSurfel warp_surfel(const Surfel& s, const SE3Transform& j, Branch branch) {
    WarpedSurfel out;
    out.center = j.rotation * s.center + j.translation;
    const Mat3 frame = s.frame();
    if (branch == Branch::Base) {
        out.rotation = j.rotation * frame;
        const Vec2 sc = s.scale();
        out.scale = Vec3(sc.x(), sc.y(), 0.0);
        out.planar = true;
        return out;
    }
    out.rotation = j.rotation * (quat_to_rotmat(s.refine_rotation) * frame);
    out.scale = s.refined_scale();
    out.planar = !(out.scale.z() > kMinRefinedScale);
    return out;
}

WarpEvaluation evaluate_warp(const ModelState& model, double t) {
    WarpEvaluation ev;
    ev.t = t;
    const std::size_t nk = model.surfels.size();
    const std::size_t nb = model.bones.size();
    if (model.config.warp_frozen || nb == 0) {
        ev.mode = WarpEvaluation::Mode::Identity;
        ev.transforms.assign(nk, SE3Transform::identity());
        return ev;
    }
    ev.mode = model.track ? WarpEvaluation::Mode::Track : WarpEvaluation::Mode::Field;

    ev.latents.resize(nb);
    ev.bones.resize(nb);
    ev.bone_dq.resize(nb);
    ev.bone_raw.resize(nb);
    std::vector<Vec3> precision(nb);
    for (std::size_t b = 0; b < nb; ++b) {
        const Bone& bone = model.bones[b];
        precision[b] = bone.precision();
        if (ev.mode == WarpEvaluation::Mode::Track) {
            ev.bone_dq[b] = model.track->at(b, t);
            ev.bone_raw[b] = ev.bone_dq[b].to_vec8();
        } else {
            ev.latents[b] = latent_at(bone, t);
            const MlpShape& s = model.mlp.shape();
            ev.bone_raw[b] = model.mlp.forward(ev.latents[b], encode_inputs(bone.center, t, s.pos_freqs, s.time_freqs));
            ev.bone_dq[b] = normalize_dualquat(DualQuaternion::from_vec8(ev.bone_raw[b]));
        }
        ev.bones[b] = transform_bone(unit_dualquat_to_se3(ev.bone_dq[b]), bone.center, bone.frame());
    }

    ev.point_raw.resize(nk * nb);
    if (ev.mode == WarpEvaluation::Mode::Track) {
        for (std::size_t k = 0; k < nk; ++k) {
            for (std::size_t b = 0; b < nb; ++b) {
                ev.point_raw[k * nb + b] = ev.bone_raw[b];
            }
        }
    } else if (nk > 0) {
        std::vector<Vec3> centers(nk);
        for (std::size_t k = 0; k < nk; ++k) {
            centers[k] = model.surfels[k].center;
        }
        const RowMatX enc = encode_rows(centers, t, model.mlp.shape());
        parallel_for(nb, [&](std::size_t b) {
            const RowMatX raw = model.mlp.forward_batch(ev.latents[b], enc, nullptr);
            for (std::size_t k = 0; k < nk; ++k) {
                ev.point_raw[k * nb + b] = raw.row(static_cast<Eigen::Index>(k)).transpose();
            }
        });
    }

    ev.weights.resize(static_cast<Eigen::Index>(nk), static_cast<Eigen::Index>(nb));
    ev.pivot.resize(nk);
    ev.blend.resize(nk);
    ev.transforms.resize(nk);
    parallel_for(nk, [&](std::size_t k) {
        const VecX w = skinning_weights(model.surfels[k].center, ev.bones, precision);
        ev.weights.row(static_cast<Eigen::Index>(k)) = w.transpose();
        const std::size_t pivot = dqb_pivot(std::span<const double>(w.data(), nb));
        ev.pivot[k] = pivot;
        const Vec8 pivot_unit = unit_of(ev.point_raw[k * nb + pivot]);
        Vec8 sum = Vec8::Zero();
        for (std::size_t b = 0; b < nb; ++b) {
            const Vec8 q = unit_of(ev.point_raw[k * nb + b]);
            const double sign = q.head<4>().dot(pivot_unit.head<4>()) < 0.0 ? -1.0 : 1.0;
            sum += (w[static_cast<Eigen::Index>(b)] * sign) * q;
        }
        ev.blend[k] = sum;
        ev.transforms[k] = dualquat_to_se3(DualQuaternion::from_vec8(sum));
    });
    return ev;
}

void warp_backward(const ModelState& model, const WarpEvaluation& ev, std::span<const Mat3> grad_rotation,
                   std::span<const Vec3> grad_translation, ModelState& grad) {
    if (ev.mode == WarpEvaluation::Mode::Identity) {
        return;
    }
    const std::size_t nk = model.surfels.size();
    const std::size_t nb = model.bones.size();
    const bool field = ev.mode == WarpEvaluation::Mode::Field;

    std::vector<Vec3> precision(nb);
    for (std::size_t b = 0; b < nb; ++b) {
        precision[b] = model.bones[b].precision();
    }

    // dL/d(raw field output) per bone, one row per surfel.
    std::vector<RowMatX> g_raw(nb, RowMatX::Zero(static_cast<Eigen::Index>(nk), 8));

    struct BoneAccum {
        Vec3 center = Vec3::Zero();
        Mat3 rotation = Mat3::Zero();
        Vec3 log_precision = Vec3::Zero();
    };
    const std::size_t chunks = (nk + kChunk - 1) / kChunk;
    std::vector<std::vector<BoneAccum>> chunk_accum(chunks, std::vector<BoneAccum>(nb));

    parallel_for(chunks, [&](std::size_t c) {
        auto& acc = chunk_accum[c];
        const std::size_t end = std::min(nk, (c + 1) * kChunk);
        for (std::size_t k = c * kChunk; k < end; ++k) {
            const Vec8& blend = ev.blend[k];
            const DualQuaternion unit = normalize_dualquat(DualQuaternion::from_vec8(blend));
            const Vec8 g_unit = unit_dualquat_to_se3_vjp(unit, grad_rotation[k], grad_translation[k]);
            const Vec8 g_blend = normalize_dualquat_vjp(blend, g_unit);

            const auto row = static_cast<Eigen::Index>(k);
            const VecX w = ev.weights.row(row).transpose();
            const Vec8 pivot_unit = unit_of(ev.point_raw[k * nb + ev.pivot[k]]);
            VecX g_w(static_cast<Eigen::Index>(nb));
            for (std::size_t b = 0; b < nb; ++b) {
                const Vec8& raw = ev.point_raw[k * nb + b];
                const Vec8 q = unit_of(raw);
                const double sign = q.head<4>().dot(pivot_unit.head<4>()) < 0.0 ? -1.0 : 1.0;
                g_w[static_cast<Eigen::Index>(b)] = sign * q.dot(g_blend);
                if (field) {
                    const Vec8 g_q = (w[static_cast<Eigen::Index>(b)] * sign) * g_blend;
                    g_raw[b].row(row) = normalize_dualquat_vjp(raw, g_q).transpose();
                }
            }

            // softmax(-m/2)
            const double wg = w.dot(g_w);
            const Vec3& x = model.surfels[k].center;
            Vec3 g_x = Vec3::Zero();
            for (std::size_t b = 0; b < nb; ++b) {
                const auto bi = static_cast<Eigen::Index>(b);
                const double g_m = -0.5 * w[bi] * (g_w[bi] - wg);
                const BoneState& bs = ev.bones[b];
                const Vec3 delta = x - bs.center;
                const Vec3 y = bs.rotation * delta;
                const Vec3 g_y = 2.0 * g_m * precision[b].cwiseProduct(y);
                acc[b].log_precision += g_m * precision[b].cwiseProduct(y.cwiseAbs2());
                acc[b].rotation += g_y * delta.transpose();
                const Vec3 g_delta = bs.rotation.transpose() * g_y;
                g_x += g_delta;
                acc[b].center -= g_delta;
            }
            grad.surfels[k].center += g_x;
        }
    });

    std::vector<BoneAccum> bone_acc(nb);
    for (const auto& acc : chunk_accum) {
        for (std::size_t b = 0; b < nb; ++b) {
            bone_acc[b].center += acc[b].center;
            bone_acc[b].rotation += acc[b].rotation;
            bone_acc[b].log_precision += acc[b].log_precision;
        }
    }

    std::vector<WarpFieldMLP> mlp_grads;
    std::vector<VecX> latent_grads(nb);
    std::vector<RowMatX> enc_grads(nb);
    RowMatX enc;
    if (field) {
        mlp_grads.assign(nb, model.mlp.zeros_like());
        std::vector<Vec3> centers(nk);
        for (std::size_t k = 0; k < nk; ++k) {
            centers[k] = model.surfels[k].center;
        }
        enc = encode_rows(centers, ev.t, model.mlp.shape());
    }

    const MlpShape& shape = model.mlp.shape();
    parallel_for(nb, [&](std::size_t b) {
        const Bone& bone = model.bones[b];
        Bone& gbone = grad.bones[b];
        const BoneAccum& acc = bone_acc[b];
        gbone.log_precision += acc.log_precision;

        // c^t = R c* + T, V^t = R V*
        const SE3Transform jb = unit_dualquat_to_se3(ev.bone_dq[b]);
        const Mat3 static_rot = bone.frame();
        const Mat3 g_r = acc.center * bone.center.transpose() + acc.rotation * static_rot.transpose();
        gbone.center += jb.rotation.transpose() * acc.center;
        gbone.rotation += rotmat_from_raw_vjp(bone.rotation, jb.rotation.transpose() * acc.rotation);

        if (!field) {
            return;
        }
        latent_grads[b] = VecX::Zero(shape.latent_dim);
        const Vec8 g_unit = unit_dualquat_to_se3_vjp(ev.bone_dq[b], g_r, acc.center);
        const Vec8 g_bone_raw = normalize_dualquat_vjp(ev.bone_raw[b], g_unit);

        // Field query at the bone's own center.
        RowMatX bone_enc(1, shape.encoding_dim());
        bone_enc.row(0) = encode_inputs(bone.center, ev.t, shape.pos_freqs, shape.time_freqs).transpose();
        WarpFieldMLP::BatchCache cache;
        model.mlp.forward_batch(ev.latents[b], bone_enc, &cache);
        RowMatX g_out(1, 8);
        g_out.row(0) = g_bone_raw.transpose();
        RowMatX g_bone_enc;
        model.mlp.backward_batch(ev.latents[b], bone_enc, cache, g_out, mlp_grads[b], latent_grads[b], &g_bone_enc);
        gbone.center += encode_inputs_vjp_x(bone.center, shape.pos_freqs, g_bone_enc.data());

        // Field queries at every surfel center.
        if (nk > 0) {
            model.mlp.forward_batch(ev.latents[b], enc, &cache);
            model.mlp.backward_batch(ev.latents[b], enc, cache, g_raw[b], mlp_grads[b], latent_grads[b], &enc_grads[b]);
        }
        latent_at_vjp(gbone.latents, ev.t, latent_grads[b]);
    });

    if (!field) {
        return;
    }
    for (std::size_t b = 0; b < nb; ++b) {
        grad.mlp.add(mlp_grads[b]);
    }
    parallel_for(nk, [&](std::size_t k) {
        Vec3 g = Vec3::Zero();
        for (std::size_t b = 0; b < nb; ++b) {
            g += encode_inputs_vjp_x(model.surfels[k].center, shape.pos_freqs,
                                     enc_grads[b].row(static_cast<Eigen::Index>(k)).data());
        }
        grad.surfels[k].center += g;
    });
}

} // namespace dgs
