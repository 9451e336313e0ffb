#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "dgs/geom.hpp"
#include "dgs/mlp.hpp"
#include "dgs/model.hpp"
#include "dgs/rng.hpp"
#include "dgs/warp.hpp"

using namespace dgs;

namespace {

constexpr double kPi = std::numbers::pi;

void randomize_last_layer(WarpFieldMLP& mlp, Rng& rng, double amp) {
    DenseLayer& last = mlp.layers().back();
    for (Eigen::Index i = 0; i < last.weight.size(); ++i) {
        last.weight.data()[i] = rng.uniform(-amp, amp);
    }
    for (Eigen::Index i = 0; i < last.bias.size(); ++i) {
        last.bias[i] = rng.uniform(-amp, amp);
    }
}

ModelState field_model(int bones, int frames, std::uint64_t seed, double amp) {
    Rng rng(seed);
    ModelState m;
    m.config.frame_count = frames;
    m.config.bone_count = bones;
    m.config.mlp = MlpShape{6, 3, 2, 2, 16};
    m.mlp = WarpFieldMLP(m.config.mlp, seed);
    randomize_last_layer(m.mlp, rng, amp);
    for (int b = 0; b < bones; ++b) {
        Bone bone;
        bone.center = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        bone.rotation = Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        bone.log_precision = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        bone.latents.resize(frames, m.config.mlp.latent_dim);
        for (Eigen::Index i = 0; i < bone.latents.size(); ++i) {
            bone.latents.data()[i] = rng.normal();
        }
        m.bones.push_back(bone);
    }
    return m;
}

double se3_diff(const SE3Transform& a, const SE3Transform& b) {
    return std::max((a.rotation - b.rotation).cwiseAbs().maxCoeff(),
                    (a.translation - b.translation).cwiseAbs().maxCoeff());
}

/// Reference softmax(-m/2) over Mahalanobis distances, written out directly.
std::vector<double> reference_weights(const Vec3& x, const std::vector<BoneState>& bones,
                                      const std::vector<Vec3>& precision) {
    std::vector<double> m;
    for (std::size_t b = 0; b < bones.size(); ++b) {
        const Vec3 d = x - bones[b].center;
        const Mat3 q = bones[b].rotation.transpose() * precision[b].asDiagonal() * bones[b].rotation;
        m.push_back(d.dot(q * d));
    }
    const double lo = *std::min_element(m.begin(), m.end());
    double sum = 0;
    std::vector<double> w;
    for (double v : m) {
        w.push_back(std::exp(-0.5 * (v - lo)));
        sum += w.back();
    }
    for (double& v : w) {
        v /= sum;
    }
    return w;
}

} // namespace

TEST(Encoding, ZeroInput) {
    const VecX e = encode_inputs(Vec3::Zero(), 0.0, 4, 2);
    ASSERT_EQ(e.size(), 3 + 6 * 4 + 1 + 2 * 2);
    for (int i = 0; i < 3; ++i) {
        EXPECT_EQ(e[i], 0.0);
    }
    for (int k = 0; k < 4; ++k) {
        for (int c = 0; c < 3; ++c) {
            EXPECT_EQ(e[3 + 6 * k + c], 0.0);
            EXPECT_EQ(e[3 + 6 * k + 3 + c], 1.0);
        }
    }
    EXPECT_EQ(e[27], 0.0);
    EXPECT_EQ(e[28], 0.0);
    EXPECT_EQ(e[29], 1.0);
    EXPECT_EQ(e[30], 0.0);
    EXPECT_EQ(e[31], 1.0);
}

TEST(Encoding, LengthFormula) {
    for (int fx : {0, 1, 3, 6}) {
        for (int ft : {0, 2, 5}) {
            EXPECT_EQ(encode_inputs(Vec3(1, 2, 3), 0.4, fx, ft).size(), 3 + 6 * fx + 1 + 2 * ft);
            EXPECT_EQ((MlpShape{8, fx, ft, 1, 4}.encoding_dim()), 3 + 6 * fx + 1 + 2 * ft);
        }
    }
}

TEST(Encoding, OctaveLipschitzBound) {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const Vec3 a(rng.normal(), rng.normal(), rng.normal());
        const Vec3 b = a + 0.01 * Vec3(rng.normal(), rng.normal(), rng.normal());
        const VecX ea = encode_inputs(a, 0.5, 5, 0);
        const VecX eb = encode_inputs(b, 0.5, 5, 0);
        for (int k = 0; k < 5; ++k) {
            for (int c = 0; c < 3; ++c) {
                const double bound = std::ldexp(1.0, k) * std::abs(a[c] - b[c]) + 1e-15;
                EXPECT_LE(std::abs(ea[3 + 6 * k + c] - eb[3 + 6 * k + c]), bound);
                EXPECT_LE(std::abs(ea[3 + 6 * k + 3 + c] - eb[3 + 6 * k + 3 + c]), bound);
            }
        }
    }
}

TEST(Encoding, VjpMatchesDifferences) {
    Rng rng(2);
    const Vec3 x(0.3, -0.7, 1.1);
    const int fx = 4;
    VecX g(3 + 6 * fx + 1);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
        g[i] = rng.normal();
    }
    const Vec3 analytic = encode_inputs_vjp_x(x, fx, g.data());
    for (int c = 0; c < 3; ++c) {
        Vec3 up = x;
        Vec3 dn = x;
        up[c] += 1e-6;
        dn[c] -= 1e-6;
        const double fd = (encode_inputs(up, 0.2, fx, 0) - encode_inputs(dn, 0.2, fx, 0)).dot(g) / 2e-6;
        EXPECT_NEAR(analytic[c], fd, 1e-7);
    }
}

TEST(Mlp, FreshFieldIsIdentity) {
    const WarpFieldMLP mlp(MlpShape{8, 4, 2, 3, 32}, 3);
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        VecX latent(8);
        for (int k = 0; k < 8; ++k) {
            latent[k] = 10 * rng.normal();
        }
        const Vec3 x(rng.normal(), rng.normal(), rng.normal());
        const SE3Transform j = dualquat_to_se3(bone_transform(mlp, latent, x, rng.uniform()));
        EXPECT_EQ(j.rotation, Mat3::Identity());
        EXPECT_EQ(j.translation, Vec3::Zero());
    }
}

TEST(Mlp, BatchMatchesSingle) {
    Rng rng(4);
    WarpFieldMLP mlp(MlpShape{5, 2, 1, 2, 12}, 4);
    randomize_last_layer(mlp, rng, 0.3);
    VecX latent(5);
    for (int k = 0; k < 5; ++k) {
        latent[k] = rng.normal();
    }
    RowMatX enc(4, mlp.shape().encoding_dim());
    for (int r = 0; r < 4; ++r) {
        enc.row(r) = encode_inputs(Vec3(rng.normal(), rng.normal(), rng.normal()), 0.3, 2, 1).transpose();
    }
    const RowMatX out = mlp.forward_batch(latent, enc, nullptr);
    for (int r = 0; r < 4; ++r) {
        EXPECT_LT((out.row(r).transpose() - mlp.forward(latent, enc.row(r).transpose())).norm(), 1e-13);
    }
}

TEST(Mlp, BackwardMatchesDifferences) {
    Rng rng(5);
    WarpFieldMLP mlp(MlpShape{3, 1, 1, 2, 6}, 5);
    randomize_last_layer(mlp, rng, 0.5);
    VecX latent(3);
    for (int k = 0; k < 3; ++k) {
        latent[k] = rng.normal();
    }
    const int n = 3;
    RowMatX enc(n, mlp.shape().encoding_dim());
    RowMatX g_out(n, 8);
    for (Eigen::Index i = 0; i < enc.size(); ++i) {
        enc.data()[i] = rng.normal();
    }
    for (Eigen::Index i = 0; i < g_out.size(); ++i) {
        g_out.data()[i] = rng.normal();
    }
    WarpFieldMLP::BatchCache cache;
    mlp.forward_batch(latent, enc, &cache);
    WarpFieldMLP grad = mlp.zeros_like();
    VecX g_lat = VecX::Zero(3);
    RowMatX g_enc;
    mlp.backward_batch(latent, enc, cache, g_out, grad, g_lat, &g_enc);

    const auto objective = [&](const WarpFieldMLP& m, const VecX& lat, const RowMatX& e) {
        return m.forward_batch(lat, e, nullptr).cwiseProduct(g_out).sum();
    };
    const double h = 1e-6;
    for (std::size_t l = 0; l < mlp.layers().size(); ++l) {
        for (Eigen::Index i = 0; i < mlp.layers()[l].weight.size(); ++i) {
            WarpFieldMLP up = mlp;
            WarpFieldMLP dn = mlp;
            up.layers()[l].weight.data()[i] += h;
            dn.layers()[l].weight.data()[i] -= h;
            const double fd = (objective(up, latent, enc) - objective(dn, latent, enc)) / (2 * h);
            EXPECT_NEAR(grad.layers()[l].weight.data()[i], fd, 1e-7);
        }
        for (Eigen::Index i = 0; i < mlp.layers()[l].bias.size(); ++i) {
            WarpFieldMLP up = mlp;
            WarpFieldMLP dn = mlp;
            up.layers()[l].bias[i] += h;
            dn.layers()[l].bias[i] -= h;
            const double fd = (objective(up, latent, enc) - objective(dn, latent, enc)) / (2 * h);
            EXPECT_NEAR(grad.layers()[l].bias[i], fd, 1e-7);
        }
    }
    for (int k = 0; k < 3; ++k) {
        VecX up = latent;
        VecX dn = latent;
        up[k] += h;
        dn[k] -= h;
        EXPECT_NEAR(g_lat[k], (objective(mlp, up, enc) - objective(mlp, dn, enc)) / (2 * h), 1e-7);
    }
    for (Eigen::Index i = 0; i < enc.size(); ++i) {
        RowMatX up = enc;
        RowMatX dn = enc;
        up.data()[i] += h;
        dn.data()[i] -= h;
        EXPECT_NEAR(g_enc.data()[i], (objective(mlp, latent, up) - objective(mlp, latent, dn)) / (2 * h), 1e-7);
    }
}

TEST(Latent, RowsAndInterpolation) {
    Bone b;
    b.latents.resize(3, 2);
    b.latents << 0, 1, 2, 3, 4, 5;
    EXPECT_EQ(latent_at(b, 0.0), Vec2(0, 1));
    EXPECT_EQ(latent_at(b, 0.5), Vec2(2, 3));
    EXPECT_EQ(latent_at(b, 1.0), Vec2(4, 5));
    EXPECT_LT((latent_at(b, 0.25) - Vec2(1, 2)).norm(), 1e-12);
    EXPECT_DOUBLE_EQ(normalized_time(0, 5), 0.0);
    EXPECT_DOUBLE_EQ(normalized_time(4, 5), 1.0);
    EXPECT_DOUBLE_EQ(normalized_time(2, 5), 0.5);
}

TEST(Bones, TransformActions) {
    const Mat3 v = quat_to_rotmat(Vec4(0.9, 0.1, -0.3, 0.2));
    SE3Transform shift;
    shift.translation = Vec3(0.5, -1, 2);
    const BoneState s = transform_bone(shift, Vec3(1, 1, 1), v);
    EXPECT_LT((s.center - Vec3(1.5, 0, 3)).norm(), 1e-15);
    EXPECT_EQ(s.rotation, v);

    SE3Transform rz;
    rz.rotation = quat_to_rotmat(UnitQuaternion::axis_angle(Vec3::UnitZ(), kPi / 2));
    const BoneState r = transform_bone(rz, Vec3(1, 0, 0), Mat3::Identity());
    EXPECT_LT((r.center - Vec3(0, 1, 0)).norm(), 1e-15);
}

TEST(Bones, IdentityFieldLeavesBonesStatic) {
    ModelState m = field_model(3, 4, 6, 0.0);
    const auto bones = bones_at_time(m, 0.4);
    for (std::size_t b = 0; b < bones.size(); ++b) {
        EXPECT_EQ(bones[b].center, m.bones[b].center);
        EXPECT_EQ(bones[b].rotation, m.bones[b].frame());
    }
}

TEST(Bones, TrackRotationAboutZ) {
    ModelState m;
    m.config.bone_count = 1;
    m.config.frame_count = 2;
    Bone b;
    b.center = Vec3(1, 0, 0);
    m.bones.push_back(b);
    SE3Transform rz;
    rz.rotation = quat_to_rotmat(UnitQuaternion::axis_angle(Vec3::UnitZ(), kPi / 2));
    BoneTrack track;
    track.frames = {{se3_to_dualquat(rz)}, {se3_to_dualquat(rz)}};
    m.track = track;
    EXPECT_LT((bones_at_time(m, 0.0)[0].center - Vec3(0, 1, 0)).norm(), 1e-15);
}

TEST(Skinning, EquidistantIsUniform) {
    std::vector<BoneState> bones(4);
    const double a = 0.7;
    bones[0].center = Vec3(a, 0, 0);
    bones[1].center = Vec3(-a, 0, 0);
    bones[2].center = Vec3(0, a, 0);
    bones[3].center = Vec3(0, -a, 0);
    const std::vector<Vec3> prec(4, Vec3::Ones());
    const VecX w = skinning_weights(Vec3::Zero(), bones, prec);
    for (int b = 0; b < 4; ++b) {
        EXPECT_NEAR(w[b], 0.25, 1e-15);
    }
}

TEST(Skinning, TwoBoneExample) {
    std::vector<BoneState> bones(2);
    bones[1].center = Vec3(1, 1, 0); // m = 2 under unit precision
    const std::vector<Vec3> prec(2, Vec3::Ones());
    const VecX w = skinning_weights(Vec3::Zero(), bones, prec);
    const double e = std::exp(-1.0);
    EXPECT_NEAR(w[0], 1.0 / (1.0 + e), 1e-15);
    EXPECT_NEAR(w[1], e / (1.0 + e), 1e-15);
    EXPECT_NEAR(w[0], 0.7311, 5e-5);
    EXPECT_NEAR(w[1], 0.2689, 5e-5);
}

TEST(Skinning, MatchesReferenceAndIsEquivariant) {
    Rng rng(7);
    for (int i = 0; i < 500; ++i) {
        const int n = 1 + static_cast<int>(rng.index(6));
        std::vector<BoneState> bones(static_cast<std::size_t>(n));
        std::vector<Vec3> prec;
        for (BoneState& b : bones) {
            b.center = Vec3(rng.normal(), rng.normal(), rng.normal());
            b.rotation = quat_to_rotmat(Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal()));
            prec.emplace_back(rng.uniform(0.1, 3), rng.uniform(0.1, 3), rng.uniform(0.1, 3));
        }
        const Vec3 x(rng.normal(), rng.normal(), rng.normal());
        const VecX w = skinning_weights(x, bones, prec);
        const auto ref = reference_weights(x, bones, prec);
        EXPECT_NEAR(w.sum(), 1.0, 1e-12);
        for (int b = 0; b < n; ++b) {
            EXPECT_GE(w[b], 0.0);
            EXPECT_NEAR(w[b], ref[static_cast<std::size_t>(b)], 1e-12);
        }
        // reversed bone order gives reversed weights
        std::vector<BoneState> rb(bones.rbegin(), bones.rend());
        std::vector<Vec3> rp(prec.rbegin(), prec.rend());
        const VecX wr = skinning_weights(x, rb, rp);
        for (int b = 0; b < n; ++b) {
            EXPECT_NEAR(wr[n - 1 - b], w[b], 1e-15);
        }
    }
}

TEST(PointWarp, IdentityField) {
    const ModelState m = field_model(3, 4, 8, 0.0);
    const WarpSample s = point_warp(m, Vec3(0.2, 0.4, -0.1), 0.6);
    EXPECT_EQ(s.transform.rotation, Mat3::Identity());
    EXPECT_EQ(s.transform.translation, Vec3::Zero());
}

TEST(PointWarp, SingleBoneIsItsTransform) {
    const ModelState m = field_model(1, 4, 9, 0.2);
    const Vec3 x(0.3, -0.2, 0.5);
    const double t = 0.4;
    const WarpSample s = point_warp(m, x, t);
    const SE3Transform j = dualquat_to_se3(bone_transform(m.mlp, latent_at(m.bones[0], t), x, t));
    EXPECT_LT(se3_diff(s.transform, j), 1e-12);
    EXPECT_EQ(s.weights.size(), 1);
    EXPECT_EQ(s.weights[0], 1.0);
}

TEST(PointWarp, SharedMotion) {
    Rng rng(10);
    ModelState m = field_model(4, 3, 10, 0.0);
    SE3Transform motion;
    motion.rotation = quat_to_rotmat(Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal()));
    motion.translation = Vec3(0.3, -0.1, 0.7);
    BoneTrack track;
    track.frames.assign(3, std::vector<DualQuaternion>(4, se3_to_dualquat(motion)));
    m.track = track;
    for (int i = 0; i < 100; ++i) {
        const WarpSample s = point_warp(m, Vec3(rng.normal(), rng.normal(), rng.normal()), rng.uniform());
        EXPECT_LT(se3_diff(s.transform, motion), 1e-9);
    }
}

TEST(PointWarp, BlendedTransformsAreValid) {
    const ModelState m = field_model(5, 6, 11, 0.4);
    Rng rng(11);
    for (int i = 0; i < 2000; ++i) {
        const WarpSample s = point_warp(m, Vec3(rng.normal(), rng.normal(), rng.normal()), rng.uniform());
        ASSERT_TRUE(is_valid_se3(s.transform));
        EXPECT_NEAR(s.weights.sum(), 1.0, 1e-9);
    }
}

TEST(PointWarp, ContinuityProbes) {
    const ModelState m = field_model(3, 5, 12, 0.3);
    const Vec3 x(0.1, 0.2, -0.3);
    const double t = 0.37;
    const SE3Transform j0 = point_warp(m, x, t).transform;
    std::vector<double> d;
    for (double delta : {1e-2, 1e-3, 1e-4}) {
        d.push_back(se3_diff(point_warp(m, x, t + delta).transform, j0));
    }
    EXPECT_GT(d[0], 0.0);
    for (int i = 0; i < 2; ++i) {
        const double ratio = d[i] / d[i + 1];
        EXPECT_GT(ratio, 5.0);
        EXPECT_LT(ratio, 20.0);
    }
}

TEST(PointWarp, TimeLipschitzFromWeightNorms) {
    // Latent rows equal so only the encoded time moves the output.
    ModelState m = field_model(1, 4, 13, 0.3);
    m.bones[0].latents.rowwise() = m.bones[0].latents.row(0);
    const MlpShape& sh = m.config.mlp;
    double lip = 0.0;
    for (int k = 0; k < sh.time_freqs; ++k) {
        lip += std::ldexp(1.0, 2 * k);
    }
    lip = std::sqrt(1.0 + lip);
    for (const DenseLayer& l : m.mlp.layers()) {
        lip *= Eigen::JacobiSVD<MatX>(MatX(l.weight)).singularValues()[0];
    }
    const Vec3 x(0.2, 0.1, 0.4);
    const VecX lat = m.bones[0].latents.row(0).transpose();
    const double t = 0.5;
    const double delta = 1e-3;
    const Vec8 r0 = m.mlp.forward(lat, encode_inputs(x, t, sh.pos_freqs, sh.time_freqs));
    const Vec8 r1 = m.mlp.forward(lat, encode_inputs(x, t + delta, sh.pos_freqs, sh.time_freqs));
    EXPECT_LE((r1 - r0).norm(), lip * delta);
    // translation = 2 vec(b_n conj(a_n)); its derivative is bounded by
    // 2 (1/|a| + 4|b|/|a|²) times the raw derivative.
    const double a = r0.head<4>().norm();
    const double b = r0.tail<4>().norm();
    const double c = 2.0 * lip * (1.0 / a + 4.0 * b / (a * a)) * 1.01;
    const Vec3 t0 = dualquat_to_se3(DualQuaternion::from_vec8(r0)).translation;
    const Vec3 t1 = dualquat_to_se3(DualQuaternion::from_vec8(r1)).translation;
    EXPECT_GT((t1 - t0).norm(), 0.0);
    EXPECT_LE((t1 - t0).norm(), c * delta);
}

TEST(WarpSurfel, IdentityGivesStatic) {
    Surfel s;
    s.center = Vec3(1, 2, 3);
    s.rotation = Vec4(0.8, 0.2, -0.1, 0.3);
    s.log_scale = Vec2(std::log(0.2), std::log(0.3));
    const WarpedSurfel base = warp_surfel(s, SE3Transform::identity(), Branch::Base);
    const WarpedSurfel ref = warp_surfel(s, SE3Transform::identity(), Branch::Refined);
    EXPECT_EQ(base.center, s.center);
    EXPECT_EQ(base.rotation, s.frame());
    EXPECT_EQ(base.scale, Vec3(0.2, 0.3, 0.0).cwiseMax(0.0));
    EXPECT_EQ(ref.center, base.center);
    EXPECT_EQ(ref.rotation, base.rotation);
    EXPECT_TRUE(base.planar);
    EXPECT_TRUE(ref.planar);
    EXPECT_EQ(ref.scale.head<2>(), base.scale.head<2>());
}

TEST(WarpSurfel, PureTranslation) {
    Surfel s;
    s.center = Vec3(1, 2, 3);
    s.rotation = Vec4(0.8, 0.2, -0.1, 0.3);
    SE3Transform j;
    j.translation = Vec3(-1, 0.5, 2);
    for (Branch br : {Branch::Base, Branch::Refined}) {
        const WarpedSurfel w = warp_surfel(s, j, br);
        EXPECT_LT((w.center - Vec3(0, 2.5, 5)).norm(), 1e-15);
        EXPECT_LT((w.rotation - s.frame()).norm(), 1e-15);
    }
}

TEST(WarpSurfel, RefinedComposition) {
    Rng rng(14);
    for (int i = 0; i < 10000; ++i) {
        Surfel s;
        s.center = Vec3(rng.normal(), rng.normal(), rng.normal());
        s.rotation = Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        s.log_scale = Vec2(rng.normal(), rng.normal());
        s.refine_rotation = Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        s.refine_scale = Vec3(rng.normal(), rng.normal(), rng.uniform(0, 1));
        SE3Transform j;
        j.rotation = quat_to_rotmat(Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal()));
        j.translation = Vec3(rng.normal(), rng.normal(), rng.normal());
        const WarpedSurfel base = warp_surfel(s, j, Branch::Base);
        const WarpedSurfel ref = warp_surfel(s, j, Branch::Refined);
        ASSERT_EQ(base.center, ref.center);
        const Mat3 expected = j.rotation * quat_to_rotmat(s.refine_rotation) * s.frame();
        EXPECT_LT((ref.rotation - expected).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_EQ(ref.scale, s.refined_scale());
    }
}

TEST(Warp, EvaluationMatchesPointWarp) {
    ModelState m = field_model(3, 4, 15, 0.3);
    Rng rng(15);
    for (int k = 0; k < 10; ++k) {
        Surfel s;
        s.center = Vec3(rng.normal(), rng.normal(), rng.normal());
        m.surfels.push_back(s);
    }
    const double t = 0.55;
    const WarpEvaluation ev = evaluate_warp(m, t);
    for (std::size_t k = 0; k < m.surfels.size(); ++k) {
        EXPECT_LT(se3_diff(ev.transforms[k], point_warp(m, m.surfels[k].center, t).transform), 1e-12);
    }
}

TEST(Warp, FrozenIsIdentity) {
    ModelState m = field_model(3, 4, 16, 0.5);
    m.config.warp_frozen = true;
    m.surfels.resize(2);
    const WarpEvaluation ev = evaluate_warp(m, 0.3);
    EXPECT_EQ(ev.mode, WarpEvaluation::Mode::Identity);
    for (const SE3Transform& j : ev.transforms) {
        EXPECT_EQ(j.rotation, Mat3::Identity());
        EXPECT_EQ(j.translation, Vec3::Zero());
    }
}
