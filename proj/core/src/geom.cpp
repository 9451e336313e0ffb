#include "dgs/geom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dgs/error.hpp"

namespace dgs {

namespace {

constexpr double kDegenerateNorm = 1e-12;

Vec3 imag(const Vec4& q) { return q.tail<3>(); }

} // namespace

UnitQuaternion UnitQuaternion::from_vec(const Vec4& raw) {
    const double n = raw.norm();
    if (!(n > 0.0)) {
        return {};
    }
    return {raw[0] / n, raw[1] / n, raw[2] / n, raw[3] / n};
}

UnitQuaternion UnitQuaternion::axis_angle(const Vec3& axis, double angle) {
    const Vec3 a = axis.normalized();
    const double s = std::sin(0.5 * angle);
    return {std::cos(0.5 * angle), a.x() * s, a.y() * s, a.z() * s};
}

double UnitQuaternion::norm() const { return vec().norm(); }

SE3Transform SE3Transform::compose(const SE3Transform& rhs) const {
    return {rotation * rhs.rotation, rotation * rhs.translation + translation};
}

SE3Transform SE3Transform::inverse() const {
    const Mat3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
}

DualQuaternion DualQuaternion::from_vec8(const Vec8& v) { return {v.head<4>(), v.tail<4>()}; }

Vec8 DualQuaternion::to_vec8() const {
    Vec8 v;
    v << real, dual;
    return v;
}

Vec4 quat_mul(const Vec4& a, const Vec4& b) {
    return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

Vec4 quat_conj(const Vec4& q) { return {q[0], -q[1], -q[2], -q[3]}; }

Mat3 quat_to_rotmat(const UnitQuaternion& q) {
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3 r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

Mat3 quat_to_rotmat(const Vec4& raw) { return quat_to_rotmat(UnitQuaternion::from_vec(raw)); }

UnitQuaternion rotmat_to_quat(const Mat3& r) {
    const double trace = r.trace();
    Vec4 q;
    if (trace > r(0, 0) && trace > r(1, 1) && trace > r(2, 2)) {
        const double s = 2.0 * std::sqrt(1.0 + trace);
        q << 0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s;
    } else if (r(0, 0) >= r(1, 1) && r(0, 0) >= r(2, 2)) {
        const double s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
        q << (r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s;
    } else if (r(1, 1) >= r(2, 2)) {
        const double s = 2.0 * std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2));
        q << (r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s;
    } else {
        const double s = 2.0 * std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1));
        q << (r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s;
    }
    if (q[0] < 0.0) {
        q = -q;
    }
    return UnitQuaternion::from_vec(q);
}

UnitQuaternion quat_from_z_to(const Vec3& n) {
    const Vec3 target = n.normalized();
    const Vec3 z = Vec3::UnitZ();
    const double c = z.dot(target);
    if (c >= 1.0) {
        return {};
    }
    if (c < -1.0 + 1e-12) {
        // Antipodal: any axis orthogonal to z works.
        return {0.0, 1.0, 0.0, 0.0};
    }
    const Vec3 axis = z.cross(target);
    // Half-angle form: q = (1 + c, axis) normalized.
    return UnitQuaternion::from_vec(Vec4(1.0 + c, axis.x(), axis.y(), axis.z()));
}

DualQuaternion se3_to_dualquat(const SE3Transform& t) {
    const Vec4 real = rotmat_to_quat(t.rotation).vec();
    const Vec4 tq(0.0, t.translation.x(), t.translation.y(), t.translation.z());
    return {real, 0.5 * quat_mul(tq, real)};
}

DualQuaternion normalize_dualquat(const DualQuaternion& d) {
    const double n = d.real.norm();
    if (!(n >= kDegenerateNorm)) {
        throw DegenerateInput("dual quaternion real part has vanishing norm");
    }
    const Vec4 r = d.real / n;
    const Vec4 dp = d.dual / n;
    return {r, dp - r.dot(dp) * r};
}

SE3Transform unit_dualquat_to_se3(const DualQuaternion& d) {
    const Vec4& r = d.real;
    const Vec4 tq = 2.0 * quat_mul(d.dual, quat_conj(r));
    SE3Transform out;
    out.rotation = quat_to_rotmat(UnitQuaternion{r[0], r[1], r[2], r[3]});
    out.translation = imag(tq);
    return out;
}

SE3Transform dualquat_to_se3(const DualQuaternion& d) { return unit_dualquat_to_se3(normalize_dualquat(d)); }

std::size_t dqb_pivot(std::span<const double> weights) {
    return static_cast<std::size_t>(std::max_element(weights.begin(), weights.end()) - weights.begin());
}

SE3Transform dqb_blend(std::span<const double> weights, std::span<const DualQuaternion> transforms) {
    if (weights.empty() || weights.size() != transforms.size()) {
        throw std::invalid_argument("dqb_blend: need one weight per transform and at least one transform");
    }
    double total = 0.0;
    for (double w : weights) {
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-6) {
        throw std::invalid_argument("dqb_blend: weights must sum to one");
    }
    const Vec4& pivot = transforms[dqb_pivot(weights)].real;
    DualQuaternion sum{Vec4::Zero(), Vec4::Zero()};
    for (std::size_t b = 0; b < weights.size(); ++b) {
        const double sign = transforms[b].real.dot(pivot) < 0.0 ? -1.0 : 1.0;
        sum.real += (weights[b] * sign) * transforms[b].real;
        sum.dual += (weights[b] * sign) * transforms[b].dual;
    }
    return dualquat_to_se3(sum);
}

double orthogonality_error(const Mat3& r) {
    return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
}

bool is_valid_se3(const SE3Transform& t, double tol) {
    return orthogonality_error(t.rotation) < tol && std::abs(t.rotation.determinant() - 1.0) < tol &&
           t.translation.allFinite();
}

Vec4 quat_to_rotmat_vjp(const Vec4& q, const Mat3& g) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Vec4 out;
    out[0] = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    out[1] = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                    w * g(2, 1) - 2.0 * x * g(2, 2));
    out[2] = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                    z * g(2, 1) - 2.0 * y * g(2, 2));
    out[3] = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) +
                    y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
    return out;
}

Vec4 normalize4_vjp(const Vec4& raw, const Vec4& grad_unit) {
    const double n = raw.norm();
    const Vec4 u = raw / n;
    return (grad_unit - u.dot(grad_unit) * u) / n;
}

Vec4 rotmat_from_raw_vjp(const Vec4& raw, const Mat3& grad_r) {
    const Vec4 unit = raw / raw.norm();
    return normalize4_vjp(raw, quat_to_rotmat_vjp(unit, grad_r));
}

Vec8 normalize_dualquat_vjp(const Vec8& raw, const Vec8& grad_unit) {
    const Vec4 qr = raw.head<4>();
    const Vec4 qd = raw.tail<4>();
    const double n = qr.norm();
    const Vec4 r = qr / n;
    const Vec4 dp = qd / n;
    const Vec4 g_r_out = grad_unit.head<4>();
    const Vec4 g_d = grad_unit.tail<4>();

    // d = d' - (r.d') r
    const double r_dot_dp = r.dot(dp);
    const double r_dot_gd = r.dot(g_d);
    const Vec4 g_dp = g_d - r_dot_gd * r;
    const Vec4 g_r = g_r_out - (r_dot_dp * g_d + r_dot_gd * dp);

    Vec8 out;
    out.head<4>() = (g_r - r.dot(g_r) * r) / n - (dp.dot(g_dp) / n) * r;
    out.tail<4>() = g_dp / n;
    return out;
}

Vec8 unit_dualquat_to_se3_vjp(const DualQuaternion& unit, const Mat3& grad_r, const Vec3& grad_t) {
    const Vec4& r = unit.real;
    const Vec4& d = unit.dual;
    const Vec3 rv = imag(r);
    const Vec3 dv = imag(d);
    const Vec3& g = grad_t;

    // t = 2 (rw dv - dw rv - dv x rv)
    Vec4 g_real = quat_to_rotmat_vjp(r, grad_r);
    g_real[0] += 2.0 * g.dot(dv);
    g_real.tail<3>() += 2.0 * (-d[0] * g + dv.cross(g));

    Vec4 g_dual;
    g_dual[0] = -2.0 * g.dot(rv);
    g_dual.tail<3>() = 2.0 * (r[0] * g - rv.cross(g));

    Vec8 out;
    out << g_real, g_dual;
    return out;
}

} // namespace dgs
