#pragma once

// Rotation, dual-quaternion and rigid-motion algebra.
//
// Quaternions are stored (w, x, y, z). Every operation here is a pure
// function; the *_vjp helpers are the hand-written reverse-mode
// counterparts used by the warp-field backward pass.

#include <span>

#include "dgs/types.hpp"

namespace dgs {

struct UnitQuaternion {
    double w = 1.0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    /// Normalizes `raw`; a zero vector maps to the identity rotation.
    static UnitQuaternion from_vec(const Vec4& raw);
    static UnitQuaternion axis_angle(const Vec3& axis, double angle);

    Vec4 vec() const { return {w, x, y, z}; }
    double norm() const;
};

struct SE3Transform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    static SE3Transform identity() { return {}; }

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    SE3Transform compose(const SE3Transform& rhs) const;
    SE3Transform inverse() const;
};

struct DualQuaternion {
    Vec4 real{1.0, 0.0, 0.0, 0.0};
    Vec4 dual = Vec4::Zero();

    static DualQuaternion from_vec8(const Vec8& v);
    Vec8 to_vec8() const;
};

// Hamilton product and conjugate on raw 4-vectors.
Vec4 quat_mul(const Vec4& a, const Vec4& b);
Vec4 quat_conj(const Vec4& q);

Mat3 quat_to_rotmat(const UnitQuaternion& q);
Mat3 quat_to_rotmat(const Vec4& raw);
/// Shepperd's method; the returned quaternion has w >= 0.
UnitQuaternion rotmat_to_quat(const Mat3& r);

/// Rotation taking +z onto `n` along the shortest arc.
UnitQuaternion quat_from_z_to(const Vec3& n);

/// The quaternion process: real = quat(R), dual = 1/2 (0, t) * real.
DualQuaternion se3_to_dualquat(const SE3Transform& t);

/// Divides by |real| and removes the component of `dual` along `real`.
/// Throws DegenerateInput when |real| < 1e-12.
DualQuaternion normalize_dualquat(const DualQuaternion& d);

/// The inverse quaternion process. Normalizes first, so any non-degenerate
/// 8-vector decodes to a valid rigid motion.
SE3Transform dualquat_to_se3(const DualQuaternion& d);

/// Decodes an already-unit dual quaternion without re-normalizing.
SE3Transform unit_dualquat_to_se3(const DualQuaternion& d);

/// Dual quaternion blend skinning. Inputs are sign-aligned to the
/// highest-weight transform before summation.
SE3Transform dqb_blend(std::span<const double> weights, std::span<const DualQuaternion> transforms);

/// Index of the largest weight (first on ties).
std::size_t dqb_pivot(std::span<const double> weights);

/// Max-norm distance of rotation from SO(3): |RᵀR - I|_inf.
double orthogonality_error(const Mat3& r);
bool is_valid_se3(const SE3Transform& t, double tol = 1e-9);

// ---- reverse-mode helpers ------------------------------------------------

/// Gradient w.r.t. a unit quaternion q given dL/dR for R = quat_to_rotmat(q).
Vec4 quat_to_rotmat_vjp(const Vec4& unit_q, const Mat3& grad_r);

/// Gradient w.r.t. `raw` of L(raw / |raw|) given dL/d(unit).
Vec4 normalize4_vjp(const Vec4& raw, const Vec4& grad_unit);

/// Chains both of the above: dL/draw for R = quat_to_rotmat(raw / |raw|).
Vec4 rotmat_from_raw_vjp(const Vec4& raw, const Mat3& grad_r);

/// Gradient of normalize_dualquat w.r.t. its raw input.
Vec8 normalize_dualquat_vjp(const Vec8& raw, const Vec8& grad_unit);

/// Gradient of unit_dualquat_to_se3 w.r.t. the unit dual quaternion.
Vec8 unit_dualquat_to_se3_vjp(const DualQuaternion& unit, const Mat3& grad_r, const Vec3& grad_t);

} // namespace dgs
