#pragma once

#include <array>
#include <cmath>

#include "bodyfit/types.hpp"

namespace bodyfit {

// 6D rotation encoding: the first two columns of a rotation matrix, stored
// column-first (r[0..2] = col0, r[3..5] = col1). Decoding is Gram-Schmidt.
using Rot6D = Eigen::Matrix<Scalar, 6, 1>;

// Euler angles in radians. Composition is extrinsic X-then-Y-then-Z:
// R = Rz(yaw) * Ry(roll) * Rx(pitch).
struct EulerXYZ {
    Scalar pitch = 0;
    Scalar roll = 0;
    Scalar yaw = 0;
};

inline bool is_rotation(const Mat3& R, Scalar tol = 1e-9) {
    return (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(R.determinant() - 1.0) <= tol;
}

inline Mat3 rot6d_to_matrix(const Rot6D& r) {
    const Vec3 a1 = r.head<3>();
    const Vec3 a2 = r.tail<3>();
    const Scalar n1 = a1.norm();
    if (n1 < 1e-12)
        throw DegenerateInput("rot6d: first column has (near-)zero norm");
    const Vec3 c0 = a1 / n1;
    const Vec3 res = a2 - c0.dot(a2) * c0;
    const Scalar n2 = res.norm();
    if (n2 < 1e-12)
        throw DegenerateInput("rot6d: second column parallel to first");
    const Vec3 c1 = res / n2;
    Mat3 R;
    R.col(0) = c0;
    R.col(1) = c1;
    R.col(2) = c0.cross(c1);
    return R;
}

inline Rot6D matrix_to_rot6d(const Mat3& R) {
    if (!is_rotation(R))
        throw InvalidRotation("matrix_to_rot6d: input is not a rotation");
    Rot6D r;
    r.head<3>() = R.col(0);
    r.tail<3>() = R.col(1);
    return r;
}

inline Rot6D rot6d_identity() {
    Rot6D r;
    r << 1, 0, 0, 0, 1, 0;
    return r;
}

// d(rot6d_to_matrix)/d(r_k), k = 0..5. Exact differentiation of the
// Gram-Schmidt construction, including the cross-product column.
inline std::array<Mat3, 6> rot6d_to_matrix_jacobian(const Rot6D& r) {
    const Vec3 a1 = r.head<3>();
    const Vec3 a2 = r.tail<3>();
    const Scalar n1 = a1.norm();
    if (n1 < 1e-12) throw DegenerateInput("rot6d jacobian: degenerate first column");
    const Vec3 c0 = a1 / n1;
    const Vec3 res = a2 - c0.dot(a2) * c0;
    const Scalar n2 = res.norm();
    if (n2 < 1e-12) throw DegenerateInput("rot6d jacobian: degenerate second column");
    const Vec3 c1 = res / n2;

    std::array<Mat3, 6> jac;
    for (int k = 0; k < 6; ++k) {
        Vec3 da1 = Vec3::Zero(), da2 = Vec3::Zero();
        if (k < 3) da1[k] = 1.0; else da2[k - 3] = 1.0;
        const Vec3 dc0 = da1 / n1 - a1 * (a1.dot(da1) / (n1 * n1 * n1));
        const Scalar dot = c0.dot(a2);
        const Scalar ddot = dc0.dot(a2) + c0.dot(da2);
        const Vec3 dres = da2 - ddot * c0 - dot * dc0;
        const Vec3 dc1 = dres / n2 - res * (res.dot(dres) / (n2 * n2 * n2));
        Mat3 dR;
        dR.col(0) = dc0;
        dR.col(1) = dc1;
        dR.col(2) = dc0.cross(c1) + c0.cross(dc1);
        jac[k] = dR;
    }
    return jac;
}

inline Mat3 euler_to_matrix(const EulerXYZ& e) {
    if (!std::isfinite(e.pitch) || !std::isfinite(e.roll) || !std::isfinite(e.yaw))
        throw DegenerateInput("euler_to_matrix: non-finite component");
    const Mat3 Rx = Eigen::AngleAxisd(e.pitch, Vec3::UnitX()).toRotationMatrix();
    const Mat3 Ry = Eigen::AngleAxisd(e.roll, Vec3::UnitY()).toRotationMatrix();
    const Mat3 Rz = Eigen::AngleAxisd(e.yaw, Vec3::UnitZ()).toRotationMatrix();
    return Rz * Ry * Rx;
}

// d(euler_to_matrix)/d(pitch, roll, yaw)
inline std::array<Mat3, 3> euler_to_matrix_jacobian(const EulerXYZ& e) {
    const Mat3 Rx = Eigen::AngleAxisd(e.pitch, Vec3::UnitX()).toRotationMatrix();
    const Mat3 Ry = Eigen::AngleAxisd(e.roll, Vec3::UnitY()).toRotationMatrix();
    const Mat3 Rz = Eigen::AngleAxisd(e.yaw, Vec3::UnitZ()).toRotationMatrix();
    Mat3 dRx, dRy, dRz;
    const Scalar cp = std::cos(e.pitch), sp = std::sin(e.pitch);
    const Scalar cr = std::cos(e.roll), sr = std::sin(e.roll);
    const Scalar cy = std::cos(e.yaw), sy = std::sin(e.yaw);
    dRx << 0, 0, 0, 0, -sp, -cp, 0, cp, -sp;
    dRy << -sr, 0, cr, 0, 0, 0, -cr, 0, -sr;
    dRz << -sy, -cy, 0, cy, -sy, 0, 0, 0, 0;
    return {Rz * Ry * dRx, Rz * dRy * Rx, dRz * Ry * Rx};
}

inline Mat3 axis_angle_to_matrix(const Vec3& a) {
    if (!a.allFinite())
        throw DegenerateInput("axis_angle_to_matrix: non-finite input");
    const Scalar angle = a.norm();
    if (angle < 1e-16) return Mat3::Identity();
    return Eigen::AngleAxisd(angle, a / angle).toRotationMatrix();
}

}  // namespace bodyfit
