#pragma once

#include <array>
#include <cmath>

#include "trideform/core/vec3.hpp"

namespace trideform {

// Row-major 3x3, float storage with double construction math.
struct Mat3 {
    std::array<float, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return {}; }

    static Mat3 from_rows(Vec3 r0, Vec3 r1, Vec3 r2) {
        Mat3 out;
        out.m = {r0.x, r0.y, r0.z, r1.x, r1.y, r1.z, r2.x, r2.y, r2.z};
        return out;
    }

    static Mat3 diag(float a, float b, float c) {
        Mat3 out;
        out.m = {a, 0, 0, 0, b, 0, 0, 0, c};
        return out;
    }

    // Rotation vector: direction = axis, magnitude = angle in radians.
    static Mat3 from_rotvec(const Vec3d& v) {
        const double angle = v.norm();
        if (angle < 1e-12) return identity();
        const Vec3d a = v * (1.0 / angle);
        const double c = std::cos(angle), s = std::sin(angle), t = 1 - c;
        Mat3 out;
        out.m = {
            float(t * a.x * a.x + c),       float(t * a.x * a.y - s * a.z),
            float(t * a.x * a.z + s * a.y), float(t * a.x * a.y + s * a.z),
            float(t * a.y * a.y + c),       float(t * a.y * a.z - s * a.x),
            float(t * a.x * a.z - s * a.y), float(t * a.y * a.z + s * a.x),
            float(t * a.z * a.z + c),
        };
        return out;
    }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }

    Vec3d mul(const Vec3d& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }

    Mat3 transposed() const {
        Mat3 out;
        out.m = {m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]};
        return out;
    }

    Mat3 operator*(const Mat3& o) const {
        Mat3 out;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                double acc = 0;
                for (int k = 0; k < 3; ++k) acc += double(m[r * 3 + k]) * o.m[k * 3 + c];
                out.m[r * 3 + c] = float(acc);
            }
        return out;
    }

    // max |R^T R - I| entry, for orthonormality checks
    double orthonormality_error() const {
        double worst = 0;
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) {
                double acc = 0;
                for (int k = 0; k < 3; ++k) acc += double(m[k * 3 + a]) * m[k * 3 + b];
                worst = std::max(worst, std::abs(acc - (a == b ? 1.0 : 0.0)));
            }
        return worst;
    }
};

}  // namespace trideform
