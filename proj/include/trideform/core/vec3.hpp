#pragma once

#include <cmath>

namespace trideform {

template <typename T>
struct Vec3T {
    T x = 0, y = 0, z = 0;

    constexpr Vec3T() = default;
    constexpr Vec3T(T x_, T y_, T z_) : x(x_), y(y_), z(z_) {}

    template <typename U>
    constexpr explicit Vec3T(const Vec3T<U>& v)
        : x(static_cast<T>(v.x)), y(static_cast<T>(v.y)), z(static_cast<T>(v.z)) {}

    constexpr Vec3T operator+(const Vec3T& o) const { return {x + o.x, y + o.y, z + o.z}; }
    constexpr Vec3T operator-(const Vec3T& o) const { return {x - o.x, y - o.y, z - o.z}; }
    constexpr Vec3T operator*(T s) const { return {x * s, y * s, z * s}; }
    constexpr Vec3T operator-() const { return {-x, -y, -z}; }
    constexpr Vec3T& operator+=(const Vec3T& o) {
        x += o.x; y += o.y; z += o.z;
        return *this;
    }
    constexpr Vec3T& operator-=(const Vec3T& o) {
        x -= o.x; y -= o.y; z -= o.z;
        return *this;
    }
    constexpr Vec3T& operator*=(T s) {
        x *= s; y *= s; z *= s;
        return *this;
    }
    constexpr T operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

    constexpr T dot(const Vec3T& o) const { return x * o.x + y * o.y + z * o.z; }
    constexpr Vec3T cross(const Vec3T& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    constexpr T norm_sq() const { return dot(*this); }
    T norm() const { return std::sqrt(norm_sq()); }
    Vec3T normalized() const {
        const T n = norm();
        return {x / n, y / n, z / n};
    }
};

template <typename T>
constexpr Vec3T<T> operator*(T s, const Vec3T<T>& v) {
    return v * s;
}

using Vec3 = Vec3T<float>;
using Vec3d = Vec3T<double>;

}  // namespace trideform
