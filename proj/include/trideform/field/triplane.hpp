#pragma once

#include <string>
#include <vector>

#include "trideform/core/vec3.hpp"

namespace trideform {

// Three res x res x channels feature grids over an axis-aligned box, with
// node-centered bilinear interpolation summed across planes. Plane axis
// pairs: 0 = (x, y), 1 = (x, z), 2 = (y, z). Texel layout is
// [plane][v][u][channel] so a texel's channels are contiguous.
struct TriPlaneField {
    int res = 0;
    int channels = 0;
    Vec3 lo, hi;
    std::vector<float> data;

    static TriPlaneField zeros(int res, int channels, Vec3 lo, Vec3 hi);
    void validate() const;
    std::size_t plane_stride() const {
        return static_cast<std::size_t>(res) * res * channels;
    }
    std::size_t texel_offset(int plane, int u, int v) const {
        return plane * plane_stride() +
               (static_cast<std::size_t>(v) * res + u) * channels;
    }
};

// Writes the summed bilinear sample into out[0..channels). Points outside
// the box yield the zero vector; returns false for those.
bool sample_triplane(const TriPlaneField& tp, const Vec3& x, float* out);

// Adjoint of sample_triplane: distributes grad (length channels) onto the 12
// contributing texels of grad_data (laid out like tp.data). No-op out of
// bounds. Because sampling is linear in the plane values, this same routine
// with tangent planes in `tp` is also the forward-mode derivative.
void scatter_triplane(const TriPlaneField& tp, const Vec3& x, const float* grad,
                      float* grad_data);

void save_triplane(const std::string& dir, const std::string& prefix, const TriPlaneField& tp);
TriPlaneField load_triplane(const std::string& dir, const std::string& prefix);

}  // namespace trideform
