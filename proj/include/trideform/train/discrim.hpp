#pragma once

#include <span>
#include <string>
#include <vector>

#include "trideform/condition/condition.hpp"
#include "trideform/field/mlp.hpp"
#include "trideform/render/camera.hpp"

namespace trideform {

// One 3x3 stride-2 pad-1 convolution, stored as a dense map over im2col
// columns. idx holds the source pixel for each (kernel slot, output pixel)
// pair, -1 for zero padding; it depends only on the spatial geometry, so
// every channel reuses it.
struct ConvLayer {
    int c_in = 0, c_out = 0;
    int h_in = 0, w_in = 0;
    int h_out = 0, w_out = 0;
    Dense k;               // [c_out, c_in * 9]
    std::vector<int> idx;  // [9 * h_out * w_out]
};

// Strided-conv image stem: leaky-relu conv stack plus a linear head to a
// d_v-dimensional score feature. Zero conv layers degenerate to a plain
// linear map over the flattened input, which keeps the analytic-gradient
// fixtures exact.
struct ConvStem {
    int in_ch = 0;
    int res = 0;  // square input
    int d_v = 0;
    std::vector<ConvLayer> convs;
    Dense head;  // [d_v, flattened last layer]

    int flat_dim() const { return head.in; }
    void validate() const;
};

ConvStem make_conv_stem(int res, int in_ch, int d_v, const std::vector<int>& widths,
                        RngStream& rng);

// Forward caches. Layer inputs are feature-major [c, h*w]; x[0] is a copy of
// the stem input and x.back() is the head input.
struct StemCache {
    std::vector<std::vector<float>> x;
    std::vector<std::vector<float>> cols;  // im2col per conv
    std::vector<std::vector<float>> s;     // pre-activations per conv
};

// Parameter gradients in layer order convs..., head.
struct StemGrads {
    MlpGrads g;
    void init(const ConvStem& st);
    void zero() { g.zero(); }
};

std::vector<float> stem_forward(const ConvStem& st, const float* x, StemCache* cache = nullptr);

// Reverse pass; returns the input adjoint (length in_ch * res * res).
std::vector<float> stem_backward(const ConvStem& st, const StemCache& cache,
                                 std::span<const float> d_u, StemGrads* grads);

struct StemJvpCache {
    std::vector<std::vector<float>> t_x;
    std::vector<std::vector<float>> t_cols;
};

// Exact forward-mode directional derivative through the cached primal.
std::vector<float> stem_jvp(const ConvStem& st, const StemCache& cache, const float* tx,
                            StemJvpCache* jc = nullptr);

// Reverse pass through the tangent computation with activation masks held
// fixed (exact a.e. for the piecewise-linear stack). Bias gradients are zero
// on this path. Returns the adjoint of the tangent input.
std::vector<float> stem_jvp_backward(const ConvStem& st, const StemCache& cache,
                                     const StemJvpCache& jc, std::span<const float> d_tu,
                                     StemGrads* grads);

// Conditional discriminator: u = S_D(x ‖ rdr), v = M_D(camera code),
// v_r = v + alpha T_D(v ‖ r), score = u . v_r.
struct DiscriminatorBundle {
    ConvStem s_d;
    Mlp m_d;
    AlignmentNet t_d;

    int d_v() const { return s_d.d_v; }
    int d_r() const { return t_d.d_in - t_d.d_out; }
    void validate() const;
};

DiscriminatorBundle make_discriminator(int res, int d_v, int d_r, RngStream& rng);

// Flattened extrinsics: rotation row-major then center, 12 floats.
std::vector<float> camera_code(const Camera& cam);

// Convenience scorer for tests and diagnostics; x is feature-major
// [in_ch, res * res].
double discriminate_image(const DiscriminatorBundle& d, const float* x, const Camera& cam,
                          const Embedding& r, float alpha);

void save_discriminator(const std::string& dir, const DiscriminatorBundle& d);
DiscriminatorBundle load_discriminator(const std::string& dir);

}  // namespace trideform
