#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "trideform/core/image.hpp"
#include "trideform/field/decoder.hpp"
#include "trideform/field/triplane.hpp"
#include "trideform/geometry/surface_field.hpp"
#include "trideform/render/camera.hpp"

namespace trideform {

struct QuadratureSpec {
    int n_samples = 64;
    bool stratified = false;
    std::uint64_t jitter_seed = 0;
    std::uint64_t jitter_stream = 0;

    void validate() const;
};

struct RayResult {
    std::vector<float> feature;  // C_f entries
    double transmittance = 1.0;  // after the last sample
    double weight_sum = 0.0;
    double depth = 0.0;
};

// Midpoint-rule quadrature of the volume integral along one ray, with each
// sample point deformed by sf (observation -> canonical) before the field
// query. ray_key seeds the per-ray jitter substream when stratified.
RayResult render_ray(const TriPlaneField& tp, const DecoderNet& net, const SurfaceField* sf,
                     const Ray& ray, const QuadratureSpec& quad, std::uint64_t ray_key = 0);

struct RenderedImage {
    ImageBuffer feature;  // H x W x C_f
    ImageBuffer depth;    // H x W x 1
};

// Per-pixel render_ray over the full frame. Deterministic for a fixed
// jitter stream; the thread count never changes output bytes.
RenderedImage render_image(const TriPlaneField& tp, const DecoderNet& net, const SurfaceField* sf,
                           const Camera& cam, const QuadratureSpec& quad, int threads = 1);

// Z-buffered rasterization of the mesh; covered pixels hold the
// barycentric-interpolated world coordinate of the surface point,
// background pixels the sentinel.
constexpr float kCoordSentinel = -1e4f;
ImageBuffer render_mesh_coords(const TriMesh& mesh, const Camera& cam);

// ---- differentiable batched path (training) --------------------------------
//
// Sample positions are fixed up front (optionally deformed through a
// surface field), so repeated renders of the same scene skip the geometry
// queries, and the quadrature forward/backward only touches the tri-plane
// and decoder.

struct SamplePlan {
    int n_rays = 0;
    int n_samples = 0;
    float delta = 0;               // undeformed spacing between samples
    std::vector<Vec3> positions;   // n_rays * n_samples, sample-major per ray
    std::vector<float> t_mid;      // undeformed ray parameter per sample

    std::size_t total() const { return std::size_t(n_rays) * n_samples; }
};

SamplePlan build_sample_plan(const RayBatch& rays, const QuadratureSpec& quad,
                             const SurfaceField* sf);

struct DiffRenderWorkspace {
    // forward caches, feature-major over all samples
    std::vector<float> x;        // [c_in, total] tri-plane features
    std::vector<float> feat;     // [c_f, total] decoded features
    std::vector<float> density;  // [total]
    DecoderBatchCache dcache;
    std::vector<float> w;        // per-sample quadrature weight
    std::vector<float> t_after;  // transmittance after each sample
    // outputs, feature-major over rays
    std::vector<float> features;  // [c_f, n_rays]
    std::vector<float> t_final;   // [n_rays]
    std::vector<float> depth;     // [n_rays]
    // backward scratch
    std::vector<float> d_feat, d_density, d_x;
};

void diff_render_forward(const TriPlaneField& tp, const DecoderNet& net, const SamplePlan& plan,
                         DiffRenderWorkspace& ws);

// d_features is [c_f, n_rays]; accumulates into plane_grad (same layout as
// tp.data) and net_grads. Transmittance and depth outputs carry no gradient.
void diff_render_backward(const TriPlaneField& tp, const DecoderNet& net, const SamplePlan& plan,
                          DiffRenderWorkspace& ws, const float* d_features, float* plane_grad,
                          MlpGrads* net_grads);

}  // namespace trideform
