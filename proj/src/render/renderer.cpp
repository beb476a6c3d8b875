#include "trideform/render/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "trideform/core/error.hpp"
#include "trideform/core/parallel.hpp"
#include "trideform/core/rng.hpp"

namespace trideform {

void QuadratureSpec::validate() const {
    if (n_samples < 2) throw ValidationError("QuadratureSpec: n_samples must be >= 2");
}

RayResult render_ray(const TriPlaneField& tp, const DecoderNet& net, const SurfaceField* sf,
                     const Ray& ray, const QuadratureSpec& quad, std::uint64_t ray_key) {
    quad.validate();
    const int n = quad.n_samples;
    const double dt = (double(ray.t_far) - ray.t_near) / n;
    RngStream rng = RngStream(quad.jitter_seed, quad.jitter_stream).substream(ray_key);

    const Vec3d o(ray.origin), d(ray.dir);
    std::vector<float> buf(tp.channels);
    std::vector<double> acc(net.c_f, 0.0);
    double T = 1.0, wsum = 0.0, dsum = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = quad.stratified ? rng.next_uniform() : 0.5;
        const double t = double(ray.t_near) + (i + u) * dt;
        Vec3d x = o + d * t;
        if (sf) x = sf->deform(x);
        sample_triplane(tp, Vec3(x), buf.data());
        const FieldSample s = decode(net, buf);
        // w_i = T_i - T_{i+1}: the subtraction form telescopes exactly, so
        // sum(w) + T_final == 1 up to double rounding.
        const double t_next = T * std::exp(-double(s.density) * dt);
        const double w = T - t_next;
        for (int c = 0; c < net.c_f; ++c) acc[c] += w * s.feature[c];
        dsum += w * t;
        wsum += w;
        T = t_next;
    }
    RayResult out;
    out.feature.resize(net.c_f);
    for (int c = 0; c < net.c_f; ++c) out.feature[c] = float(acc[c]);
    out.transmittance = T;
    out.weight_sum = wsum;
    out.depth = dsum / std::max(wsum, 1e-12);
    return out;
}

RenderedImage render_image(const TriPlaneField& tp, const DecoderNet& net, const SurfaceField* sf,
                           const Camera& cam, const QuadratureSpec& quad, int threads) {
    const RayBatch rays = make_rays(cam);
    RenderedImage img;
    img.feature.width = cam.width;
    img.feature.height = cam.height;
    img.feature.channels = net.c_f;
    img.feature.pixels.assign(std::size_t(cam.width) * cam.height * net.c_f, 0.0f);
    img.depth.width = cam.width;
    img.depth.height = cam.height;
    img.depth.channels = 1;
    img.depth.pixels.assign(std::size_t(cam.width) * cam.height, 0.0f);

    parallel_for(rays.size(), 256, threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const RayResult r = render_ray(tp, net, sf, rays.ray(i), quad, i);
            for (int c = 0; c < net.c_f; ++c) img.feature.pixels[i * net.c_f + c] = r.feature[c];
            img.depth.pixels[i] = float(r.depth);
        }
    });
    return img;
}

namespace {

struct ClipVert {
    Vec3d world;
    Vec3d cam;  // camera space, z forward
};

// Sutherland-Hodgman against the plane z >= z_min.
int clip_near(const ClipVert in[3], double z_min, ClipVert out[4]) {
    int n = 0;
    for (int i = 0; i < 3; ++i) {
        const ClipVert& a = in[i];
        const ClipVert& b = in[(i + 1) % 3];
        const bool ain = a.cam.z >= z_min, bin = b.cam.z >= z_min;
        if (ain) out[n++] = a;
        if (ain != bin) {
            const double s = (z_min - a.cam.z) / (b.cam.z - a.cam.z);
            out[n++] = {a.world + (b.world - a.world) * s, a.cam + (b.cam - a.cam) * s};
        }
    }
    return n;
}

double orient2d(double ax, double ay, double bx, double by, double px, double py) {
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

// Tie-break for pixel centers exactly on an edge, with the winding
// normalized so the interior is on the positive side: accept top edges
// (horizontal, interior below) and left edges (descending in y-down
// screen space). A pixel on an edge shared by two triangles then lands
// in exactly one of them.
bool tie_accepted(double ax, double ay, double bx, double by) {
    if (by == ay) return bx > ax;
    return by < ay;
}

}  // namespace

ImageBuffer render_mesh_coords(const TriMesh& mesh, const Camera& cam) {
    cam.validate();
    mesh.validate();
    ImageBuffer out;
    out.width = cam.width;
    out.height = cam.height;
    out.channels = 3;
    out.pixels.assign(std::size_t(cam.width) * cam.height * 3, kCoordSentinel);
    std::vector<float> zbuf(std::size_t(cam.width) * cam.height,
                            std::numeric_limits<float>::infinity());

    const Mat3 Rt = cam.R.transposed();
    const Vec3d cam_t(cam.t);
    std::vector<Vec3d> cam_pos(mesh.vertices.size());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
        cam_pos[i] = Rt.mul(Vec3d(mesh.vertices[i]) - cam_t);

    constexpr double kZMin = 1e-6;
    for (const auto& tri : mesh.triangles) {
        ClipVert verts[3];
        for (int k = 0; k < 3; ++k)
            verts[k] = {Vec3d(mesh.vertices[tri[k]]), cam_pos[tri[k]]};
        ClipVert poly[4];
        const int npoly = clip_near(verts, kZMin, poly);
        for (int f = 2; f < npoly; ++f) {
            ClipVert v[3] = {poly[0], poly[f - 1], poly[f]};
            double sx[3], sy[3], invz[3];
            for (int k = 0; k < 3; ++k) {
                invz[k] = 1.0 / v[k].cam.z;
                sx[k] = cam.focal * v[k].cam.x * invz[k] + cam.cx;
                sy[k] = cam.focal * v[k].cam.y * invz[k] + cam.cy;
            }
            double area = orient2d(sx[0], sy[0], sx[1], sy[1], sx[2], sy[2]);
            if (area == 0) continue;
            if (area < 0) {  // normalize winding; no culling
                std::swap(v[1], v[2]);
                std::swap(sx[1], sx[2]);
                std::swap(sy[1], sy[2]);
                std::swap(invz[1], invz[2]);
                area = -area;
            }
            const double min_x = std::min({sx[0], sx[1], sx[2]});
            const double max_x = std::max({sx[0], sx[1], sx[2]});
            const double min_y = std::min({sy[0], sy[1], sy[2]});
            const double max_y = std::max({sy[0], sy[1], sy[2]});
            const int px0 = std::max(0, int(std::ceil(min_x - 0.5)));
            const int px1 = std::min(cam.width - 1, int(std::floor(max_x - 0.5)));
            const int py0 = std::max(0, int(std::ceil(min_y - 0.5)));
            const int py1 = std::min(cam.height - 1, int(std::floor(max_y - 0.5)));
            const bool accept[3] = {tie_accepted(sx[1], sy[1], sx[2], sy[2]),
                                    tie_accepted(sx[2], sy[2], sx[0], sy[0]),
                                    tie_accepted(sx[0], sy[0], sx[1], sy[1])};
            for (int py = py0; py <= py1; ++py)
                for (int px = px0; px <= px1; ++px) {
                    const double pxc = px + 0.5, pyc = py + 0.5;
                    const double w0 = orient2d(sx[1], sy[1], sx[2], sy[2], pxc, pyc);
                    const double w1 = orient2d(sx[2], sy[2], sx[0], sy[0], pxc, pyc);
                    const double w2 = orient2d(sx[0], sy[0], sx[1], sy[1], pxc, pyc);
                    const bool in0 = w0 > 0 || (w0 == 0 && accept[0]);
                    const bool in1 = w1 > 0 || (w1 == 0 && accept[1]);
                    const bool in2 = w2 > 0 || (w2 == 0 && accept[2]);
                    if (!in0 || !in1 || !in2) continue;
                    const double wsum = w0 + w1 + w2;
                    const double l0 = w0 / wsum, l1 = w1 / wsum, l2 = w2 / wsum;
                    const double iz = l0 * invz[0] + l1 * invz[1] + l2 * invz[2];
                    const float z = float(1.0 / iz);
                    const std::size_t pix = std::size_t(py) * cam.width + px;
                    if (!(z < zbuf[pix])) continue;
                    zbuf[pix] = z;
                    // perspective-correct barycentric interpolation
                    const Vec3d world = (v[0].world * (l0 * invz[0]) + v[1].world * (l1 * invz[1]) +
                                         v[2].world * (l2 * invz[2])) *
                                        (1.0 / iz);
                    out.pixels[pix * 3 + 0] = float(world.x);
                    out.pixels[pix * 3 + 1] = float(world.y);
                    out.pixels[pix * 3 + 2] = float(world.z);
                }
        }
    }
    return out;
}

SamplePlan build_sample_plan(const RayBatch& rays, const QuadratureSpec& quad,
                             const SurfaceField* sf) {
    quad.validate();
    SamplePlan plan;
    plan.n_rays = int(rays.size());
    plan.n_samples = quad.n_samples;
    const double dt = (double(rays.t_far) - rays.t_near) / quad.n_samples;
    plan.delta = float(dt);
    plan.positions.reserve(plan.total());
    plan.t_mid.reserve(plan.total());
    for (std::size_t r = 0; r < rays.size(); ++r) {
        RngStream rng = RngStream(quad.jitter_seed, quad.jitter_stream).substream(r);
        const Vec3d o(rays.origins[r]), d(rays.dirs[r]);
        for (int i = 0; i < quad.n_samples; ++i) {
            const double u = quad.stratified ? rng.next_uniform() : 0.5;
            const double t = double(rays.t_near) + (i + u) * dt;
            Vec3d x = o + d * t;
            if (sf) x = sf->deform(x);
            plan.positions.push_back(Vec3(x));
            plan.t_mid.push_back(float(t));
        }
    }
    return plan;
}

void diff_render_forward(const TriPlaneField& tp, const DecoderNet& net, const SamplePlan& plan,
                         DiffRenderWorkspace& ws) {
    if (tp.channels != net.c_in)
        throw ValidationError("diff_render: tri-plane channels do not match decoder input");
    const std::size_t total = plan.total();
    const int c_in = net.c_in, c_f = net.c_f;
    ws.x.resize(std::size_t(c_in) * total);
    ws.feat.resize(std::size_t(c_f) * total);
    ws.density.resize(total);
    ws.w.resize(total);
    ws.t_after.resize(total);
    ws.features.assign(std::size_t(c_f) * plan.n_rays, 0.0f);
    ws.t_final.resize(plan.n_rays);
    ws.depth.resize(plan.n_rays);

    std::vector<float> buf(c_in);
    for (std::size_t s = 0; s < total; ++s) {
        sample_triplane(tp, plan.positions[s], buf.data());
        for (int c = 0; c < c_in; ++c) ws.x[std::size_t(c) * total + s] = buf[c];
    }
    decoder_forward_batch(net, ws.x.data(), total, ws.feat.data(), ws.density.data(), &ws.dcache);

    const double dt = plan.delta;
    std::vector<double> acc(c_f);
    for (int r = 0; r < plan.n_rays; ++r) {
        double T = 1.0, wsum = 0.0, dsum = 0.0;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int i = 0; i < plan.n_samples; ++i) {
            const std::size_t s = std::size_t(r) * plan.n_samples + i;
            const double t_next = T * std::exp(-double(ws.density[s]) * dt);
            const double w = T - t_next;
            ws.w[s] = float(w);
            ws.t_after[s] = float(t_next);
            for (int c = 0; c < c_f; ++c) acc[c] += w * ws.feat[std::size_t(c) * total + s];
            dsum += w * plan.t_mid[s];
            wsum += w;
            T = t_next;
        }
        for (int c = 0; c < c_f; ++c) ws.features[std::size_t(c) * plan.n_rays + r] = float(acc[c]);
        ws.t_final[r] = float(T);
        ws.depth[r] = float(dsum / std::max(wsum, 1e-12));
    }
}

void diff_render_backward(const TriPlaneField& tp, const DecoderNet& net, const SamplePlan& plan,
                          DiffRenderWorkspace& ws, const float* d_features, float* plane_grad,
                          MlpGrads* net_grads) {
    const std::size_t total = plan.total();
    const int c_in = net.c_in, c_f = net.c_f;
    ws.d_feat.assign(std::size_t(c_f) * total, 0.0f);
    ws.d_density.assign(total, 0.0f);
    ws.d_x.assign(std::size_t(c_in) * total, 0.0f);

    const double dt = plan.delta;
    std::vector<double> suffix(c_f);
    for (int r = 0; r < plan.n_rays; ++r) {
        std::fill(suffix.begin(), suffix.end(), 0.0);
        // Reverse pass: d sigma_k = delta * (T_{k+1} <dF, f_k> - <dF, S_k>)
        // with S_k the suffix sum of w_i f_i over i > k.
        for (int i = plan.n_samples - 1; i >= 0; --i) {
            const std::size_t s = std::size_t(r) * plan.n_samples + i;
            double q = 0, ds = 0;
            for (int c = 0; c < c_f; ++c) {
                const double df = d_features[std::size_t(c) * plan.n_rays + r];
                const double f = ws.feat[std::size_t(c) * total + s];
                q += df * f;
                ds += df * suffix[c];
                ws.d_feat[std::size_t(c) * total + s] = float(ws.w[s] * df);
                suffix[c] += double(ws.w[s]) * f;
            }
            ws.d_density[s] = float(dt * (double(ws.t_after[s]) * q - ds));
        }
    }
    decoder_backward_batch(net, ws.dcache, ws.d_feat.data(), ws.d_density.data(), ws.d_x.data(),
                           net_grads);
    if (plane_grad) {
        std::vector<float> buf(c_in);
        for (std::size_t s = 0; s < total; ++s) {
            for (int c = 0; c < c_in; ++c) buf[c] = ws.d_x[std::size_t(c) * total + s];
            scatter_triplane(tp, plan.positions[s], buf.data(), plane_grad);
        }
    }
}

}  // namespace trideform
