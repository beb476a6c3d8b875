#include "trideform/train/scene.hpp"

#include <algorithm>
#include <cmath>

#include "trideform/core/error.hpp"

namespace trideform {

void CameraRange::validate() const {
    if (azimuth < 0 || azimuth >= 3.14f)
        throw ValidationError("CameraRange: azimuth range must be in [0, pi)");
    if (elevation < 0 || elevation >= 1.5f)
        throw ValidationError("CameraRange: elevation range must be in [0, ~pi/2)");
    if (distance <= 1.8f)
        throw ValidationError("CameraRange: distance must exceed 1.8 (near plane)");
}

Camera orbit_camera(int width, int height, float azimuth, float elevation, float distance) {
    const double az = azimuth, el = elevation;
    const Vec3 pos(float(distance * std::sin(az) * std::cos(el)),
                   float(distance * std::sin(el)),
                   float(distance * std::cos(az) * std::cos(el)));
    const Vec3 f = (-pos).normalized();
    const Vec3 xc = f.cross(Vec3(0, 1, 0)).normalized();
    const Vec3 yc = f.cross(xc);
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.focal = float(width);
    cam.cx = 0.5f * width;
    cam.cy = 0.5f * height;
    cam.R = Mat3::from_rows({xc.x, yc.x, f.x}, {xc.y, yc.y, f.y}, {xc.z, yc.z, f.z});
    cam.t = pos;
    cam.t_near = distance - 1.8f;
    cam.t_far = distance + 1.8f;
    cam.validate();
    return cam;
}

Camera mirror_camera(const Camera& cam) {
    Camera out = cam;
    // D R D negates the first row and first column; the (0,0) entry is
    // negated twice.
    out.R.m = {cam.R.m[0], -cam.R.m[1], -cam.R.m[2], -cam.R.m[3], cam.R.m[4],
               cam.R.m[5], -cam.R.m[6], cam.R.m[7],  cam.R.m[8]};
    out.t = {-cam.t.x, cam.t.y, cam.t.z};
    return out;
}

BlobScene make_blobs(const TriMesh& surface, std::uint64_t appearance_seed, int n_blobs) {
    if (n_blobs < 1) throw ValidationError("make_blobs: need at least one blob");
    if (surface.vertices.empty()) throw ValidationError("make_blobs: empty surface");
    RngStream rng(appearance_seed, 0xb10b5);
    BlobScene s;
    s.blobs.reserve(n_blobs);
    for (int i = 0; i < n_blobs; ++i) {
        Blob b;
        const std::size_t vi = rng.next_u64() % surface.vertices.size();
        b.center = surface.vertices[vi];
        b.radius = 0.1f + 0.15f * float(rng.next_uniform());
        b.amp = 6.0f + 8.0f * float(rng.next_uniform());
        for (float& c : b.color) c = float(rng.next_uniform());
        s.blobs.push_back(b);
    }
    return s;
}

double scene_density(const BlobScene& s, const Vec3d& x) {
    double acc = 0.0;
    for (const Blob& b : s.blobs) {
        const Vec3d d = x - Vec3d(b.center);
        acc += double(b.amp) * std::exp(-d.norm_sq() / (2.0 * double(b.radius) * b.radius));
    }
    return acc;
}

void scene_radiance(const BlobScene& s, const Vec3d& x, double out[3]) {
    double num[3] = {0, 0, 0};
    double den = 0.0;
    for (const Blob& b : s.blobs) {
        const Vec3d d = x - Vec3d(b.center);
        const double g =
            double(b.amp) * std::exp(-d.norm_sq() / (2.0 * double(b.radius) * b.radius));
        for (int c = 0; c < 3; ++c) num[c] += g * b.color[c];
        den += g;
    }
    const double inv = 1.0 / std::max(den, 1e-12);
    for (int c = 0; c < 3; ++c) out[c] = num[c] * inv;
}

ImageBuffer scene_render(const BlobScene& s, const Camera& cam, const QuadratureSpec& quad) {
    quad.validate();
    const RayBatch rays = make_rays(cam);
    ImageBuffer img(cam.width, cam.height, 3);
    const int n = quad.n_samples;
    for (std::size_t i = 0; i < rays.size(); ++i) {
        const Ray ray = rays.ray(i);
        const double dt = (double(ray.t_far) - ray.t_near) / n;
        const Vec3d o(ray.origin), d(ray.dir);
        double T = 1.0;
        double acc[3] = {0, 0, 0};
        for (int k = 0; k < n; ++k) {
            const double t = double(ray.t_near) + (k + 0.5) * dt;
            const Vec3d x = o + d * t;
            const double sigma = scene_density(s, x);
            double col[3];
            scene_radiance(s, x, col);
            const double t_next = T * std::exp(-sigma * dt);
            const double w = T - t_next;
            for (int c = 0; c < 3; ++c) acc[c] += w * col[c];
            T = t_next;
        }
        for (int c = 0; c < 3; ++c) img.pixels[i * 3 + c] = float(acc[c]);
    }
    return img;
}

void SceneSampler::validate() const {
    model.validate();
    cams.validate();
    if (width < 1 || height < 1) throw ValidationError("SceneSampler: bad resolution");
    if (n_blobs < 1) throw ValidationError("SceneSampler: need at least one blob");
    if (n_samples < 2) throw ValidationError("SceneSampler: need at least two ray samples");
    if (beta_scale < 0 || theta_scale < 0 || psi_scale < 0)
        throw ValidationError("SceneSampler: morph scales must be non-negative");
}

SceneRecord sample_scene(const SceneSampler& s, RngStream& rng, int index) {
    s.validate();
    SceneRecord rec;
    rec.id = "scene-" + std::to_string(index);
    auto draw = [&](int dim, float scale) {
        std::vector<float> v(dim);
        for (float& x : v) x = scale * float(rng.next_gaussian());
        return v;
    };
    rec.geo.beta = draw(s.model.dim_beta, s.beta_scale);
    rec.geo.theta = draw(s.model.dim_theta, s.theta_scale);
    rec.geo.psi = draw(s.model.dim_psi, s.psi_scale);
    rec.appearance_seed = rng.next_u64();
    const float az = s.cams.azimuth * float(2.0 * rng.next_uniform() - 1.0);
    const float el = s.cams.elevation * float(2.0 * rng.next_uniform() - 1.0);
    const bool flip = rng.next_uniform() < 0.5;

    const TriMesh morphed = morph(s.model, rec.geo);
    const BlobScene scene = make_blobs(morphed, rec.appearance_seed, s.n_blobs);
    rec.cam = orbit_camera(s.width, s.height, az, el, s.cams.distance);
    QuadratureSpec quad;
    quad.n_samples = s.n_samples;
    rec.image = scene_render(scene, rec.cam, quad);
    rec.rdr = render_mesh_coords(morphed, rec.cam);
    if (flip) {
        rec.image = hflip(rec.image);
        rec.rdr = hflip_coords(rec.rdr);
        rec.cam = mirror_camera(rec.cam);
        rec.flipped = true;
    }
    return rec;
}

ImageBuffer hflip(const ImageBuffer& img) {
    img.validate();
    ImageBuffer out(img.width, img.height, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                out.at(x, y, c) = img.at(img.width - 1 - x, y, c);
    return out;
}

ImageBuffer hflip_coords(const ImageBuffer& rdr) {
    if (rdr.channels != 3) throw ValidationError("hflip_coords: expected a 3-channel buffer");
    ImageBuffer out = hflip(rdr);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            float& v = out.at(x, y, 0);
            if (v != kCoordSentinel) v = -v;
        }
    return out;
}

}  // namespace trideform
