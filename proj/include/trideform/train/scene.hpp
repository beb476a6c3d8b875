#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trideform/core/image.hpp"
#include "trideform/core/rng.hpp"
#include "trideform/geometry/morph.hpp"
#include "trideform/render/camera.hpp"
#include "trideform/render/renderer.hpp"

namespace trideform {

// Uniform orbit-pose distribution around the origin-centred head.
struct CameraRange {
    float azimuth = 0.6f;    // +- radians about the frontal axis
    float elevation = 0.35f;  // +- radians
    float distance = 2.7f;

    void validate() const;
};

// Look-at-origin pose on the orbit sphere; azimuth 0 / elevation 0 matches
// the default frontal camera exactly.
Camera orbit_camera(int width, int height, float azimuth, float elevation, float distance);

// Reflection of the pose across the world x = 0 plane: R' = D R D, t' = D t
// with D = diag(-1, 1, 1). Involution.
Camera mirror_camera(const Camera& cam);

// Ground-truth appearance: isotropic Gaussian density bumps with
// per-blob colors, blended density-weighted.
struct Blob {
    Vec3 center;
    float radius = 0;
    float amp = 0;
    float color[3] = {0, 0, 0};
};

struct BlobScene {
    std::vector<Blob> blobs;
};

// Deterministic in (surface, appearance_seed); centers sit on surface
// vertices of the given mesh.
BlobScene make_blobs(const TriMesh& surface, std::uint64_t appearance_seed, int n_blobs);

double scene_density(const BlobScene& s, const Vec3d& x);
void scene_radiance(const BlobScene& s, const Vec3d& x, double out[3]);

// Volume-renders the analytic scene with the same midpoint quadrature and
// transmittance recurrence as the neural field renderer.
ImageBuffer scene_render(const BlobScene& s, const Camera& cam, const QuadratureSpec& quad);

struct SceneSampler {
    ToyMorphModel model;
    CameraRange cams;
    int width = 32, height = 32;
    int n_blobs = 6;
    int n_samples = 24;  // quadrature for ground-truth renders
    float beta_scale = 0.5f, theta_scale = 0.15f, psi_scale = 0.5f;

    void validate() const;
};

struct SceneRecord {
    std::string id;
    std::uint64_t appearance_seed = 0;
    MorphParams geo;
    Camera cam;
    ImageBuffer image;  // 3 channels
    ImageBuffer rdr;    // 3 channels, world-coordinate texture
    bool flipped = false;
};

// Draws morph params, appearance, and camera; renders image and rdr; applies
// the horizontal-flip augmentation with probability 1/2 (image and rdr
// mirrored, camera pose reflected). The record index only names the id.
SceneRecord sample_scene(const SceneSampler& s, RngStream& rng, int index = 0);

ImageBuffer hflip(const ImageBuffer& img);
// Mirror pixels and negate the world-x channel; sentinel background pixels
// are left untouched.
ImageBuffer hflip_coords(const ImageBuffer& rdr);

}  // namespace trideform
