#pragma once

#include <vector>

#include "trideform/core/json_util.hpp"
#include "trideform/core/mat3.hpp"
#include "trideform/core/vec3.hpp"

namespace trideform {

// Pinhole camera. Camera space is x right, y down, z forward (into the
// scene); world pose maps camera to world: X_world = R * X_cam + t.
struct Camera {
    int width = 0, height = 0;
    float focal = 0;       // pixels, square aspect
    float cx = 0, cy = 0;  // principal point, pixels
    Mat3 R;                // camera-to-world rotation
    Vec3 t{0, 0, 0};       // camera center in world space
    float t_near = 0.1f, t_far = 10.0f;

    void validate() const;
};

struct Ray {
    Vec3 origin;
    Vec3 dir;  // unit
    float t_near = 0, t_far = 0;
};

struct RayBatch {
    int width = 0, height = 0;
    float t_near = 0, t_far = 0;
    std::vector<Vec3> origins;
    std::vector<Vec3> dirs;

    std::size_t size() const { return dirs.size(); }
    Ray ray(std::size_t i) const { return {origins[i], dirs[i], t_near, t_far}; }
};

// One ray per pixel center, row-major pixel order, normalized directions.
RayBatch make_rays(const Camera& cam);

// Frontal camera at the given distance on +z looking back at the origin
// with the image y axis matching world +y (up). focal = width, principal
// point at the image center; near/far bracket the unit-ish scene box.
Camera make_default_camera(int width, int height, float distance = 2.7f);

Camera camera_from_json(const nlohmann::json& j);
nlohmann::json camera_to_json(const Camera& cam);

}  // namespace trideform
