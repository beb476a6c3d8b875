#include "trideform/render/camera.hpp"

#include <cmath>

#include "trideform/core/error.hpp"

namespace trideform {

void Camera::validate() const {
    if (width < 1 || height < 1) throw ValidationError("Camera: resolution must be positive");
    if (!(focal > 0)) throw ValidationError("Camera: focal must be positive");
    if (R.orthonormality_error() > 1e-6)
        throw ValidationError("Camera: rotation is not orthonormal within 1e-6");
    if (!(t_near > 0) || !(t_near < t_far))
        throw ValidationError("Camera: need 0 < t_near < t_far");
}

RayBatch make_rays(const Camera& cam) {
    cam.validate();
    RayBatch rb;
    rb.width = cam.width;
    rb.height = cam.height;
    rb.t_near = cam.t_near;
    rb.t_far = cam.t_far;
    rb.origins.reserve(std::size_t(cam.width) * cam.height);
    rb.dirs.reserve(std::size_t(cam.width) * cam.height);
    for (int py = 0; py < cam.height; ++py)
        for (int px = 0; px < cam.width; ++px) {
            const double dx = (px + 0.5 - cam.cx) / cam.focal;
            const double dy = (py + 0.5 - cam.cy) / cam.focal;
            const double inv = 1.0 / std::sqrt(dx * dx + dy * dy + 1.0);
            const Vec3d d_world = cam.R.mul({dx * inv, dy * inv, inv});
            rb.origins.push_back(cam.t);
            rb.dirs.push_back(Vec3(d_world));
        }
    return rb;
}

Camera make_default_camera(int width, int height, float distance) {
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.focal = float(width);
    cam.cx = 0.5f * width;
    cam.cy = 0.5f * height;
    // 180 degrees about x: forward = -z, image y axis = world +y flipped
    // so up in the image is +y in the world.
    cam.R = Mat3::diag(1, -1, -1);
    cam.t = {0, 0, distance};
    cam.t_near = distance - 1.8f;
    cam.t_far = distance + 1.8f;
    cam.validate();
    return cam;
}

Camera camera_from_json(const nlohmann::json& j) {
    check_keys(j, "camera",
               {"width", "height", "focal", "principal", "rotation", "translation", "near", "far"});
    Camera cam;
    cam.width = get_req<int>(j, "camera", "width");
    cam.height = get_req<int>(j, "camera", "height");
    cam.focal = get_req<float>(j, "camera", "focal");
    const auto principal =
        get_or<std::vector<float>>(j, "camera", "principal", {0.5f * cam.width, 0.5f * cam.height});
    const auto rotation = get_or<std::vector<double>>(j, "camera", "rotation", {0, 0, 0});
    const auto translation = get_or<std::vector<float>>(j, "camera", "translation", {0, 0, 0});
    if (principal.size() != 2) throw ValidationError("camera: principal must have 2 entries");
    if (rotation.size() != 3) throw ValidationError("camera: rotation must have 3 entries");
    if (translation.size() != 3) throw ValidationError("camera: translation must have 3 entries");
    cam.cx = principal[0];
    cam.cy = principal[1];
    cam.R = Mat3::from_rotvec({rotation[0], rotation[1], rotation[2]});
    cam.t = {translation[0], translation[1], translation[2]};
    cam.t_near = get_or<float>(j, "camera", "near", 0.1f);
    cam.t_far = get_or<float>(j, "camera", "far", 10.0f);
    cam.validate();
    return cam;
}

nlohmann::json camera_to_json(const Camera& cam) {
    // Recover the rotation vector from R: angle from the trace, axis from
    // the antisymmetric part. Adequate away from the 180-degree edge case,
    // where the axis is taken from the dominant diagonal entry instead.
    const auto& m = cam.R.m;
    const double c = std::max(-1.0, std::min(1.0, (double(m[0]) + m[4] + m[8] - 1) / 2));
    const double angle = std::acos(c);
    Vec3d axis{double(m[7]) - m[5], double(m[2]) - m[6], double(m[3]) - m[1]};
    const double s2 = axis.norm();
    if (angle > 1e-8 && s2 > 1e-8) {
        axis = axis * (angle / s2);
    } else if (angle > 1e-8) {
        // angle ~ pi: R ~ 2aa^T - I
        Vec3d a{std::sqrt(std::max(0.0, (m[0] + 1.0) / 2)),
                std::sqrt(std::max(0.0, (m[4] + 1.0) / 2)),
                std::sqrt(std::max(0.0, (m[8] + 1.0) / 2))};
        if (m[1] + m[3] < 0) a.y = -a.y;
        if (m[2] + m[6] < 0) a.z = -a.z;
        axis = a * angle;
    } else {
        axis = {0, 0, 0};
    }
    return {
        {"width", cam.width},
        {"height", cam.height},
        {"focal", cam.focal},
        {"principal", {cam.cx, cam.cy}},
        {"rotation", {axis.x, axis.y, axis.z}},
        {"translation", {cam.t.x, cam.t.y, cam.t.z}},
        {"near", cam.t_near},
        {"far", cam.t_far},
    };
}

}  // namespace trideform
