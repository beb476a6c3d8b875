#pragma once

#include <vector>

#include "trideform/core/vec3.hpp"
#include "trideform/geometry/mesh.hpp"

namespace trideform {

// Result of projecting a point onto a mesh: nearest triangle, clamped
// barycentric weights (non-negative, summing to 1), and the signed component
// of (point - projection) along the face normal.
struct BarycentricHit {
    int triangle = -1;
    double u = 0, v = 0, w = 0;
    double offset = 0;
};

// Closest point on triangle (a, b, c) with clamped barycentrics.
Vec3d closest_point_on_triangle(const Vec3d& a, const Vec3d& b, const Vec3d& c,
                                const Vec3d& p, double& u, double& v, double& w);

// Exhaustive scan over all triangles; ties broken by lowest triangle index.
BarycentricHit closest_triangle(const TriMesh& mesh, const Vec3d& point);

// Median-split AABB hierarchy, leaf size 4. query() returns exactly what the
// exhaustive scan returns, including the lowest-index tie-break.
class TriangleBvh {
public:
    explicit TriangleBvh(const TriMesh& mesh);
    BarycentricHit query(const Vec3d& point) const;

private:
    struct Node {
        Vec3d bmin, bmax;
        int left = -1, right = -1;
        int start = 0, count = 0;  // leaf when count > 0
    };
    int build(std::vector<int>& tris, int start, int count);

    const TriMesh* mesh_;
    std::vector<Node> nodes_;
    std::vector<int> order_;
};

// Pair of topology-identical meshes defining a per-point warp: a query is
// projected onto the observation mesh and re-expressed over the same-index
// canonical triangle. Identical meshes give the identity map for every input.
class SurfaceField {
public:
    SurfaceField(TriMesh observation, TriMesh canonical);

    const TriMesh& observation() const { return observation_; }
    const TriMesh& canonical() const { return canonical_; }

    BarycentricHit project(const Vec3d& x) const { return bvh_.query(x); }
    Vec3d deform(const Vec3d& x) const;
    Vec3 deform(const Vec3& x) const { return Vec3(deform(Vec3d(x))); }

private:
    TriMesh observation_;
    TriMesh canonical_;
    TriangleBvh bvh_;
};

}  // namespace trideform
