#include "trideform/geometry/surface_field.hpp"

#include <algorithm>
#include <limits>

#include "trideform/core/error.hpp"

namespace trideform {

Vec3d closest_point_on_triangle(const Vec3d& a, const Vec3d& b, const Vec3d& c,
                                const Vec3d& p, double& u, double& v, double& w) {
    const Vec3d ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) {
        u = 1; v = 0; w = 0;
        return a;
    }

    const Vec3d bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) {
        u = 0; v = 1; w = 0;
        return b;
    }

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
        const double t = d1 / (d1 - d3);
        u = 1 - t; v = t; w = 0;
        return a + ab * t;
    }

    const Vec3d cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) {
        u = 0; v = 0; w = 1;
        return c;
    }

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
        const double t = d2 / (d2 - d6);
        u = 1 - t; v = 0; w = t;
        return a + ac * t;
    }

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0) {
        const double t = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        u = 0; v = 1 - t; w = t;
        return b + (c - b) * t;
    }

    const double denom = 1.0 / (va + vb + vc);
    v = vb * denom;
    w = vc * denom;
    u = 1.0 - v - w;
    return a + ab * v + ac * w;
}

namespace {

struct TriQuery {
    double d2;
    BarycentricHit hit;
};

TriQuery query_triangle(const TriMesh& mesh, int t, const Vec3d& p) {
    const auto& tri = mesh.triangles[t];
    const Vec3d a(mesh.vertices[tri[0]]), b(mesh.vertices[tri[1]]), c(mesh.vertices[tri[2]]);
    TriQuery q;
    const Vec3d proj = closest_point_on_triangle(a, b, c, p, q.hit.u, q.hit.v, q.hit.w);
    const Vec3d r = p - proj;
    q.d2 = r.norm_sq();
    q.hit.triangle = t;
    q.hit.offset = r.dot(Vec3d(mesh.face_normals[t]));
    return q;
}

// Lexicographic argmin over (distance, index): order-independent, so the BVH
// traversal and the exhaustive scan always agree.
bool better(double d2, int idx, double best_d2, int best_idx) {
    return d2 < best_d2 || (d2 == best_d2 && idx < best_idx);
}

}  // namespace

BarycentricHit closest_triangle(const TriMesh& mesh, const Vec3d& point) {
    mesh.validate();
    double best_d2 = std::numeric_limits<double>::infinity();
    BarycentricHit best;
    for (int t = 0; t < static_cast<int>(mesh.triangles.size()); ++t) {
        const TriQuery q = query_triangle(mesh, t, point);
        if (better(q.d2, t, best_d2, best.triangle)) {
            best_d2 = q.d2;
            best = q.hit;
        }
    }
    return best;
}

TriangleBvh::TriangleBvh(const TriMesh& mesh) : mesh_(&mesh) {
    mesh.validate();
    order_.resize(mesh.triangles.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
    nodes_.reserve(2 * order_.size());
    build(order_, 0, static_cast<int>(order_.size()));
}

int TriangleBvh::build(std::vector<int>& tris, int start, int count) {
    const int node_id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();

    Vec3d bmin(std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
               std::numeric_limits<double>::infinity());
    Vec3d bmax = -bmin;
    for (int i = start; i < start + count; ++i) {
        for (int k = 0; k < 3; ++k) {
            const Vec3d v(mesh_->vertices[mesh_->triangles[tris[i]][k]]);
            bmin = {std::min(bmin.x, v.x), std::min(bmin.y, v.y), std::min(bmin.z, v.z)};
            bmax = {std::max(bmax.x, v.x), std::max(bmax.y, v.y), std::max(bmax.z, v.z)};
        }
    }
    nodes_[node_id].bmin = bmin;
    nodes_[node_id].bmax = bmax;

    if (count <= 4) {
        nodes_[node_id].start = start;
        nodes_[node_id].count = count;
        return node_id;
    }

    const Vec3d ext = bmax - bmin;
    const int axis = ext.x >= ext.y ? (ext.x >= ext.z ? 0 : 2) : (ext.y >= ext.z ? 1 : 2);
    auto centroid = [&](int t) {
        const auto& tri = mesh_->triangles[t];
        return (Vec3d(mesh_->vertices[tri[0]]) + Vec3d(mesh_->vertices[tri[1]]) +
                Vec3d(mesh_->vertices[tri[2]])) *
               (1.0 / 3.0);
    };
    const int mid = start + count / 2;
    std::nth_element(tris.begin() + start, tris.begin() + mid, tris.begin() + start + count,
                     [&](int ta, int tb) {
                         const double ca = centroid(ta)[axis], cb = centroid(tb)[axis];
                         return ca < cb || (ca == cb && ta < tb);
                     });

    const int left = build(tris, start, mid - start);
    const int right = build(tris, mid, start + count - mid);
    nodes_[node_id].left = left;
    nodes_[node_id].right = right;
    return node_id;
}

BarycentricHit TriangleBvh::query(const Vec3d& p) const {
    double best_d2 = std::numeric_limits<double>::infinity();
    BarycentricHit best;

    auto box_d2 = [&](const Node& n) {
        const double dx = std::max({n.bmin.x - p.x, 0.0, p.x - n.bmax.x});
        const double dy = std::max({n.bmin.y - p.y, 0.0, p.y - n.bmax.y});
        const double dz = std::max({n.bmin.z - p.z, 0.0, p.z - n.bmax.z});
        return dx * dx + dy * dy + dz * dz;
    };

    // Explicit stack; children pushed farther-first so the nearer child pops
    // first. Nodes at exactly best_d2 are still visited: an exact tie inside
    // them could win on index.
    std::vector<int> stack = {0};
    while (!stack.empty()) {
        const int node_id = stack.back();
        stack.pop_back();
        const Node& n = nodes_[node_id];
        if (box_d2(n) > best_d2) continue;
        if (n.count > 0) {
            for (int i = n.start; i < n.start + n.count; ++i) {
                const int t = order_[i];
                const TriQuery q = query_triangle(*mesh_, t, p);
                if (better(q.d2, t, best_d2, best.triangle)) {
                    best_d2 = q.d2;
                    best = q.hit;
                }
            }
            continue;
        }
        const double dl = box_d2(nodes_[n.left]), dr = box_d2(nodes_[n.right]);
        if (dl <= dr) {
            stack.push_back(n.right);
            stack.push_back(n.left);
        } else {
            stack.push_back(n.left);
            stack.push_back(n.right);
        }
    }
    return best;
}

SurfaceField::SurfaceField(TriMesh observation, TriMesh canonical)
    : observation_(std::move(observation)), canonical_(std::move(canonical)), bvh_(observation_) {
    observation_.validate();
    canonical_.validate();
    if (observation_.vertices.size() != canonical_.vertices.size() ||
        observation_.triangles != canonical_.triangles)
        throw ValidationError("SurfaceField: meshes must share topology");
}

Vec3d SurfaceField::deform(const Vec3d& x) const {
    const BarycentricHit h = bvh_.query(x);
    const auto& tri = observation_.triangles[h.triangle];

    auto lerp = [&](const TriMesh& m) {
        return Vec3d(m.vertices[tri[0]]) * h.u + Vec3d(m.vertices[tri[1]]) * h.v +
               Vec3d(m.vertices[tri[2]]) * h.w;
    };
    const Vec3d proj_obs = lerp(observation_);
    const Vec3d proj_can = lerp(canonical_);
    const Vec3d n_obs(observation_.face_normals[h.triangle]);
    const Vec3d n_can(canonical_.face_normals[h.triangle]);

    // proj_can + offset * n_can plus the part of (x - proj_obs) the clamped
    // projection leaves unexplained. Reduces to the plain re-expression when
    // the projection is interior, and to the identity when the meshes
    // coincide, for every x.
    return x + (proj_can - proj_obs) + (n_can - n_obs) * h.offset;
}

}  // namespace trideform
