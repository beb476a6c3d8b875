#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "trideform/core/vec3.hpp"

namespace trideform {

// Triangle mesh with per-face unit normals (right-hand rule from vertex
// order). Triangles with area <= 1e-12 are rejected at construction.
struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<Vec3> face_normals;

    void finalize();   // validates indices/areas, recomputes face_normals
    void validate() const;
};

// OBJ subset: `v` and triangular `f` records only. Face indices may carry
// /texture/normal suffixes, which are ignored. Vertices and triangles keep
// declaration order.
TriMesh read_obj(const std::string& path);
void write_obj(const std::string& path, const TriMesh& mesh);

// Icosahedron subdivided `subdiv` times and projected to the given radius;
// subdiv 2 yields 320 triangles.
TriMesh make_icosphere(int subdiv, float radius);

}  // namespace trideform
