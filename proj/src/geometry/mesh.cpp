#include "trideform/geometry/mesh.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "trideform/core/error.hpp"

namespace trideform {

void TriMesh::finalize() {
    const int m = static_cast<int>(vertices.size());
    face_normals.clear();
    face_normals.reserve(triangles.size());
    for (std::size_t t = 0; t < triangles.size(); ++t) {
        for (int k = 0; k < 3; ++k) {
            const int idx = triangles[t][k];
            if (idx < 0 || idx >= m)
                throw ValidationError("TriMesh: triangle index out of range");
        }
        const Vec3d a(vertices[triangles[t][0]]);
        const Vec3d b(vertices[triangles[t][1]]);
        const Vec3d c(vertices[triangles[t][2]]);
        const Vec3d n = (b - a).cross(c - a);
        const double area = 0.5 * n.norm();
        if (area <= 1e-12)
            throw DegenerateInputError("TriMesh: degenerate triangle " + std::to_string(t));
        face_normals.push_back(Vec3(n * (1.0 / (2.0 * area))));
    }
}

void TriMesh::validate() const {
    if (vertices.empty() || triangles.empty())
        throw ValidationError("TriMesh: empty mesh");
    if (face_normals.size() != triangles.size())
        throw ValidationError("TriMesh: finalize() not called");
}

TriMesh read_obj(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("read_obj: cannot open " + path);

    TriMesh mesh;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag) || tag[0] == '#') continue;
        if (tag == "v") {
            double x, y, z;
            if (!(ss >> x >> y >> z))
                throw FormatError("read_obj: bad vertex at line " + std::to_string(line_no));
            mesh.vertices.push_back(
                {static_cast<float>(x), static_cast<float>(y), static_cast<float>(z)});
        } else if (tag == "f") {
            std::vector<int> idx;
            std::string tok;
            while (ss >> tok) {
                // "3", "3/1" and "3/1/2" all name vertex 3.
                const long v = std::strtol(tok.c_str(), nullptr, 10);
                if (v == 0)
                    throw ValidationError("read_obj: face index 0 at line " +
                                          std::to_string(line_no) + " (OBJ is 1-based)");
                if (v < 0)
                    throw ValidationError("read_obj: negative face index at line " +
                                          std::to_string(line_no));
                idx.push_back(static_cast<int>(v) - 1);
            }
            if (idx.size() != 3)
                throw UnsupportedGeometryError("read_obj: non-triangular face at line " +
                                               std::to_string(line_no));
            mesh.triangles.push_back({idx[0], idx[1], idx[2]});
        }
        // Other record types (vn, vt, o, g, s, usemtl...) are ignored.
    }
    if (mesh.vertices.empty() || mesh.triangles.empty())
        throw FormatError("read_obj: no geometry in " + path);
    mesh.finalize();
    return mesh;
}

void write_obj(const std::string& path, const TriMesh& mesh) {
    mesh.validate();
    std::ofstream f(path);
    if (!f) throw IoError("write_obj: cannot open " + path);
    f.precision(9);
    for (const Vec3& v : mesh.vertices) f << "v " << v.x << " " << v.y << " " << v.z << "\n";
    for (const auto& t : mesh.triangles)
        f << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
    if (!f) throw IoError("write_obj: write failed for " + path);
}

TriMesh make_icosphere(int subdiv, float radius) {
    if (subdiv < 0 || subdiv > 6) throw ValidationError("make_icosphere: subdiv out of range");
    if (radius <= 0.0f) throw ValidationError("make_icosphere: radius must be positive");

    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3d> verts = {
        {-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0},
        {0, -1, phi}, {0, 1, phi}, {0, -1, -phi}, {0, 1, -phi},
        {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1},
    };
    std::vector<std::array<int, 3>> faces = {
        {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11},
        {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
        {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9},
        {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1},
    };

    for (int level = 0; level < subdiv; ++level) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            const auto key = std::minmax(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            const int idx = static_cast<int>(verts.size());
            verts.push_back((verts[a] + verts[b]) * 0.5);
            midpoint.emplace(key, idx);
            return idx;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(faces.size() * 4);
        for (const auto& f : faces) {
            const int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
            next.push_back({f[0], ab, ca});
            next.push_back({f[1], bc, ab});
            next.push_back({f[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        faces = std::move(next);
    }

    TriMesh mesh;
    mesh.vertices.reserve(verts.size());
    for (const Vec3d& v : verts)
        mesh.vertices.push_back(Vec3(v.normalized() * static_cast<double>(radius)));
    mesh.triangles = std::move(faces);
    mesh.finalize();
    return mesh;
}

}  // namespace trideform
