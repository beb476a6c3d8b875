#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trideform/geometry/mesh.hpp"

namespace trideform {

// Coefficients of the linear morph model: shape (beta), pose (theta),
// expression (psi). Default dims 100 / 6 / 50.
struct MorphParams {
    std::vector<float> beta;
    std::vector<float> theta;
    std::vector<float> psi;
};

// Linear morphable head: vertices = template + S*beta + P*theta + E*psi.
// Bases are stored one row per coefficient, each row a flattened (x,y,z)
// displacement field of length 3m. The canonical configuration is all-zero
// coefficients with the jaw-open displacement applied on top.
struct ToyMorphModel {
    TriMesh base;
    int dim_beta = 0, dim_theta = 0, dim_psi = 0;
    std::vector<float> shape_basis;  // [dim_beta, 3m]
    std::vector<float> pose_basis;   // [dim_theta, 3m]
    std::vector<float> expr_basis;   // [dim_psi, 3m]
    std::vector<float> jaw_open;     // [3m]

    void validate() const;
};

MorphParams zero_params(const ToyMorphModel& model);
TriMesh morph(const ToyMorphModel& model, const MorphParams& params);
MorphParams canonical_params(const ToyMorphModel& model);
TriMesh canonical_mesh(const ToyMorphModel& model);

// Deterministic procedural head model over an icosphere template: smooth
// sinusoidal shape/expression displacement fields, rigid pose basis
// (3 infinitesimal rotations + 3 translations), and a lower-face jaw vector.
ToyMorphModel make_toy_head(uint64_t seed, int dim_beta = 100, int dim_theta = 6,
                            int dim_psi = 50);

// Directory of NTC1 tensors plus manifest.json naming each one. Bases are
// serialized [3m, dim]; triangle indices as integral f32 [n, 3].
void save_morph_model(const std::string& dir, const ToyMorphModel& model);
ToyMorphModel load_morph_model(const std::string& dir);

}  // namespace trideform
