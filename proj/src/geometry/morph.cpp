#include "trideform/geometry/morph.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "trideform/core/error.hpp"
#include "trideform/core/json_util.hpp"
#include "trideform/core/rng.hpp"
#include "trideform/core/tensor.hpp"

namespace trideform {

void ToyMorphModel::validate() const {
    base.validate();
    const std::size_t n3 = base.vertices.size() * 3;
    if (shape_basis.size() != static_cast<std::size_t>(dim_beta) * n3 ||
        pose_basis.size() != static_cast<std::size_t>(dim_theta) * n3 ||
        expr_basis.size() != static_cast<std::size_t>(dim_psi) * n3 ||
        jaw_open.size() != n3)
        throw ValidationError("ToyMorphModel: basis rows must equal 3 * vertex count");
}

MorphParams zero_params(const ToyMorphModel& model) {
    MorphParams p;
    p.beta.assign(model.dim_beta, 0.0f);
    p.theta.assign(model.dim_theta, 0.0f);
    p.psi.assign(model.dim_psi, 0.0f);
    return p;
}

namespace {

TriMesh mesh_from_flat(const ToyMorphModel& model, const std::vector<float>& flat) {
    TriMesh out;
    out.vertices.resize(model.base.vertices.size());
    for (std::size_t i = 0; i < out.vertices.size(); ++i)
        out.vertices[i] = {flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]};
    out.triangles = model.base.triangles;
    out.finalize();
    return out;
}

std::vector<float> flat_vertices(const TriMesh& mesh) {
    std::vector<float> flat(mesh.vertices.size() * 3);
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        flat[3 * i] = mesh.vertices[i].x;
        flat[3 * i + 1] = mesh.vertices[i].y;
        flat[3 * i + 2] = mesh.vertices[i].z;
    }
    return flat;
}

}  // namespace

TriMesh morph(const ToyMorphModel& model, const MorphParams& params) {
    model.validate();
    if (static_cast<int>(params.beta.size()) != model.dim_beta ||
        static_cast<int>(params.theta.size()) != model.dim_theta ||
        static_cast<int>(params.psi.size()) != model.dim_psi)
        throw ValidationError("morph: parameter dimensions do not match the model");

    const std::vector<float> base = flat_vertices(model.base);
    const std::size_t n3 = base.size();
    // Double accumulation: the sum over up to ~150 basis rows stays exact to
    // the final float rounding.
    std::vector<double> acc(base.begin(), base.end());
    auto add = [&](const std::vector<float>& basis, const std::vector<float>& coeff) {
        for (std::size_t j = 0; j < coeff.size(); ++j) {
            const float* row = basis.data() + j * n3;
            const double c = coeff[j];
            for (std::size_t r = 0; r < n3; ++r) acc[r] += c * row[r];
        }
    };
    add(model.shape_basis, params.beta);
    add(model.expr_basis, params.psi);
    add(model.pose_basis, params.theta);

    std::vector<float> flat(n3);
    for (std::size_t r = 0; r < n3; ++r) flat[r] = static_cast<float>(acc[r]);
    return mesh_from_flat(model, flat);
}

MorphParams canonical_params(const ToyMorphModel& model) { return zero_params(model); }

TriMesh canonical_mesh(const ToyMorphModel& model) {
    model.validate();
    std::vector<float> flat = flat_vertices(model.base);
    for (std::size_t i = 0; i < flat.size(); ++i) flat[i] += model.jaw_open[i];
    return mesh_from_flat(model, flat);
}

ToyMorphModel make_toy_head(uint64_t seed, int dim_beta, int dim_theta, int dim_psi) {
    if (dim_beta < 1 || dim_psi < 1 || dim_theta != 6)
        throw ValidationError("make_toy_head: needs dim_beta/dim_psi >= 1 and dim_theta == 6");

    ToyMorphModel model;
    model.base = make_icosphere(2, 0.5f);
    // Slightly taller than wide so the canonical pose has a visible up axis.
    for (Vec3& v : model.base.vertices) v.y *= 1.1f;
    model.base.finalize();

    model.dim_beta = dim_beta;
    model.dim_theta = dim_theta;
    model.dim_psi = dim_psi;

    const std::size_t m = model.base.vertices.size();
    const std::size_t n3 = 3 * m;

    auto fill_wave_basis = [&](std::vector<float>& basis, int dim, float amp, uint64_t stream) {
        RngStream rng(seed, stream);
        basis.assign(static_cast<std::size_t>(dim) * n3, 0.0f);
        for (int j = 0; j < dim; ++j) {
            const double kx = 0.5 + 2.5 * rng.next_uniform();
            const double ky = 0.5 + 2.5 * rng.next_uniform();
            const double kz = 0.5 + 2.5 * rng.next_uniform();
            const double phase = 6.283185307179586 * rng.next_uniform();
            Vec3d dir{rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()};
            dir = dir.normalized();
            float* row = basis.data() + static_cast<std::size_t>(j) * n3;
            for (std::size_t i = 0; i < m; ++i) {
                const Vec3d v(model.base.vertices[i]);
                const double s = std::sin(kx * v.x + ky * v.y + kz * v.z + phase);
                row[3 * i] = static_cast<float>(amp * s * dir.x);
                row[3 * i + 1] = static_cast<float>(amp * s * dir.y);
                row[3 * i + 2] = static_cast<float>(amp * s * dir.z);
            }
        }
    };
    fill_wave_basis(model.shape_basis, dim_beta, 0.04f, 11);
    fill_wave_basis(model.expr_basis, dim_psi, 0.03f, 13);

    // Pose rows: infinitesimal rotations omega x v about x/y/z, then unit
    // translations along x/y/z.
    model.pose_basis.assign(static_cast<std::size_t>(dim_theta) * n3, 0.0f);
    for (int axis = 0; axis < 3; ++axis) {
        Vec3d omega{axis == 0 ? 1.0 : 0.0, axis == 1 ? 1.0 : 0.0, axis == 2 ? 1.0 : 0.0};
        float* rot_row = model.pose_basis.data() + static_cast<std::size_t>(axis) * n3;
        float* trans_row = model.pose_basis.data() + static_cast<std::size_t>(axis + 3) * n3;
        for (std::size_t i = 0; i < m; ++i) {
            const Vec3d d = omega.cross(Vec3d(model.base.vertices[i]));
            rot_row[3 * i] = static_cast<float>(d.x);
            rot_row[3 * i + 1] = static_cast<float>(d.y);
            rot_row[3 * i + 2] = static_cast<float>(d.z);
            trans_row[3 * i + axis] = 1.0f;
        }
    }

    // Jaw-open displacement: lower-face vertices move down and slightly out.
    model.jaw_open.assign(n3, 0.0f);
    for (std::size_t i = 0; i < m; ++i) {
        const Vec3 v = model.base.vertices[i];
        const float w = std::clamp((-0.1f - v.y) / 0.3f, 0.0f, 1.0f);
        model.jaw_open[3 * i + 1] = -0.12f * w;
        model.jaw_open[3 * i + 2] = 0.03f * w;
    }

    model.validate();
    return model;
}

namespace {

// Spec'd serialized orientation is [3m, dim]; memory layout is row-per-
// coefficient [dim, 3m].
TensorBlob basis_to_tensor(const std::vector<float>& basis, int dim, std::size_t n3) {
    TensorBlob t = TensorBlob::zeros({static_cast<int64_t>(n3), dim});
    for (int j = 0; j < dim; ++j)
        for (std::size_t r = 0; r < n3; ++r)
            t.data[r * dim + j] = basis[static_cast<std::size_t>(j) * n3 + r];
    return t;
}

std::vector<float> basis_from_tensor(const TensorBlob& t, std::size_t n3, const char* name) {
    if (t.shape.size() != 2 || static_cast<std::size_t>(t.shape[0]) != n3)
        throw CorruptionError(std::string("load_morph_model: bad shape for ") + name);
    const int dim = static_cast<int>(t.shape[1]);
    std::vector<float> basis(static_cast<std::size_t>(dim) * n3);
    for (int j = 0; j < dim; ++j)
        for (std::size_t r = 0; r < n3; ++r)
            basis[static_cast<std::size_t>(j) * n3 + r] = t.data[r * dim + j];
    return basis;
}

}  // namespace

void save_morph_model(const std::string& dir, const ToyMorphModel& model) {
    model.validate();
    std::filesystem::create_directories(dir);
    const std::size_t n3 = model.base.vertices.size() * 3;

    TensorBlob verts({static_cast<int64_t>(model.base.vertices.size()), 3},
                     flat_vertices(model.base));
    write_tensor(dir + "/template.ntc", verts);

    TensorBlob tris = TensorBlob::zeros({static_cast<int64_t>(model.base.triangles.size()), 3});
    for (std::size_t i = 0; i < model.base.triangles.size(); ++i)
        for (int k = 0; k < 3; ++k)
            tris.data[3 * i + k] = static_cast<float>(model.base.triangles[i][k]);
    write_tensor(dir + "/triangles.ntc", tris);

    write_tensor(dir + "/shape_basis.ntc", basis_to_tensor(model.shape_basis, model.dim_beta, n3));
    write_tensor(dir + "/pose_basis.ntc", basis_to_tensor(model.pose_basis, model.dim_theta, n3));
    write_tensor(dir + "/expr_basis.ntc", basis_to_tensor(model.expr_basis, model.dim_psi, n3));
    write_tensor(dir + "/jaw_open.ntc",
                 TensorBlob({static_cast<int64_t>(n3)}, model.jaw_open));

    nlohmann::json manifest = {
        {"format", "toy-morph-model-v1"},
        {"template", "template.ntc"},
        {"triangles", "triangles.ntc"},
        {"shape_basis", "shape_basis.ntc"},
        {"pose_basis", "pose_basis.ntc"},
        {"expr_basis", "expr_basis.ntc"},
        {"jaw_open", "jaw_open.ntc"},
    };
    save_json_file(dir + "/manifest.json", manifest);
}

ToyMorphModel load_morph_model(const std::string& dir) {
    const nlohmann::json manifest = load_json_file(dir + "/manifest.json");
    check_keys(manifest, "morph model manifest",
               {"format", "template", "triangles", "shape_basis", "pose_basis", "expr_basis",
                "jaw_open"});
    if (get_req<std::string>(manifest, "morph model manifest", "format") != "toy-morph-model-v1")
        throw FormatError("load_morph_model: unknown format tag");
    auto file = [&](const char* key) {
        return dir + "/" + get_req<std::string>(manifest, "morph model manifest", key);
    };

    ToyMorphModel model;
    const TensorBlob verts = read_tensor(file("template"));
    if (verts.shape.size() != 2 || verts.shape[1] != 3)
        throw CorruptionError("load_morph_model: template must be [m, 3]");
    model.base.vertices.resize(static_cast<std::size_t>(verts.shape[0]));
    for (std::size_t i = 0; i < model.base.vertices.size(); ++i)
        model.base.vertices[i] = {verts.data[3 * i], verts.data[3 * i + 1],
                                  verts.data[3 * i + 2]};

    const TensorBlob tris = read_tensor(file("triangles"));
    if (tris.shape.size() != 2 || tris.shape[1] != 3)
        throw CorruptionError("load_morph_model: triangles must be [n, 3]");
    model.base.triangles.resize(static_cast<std::size_t>(tris.shape[0]));
    for (std::size_t i = 0; i < model.base.triangles.size(); ++i)
        for (int k = 0; k < 3; ++k) {
            const float raw = tris.data[3 * i + k];
            if (raw != std::floor(raw) || raw < 0.0f)
                throw CorruptionError("load_morph_model: non-integral triangle index");
            model.base.triangles[i][k] = static_cast<int>(raw);
        }
    model.base.finalize();

    const std::size_t n3 = model.base.vertices.size() * 3;
    const TensorBlob shape = read_tensor(file("shape_basis"));
    const TensorBlob pose = read_tensor(file("pose_basis"));
    const TensorBlob expr = read_tensor(file("expr_basis"));
    model.shape_basis = basis_from_tensor(shape, n3, "shape_basis");
    model.pose_basis = basis_from_tensor(pose, n3, "pose_basis");
    model.expr_basis = basis_from_tensor(expr, n3, "expr_basis");
    model.dim_beta = static_cast<int>(shape.shape[1]);
    model.dim_theta = static_cast<int>(pose.shape[1]);
    model.dim_psi = static_cast<int>(expr.shape[1]);

    const TensorBlob jaw = read_tensor(file("jaw_open"));
    if (jaw.element_count() != static_cast<int64_t>(n3))
        throw CorruptionError("load_morph_model: jaw_open must have 3m entries");
    model.jaw_open = jaw.data;

    model.validate();
    return model;
}

}  // namespace trideform
